use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcss_adv_cli::commands::{self, PlyLabels};
use pcss_adv_cli::{config, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "pcssadv", version, about = "Adversarial attacks on point cloud segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// key=value overrides, applied after the file.
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/test scenes and their manifest.
    Synth(ConfigArgs),
    /// Train a model on the train split.
    Train(ConfigArgs),
    /// Attack every test scene.
    Attack(ConfigArgs),
    /// Evaluate stored adversarial scenes under input defenses.
    Defend(ConfigArgs),
    /// Evaluate adversarial scenes on a second checkpoint.
    Transfer(ConfigArgs),
    /// Check model input gradients against finite differences.
    Gradcheck(ConfigArgs),
    /// Export a PCSEG scene as ASCII PLY.
    ExportPly {
        scene: PathBuf,
        out: PathBuf,
        /// Color by ground-truth labels.
        #[arg(long, conflicts_with = "predicted")]
        labels: bool,
        /// Color by labels predicted with this checkpoint.
        #[arg(long)]
        predicted: Option<PathBuf>,
    },
    /// Print the config schema as a markdown table.
    Keys,
}

fn run(cmd: Command) -> CliResult<String> {
    let load = |a: &ConfigArgs| RunConfig::load(a.config.as_deref(), &a.overrides);
    match cmd {
        Command::Synth(a) => commands::synth(&load(&a)?),
        Command::Train(a) => commands::train_cmd(&load(&a)?),
        Command::Attack(a) => commands::attack_cmd(&load(&a)?),
        Command::Defend(a) => commands::defend_cmd(&load(&a)?),
        Command::Transfer(a) => commands::transfer_cmd(&load(&a)?),
        Command::Gradcheck(a) => commands::gradcheck_cmd(&load(&a)?),
        Command::ExportPly {
            scene,
            out,
            labels,
            predicted,
        } => {
            let mode = match (labels, predicted) {
                (_, Some(p)) => PlyLabels::Predicted(p),
                (true, None) => PlyLabels::GroundTruth,
                (false, None) => PlyLabels::None,
            };
            commands::export_ply(&scene, &out, &mode)
        }
        Command::Keys => Ok(config::schema_table()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
