//! Subcommand implementations. Each returns the text printed on success.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pcss_adv::attack::{
    l0_coordinate_attack, norm_bounded_attack, norm_unbounded_attack, scene_seed, AttackKind, AttackReport,
    Mode, TargetSpec,
};
use pcss_adv::defense::{defended_eval, DefenseConfig};
use pcss_adv::metrics::{accuracy, evaluate, evaluate_hiding, MetricBlock};
use pcss_adv::pointcloud::synth::{benchmark_seeds, derive_seed};
use pcss_adv::pointcloud::{load_cloud, save_cloud, synth_scene, write_ply, PlyColor, PointCloud, SceneSpec};
use pcss_adv::segmodel::{input_gradcheck, load_checkpoint, save_checkpoint, train, SegModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Schedule};
use crate::error::{CliError, CliResult};
use crate::table::{render, Better, Column};

const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: String,
    pub index: usize,
    pub seed: u64,
    /// Relative to the scenes directory.
    pub file: String,
}

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write_file(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).map_err(|e| CliError::io(p, e))
}

fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Writes the train and test scenes plus a manifest of their seeds.
pub fn synth(cfg: &RunConfig) -> CliResult<String> {
    let dir = cfg.scenes_dir();
    for split in ["train", "test"] {
        create_dir(&dir.join(split))?;
    }
    let (train_seeds, test_seeds) = benchmark_seeds(cfg.seed, cfg.scene_train, cfg.scene_test);
    let mut manifest = String::from("# split index seed file\n");
    for (split, seeds) in [("train", &train_seeds), ("test", &test_seeds)] {
        for (i, &seed) in seeds.iter().enumerate() {
            let spec = SceneSpec {
                noise_std: cfg.scene_noise_std,
                ..SceneSpec::default_room(cfg.scene_points, seed)
            };
            let file = format!("{split}/{}.pcseg", scene_name(i));
            save_cloud(&synth_scene(&spec)?, dir.join(&file))?;
            let _ = writeln!(manifest, "{split} {i} {seed} {file}");
        }
    }
    write_file(&dir.join(MANIFEST), &manifest)?;
    write_file(&cfg.out_dir.join("synth.config"), &cfg.to_text())?;
    Ok(format!(
        "wrote {} train and {} test scenes to {}\n",
        train_seeds.len(),
        test_seeds.len(),
        dir.display()
    ))
}

pub fn read_manifest(scenes_dir: &Path) -> CliResult<Vec<ManifestEntry>> {
    let path = scenes_dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CliError::Config(format!("{}:{}: malformed manifest line", path.display(), n + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        out.push(ManifestEntry {
            split: parts[0].to_string(),
            index: parts[1].parse().map_err(|_| bad())?,
            seed: parts[2].parse().map_err(|_| bad())?,
            file: parts[3].to_string(),
        });
    }
    Ok(out)
}

fn load_split(cfg: &RunConfig, split: &str) -> CliResult<Vec<(usize, PointCloud)>> {
    let dir = cfg.scenes_dir();
    read_manifest(&dir)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| Ok((e.index, load_cloud(dir.join(&e.file), true)?)))
        .collect()
}

fn mean_accuracy(model: &SegModel, scenes: &[(usize, PointCloud)]) -> CliResult<f64> {
    let mut total = 0.0;
    for (_, s) in scenes {
        total += accuracy(&model.predict(s)?, s.require_labels()?)?;
    }
    Ok(total / scenes.len() as f64)
}

/// Trains from the manifest's train split and writes the checkpoint.
pub fn train_cmd(cfg: &RunConfig) -> CliResult<String> {
    let train_set = load_split(cfg, "train")?;
    if train_set.is_empty() {
        return Err(CliError::Config("manifest lists no training scenes".into()));
    }
    let scenes: Vec<PointCloud> = train_set.into_iter().map(|(_, s)| s).collect();
    let init = SegModel::new(cfg.arch, cfg.model_seed)?.with_policy(cfg.policy);
    let (model, log) = train(&init, &scenes, &cfg.train)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_checkpoint(&model, &ckpt)?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for (e, (l, a)) in log.epoch_loss.iter().zip(&log.epoch_accuracy).enumerate() {
        let _ = writeln!(csv, "{},{l:.9},{a:.6}", e + 1);
    }
    write_file(&cfg.out_dir.join("train_log.csv"), &csv)?;
    write_file(&cfg.out_dir.join("train.config"), &cfg.to_text())?;
    let mut out = format!("checkpoint={}\n", ckpt.display());
    if let Some(l) = log.epoch_loss.last() {
        let _ = writeln!(out, "final_train_loss={l:.6}");
    }
    let test = load_split(cfg, "test")?;
    if !test.is_empty() {
        let _ = writeln!(out, "held_out_accuracy={:.6}", mean_accuracy(&model, &test)?);
    }
    Ok(out)
}

fn load_model(path: &Path) -> CliResult<SegModel> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} not found", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

/// The attack target for a scene, or `None` when the scene has no points
/// of the configured source class.
fn scene_target(cfg: &RunConfig, cloud: &PointCloud) -> CliResult<Option<TargetSpec>> {
    let labels = cloud.require_labels()?;
    if let Some(src) = cfg.source {
        if !labels.contains(&src) {
            return Ok(None);
        }
    }
    Ok(Some(match (cfg.mode, cfg.source) {
        (Mode::Degradation, None) => TargetSpec::degrade_all(cloud)?,
        (Mode::Degradation, Some(c)) => TargetSpec::degrade_class(cloud, c)?,
        (Mode::Hiding, Some(c)) => TargetSpec::hide_class(cloud, c, cfg.target.expect("validated"))?,
        (Mode::Hiding, None) => unreachable!("validated in config"),
    }))
}

struct SceneOutcome {
    index: usize,
    clean: MetricBlock,
    report: AttackReport,
}

fn attack_scene(cfg: &RunConfig, model: &SegModel, index: usize, cloud: &PointCloud) -> CliResult<Option<SceneOutcome>> {
    let Some(target) = scene_target(cfg, cloud)? else {
        return Ok(None);
    };
    let acfg = pcss_adv::attack::AttackConfig {
        seed: scene_seed(cfg.seed, index as u64),
        ..cfg.attack
    };
    let report = match (cfg.schedule, cfg.attack_kind) {
        (Schedule::L0, kind) => l0_coordinate_attack(model, cloud, &target, &acfg, kind)?,
        (Schedule::Plain, AttackKind::NormBounded) => norm_bounded_attack(model, cloud, &target, &acfg)?,
        (Schedule::Plain, AttackKind::NormUnbounded) => norm_unbounded_attack(model, cloud, &target, &acfg)?,
    };
    let pred = model.predict(cloud)?;
    let gt = cloud.require_labels()?;
    let clean = if target.len() < cloud.len() && cfg.mode == Mode::Hiding {
        evaluate_hiding(&pred, gt, cloud.num_classes(), target.indices(), target.labels())?
    } else {
        evaluate(&pred, gt, cloud.num_classes())?
    };
    Ok(Some(SceneOutcome { index, clean, report }))
}

/// Attacks every test scene, writing perturbed scenes, per-scene reports
/// and a summary table.
pub fn attack_cmd(cfg: &RunConfig) -> CliResult<String> {
    let model = load_model(&cfg.checkpoint_path())?.with_policy(cfg.policy);
    let scenes = load_split(cfg, "test")?;
    let workers = cfg.workers.min(scenes.len().max(1));
    let mut results: Vec<CliResult<Option<SceneOutcome>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (model, scenes) = (&model, &scenes);
                scope.spawn(move || {
                    scenes
                        .iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, s)| attack_scene(cfg, model, *i, s))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut per_worker: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("attack worker panicked").into_iter())
            .collect();
        // Re-interleave into scene order.
        (0..scenes.len())
            .map(|k| per_worker[k % workers].next().expect("one result per scene"))
            .collect()
    });

    let dir = cfg.attack_dir();
    create_dir(&dir)?;
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (r, (i, _)) in results.drain(..).zip(&scenes) {
        match r? {
            Some(o) => done.push(o),
            None => skipped.push(*i),
        }
    }
    for o in &done {
        let name = scene_name(o.index);
        save_cloud(&o.report.cloud, dir.join(format!("{name}.pcseg")))?;
        write_file(&dir.join(format!("{name}.report.txt")), &o.report.to_text())?;
        write_file(&dir.join(format!("{name}.trace.csv")), &o.report.trace_csv())?;
    }

    let rows: Vec<String> = done.iter().map(|o| format!("{:04}", o.index)).collect();
    let col = |name: &str, better, f: &dyn Fn(&SceneOutcome) -> f64| {
        Column::new(name, better, done.iter().map(f).collect())
    };
    let mut cols = vec![
        col("clean_acc", Better::High, &|o| o.clean.accuracy),
        col("clean_aiou", Better::High, &|o| o.clean.aiou),
        col("adv_acc", Better::Low, &|o| o.report.metrics.accuracy),
        col("adv_aiou", Better::Low, &|o| o.report.metrics.aiou),
    ];
    if cfg.mode == Mode::Hiding {
        cols.push(col("psr", Better::High, &|o| o.report.metrics.psr.unwrap_or(f64::NAN)));
        cols.push(col("oob_acc", Better::High, &|o| o.report.metrics.oob_accuracy.unwrap_or(f64::NAN)));
        cols.push(col("oob_aiou", Better::High, &|o| o.report.metrics.oob_aiou.unwrap_or(f64::NAN)));
    }
    cols.push(col("dist_l2", Better::Low, &|o| o.report.dist_l2_color));
    cols.push(col("dist_l0", Better::Low, &|o| o.report.dist_l0_coord as f64));

    let mut out = format!(
        "attack={} mode={} fields={} schedule={}\n",
        cfg.attack_kind.as_str(),
        cfg.mode.as_str(),
        cfg.attack.fields.as_str(),
        match cfg.schedule {
            Schedule::Plain => "plain",
            Schedule::L0 => "l0",
        }
    );
    out.push_str(&render(&rows, &cols));
    if !skipped.is_empty() {
        let list: Vec<String> = skipped.iter().map(|i| format!("{i:04}")).collect();
        let _ = writeln!(out, "skipped (no source-class points): {}", list.join(" "));
    }
    write_file(&dir.join("summary.txt"), &out)?;
    write_file(&dir.join("attack.config"), &cfg.to_text())?;
    Ok(out)
}

/// Adversarial scenes in the attack directory with their scene indices.
fn adversarial_scenes(cfg: &RunConfig) -> CliResult<Vec<(usize, PointCloud)>> {
    let dir = cfg.attack_dir();
    let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for e in entries {
        let path = e.map_err(|e| CliError::io(&dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(i) = name
            .strip_prefix("scene_")
            .and_then(|r| r.strip_suffix(".pcseg"))
            .and_then(|n| n.parse().ok())
        {
            found.push((i, path));
        }
    }
    if found.is_empty() {
        return Err(CliError::Config(format!("no adversarial scenes in {}", dir.display())));
    }
    found.sort();
    found
        .into_iter()
        .map(|(i, p)| Ok((i, load_cloud(p, true)?)))
        .collect()
}

/// Evaluates stored adversarial scenes under each configured defense.
pub fn defend_cmd(cfg: &RunConfig) -> CliResult<String> {
    let model = load_model(&cfg.checkpoint_path())?;
    let scenes = adversarial_scenes(cfg)?;
    let rows: Vec<String> = scenes.iter().map(|(i, _)| format!("{i:04}")).collect();
    let mut cols = Vec::new();
    for &d in &cfg.defenses {
        let mut acc = Vec::new();
        let mut iou = Vec::new();
        for (i, s) in &scenes {
            let dcfg = DefenseConfig {
                seed: scene_seed(cfg.seed, *i as u64),
                ..cfg.defense
            };
            let m = defended_eval(&model, s, d, &dcfg)?;
            acc.push(m.accuracy);
            iou.push(m.aiou);
        }
        cols.push(Column::new(format!("{}_acc", d.as_str()), Better::Low, acc));
        cols.push(Column::new(format!("{}_aiou", d.as_str()), Better::Low, iou));
    }
    let out = render(&rows, &cols);
    write_file(&cfg.out_dir.join("defend_summary.txt"), &out)?;
    write_file(&cfg.out_dir.join("defend.config"), &cfg.to_text())?;
    Ok(out)
}

/// Evaluates the first checkpoint's adversarial scenes on a second one.
pub fn transfer_cmd(cfg: &RunConfig) -> CliResult<String> {
    let a = load_model(&cfg.checkpoint_path())?;
    let b_path = cfg
        .transfer_checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("transfer.checkpoint is not set".into()))?;
    let b = load_model(b_path)?;
    if a.arch() != b.arch() {
        return Err(CliError::Config(format!(
            "architecture mismatch: {:?} vs {:?}",
            a.arch(),
            b.arch()
        )));
    }
    let adv = adversarial_scenes(cfg)?;
    let clean: std::collections::BTreeMap<usize, PointCloud> = load_split(cfg, "test")?.into_iter().collect();
    let mut rows = Vec::new();
    let (mut clean_b, mut adv_a, mut adv_b, mut ratio) = (vec![], vec![], vec![], vec![]);
    for (i, s) in &adv {
        let c = clean
            .get(i)
            .ok_or_else(|| CliError::Config(format!("test scene {i} missing from the manifest")))?;
        let gt = s.require_labels()?;
        let cb = accuracy(&b.predict(c)?, c.require_labels()?)?;
        let ab = accuracy(&b.predict(s)?, gt)?;
        rows.push(format!("{i:04}"));
        clean_b.push(cb);
        adv_a.push(accuracy(&a.predict(s)?, gt)?);
        adv_b.push(ab);
        ratio.push(ab / cb);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut out = render(
        &rows,
        &[
            Column::new("clean_acc_b", Better::High, clean_b.clone()),
            Column::new("adv_acc_a", Better::Low, adv_a),
            Column::new("adv_acc_b", Better::Low, adv_b.clone()),
            Column::new("ratio_b", Better::Low, ratio),
        ],
    );
    let _ = writeln!(out, "mean_adv_over_clean_b={:.6}", mean(&adv_b) / mean(&clean_b));
    write_file(&cfg.out_dir.join("transfer_summary.txt"), &out)?;
    write_file(&cfg.out_dir.join("transfer.config"), &cfg.to_text())?;
    Ok(out)
}

/// Finite-difference check of the model input gradient on random
/// model/cloud pairs.
pub fn gradcheck_cmd(cfg: &RunConfig) -> CliResult<String> {
    let mut out = String::from("pair entries within worst_rel_error\n");
    let mut within = 0usize;
    let mut total = 0usize;
    let n = cfg.gradcheck_points;
    for pair in 0..cfg.gradcheck_pairs {
        let seed = derive_seed(cfg.seed, pair as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let feats = (0..n * cfg.arch.num_feats).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..cfg.arch.num_classes)).collect();
        let cloud = PointCloud::new(coords, feats, cfg.arch.num_feats, Some(labels), cfg.arch.num_classes)?;
        let model = SegModel::new(cfg.arch, seed)?;
        let rep = input_gradcheck(&model, &cloud, cfg.gradcheck_h)?;
        let ok = rep.entries.iter().filter(|e| e.rel_error <= cfg.gradcheck_tol).count();
        within += ok;
        total += rep.entries.len();
        let _ = writeln!(out, "{pair} {} {ok} {:.3e}", rep.entries.len(), rep.max_rel_error);
    }
    let frac = if total == 0 { 1.0 } else { within as f64 / total as f64 };
    let _ = writeln!(out, "h={:e} tol={:e} fraction_within={frac:.6}", cfg.gradcheck_h, cfg.gradcheck_tol);
    Ok(out)
}

/// Label source for PLY export.
#[derive(Debug, Clone, PartialEq)]
pub enum PlyLabels {
    None,
    GroundTruth,
    Predicted(PathBuf),
}

pub fn export_ply(scene: &Path, out: &Path, labels: &PlyLabels) -> CliResult<String> {
    let cloud = load_cloud(scene, *labels == PlyLabels::GroundTruth)?;
    match labels {
        PlyLabels::None => write_ply(&cloud, out, PlyColor::Rgb, None)?,
        PlyLabels::GroundTruth => write_ply(&cloud, out, PlyColor::Labels, None)?,
        PlyLabels::Predicted(ckpt) => {
            let pred = load_model(ckpt)?.predict(&cloud)?;
            write_ply(&cloud, out, PlyColor::Labels, Some(&pred))?
        }
    }
    Ok(format!("wrote {} vertices to {}\n", cloud.len(), out.display()))
}
