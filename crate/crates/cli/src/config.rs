//! `key = value` run configuration with a fixed schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pcss_adv::attack::{AttackConfig, AttackKind, Mode};
use pcss_adv::defense::{Defense, DefenseConfig};
use pcss_adv::segmodel::{Arch, Fields, NeighborPolicy, TrainConfig};

use crate::error::{CliError, CliResult};

/// Every accepted key with its default (empty means unset) and a one-line
/// description. The README table is generated from the same list by
/// `pcssadv keys`.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("seed", "0", "global seed; per-scene seeds are derived from it"),
    ("out_dir", "run", "directory holding scenes, checkpoints and reports"),
    ("checkpoint", "", "model checkpoint path (default <out_dir>/model.ckpt)"),
    ("scene.points", "1024", "points per synthetic scene"),
    ("scene.train", "200", "number of training scenes"),
    ("scene.test", "20", "number of test scenes"),
    ("scene.noise_std", "0.03", "Gaussian color noise of synthetic scenes"),
    ("model.hidden", "64", "hidden width"),
    ("model.k_agg", "8", "neighbors aggregated per point"),
    ("model.seed", "", "weight initialization seed (default: seed)"),
    ("model.policy", "fixed", "attack-time neighbor policy: fixed | recompute"),
    ("train.epochs", "8", "training epochs"),
    ("train.batch_size", "2", "scenes per optimizer step"),
    ("train.lr", "0.003", "Adam learning rate"),
    ("train.seed", "", "shuffle seed (default: seed)"),
    ("attack.kind", "norm-unbounded", "norm-bounded | norm-unbounded"),
    ("attack.mode", "degradation", "degradation | hiding"),
    ("attack.source", "", "attacked class (hiding: required; degradation: optional)"),
    ("attack.target", "", "class the hidden points should take (hiding)"),
    ("attack.fields", "color", "color | coords | both"),
    ("attack.schedule", "plain", "plain | l0 (coordinate sparsification rounds)"),
    ("attack.epsilon", "0.1", "per-component bound (norm-bounded)"),
    ("attack.gamma", "0.01", "sign-step size (norm-bounded)"),
    ("attack.lambda1", "1", "weight of the adversarial hinge"),
    ("attack.lambda2", "0.1", "weight of the smoothness penalty"),
    ("attack.alpha", "10", "neighbors in the smoothness penalty"),
    ("attack.steps", "", "iterations (default 50 bounded, 1000 unbounded)"),
    ("attack.lr", "0.01", "Adam learning rate (norm-unbounded)"),
    ("attack.restore_per_round", "100", "points restored per L0 round"),
    ("attack.psr_threshold", "0.95", "hiding success rate that counts as converged"),
    ("attack.stagnation_window", "10", "checkpoints without gain improvement before noise"),
    ("attack.kappa", "0", "hinge confidence margin"),
    ("attack.l0_tol", "1e-9", "coordinate delta counted as moved"),
    ("attack.workers", "1", "scenes attacked in parallel"),
    ("defense.methods", "none,srs,sor", "defenses evaluated by `defend`"),
    ("defense.srs_count", "50", "points removed by SRS"),
    ("defense.srs_count_is_kept", "false", "read srs_count as points kept"),
    ("defense.sor_k", "2", "SOR neighbors"),
    ("defense.sor_std_mult", "1.0", "SOR threshold in standard deviations"),
    ("transfer.checkpoint", "", "second checkpoint evaluated by `transfer`"),
    ("gradcheck.pairs", "10", "random model/cloud pairs"),
    ("gradcheck.points", "64", "points per random cloud"),
    ("gradcheck.h", "1e-3", "central-difference step"),
    ("gradcheck.tol", "1e-3", "relative error counted as agreeing"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Plain,
    L0,
}

impl FromStr for Schedule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(Schedule::Plain),
            "l0" => Ok(Schedule::L0),
            _ => Err(format!("unknown schedule `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    checkpoint: Option<PathBuf>,
    pub scene_points: usize,
    pub scene_train: usize,
    pub scene_test: usize,
    pub scene_noise_std: f64,
    pub arch: Arch,
    pub model_seed: u64,
    pub policy: NeighborPolicy,
    pub train: TrainConfig,
    pub attack_kind: AttackKind,
    pub mode: Mode,
    pub source: Option<usize>,
    pub target: Option<usize>,
    pub schedule: Schedule,
    /// Seed is replaced per scene.
    pub attack: AttackConfig,
    pub workers: usize,
    pub defenses: Vec<Defense>,
    pub defense: DefenseConfig,
    pub transfer_checkpoint: Option<PathBuf>,
    pub gradcheck_pairs: usize,
    pub gradcheck_points: usize,
    pub gradcheck_h: f64,
    pub gradcheck_tol: f64,
    /// Resolved `key = value` pairs, schema order.
    resolved: Vec<(String, String)>,
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_pairs(text: &str, origin: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a single `key=value` override.
pub fn parse_override(s: &str) -> CliResult<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or_else(|| {
            SCHEMA
                .iter()
                .find(|(k, _, _)| *k == key)
                .map(|(_, d, _)| *d)
                .expect("key in schema")
        })
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| CliError::Config(format!("{key} = `{v}`: {e}")))
    }

    fn opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }
}

impl RunConfig {
    /// Later pairs override earlier ones. Unknown keys are errors.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if !SCHEMA.iter().any(|(s, _, _)| *s == k) {
                return Err(CliError::Config(format!("unknown key `{k}`")));
            }
            map.insert(k, v);
        }
        let v = Values(map);
        let seed: u64 = v.get("seed")?;
        let kind: AttackKind = v.get("attack.kind")?;
        let base = match kind {
            AttackKind::NormBounded => AttackConfig::norm_bounded(),
            AttackKind::NormUnbounded => AttackConfig::norm_unbounded(),
        };
        let attack = AttackConfig {
            epsilon: v.get("attack.epsilon")?,
            gamma: v.get("attack.gamma")?,
            lambda1: v.get("attack.lambda1")?,
            lambda2: v.get("attack.lambda2")?,
            alpha: v.get("attack.alpha")?,
            steps: v.opt("attack.steps")?.unwrap_or(base.steps),
            lr: v.get("attack.lr")?,
            restore_per_round: v.get("attack.restore_per_round")?,
            fields: v.get::<Fields>("attack.fields")?,
            converge_psr_threshold: v.get("attack.psr_threshold")?,
            stagnation_window: v.get("attack.stagnation_window")?,
            kappa: v.get("attack.kappa")?,
            l0_tol: v.get("attack.l0_tol")?,
            seed,
        };
        attack.validate()?;
        let defenses = v
            .raw("defense.methods")
            .split(',')
            .map(|s| s.trim().parse::<Defense>())
            .collect::<Result<Vec<_>, _>>()?;
        let defense = DefenseConfig {
            srs_count: v.get("defense.srs_count")?,
            srs_count_is_kept: v.get("defense.srs_count_is_kept")?,
            sor_k: v.get("defense.sor_k")?,
            sor_std_mult: v.get("defense.sor_std_mult")?,
            seed,
        };
        defense.validate()?;
        let arch = Arch {
            hidden: v.get("model.hidden")?,
            k_agg: v.get("model.k_agg")?,
            ..Arch::default()
        };
        let train = TrainConfig {
            epochs: v.get("train.epochs")?,
            batch_size: v.get("train.batch_size")?,
            lr: v.get("train.lr")?,
            seed: v.opt("train.seed")?.unwrap_or(seed),
        };
        let mode: Mode = v.get("attack.mode")?;
        let source = v.opt("attack.source")?;
        let target = v.opt("attack.target")?;
        if mode == Mode::Hiding && (source.is_none() || target.is_none()) {
            return Err(CliError::Config(
                "hiding needs attack.source and attack.target".into(),
            ));
        }
        let workers: usize = v.get("attack.workers")?;
        if workers == 0 {
            return Err(CliError::Config("attack.workers must be >= 1".into()));
        }
        let resolved = SCHEMA
            .iter()
            .map(|(k, _, _)| (k.to_string(), v.raw(k).to_string()))
            .collect();
        Ok(Self {
            seed,
            out_dir: PathBuf::from(v.raw("out_dir")),
            checkpoint: v.opt("checkpoint")?,
            scene_points: v.get("scene.points")?,
            scene_train: v.get("scene.train")?,
            scene_test: v.get("scene.test")?,
            scene_noise_std: v.get("scene.noise_std")?,
            arch,
            model_seed: v.opt("model.seed")?.unwrap_or(seed),
            policy: v.get("model.policy")?,
            train,
            attack_kind: kind,
            mode,
            source,
            target,
            schedule: v.get("attack.schedule")?,
            attack,
            workers,
            defenses,
            defense,
            transfer_checkpoint: v.opt("transfer.checkpoint")?,
            gradcheck_pairs: v.get("gradcheck.pairs")?,
            gradcheck_points: v.get("gradcheck.points")?,
            gradcheck_h: v.get("gradcheck.h")?,
            gradcheck_tol: v.get("gradcheck.tol")?,
            resolved,
        })
    }

    /// Reads the optional config file, then applies overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                parse_pairs(&text, &p.display().to_string())?
            }
            None => Vec::new(),
        };
        for o in overrides {
            pairs.push(parse_override(o)?);
        }
        Self::from_pairs(pairs)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn scenes_dir(&self) -> PathBuf {
        self.out_dir.join("scenes")
    }

    pub fn attack_dir(&self) -> PathBuf {
        self.out_dir.join("attack")
    }

    /// Every key with its effective value; feeding this back reproduces
    /// the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pairs(Vec::new()).expect("defaults are valid")
    }
}

/// Markdown table of the schema.
pub fn schema_table() -> String {
    let mut s = String::from("| key | default | meaning |\n|---|---|---|\n");
    for (k, d, doc) in SCHEMA {
        let _ = writeln!(s, "| `{k}` | {} | {doc} |", if d.is_empty() { "unset" } else { d });
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcss_adv::pointcloud::synth::{DEFAULT_NOISE_STD, DEFAULT_POINTS, DEFAULT_TEST_SCENES, DEFAULT_TRAIN_SCENES};

    #[test]
    fn defaults_match_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.scene_points, DEFAULT_POINTS);
        assert_eq!(c.scene_train, DEFAULT_TRAIN_SCENES);
        assert_eq!(c.scene_test, DEFAULT_TEST_SCENES);
        assert_eq!(c.scene_noise_std, DEFAULT_NOISE_STD);
        assert_eq!(c.arch, Arch::default());
        let t = TrainConfig::default();
        assert_eq!((c.train.epochs, c.train.batch_size, c.train.lr), (t.epochs, t.batch_size, t.lr));
        assert_eq!(c.attack, AttackConfig::norm_unbounded());
        assert_eq!(c.defense, DefenseConfig::default());
    }

    #[test]
    fn bounded_kind_picks_its_step_default() {
        let c = RunConfig::from_pairs([("attack.kind".into(), "norm-bounded".into())]).unwrap();
        assert_eq!(c.attack.steps, AttackConfig::norm_bounded().steps);
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        assert!(RunConfig::from_pairs([("atack.steps".into(), "3".into())]).is_err());
        assert!(RunConfig::from_pairs([("attack.steps".into(), "x".into())]).is_err());
        assert!(RunConfig::from_pairs([("defense.methods".into(), "none,dup".into())]).is_err());
        assert!(RunConfig::from_pairs([("attack.mode".into(), "hiding".into())]).is_err());
        assert!(parse_pairs("seed 3", "f").is_err());
    }

    #[test]
    fn later_values_win_and_text_round_trips() {
        let pairs = parse_pairs("# run\nseed = 4\nattack.steps = 7\n", "f").unwrap();
        let mut all = pairs.clone();
        all.push(parse_override("seed=9").unwrap());
        let c = RunConfig::from_pairs(all).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.attack.steps, 7);
        let again = RunConfig::from_pairs(parse_pairs(&c.to_text(), "r").unwrap()).unwrap();
        assert_eq!(again, c);
    }
}
