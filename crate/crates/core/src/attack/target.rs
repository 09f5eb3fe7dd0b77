use std::collections::HashSet;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::segmodel::Fields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Push the attacked points toward per-point target labels.
    Hiding,
    /// Push the attacked points away from their ground truth.
    #[default]
    Degradation,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hiding => "hiding",
            Mode::Degradation => "degradation",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hiding" => Ok(Mode::Hiding),
            "degradation" => Ok(Mode::Degradation),
            _ => Err(Error::InvalidArgument(format!("unknown attack mode `{s}`"))),
        }
    }
}

/// Attacked point indices plus one label per index: the label to reach
/// (hiding) or the ground truth to leave (degradation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    indices: Vec<usize>,
    labels: Vec<usize>,
    mode: Mode,
}

impl TargetSpec {
    pub fn new(
        indices: Vec<usize>,
        labels: Vec<usize>,
        mode: Mode,
        num_points: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty target set".into()));
        }
        if indices.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} target indices but {} labels",
                indices.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i >= num_points {
                return Err(Error::InvalidArgument(format!(
                    "target index {i} outside a {num_points}-point cloud"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidArgument(format!("duplicate target index {i}")));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "target label {l} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            indices,
            labels,
            mode,
        })
    }

    /// Degradation of every point against its ground truth.
    pub fn degrade_all(cloud: &PointCloud) -> Result<Self> {
        let gt = cloud.require_labels()?;
        Self::new(
            (0..cloud.len()).collect(),
            gt.to_vec(),
            Mode::Degradation,
            cloud.len(),
            cloud.num_classes(),
        )
    }

    /// Degradation of the points whose ground truth is `class`.
    pub fn degrade_class(cloud: &PointCloud, class: usize) -> Result<Self> {
        let idx = class_indices(cloud, class)?;
        let n = idx.len();
        Self::new(idx, vec![class; n], Mode::Degradation, cloud.len(), cloud.num_classes())
    }

    /// Hiding: every point of class `source` should be predicted as `target`.
    pub fn hide_class(cloud: &PointCloud, source: usize, target: usize) -> Result<Self> {
        if source == target {
            return Err(Error::InvalidArgument(format!(
                "hiding class {source} as itself"
            )));
        }
        let idx = class_indices(cloud, source)?;
        let n = idx.len();
        Self::new(idx, vec![target; n], Mode::Hiding, cloud.len(), cloud.num_classes())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub(crate) fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        if let Some(&i) = self.indices.iter().find(|&&i| i >= cloud.len()) {
            return Err(Error::InvalidArgument(format!(
                "target index {i} outside a {}-point cloud",
                cloud.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= cloud.num_classes()) {
            return Err(Error::InvalidArgument(format!("target label {l} out of range")));
        }
        Ok(())
    }
}

fn class_indices(cloud: &PointCloud, class: usize) -> Result<Vec<usize>> {
    let gt = cloud.require_labels()?;
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == class).collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("no points of class {class}")));
    }
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Per-component cap on the cumulative perturbation (norm-bounded).
    pub epsilon: f64,
    /// Sign-step size (norm-bounded).
    pub gamma: f64,
    /// Weight of the adversarial hinge.
    pub lambda1: f64,
    /// Weight of the smoothness penalty.
    pub lambda2: f64,
    /// Neighbors per point in the smoothness penalty.
    pub alpha: usize,
    pub steps: usize,
    /// Adam step on the tanh variables (norm-unbounded).
    pub lr: f64,
    /// Points restored per round of the L0 schedule.
    pub restore_per_round: usize,
    pub fields: Fields,
    pub converge_psr_threshold: f64,
    /// Checkpoints without gain improvement before noise is injected.
    pub stagnation_window: usize,
    /// Hinge confidence margin.
    pub kappa: f64,
    /// Coordinate deltas at or below this count as unchanged.
    pub l0_tol: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            gamma: 0.01,
            lambda1: 1.0,
            lambda2: 0.1,
            alpha: 10,
            steps: 1000,
            lr: 0.01,
            restore_per_round: 100,
            fields: Fields::Color,
            converge_psr_threshold: 0.95,
            stagnation_window: 10,
            kappa: 0.0,
            l0_tol: 1e-9,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Defaults for the sign-step attack: 50 steps.
    pub fn norm_bounded() -> Self {
        Self {
            steps: 50,
            ..Self::default()
        }
    }

    /// Defaults for the tanh/Adam attack: 1000 steps.
    pub fn norm_unbounded() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("attack config: {what}")));
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be >= 0");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad("loss weights must be >= 0");
        }
        if self.alpha < 1 {
            return bad("alpha must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.restore_per_round < 1 {
            return bad("restore_per_round must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.converge_psr_threshold) {
            return bad("converge_psr_threshold must lie in [0, 1]");
        }
        if self.stagnation_window < 1 {
            return bad("stagnation_window must be >= 1");
        }
        if !(self.kappa >= 0.0) || !(self.l0_tol >= 0.0) {
            return bad("kappa and l0_tol must be >= 0");
        }
        Ok(())
    }
}

/// Success predicate on the target metric: accuracy on the attacked points
/// (degradation) or point success rate (hiding).
pub fn converge(mode: Mode, target_metric: f64, num_classes: usize, psr_threshold: f64) -> bool {
    match mode {
        Mode::Degradation => target_metric <= 1.0 / num_classes as f64,
        Mode::Hiding => target_metric >= psr_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_validation() {
        assert!(TargetSpec::new(vec![], vec![], Mode::Hiding, 4, 2).is_err());
        assert!(TargetSpec::new(vec![0, 0], vec![1, 1], Mode::Hiding, 4, 2).is_err());
        assert!(TargetSpec::new(vec![4], vec![1], Mode::Hiding, 4, 2).is_err());
        assert!(TargetSpec::new(vec![1], vec![2], Mode::Hiding, 4, 2).is_err());
        assert!(TargetSpec::new(vec![1, 2], vec![0], Mode::Degradation, 4, 2).is_err());
        assert!(TargetSpec::new(vec![3, 1], vec![0, 1], Mode::Degradation, 4, 2).is_ok());
    }

    #[test]
    fn converge_thresholds() {
        assert!(converge(Mode::Degradation, 0.07, 13, 0.95));
        assert!(!converge(Mode::Degradation, 0.13, 8, 0.95));
        assert!(converge(Mode::Hiding, 0.96, 6, 0.95));
        assert!(!converge(Mode::Hiding, 0.94, 6, 0.95));
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let c = AttackConfig {
            gamma: 0.0,
            ..AttackConfig::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(AttackConfig::norm_bounded().steps, 50);
    }
}
