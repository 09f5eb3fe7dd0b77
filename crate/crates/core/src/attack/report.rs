use std::fmt::Write as _;
use std::str::FromStr;

use super::perturb::Perturbation;
use super::target::Mode;
use crate::error::{Error, Result};
use crate::metrics::MetricBlock;
use crate::pointcloud::PointCloud;
use crate::segmodel::Fields;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    NormBounded,
    NormUnbounded,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::NormBounded => "norm-bounded",
            AttackKind::NormUnbounded => "norm-unbounded",
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm-bounded" | "bounded" => Ok(AttackKind::NormBounded),
            "norm-unbounded" | "unbounded" => Ok(AttackKind::NormUnbounded),
            _ => Err(Error::InvalidArgument(format!("unknown attack kind `{s}`"))),
        }
    }
}

/// One evaluated checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub gain: f64,
    pub dist: f64,
    pub adv: f64,
    pub smooth: f64,
    /// Lowest gain seen so far.
    pub best_gain: f64,
    pub metric: f64,
    /// Noise was injected after this checkpoint.
    pub noise: bool,
}

/// Outcome of one round of the L0 schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub perturbable: usize,
    pub l0: usize,
    pub converged: bool,
    pub target_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub mode: Mode,
    pub fields: Fields,
    pub cloud: PointCloud,
    pub perturbation: Perturbation,
    pub converged: bool,
    pub steps_used: usize,
    pub dist_l2_color: f64,
    pub dist_l0_coord: usize,
    /// Accuracy (degradation) or success rate (hiding) on the target points.
    pub target_metric: f64,
    pub metrics: MetricBlock,
    pub trace: Vec<TraceRow>,
    pub rounds: Vec<RoundSummary>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.6}"))
}

impl AttackReport {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "kind={}", self.kind.as_str());
        let _ = writeln!(s, "mode={}", self.mode.as_str());
        let _ = writeln!(s, "fields={}", self.fields.as_str());
        let _ = writeln!(s, "targets={}", self.perturbation.len());
        let _ = writeln!(s, "converged={}", self.converged);
        let _ = writeln!(s, "steps_used={}", self.steps_used);
        let _ = writeln!(s, "dist_l2_color={:.9}", self.dist_l2_color);
        let _ = writeln!(s, "dist_l0_coord={}", self.dist_l0_coord);
        let _ = writeln!(s, "target_metric={:.6}", self.target_metric);
        let _ = writeln!(s, "accuracy={:.6}", m.accuracy);
        let _ = writeln!(s, "aiou={:.6}", m.aiou);
        let per: Vec<String> = m.per_class_iou.iter().map(|v| opt(*v)).collect();
        let _ = writeln!(s, "per_class_iou={}", per.join(","));
        let _ = writeln!(s, "psr={}", opt(m.psr));
        let _ = writeln!(s, "oob_accuracy={}", opt(m.oob_accuracy));
        let _ = writeln!(s, "oob_aiou={}", opt(m.oob_aiou));
        for r in &self.rounds {
            let _ = writeln!(
                s,
                "round.{}=perturbable:{},l0:{},converged:{},target_metric:{:.6}",
                r.round, r.perturbable, r.l0, r.converged, r.target_metric
            );
        }
        s
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,gain,dist,adv,smooth,best_gain,metric,noise\n");
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6},{}",
                r.step, r.gain, r.dist, r.adv, r.smooth, r.best_gain, r.metric, r.noise as u8
            );
        }
        s
    }
}
