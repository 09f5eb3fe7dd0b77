//! Input-filtering defenses: simple random sampling and statistical
//! outlier removal over joint coordinate and color distances.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{self, MetricBlock};
use crate::pointcloud::{knn_points, PointCloud};
use crate::segmodel::SegModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defense {
    None,
    Srs,
    Sor,
}

impl Defense {
    pub fn as_str(self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Srs => "srs",
            Defense::Sor => "sor",
        }
    }
}

impl FromStr for Defense {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Defense::None),
            "srs" => Ok(Defense::Srs),
            "sor" => Ok(Defense::Sor),
            _ => Err(Error::InvalidArgument(format!("unknown defense `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseConfig {
    /// Points removed by SRS (or kept, with `srs_count_is_kept`).
    pub srs_count: usize,
    pub srs_count_is_kept: bool,
    pub sor_k: usize,
    pub sor_std_mult: f64,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            srs_count: 50,
            srs_count_is_kept: false,
            sor_k: 2,
            sor_std_mult: 1.0,
            seed: 0,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sor_k < 1 {
            return Err(Error::InvalidArgument("sor_k must be >= 1".into()));
        }
        if !(self.sor_std_mult > 0.0) {
            return Err(Error::InvalidArgument("sor_std_mult must be > 0".into()));
        }
        Ok(())
    }
}

/// Surviving points and their indices in the input, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub cloud: PointCloud,
    pub kept: Vec<usize>,
}

fn keep_rows(cloud: &PointCloud, kept: Vec<usize>) -> Result<Filtered> {
    Ok(Filtered {
        cloud: cloud.select(&kept)?,
        kept,
    })
}

/// Removes `m` points chosen uniformly without replacement.
pub fn srs(cloud: &PointCloud, m: usize, seed: u64) -> Result<Filtered> {
    let n = cloud.len();
    if m >= n {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {m} of {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut removed = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, m) {
        removed[i] = true;
    }
    keep_rows(cloud, (0..n).filter(|&i| !removed[i]).collect())
}

/// Per-point mean distance to the `k` nearest neighbors in
/// `coords ‖ feats` space.
pub fn sor_scores(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    let d = 3 + cloud.num_feats();
    let full = cloud.full_vectors();
    let nb = knn_points(&full, d, k, None)?;
    Ok((0..cloud.len())
        .map(|i| {
            let pi = &full[i * d..(i + 1) * d];
            nb.row(i)
                .iter()
                .map(|&j| {
                    let pj = &full[j * d..(j + 1) * d];
                    pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / k as f64
        })
        .collect())
}

/// Removes points whose mean neighbor distance exceeds
/// `mean + std_mult · std` over the cloud. Returns survivors and the
/// removed indices.
pub fn sor(cloud: &PointCloud, k: usize, std_mult: f64) -> Result<(Filtered, Vec<usize>)> {
    if !(std_mult > 0.0) {
        return Err(Error::InvalidArgument(format!("std_mult {std_mult} must be > 0")));
    }
    let scores = sor_scores(cloud, k)?;
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
    let threshold = mean + std_mult * std;
    let (removed, kept): (Vec<usize>, Vec<usize>) = (0..scores.len()).partition(|&i| scores[i] > threshold);
    Ok((keep_rows(cloud, kept)?, removed))
}

/// Applies the defense from the config.
pub fn apply_defense(cloud: &PointCloud, defense: Defense, cfg: &DefenseConfig) -> Result<Filtered> {
    cfg.validate()?;
    match defense {
        Defense::None => keep_rows(cloud, (0..cloud.len()).collect()),
        Defense::Srs => {
            let m = if cfg.srs_count_is_kept {
                cloud.len().checked_sub(cfg.srs_count).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "cannot keep {} of {} points",
                        cfg.srs_count,
                        cloud.len()
                    ))
                })?
            } else {
                cfg.srs_count
            };
            srs(cloud, m, cfg.seed)
        }
        Defense::Sor => Ok(sor(cloud, cfg.sor_k, cfg.sor_std_mult)?.0),
    }
}

/// Filters the cloud, reruns the model and scores the survivors against
/// their ground truth.
pub fn defended_eval(model: &SegModel, cloud: &PointCloud, defense: Defense, cfg: &DefenseConfig) -> Result<MetricBlock> {
    let f = apply_defense(cloud, defense, cfg)?;
    if f.cloud.is_empty() {
        return Err(Error::InvalidArgument("defense removed every point".into()));
    }
    let pred = model.predict(&f.cloud)?;
    metrics::evaluate(&pred, f.cloud.require_labels()?, cloud.num_classes())
}
