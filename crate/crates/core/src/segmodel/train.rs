use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{predict_labels, SegModel};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::pointcloud::{Neighbors, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 2,
            lr: 0.003,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Point accuracy over the training scenes, measured during the epoch.
    pub epoch_accuracy: Vec<f64>,
}

/// Minimizes mean cross-entropy with Adam. Deterministic in `cfg.seed`.
pub fn train(model: &SegModel, scenes: &[PointCloud], cfg: &TrainConfig) -> Result<(SegModel, TrainLog)> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no training scenes".into()));
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(format!("invalid train config {cfg:?}")));
    }
    let mut prepared: Vec<(Neighbors, Arc<[usize]>)> = Vec::with_capacity(scenes.len());
    for s in scenes {
        model.check_cloud(s)?;
        let labels = s.require_labels()?;
        prepared.push((model.neighbors(s.coords())?, Arc::from(labels)));
    }

    let mut model = model.clone();
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((model, log));
    }
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut flat: Vec<f64> = model.params().iter().flat_map(|p| p.data().iter().copied()).collect();
    let mut adam = Adam::new(total, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let mut points = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; total];
            for &si in batch {
                let scene = &scenes[si];
                let (nb, labels) = &prepared[si];
                let mut tape = Tape::new();
                let c = tape.constant(scene.coords_tensor())?;
                let f = tape.constant(scene.feats_tensor())?;
                let (logits, pvars) = model.record(&mut tape, c, f, nb, true)?;
                let loss = tape.softmax_cross_entropy(logits, labels.clone())?;
                loss_sum += tape.value(loss).item()?;
                let pred = predict_labels(tape.value(logits));
                hits += pred.iter().zip(labels.iter()).filter(|(a, b)| a == b).count();
                points += pred.len();
                let grads = tape.backward(loss)?;
                let mut off = 0;
                for (pv, &len) in pvars.iter().zip(&sizes) {
                    if let Some(g) = grads.get(*pv) {
                        for (acc, v) in grad[off..off + len].iter_mut().zip(g.data()) {
                            *acc += v / batch.len() as f64;
                        }
                    }
                    off += len;
                }
            }
            adam.step(&mut flat, &grad);
            let mut off = 0;
            for p in model.params_mut() {
                let len = p.len();
                p.data_mut().copy_from_slice(&flat[off..off + len]);
                off += len;
            }
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters during training".into()));
        }
        log.epoch_loss.push(loss_sum / scenes.len() as f64);
        log.epoch_accuracy.push(hits as f64 / points as f64);
    }
    Ok((model, log))
}
