use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pointcloud::{knn, Neighbors, PointCloud};

/// Which neighbor sets the attack gradients see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborPolicy {
    /// Neighbor indices come from the clean cloud and stay fixed.
    #[default]
    FixedFromClean,
    /// Neighbors are searched again on the current perturbed coordinates.
    RecomputeEachStep,
}

impl NeighborPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            NeighborPolicy::FixedFromClean => "fixed",
            NeighborPolicy::RecomputeEachStep => "recompute",
        }
    }
}

impl std::str::FromStr for NeighborPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed-from-clean" => Ok(Self::FixedFromClean),
            "recompute" | "recompute-each-step" => Ok(Self::RecomputeEachStep),
            _ => Err(Error::InvalidArgument(format!("unknown neighbor policy `{s}`"))),
        }
    }
}

/// Input fields an attack may perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fields {
    #[default]
    Color,
    Coords,
    Both,
}

impl Fields {
    pub fn color(self) -> bool {
        matches!(self, Fields::Color | Fields::Both)
    }

    pub fn coords(self) -> bool {
        matches!(self, Fields::Coords | Fields::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fields::Color => "color",
            Fields::Coords => "coords",
            Fields::Both => "both",
        }
    }
}

impl std::str::FromStr for Fields {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(Self::Color),
            "coords" | "coord" | "coordinate" => Ok(Self::Coords),
            "both" => Ok(Self::Both),
            _ => Err(Error::InvalidArgument(format!("unknown field selection `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub hidden: usize,
    pub k_agg: usize,
    pub num_classes: usize,
    pub num_feats: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            hidden: 64,
            k_agg: 8,
            num_classes: 6,
            num_feats: 3,
        }
    }
}

impl Arch {
    pub fn in_dim(&self) -> usize {
        3 + self.num_feats
    }

    /// Shapes of the eight parameter tensors, in storage order.
    pub fn param_shapes(&self) -> [Vec<usize>; 8] {
        let (d, h, c) = (self.in_dim(), self.hidden, self.num_classes);
        [
            vec![d, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![2 * h, h],
            vec![h],
            vec![h, c],
            vec![c],
        ]
    }
}

/// Per-point segmenter: shared MLP on `coords ‖ color`, a neighborhood block
/// joining each point's feature with the element-wise max over its k
/// nearest neighbors, and a second MLP down to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    arch: Arch,
    policy: NeighborPolicy,
    params: Vec<Tensor>,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub coords: Var,
    pub feats: Var,
    pub logits: Var,
}

/// Gradient of a scalar built from the logits, with respect to the
/// selected input fields only.
#[derive(Debug, Clone)]
pub struct InputGrad {
    pub loss: f64,
    pub logits: Tensor,
    pub coords: Option<Tensor>,
    pub feats: Option<Tensor>,
}

impl SegModel {
    /// He-uniform initialization, zero biases.
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        if arch.hidden == 0 || arch.k_agg == 0 || arch.num_classes == 0 {
            return Err(Error::InvalidArgument(format!("invalid architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let bound = (6.0 / shape[0] as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor::new(shape, data).expect("shape matches")
                }
            })
            .collect();
        Ok(Self {
            arch,
            policy: NeighborPolicy::default(),
            params,
        })
    }

    pub fn from_params(arch: Arch, policy: NeighborPolicy, params: Vec<Tensor>) -> Result<Self> {
        let shapes = arch.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::Shape(format!("expected 8 parameter tensors, got {}", params.len())));
        }
        for (p, s) in params.iter().zip(&shapes) {
            if p.shape() != s.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?}, expected {s:?}",
                    p.shape()
                )));
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("model parameters".into()));
            }
        }
        Ok(Self {
            arch,
            policy,
            params,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn policy(&self) -> NeighborPolicy {
        self.policy
    }

    pub fn with_policy(mut self, policy: NeighborPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.num_feats() != self.arch.num_feats {
            return Err(Error::Shape(format!(
                "cloud has K={} features, model expects {}",
                cloud.num_feats(),
                self.arch.num_feats
            )));
        }
        if cloud.num_classes() != self.arch.num_classes {
            return Err(Error::Shape(format!(
                "cloud declares C={}, model predicts {}",
                cloud.num_classes(),
                self.arch.num_classes
            )));
        }
        if cloud.len() <= self.arch.k_agg {
            return Err(Error::InvalidArgument(format!(
                "{} points is too few to aggregate over {} neighbors",
                cloud.len(),
                self.arch.k_agg
            )));
        }
        Ok(())
    }

    /// Aggregation neighbors of a cloud's own coordinates.
    pub fn neighbors(&self, coords: &[[f64; 3]]) -> Result<Neighbors> {
        if coords.len() <= self.arch.k_agg {
            return Err(Error::InvalidArgument(format!(
                "{} points is too few to aggregate over {} neighbors",
                coords.len(),
                self.arch.k_agg
            )));
        }
        knn(coords, self.arch.k_agg, None)
    }

    /// Records the network on `tape`. Parameters are leaves with
    /// `track_params` gradient tracking; returns logits and parameter handles.
    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        coords: Var,
        feats: Var,
        neighbors: &Neighbors,
        track_params: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let n = tape.value(coords).rows();
        if neighbors.k() != self.arch.k_agg || neighbors.rows() != n {
            return Err(Error::Shape(format!(
                "neighbor table {}x{} for {n} points with k_agg={}",
                neighbors.rows(),
                neighbors.k(),
                self.arch.k_agg
            )));
        }
        let p = self
            .params
            .iter()
            .map(|t| tape.leaf(t.clone(), track_params))
            .collect::<Result<Vec<_>>>()?;
        let x = tape.concat_cols(coords, feats)?;
        let h = tape.matmul(x, p[0])?;
        let h = tape.add_bias(h, p[1])?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, p[2])?;
        let h = tape.add_bias(h, p[3])?;
        let h = tape.relu(h)?;
        let gathered = tape.gather_rows(h, Arc::from(neighbors.flat()))?;
        let pooled = tape.group_max(gathered, self.arch.k_agg)?;
        let z = tape.concat_cols(h, pooled)?;
        let z = tape.matmul(z, p[4])?;
        let z = tape.add_bias(z, p[5])?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, p[6])?;
        let logits = tape.add_bias(z, p[7])?;
        Ok((logits, p))
    }

    /// Logits with caller-supplied aggregation neighbors.
    pub fn forward_with(&self, coords: &Tensor, feats: &Tensor, neighbors: &Neighbors) -> Result<Tensor> {
        let mut tape = Tape::new();
        let c = tape.constant(coords.clone())?;
        let f = tape.constant(feats.clone())?;
        let (logits, _) = self.record(&mut tape, c, f, neighbors, false)?;
        Ok(tape.value(logits).clone())
    }

    /// N×C logits; neighbors are searched on the cloud's own coordinates.
    pub fn forward(&self, cloud: &PointCloud) -> Result<Tensor> {
        self.check_cloud(cloud)?;
        let nb = self.neighbors(cloud.coords())?;
        self.forward_with(&cloud.coords_tensor(), &cloud.feats_tensor(), &nb)
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        Ok(predict_labels(&self.forward(cloud)?))
    }

    /// Gradient of `loss(logits)` with respect to the selected fields.
    /// `neighbors` are constants of differentiation.
    pub fn input_grad<F>(
        &self,
        coords: &Tensor,
        feats: &Tensor,
        neighbors: &Neighbors,
        fields: Fields,
        loss: F,
    ) -> Result<InputGrad>
    where
        F: FnOnce(&mut Tape, &ModelVars) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let c = tape.leaf(coords.clone(), fields.coords())?;
        let f = tape.leaf(feats.clone(), fields.color())?;
        let (logits, _) = self.record(&mut tape, c, f, neighbors, false)?;
        let vars = ModelVars {
            coords: c,
            feats: f,
            logits,
        };
        let out = loss(&mut tape, &vars)?;
        let value = tape.value(out).item()?;
        let mut grads = tape.backward(out)?;
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Ok(InputGrad {
            loss: value,
            logits: tape.value(logits).clone(),
            coords: fields
                .coords()
                .then(|| grads.take(c).unwrap_or_else(|| zeros(coords))),
            feats: fields
                .color()
                .then(|| grads.take(f).unwrap_or_else(|| zeros(feats))),
        })
    }

    /// [`SegModel::input_grad`] on a cloud, with neighbors from its own coordinates.
    pub fn input_grad_cloud<F>(&self, cloud: &PointCloud, fields: Fields, loss: F) -> Result<InputGrad>
    where
        F: FnOnce(&mut Tape, &ModelVars) -> Result<Var>,
    {
        self.check_cloud(cloud)?;
        let nb = self.neighbors(cloud.coords())?;
        self.input_grad(&cloud.coords_tensor(), &cloud.feats_tensor(), &nb, fields, loss)
    }
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict_labels(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
