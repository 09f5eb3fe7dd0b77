use std::collections::BTreeMap;
use std::sync::Arc;

use super::model::{Fields, SegModel};
use crate::diffcore::{finite_diff_check, GradCheckReport, Inputs, ScalarFunction, Tape, Tensor};
use crate::error::{Error, Result};
use crate::pointcloud::{Neighbors, PointCloud};

/// Summed cross-entropy of a model as a function of its two input fields,
/// with the neighbor table frozen.
struct InputLoss<'a> {
    model: &'a SegModel,
    neighbors: Neighbors,
    labels: Arc<[usize]>,
}

impl InputLoss<'_> {
    fn fields<'i>(inputs: &'i Inputs) -> Result<(&'i Tensor, &'i Tensor)> {
        let get = |k: &str| inputs.get(k).ok_or_else(|| Error::Grad(format!("input `{k}` not supplied")));
        Ok((get("coords")?, get("feats")?))
    }

    fn record(&self, tape: &mut Tape, logits: crate::diffcore::Var) -> Result<crate::diffcore::Var> {
        let ce = tape.softmax_cross_entropy(logits, self.labels.clone())?;
        tape.scale(ce, self.labels.len() as f64)
    }
}

impl ScalarFunction for InputLoss<'_> {
    fn value(&self, inputs: &Inputs) -> Result<f64> {
        let (c, f) = Self::fields(inputs)?;
        let mut tape = Tape::new();
        let logits = tape.constant(self.model.forward_with(c, f, &self.neighbors)?)?;
        let l = self.record(&mut tape, logits)?;
        tape.value(l).item()
    }

    fn gradient(&self, inputs: &Inputs, wrt: &[&str]) -> Result<BTreeMap<String, Tensor>> {
        let (c, f) = Self::fields(inputs)?;
        let g = self
            .model
            .input_grad(c, f, &self.neighbors, Fields::Both, |tape, v| self.record(tape, v.logits))?;
        let mut out = BTreeMap::new();
        for name in wrt {
            let t = match *name {
                "coords" => g.coords.clone(),
                "feats" => g.feats.clone(),
                _ => None,
            };
            out.insert(
                name.to_string(),
                t.ok_or_else(|| Error::Grad(format!("no gradient for `{name}`")))?,
            );
        }
        Ok(out)
    }
}

/// Compares the model's input gradient of the summed cross-entropy against
/// central differences with step `h`, over every coordinate and color entry.
pub fn input_gradcheck(model: &SegModel, cloud: &PointCloud, h: f64) -> Result<GradCheckReport> {
    model.check_cloud(cloud)?;
    let f = InputLoss {
        model,
        neighbors: model.neighbors(cloud.coords())?,
        labels: Arc::from(cloud.require_labels()?),
    };
    let inputs: Inputs = [
        ("coords".to_string(), cloud.coords_tensor()),
        ("feats".to_string(), cloud.feats_tensor()),
    ]
    .into();
    finite_diff_check(&f, &inputs, &["coords", "feats"], h)
}
