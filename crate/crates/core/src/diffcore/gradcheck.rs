use std::collections::BTreeMap;

use super::graph::{backward_grad, forward_eval, Graph, Inputs};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so entries where both gradients
/// are numerically zero do not blow up.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// A scalar function of named tensors that can report its own gradient.
pub trait ScalarFunction {
    fn value(&self, inputs: &Inputs) -> Result<f64>;
    fn gradient(&self, inputs: &Inputs, wrt: &[&str]) -> Result<BTreeMap<String, Tensor>>;
}

impl ScalarFunction for Graph {
    fn value(&self, inputs: &Inputs) -> Result<f64> {
        forward_eval(self, inputs, &[])?.output_value().item()
    }

    fn gradient(&self, inputs: &Inputs, wrt: &[&str]) -> Result<BTreeMap<String, Tensor>> {
        let ev = forward_eval(self, inputs, wrt)?;
        let handles: Vec<_> = wrt.iter().map(|n| ev.handles[*n]).collect();
        let grads = backward_grad(&ev.tape, ev.output, &handles)?;
        Ok(wrt.iter().map(|n| n.to_string()).zip(grads).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub input: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    /// Fraction of entries whose relative error is at most `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.entries.is_empty() {
            return 1.0;
        }
        let ok = self.entries.iter().filter(|e| e.rel_error <= tol).count();
        ok as f64 / self.entries.len() as f64
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.entries.extend(other.entries);
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients against central differences with step `h`.
pub fn finite_diff_check<F: ScalarFunction + ?Sized>(
    f: &F,
    inputs: &Inputs,
    wrt: &[&str],
    h: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let analytic = f.gradient(inputs, wrt)?;
    let mut entries = Vec::new();
    let mut max_rel_error = 0.0f64;
    let mut probe = inputs.clone();
    for name in wrt {
        let base = inputs
            .get(*name)
            .ok_or_else(|| Error::Grad(format!("input `{name}` not supplied")))?;
        let grad = &analytic[*name];
        for index in 0..base.len() {
            let orig = base.data()[index];
            probe.get_mut(*name).unwrap().data_mut()[index] = orig + h;
            let up = f.value(&probe)?;
            probe.get_mut(*name).unwrap().data_mut()[index] = orig - h;
            let down = f.value(&probe)?;
            probe.get_mut(*name).unwrap().data_mut()[index] = orig;
            let numeric = (up - down) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!(
                    "difference quotient for `{name}`[{index}]"
                )));
            }
            let a = grad.data()[index];
            let rel_error = relative_error(a, numeric);
            max_rel_error = max_rel_error.max(rel_error);
            entries.push(GradEntry {
                input: name.to_string(),
                index,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    Ok(GradCheckReport {
        entries,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::graph::Prim;

    #[test]
    fn quadratic_matches_exactly() {
        let g = Graph::new()
            .op("x2", Prim::Square, &["x"])
            .op("s", Prim::SumAll, &["x2"]);
        let ins: Inputs = [("x".to_string(), Tensor::scalar(3.0))].into();
        let rep = finite_diff_check(&g, &ins, &["x"], 1e-4).unwrap();
        assert_eq!(rep.entries[0].analytic, 6.0);
        assert!((rep.entries[0].numeric - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        // sum(0 * x) is constant in x.
        let g = Graph::new()
            .op("z", Prim::Scale(0.0), &["x"])
            .op("s", Prim::SumAll, &["z"]);
        let ins: Inputs = [("x".to_string(), Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap())].into();
        let rep = finite_diff_check(&g, &ins, &["x"], 1e-3).unwrap();
        assert!(rep.entries.iter().all(|e| e.analytic == 0.0 && e.numeric == 0.0));
        assert_eq!(rep.max_rel_error, 0.0);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let g = Graph::new().op("s", Prim::SumAll, &["x"]);
        let ins: Inputs = [("x".to_string(), Tensor::scalar(1.0))].into();
        assert!(finite_diff_check(&g, &ins, &["x"], 0.0).is_err());
    }
}
