use std::collections::BTreeMap;
use std::sync::Arc;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named tensors passed into or out of a graph evaluation.
pub type Inputs = BTreeMap<String, Tensor>;

/// A primitive with its static parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Prim {
    MatMul,
    AddBias,
    Add,
    Sub,
    Scale(f64),
    Relu,
    Tanh,
    Square,
    ConcatCols,
    GatherRows(Vec<usize>),
    GroupMax(usize),
    GroupMean(usize),
    RowMax(Option<Vec<usize>>),
    PickCols(Vec<usize>),
    RowNorm,
    SumAll,
    SoftmaxCrossEntropy(Vec<usize>),
}

impl Prim {
    fn arity(&self) -> usize {
        match self {
            Prim::MatMul | Prim::AddBias | Prim::Add | Prim::Sub | Prim::ConcatCols => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphOp {
    pub out: String,
    pub prim: Prim,
    pub args: Vec<String>,
}

/// A static op sequence over named inputs, producing one named output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    ops: Vec<GraphOp>,
    output: String,
}

/// Result of [`forward_eval`].
#[derive(Debug)]
pub struct Evaluation {
    pub tape: Tape,
    pub handles: BTreeMap<String, Var>,
    pub output: Var,
}

impl Evaluation {
    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.handles.get(name).map(|&v| self.tape.value(v))
    }

    pub fn output_value(&self) -> &Tensor {
        self.tape.value(self.output)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn op(mut self, out: &str, prim: Prim, args: &[&str]) -> Self {
        self.ops.push(GraphOp {
            out: out.to_string(),
            prim,
            args: args.iter().map(|s| s.to_string()).collect(),
        });
        self.output = out.to_string();
        self
    }

    /// Overrides the output name (defaults to the last op).
    pub fn output(mut self, name: &str) -> Self {
        self.output = name.to_string();
        self
    }

    pub fn ops(&self) -> &[GraphOp] {
        &self.ops
    }
}

/// Evaluates `graph` on `inputs`, recording a tape.
///
/// Inputs named in `track` are leaves that receive gradients. Inputs are
/// never modified.
pub fn forward_eval(graph: &Graph, inputs: &Inputs, track: &[&str]) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let mut handles = BTreeMap::new();
    for (name, t) in inputs {
        let v = tape.leaf(t.clone(), track.contains(&name.as_str()))?;
        handles.insert(name.clone(), v);
    }
    for name in track {
        if !handles.contains_key(*name) {
            return Err(Error::Grad(format!("tracked input `{name}` not supplied")));
        }
    }
    for op in &graph.ops {
        if op.args.len() != op.prim.arity() {
            return Err(Error::Shape(format!(
                "op `{}` expects {} args, got {}",
                op.out,
                op.prim.arity(),
                op.args.len()
            )));
        }
        let args = op
            .args
            .iter()
            .map(|a| {
                handles
                    .get(a)
                    .copied()
                    .ok_or_else(|| Error::Shape(format!("op `{}`: unknown value `{a}`", op.out)))
            })
            .collect::<Result<Vec<_>>>()?;
        let v = match &op.prim {
            Prim::MatMul => tape.matmul(args[0], args[1])?,
            Prim::AddBias => tape.add_bias(args[0], args[1])?,
            Prim::Add => tape.add(args[0], args[1])?,
            Prim::Sub => tape.sub(args[0], args[1])?,
            Prim::Scale(s) => tape.scale(args[0], *s)?,
            Prim::Relu => tape.relu(args[0])?,
            Prim::Tanh => tape.tanh(args[0])?,
            Prim::Square => tape.square(args[0])?,
            Prim::ConcatCols => tape.concat_cols(args[0], args[1])?,
            Prim::GatherRows(idx) => tape.gather_rows(args[0], Arc::from(idx.as_slice()))?,
            Prim::GroupMax(g) => tape.group_max(args[0], *g)?,
            Prim::GroupMean(g) => tape.group_mean(args[0], *g)?,
            Prim::RowMax(ex) => tape.row_max(args[0], ex.as_deref())?,
            Prim::PickCols(c) => tape.pick_cols(args[0], Arc::from(c.as_slice()))?,
            Prim::RowNorm => tape.row_norm(args[0])?,
            Prim::SumAll => tape.sum_all(args[0])?,
            Prim::SoftmaxCrossEntropy(y) => {
                tape.softmax_cross_entropy(args[0], Arc::from(y.as_slice()))?
            }
        };
        handles.insert(op.out.clone(), v);
    }
    let output = *handles
        .get(&graph.output)
        .ok_or_else(|| Error::Shape(format!("graph output `{}` never produced", graph.output)))?;
    Ok(Evaluation {
        tape,
        handles,
        output,
    })
}

/// Gradient of the scalar `loss` with respect to each handle in `wrt`.
///
/// Handles that are recorded and tracked but do not influence `loss` get
/// an all-zero gradient.
pub fn backward_grad(tape: &Tape, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
    for &v in wrt {
        if v.index() >= tape.len() {
            return Err(Error::Grad(format!(
                "handle {} is not recorded on this tape",
                v.index()
            )));
        }
        if !tape.requires_grad(v) {
            return Err(Error::Grad(format!(
                "handle {} was recorded without gradient tracking",
                v.index()
            )));
        }
    }
    let mut grads = tape.backward(loss)?;
    Ok(wrt
        .iter()
        .map(|&v| {
            grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
        })
        .collect())
}
