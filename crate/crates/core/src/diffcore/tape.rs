use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    GroupMax { x: Var, argmax: Vec<usize> },
    GroupMean { x: Var, group: usize },
    RowMax { x: Var, argmax: Vec<usize> },
    PickCols(Var, Arc<[usize]>),
    RowNorm(Var),
    SumAll(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Arc<[usize]>, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive operations in evaluation order.
///
/// Every method both computes its output and appends it to the tape, so
/// the node list is always topologically ordered. Gradients are only
/// propagated through nodes that depend on a leaf created with
/// `requires_grad = true`.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf input".into()));
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, what: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Grad(format!("handle {} is not recorded on this tape", v.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let (n, k) = ta.ensure_2d("matmul lhs")?;
        let (k2, m) = tb.ensure_2d("matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let value = Tensor::matrix(n, m, out)?;
        self.record("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a length-M bias to every row of an N×M matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.check(x)?, self.check(bias)?);
        let (n, m) = tx.ensure_2d("add_bias")?;
        if tb.len() != m {
            return Err(Error::Shape(format!(
                "add_bias: bias of {} values for {} columns",
                tb.len(),
                m
            )));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_exact_mut(m) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        self.record("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.record("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.record("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let value = self.check(x)?.map(|v| v * s);
        self.record("scale", value, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.check(x)?.map(|v| v.max(0.0));
        self.record("relu", value, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.check(x)?.map(f64::tanh);
        self.record("tanh", value, Op::Tanh(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.check(x)?.map(|v| v * v);
        self.record("square", value, Op::Square(x), &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let (n, ca) = ta.ensure_2d("concat lhs")?;
        let (n2, cb) = tb.ensure_2d("concat rhs")?;
        if n != n2 {
            return Err(Error::Shape(format!("concat_cols: {n} vs {n2} rows")));
        }
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(ta.row(i));
            out.extend_from_slice(tb.row(i));
        }
        let value = Tensor::matrix(n, ca + cb, out)?;
        self.record("concat_cols", value, Op::ConcatCols(a, b), &[a, b])
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let tx = self.check(x)?;
        let (n, c) = tx.ensure_2d("gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather_rows: index {bad} >= {n}")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(tx.row(i));
        }
        let value = Tensor::matrix(idx.len(), c, out)?;
        self.record("gather_rows", value, Op::GatherRows(x, idx), &[x])
    }

    /// Column-wise max over consecutive blocks of `group` rows.
    ///
    /// Ties resolve to the lowest row in the block, and the whole upstream
    /// gradient is routed to that row.
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let tx = self.check(x)?;
        let (n, c) = tx.ensure_2d("group_max")?;
        if group == 0 || n % group != 0 {
            return Err(Error::Shape(format!(
                "group_max: {n} rows not divisible into groups of {group}"
            )));
        }
        let g = n / group;
        let mut out = vec![f64::NEG_INFINITY; g * c];
        let mut argmax = vec![0usize; g * c];
        let data = tx.data();
        for b in 0..g {
            for r in b * group..(b + 1) * group {
                let row = &data[r * c..(r + 1) * c];
                for j in 0..c {
                    if row[j] > out[b * c + j] {
                        out[b * c + j] = row[j];
                        argmax[b * c + j] = r;
                    }
                }
            }
        }
        let value = Tensor::matrix(g, c, out)?;
        self.record("group_max", value, Op::GroupMax { x, argmax }, &[x])
    }

    /// Column-wise mean over consecutive blocks of `group` rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let tx = self.check(x)?;
        let (n, c) = tx.ensure_2d("group_mean")?;
        if group == 0 || n % group != 0 {
            return Err(Error::Shape(format!(
                "group_mean: {n} rows not divisible into groups of {group}"
            )));
        }
        let g = n / group;
        let mut out = vec![0.0; g * c];
        for r in 0..n {
            let b = r / group;
            for (o, v) in out[b * c..(b + 1) * c].iter_mut().zip(tx.row(r)) {
                *o += v / group as f64;
            }
        }
        let value = Tensor::matrix(g, c, out)?;
        self.record("group_mean", value, Op::GroupMean { x, group }, &[x])
    }

    /// Per-row maximum, optionally skipping one column per row. N×1 output.
    ///
    /// Ties resolve to the lowest column index, which receives the full
    /// upstream gradient.
    pub fn row_max(&mut self, x: Var, exclude: Option<&[usize]>) -> Result<Var> {
        let tx = self.check(x)?;
        let (n, c) = tx.ensure_2d("row_max")?;
        if let Some(ex) = exclude {
            if ex.len() != n {
                return Err(Error::Shape(format!(
                    "row_max: {} exclusions for {n} rows",
                    ex.len()
                )));
            }
            if c < 2 {
                return Err(Error::Shape("row_max: excluding a column needs C >= 2".into()));
            }
        } else if c == 0 {
            return Err(Error::Shape("row_max: zero columns".into()));
        }
        let mut out = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        for i in 0..n {
            let skip = exclude.map(|e| e[i]);
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for (j, &v) in tx.row(i).iter().enumerate() {
                if Some(j) == skip {
                    continue;
                }
                if arg == usize::MAX || v > best {
                    best = v;
                    arg = j;
                }
            }
            out.push(best);
            argmax.push(arg);
        }
        let value = Tensor::matrix(n, 1, out)?;
        self.record("row_max", value, Op::RowMax { x, argmax }, &[x])
    }

    /// Picks column `cols[i]` from row `i`. N×1 output.
    pub fn pick_cols(&mut self, x: Var, cols: Arc<[usize]>) -> Result<Var> {
        let tx = self.check(x)?;
        let (n, c) = tx.ensure_2d("pick_cols")?;
        if cols.len() != n || cols.iter().any(|&j| j >= c) {
            return Err(Error::Shape(format!(
                "pick_cols: {} column picks for {n}x{c}",
                cols.len()
            )));
        }
        let out = cols.iter().enumerate().map(|(i, &j)| tx.get(i, j)).collect();
        let value = Tensor::matrix(n, 1, out)?;
        self.record("pick_cols", value, Op::PickCols(x, cols), &[x])
    }

    /// Euclidean norm of each row. N×1 output; gradient at a zero row is zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let tx = self.check(x)?;
        let (n, _) = tx.ensure_2d("row_norm")?;
        let out = (0..n)
            .map(|i| tx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::matrix(n, 1, out)?;
        self.record("row_norm", value, Op::RowNorm(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.check(x)?.sum());
        self.record("sum_all", value, Op::SumAll(x), &[x])
    }

    /// Mean softmax cross-entropy of N×C logits against N labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        let tx = self.check(logits)?;
        let (n, c) = tx.ensure_2d("softmax_cross_entropy")?;
        if labels.len() != n || labels.iter().any(|&y| y >= c) || n == 0 {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {} labels for {n}x{c} logits",
                labels.len()
            )));
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = tx.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            loss += -(row[labels[i]] - m - z.ln());
        }
        let value = Tensor::scalar(loss / n as f64);
        self.record(
            "softmax_cross_entropy",
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
            &[logits],
        )
    }

    /// Reverse pass from a scalar node. Visits each recorded op once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let tl = self.check(loss)?;
        if tl.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                tl.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::filled(tl.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (n, k) = (ta.rows(), ta.cols());
                let m = tb.cols();
                self.accumulate(grads, *a, |ga| {
                    gemm(n, m, k, gd, false, tb.data(), true, ga, 1.0);
                });
                self.accumulate(grads, *b, |gb| {
                    gemm(k, n, m, ta.data(), true, gd, false, gb, 1.0);
                });
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, |gx| add_into(gx, gd));
                let m = g.cols();
                self.accumulate(grads, *bias, |gb| {
                    for row in gd.chunks_exact(m) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| {
                    for (o, v) in gb.iter_mut().zip(gd) {
                        *o -= v;
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, |gx| {
                    for (o, v) in gx.iter_mut().zip(gd) {
                        *o += s * v;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.data();
                self.accumulate(grads, *x, |gx| {
                    for ((o, v), &xi) in gx.iter_mut().zip(gd).zip(xv) {
                        if xi > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for ((o, v), &y) in gx.iter_mut().zip(gd).zip(yv) {
                        *o += v * (1.0 - y * y);
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.nodes[x.0].value.data();
                self.accumulate(grads, *x, |gx| {
                    for ((o, v), &xi) in gx.iter_mut().zip(gd).zip(xv) {
                        *o += 2.0 * xi * v;
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.cols();
                let cb = self.nodes[b.0].value.cols();
                self.accumulate(grads, *a, |ga| {
                    for (dst, src) in ga.chunks_exact_mut(ca).zip(gd.chunks_exact(ca + cb)) {
                        add_into(dst, &src[..ca]);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (dst, src) in gb.chunks_exact_mut(cb).zip(gd.chunks_exact(ca + cb)) {
                        add_into(dst, &src[ca..]);
                    }
                });
            }
            Op::GatherRows(x, idx) => {
                let c = g.cols();
                self.accumulate(grads, *x, |gx| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut gx[i * c..(i + 1) * c], &gd[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::GroupMax { x, argmax } => {
                let c = g.cols();
                self.accumulate(grads, *x, |gx| {
                    for (p, (&r, v)) in argmax.iter().zip(gd).enumerate() {
                        gx[r * c + p % c] += v;
                    }
                });
            }
            Op::GroupMean { x, group } => {
                let c = g.cols();
                let n = self.nodes[x.0].value.rows();
                self.accumulate(grads, *x, |gx| {
                    for r in 0..n {
                        let b = r / group;
                        for j in 0..c {
                            gx[r * c + j] += gd[b * c + j] / *group as f64;
                        }
                    }
                });
            }
            Op::RowMax { x, argmax } => {
                let c = self.nodes[x.0].value.cols();
                self.accumulate(grads, *x, |gx| {
                    for (i, (&j, v)) in argmax.iter().zip(gd).enumerate() {
                        gx[i * c + j] += v;
                    }
                });
            }
            Op::PickCols(x, cols) => {
                let c = self.nodes[x.0].value.cols();
                self.accumulate(grads, *x, |gx| {
                    for (i, (&j, v)) in cols.iter().zip(gd).enumerate() {
                        gx[i * c + j] += v;
                    }
                });
            }
            Op::RowNorm(x) => {
                let tx = &self.nodes[x.0].value;
                let c = tx.cols();
                let norms = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for (i, (&nrm, v)) in norms.iter().zip(gd).enumerate() {
                        if nrm > 0.0 {
                            for j in 0..c {
                                gx[i * c + j] += v * tx.data()[i * c + j] / nrm;
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let v = gd[0];
                self.accumulate(grads, *x, |gx| {
                    for o in gx.iter_mut() {
                        *o += v;
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let c = probs.len() / n;
                let s = gd[0] / n as f64;
                self.accumulate(grads, *logits, |gx| {
                    for i in 0..n {
                        for j in 0..c {
                            let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                            gx[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

/// `c = op(a) · op(b) + beta · c` with `op(a)` m×k and `op(b)` k×n,
/// all buffers row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // op(a)[i][p] lives at a[i*k + p], or at a[p*m + i] when transposed.
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the asserted buffer
    // extents, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[-1.0, 0.0, 2.0]]), false).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let eye = tape
            .constant(t(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]))
            .unwrap();
        let v = tape.constant(t(&[&[0.3], &[-7.0], &[2.5]])).unwrap();
        let y = tape.matmul(eye, v).unwrap();
        assert_eq!(tape.value(y).data(), &[0.3, -7.0, 2.5]);
    }

    #[test]
    fn transposed_gemm_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, -1.0, 0.5, 2.0, 0.0, 1.0]; // 2x3
        // a^T b : 3x3
        let mut c = vec![0.0; 9];
        gemm(3, 2, 3, &a, true, &b, false, &mut c, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|p| a[p * 3 + i] * b[p * 3 + j]).sum();
                assert_eq!(c[i * 3 + j], want);
            }
        }
        // a b^T : 2x2
        let mut c = vec![0.0; 4];
        gemm(2, 3, 2, &a, false, &b, true, &mut c, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[j * 3 + p]).sum();
                assert_eq!(c[i * 2 + j], want);
            }
        }
    }

    #[test]
    fn row_max_ties_route_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[2.0, 2.0, 1.0], &[0.0, 5.0, 5.0]]), true).unwrap();
        let m = tape.row_max(x, None).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 5.0]);
        let s = tape.sum_all(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(
            g.get(x).unwrap().data(),
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn row_max_with_exclusion() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[9.0, 3.0, 2.0], &[1.0, 3.0, 2.0]]), false).unwrap();
        let m = tape.row_max(x, Some(&[0, 1])).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 2.0]);
        let one_col = tape.leaf(t(&[&[1.0]]), false).unwrap();
        assert!(tape.row_max(one_col, Some(&[0])).is_err());
    }

    #[test]
    fn group_max_ties_lowest_row() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(t(&[&[1.0, 4.0], &[1.0, 5.0], &[0.0, 0.0], &[-1.0, 0.0]]), true)
            .unwrap();
        let m = tape.group_max(x, 2).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 5.0, 0.0, 0.0]);
        let s = tape.sum_all(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(
            g.get(x).unwrap().data(),
            &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap(), true)
            .unwrap();
        let s = tape.sum_all(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(g.get(x).unwrap().shape(), &[2, 3, 2]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3, 2]), true).unwrap();
        let y = tape.tanh(x).unwrap();
        let s = tape.sum_all(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[1.0, 2.0]]), true).unwrap();
        let w = tape.constant(t(&[&[1.0], &[1.0]])).unwrap();
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum_all(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::new();
        assert!(matches!(
            tape.leaf(t(&[&[f64::NAN]]), false),
            Err(Error::NonFinite(_))
        ));
        let x = tape.leaf(t(&[&[1e300]]), false).unwrap();
        assert!(matches!(tape.square(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[2, 4]), true).unwrap();
        let l = tape.softmax_cross_entropy(z, Arc::from(vec![0, 3])).unwrap();
        assert!((tape.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        let gz = g.get(z).unwrap();
        assert!((gz.get(0, 0) - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!((gz.get(0, 1) - 0.25 / 2.0).abs() < 1e-12);
    }
}
