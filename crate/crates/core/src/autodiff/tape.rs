use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::graph::CsrMatrix;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Spmm(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    RowSoftmax(Var),
    MeanRows(Var),
    MeanCols(Var),
    Sum(Var),
    SumSquares(Var),
    Transpose(Var),
    PadCols(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        probs: Tensor,
        targets: Vec<(usize, usize)>,
    },
    SoftCrossEntropy {
        logits: Var,
        probs: Tensor,
        target: Tensor,
        rows: Vec<usize>,
    },
    CosineDistance(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation over 2-D tensors so it can be replayed
/// backwards. Nodes are stored in creation order, which is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tape node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not influence the loss or is a constant.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when it has none.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v`'s value as a constant; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn spmm(&mut self, s: &Arc<CsrMatrix>, h: Var) -> Result<Var> {
        let value = s.spmm(self.value(h))?;
        let rg = self.rg(h);
        Ok(self.push(value, Op::Spmm(Arc::clone(s), h), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = self.value(a).row_softmax();
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    /// `n×d → 1×d` mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rows() == 0 {
            return Err(Error::Structural("mean_rows of an empty tensor".into()));
        }
        let value = self.value(a).mean_rows();
        let rg = self.rg(a);
        Ok(self.push(value, Op::MeanRows(a), rg))
    }

    /// `n×d → n×1` mean over columns.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        if self.value(a).cols() == 0 {
            return Err(Error::Structural("mean_cols of an empty tensor".into()));
        }
        let value = self.value(a).mean_cols();
        let rg = self.rg(a);
        Ok(self.push(value, Op::MeanCols(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum_squares());
        let rg = self.rg(a);
        self.push(value, Op::SumSquares(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Appends zero columns up to `cols`.
    pub fn pad_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        if self.value(a).cols() == cols {
            return Ok(a);
        }
        let value = self.value(a).pad_cols(cols)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::PadCols(a), rg))
    }

    /// Stacks tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Structural("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err(
                    "concat_rows",
                    self.value(*first).shape(),
                    t.shape(),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Places tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Structural("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err(
                    "concat_cols",
                    self.value(*first).shape(),
                    t.shape(),
                ));
            }
            cols += t.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                for c in 0..t.cols() {
                    value.set(r, offset + c, t.get(r, c));
                }
            }
            offset += t.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Mean softmax cross-entropy over the rows selected by `mask`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
        let z = self.value(logits);
        let (n, c) = z.shape();
        if labels.len() != n || mask.len() != n {
            return Err(Error::Structural(format!(
                "cross_entropy: {n} rows but {} labels and {} mask entries",
                labels.len(),
                mask.len()
            )));
        }
        let mut targets = Vec::new();
        for (i, (&y, &m)) in labels.iter().zip(mask).enumerate() {
            if m {
                if y >= c {
                    return Err(Error::Domain(format!(
                        "label {y} at row {i} >= {c} classes"
                    )));
                }
                targets.push((i, y));
            }
        }
        if targets.is_empty() {
            return Err(Error::Contract("cross_entropy mask selects no rows".into()));
        }
        let log_probs = z.row_log_softmax();
        let loss = -targets
            .iter()
            .map(|&(i, y)| log_probs.get(i, y))
            .sum::<f64>()
            / targets.len() as f64;
        let probs = log_probs.map(f64::exp);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets,
            },
            rg,
        ))
    }

    /// Mean over masked rows of `KL(target_row ‖ softmax(logits_row))`.
    ///
    /// Differs from the cross-entropy against `target` only by the target's
    /// entropy, so the gradient is identical and the minimum is zero.
    pub fn soft_cross_entropy(
        &mut self,
        logits: Var,
        target: &Tensor,
        mask: &[bool],
    ) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(shape_err("soft_cross_entropy", z.shape(), target.shape()));
        }
        if mask.len() != z.rows() {
            return Err(Error::Structural("soft_cross_entropy mask length".into()));
        }
        let rows: Vec<usize> = (0..z.rows()).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return Err(Error::Contract(
                "soft_cross_entropy mask selects no rows".into(),
            ));
        }
        let log_q = z.row_log_softmax();
        let mut total = 0.0;
        for &i in &rows {
            for (c, &p) in target.row(i).iter().enumerate() {
                if p > 0.0 {
                    total += p * (p.ln() - log_q.get(i, c));
                }
            }
        }
        let loss = total / rows.len() as f64;
        let probs = log_q.map(f64::exp);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftCrossEntropy {
                logits,
                probs,
                target: target.clone(),
                rows,
            },
            rg,
        ))
    }

    /// `1 − cos(a, b)` treating both tensors as flat vectors.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("cosine_distance", x.shape(), y.shape()));
        }
        let (nx, ny) = (x.frobenius(), y.frobenius());
        if nx == 0.0 || ny == 0.0 {
            return Err(Error::DegenerateVector(
                "cosine distance of a zero-norm vector".into(),
            ));
        }
        let dot: f64 = x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum();
        let value = Tensor::scalar(1.0 - dot / (nx * ny));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::CosineDistance(a, b), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        // Interior nodes keep their gradients too; constants never get one.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b))?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g)?)?;
                }
            }
            Op::Spmm(s, h) => self.accumulate(grads, *h, s.spmm_transpose(g)?)?,
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::Relu(a) => {
                let mask = self.value(*a);
                let d = g.zip_map(
                    mask,
                    "relu_backward",
                    |gv, x| if x > 0.0 { gv } else { 0.0 },
                )?;
                self.accumulate(grads, *a, d)?;
            }
            Op::RowSoftmax(a) => {
                let cols = out.cols();
                let mut d = Tensor::zeros(out.rows(), cols);
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..cols {
                        d.set(r, c, y[c] * (gr[c] - dot));
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::MeanRows(a) => {
                let input = self.value(*a);
                let inv = 1.0 / input.rows() as f64;
                let row: Vec<f64> = g.row(0).iter().map(|v| v * inv).collect();
                let data = row.repeat(input.rows());
                self.accumulate(
                    grads,
                    *a,
                    Tensor::from_vec(input.rows(), input.cols(), data)?,
                )?;
            }
            Op::MeanCols(a) => {
                let input = self.value(*a);
                let inv = 1.0 / input.cols() as f64;
                let mut d = Tensor::zeros(input.rows(), input.cols());
                for r in 0..input.rows() {
                    let v = g.get(r, 0) * inv;
                    for c in 0..input.cols() {
                        d.set(r, c, v);
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Sum(a) => {
                let input = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    Tensor::filled(input.rows(), input.cols(), g.get(0, 0)),
                )?;
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.get(0, 0);
                self.accumulate(grads, *a, self.value(*a).scale(s))?;
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose())?,
            Op::PadCols(a) => {
                let cols = self.value(*a).cols();
                self.accumulate(grads, *a, g.take_cols(cols)?)?;
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    self.accumulate(grads, p, Tensor::from_vec(rows, cols, slice)?)?;
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let mut d = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            d.set(r, c, g.get(r, offset + c));
                        }
                    }
                    self.accumulate(grads, p, d)?;
                    offset += cols;
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let scale = g.get(0, 0) / targets.len() as f64;
                let mut d = Tensor::zeros(probs.rows(), probs.cols());
                for &(i, y) in targets {
                    for c in 0..probs.cols() {
                        let onehot = if c == y { 1.0 } else { 0.0 };
                        d.set(i, c, (probs.get(i, c) - onehot) * scale);
                    }
                }
                self.accumulate(grads, *logits, d)?;
            }
            Op::SoftCrossEntropy {
                logits,
                probs,
                target,
                rows,
            } => {
                let scale = g.get(0, 0) / rows.len() as f64;
                let mut d = Tensor::zeros(probs.rows(), probs.cols());
                for &i in rows {
                    let mass: f64 = target.row(i).iter().sum();
                    for c in 0..probs.cols() {
                        d.set(i, c, (mass * probs.get(i, c) - target.get(i, c)) * scale);
                    }
                }
                self.accumulate(grads, *logits, d)?;
            }
            Op::CosineDistance(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (nx, ny) = (x.frobenius(), y.frobenius());
                let dot: f64 = x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum();
                let gs = g.get(0, 0);
                // d(1 - cos)/dx = -(y / (|x||y|) - dot * x / (|x|^3 |y|))
                if self.rg(*a) {
                    let d = y.zip_map(x, "cosine_backward", |yv, xv| {
                        -gs * (yv / (nx * ny) - dot * xv / (nx * nx * nx * ny))
                    })?;
                    self.accumulate(grads, *a, d)?;
                }
                if self.rg(*b) {
                    let d = x.zip_map(y, "cosine_backward", |xv, yv| {
                        -gs * (xv / (nx * ny) - dot * yv / (ny * ny * ny * nx))
                    })?;
                    self.accumulate(grads, *b, d)?;
                }
            }
        }
        Ok(())
    }
}
