//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append a node and return a [`Var`] handle; [`Tape::backward`] walks the
//! nodes in reverse insertion order, which is a valid reverse topological
//! order because a node can only reference nodes created before it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{dense::dot, DenseMatrix, SparseMatrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A constant sparse operand together with its transpose, shared across tapes.
#[derive(Clone, Debug)]
pub struct SparseOperand {
    matrix: Arc<SparseMatrix>,
    transpose: Arc<SparseMatrix>,
}

impl SparseOperand {
    pub fn new(matrix: SparseMatrix) -> Self {
        let matrix = Arc::new(matrix);
        let transpose = if matrix.is_symmetric() {
            Arc::clone(&matrix)
        } else {
            Arc::new(matrix.transpose())
        };
        Self { matrix, transpose }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

/// Batch statistics produced by a train-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(SparseOperand, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    GatherRows(Var, Arc<[u32]>),
    RowSoftmax(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    LogSigmoid(Var),
    Square(Var),
    Abs(Var),
    ReduceSum(Var),
    RowSum(Var),
    ScaleRows(Var, Var),
    PairDot {
        a: Var,
        b: Var,
        rows_a: Arc<[u32]>,
        rows_b: Arc<[u32]>,
    },
    SegmentXent {
        logits: Var,
        offsets: Arc<[usize]>,
        targets: Arc<[f64]>,
        temperature: f64,
        probs: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: DenseMatrix,
        inv_std: Vec<f64>,
        batch_mode: bool,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every node that requires one.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> DenseMatrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<DenseMatrix> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> Var {
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

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn sparse_dense_matmul(&mut self, m: &SparseOperand, x: Var) -> Result<Var> {
        let value = m.matrix.matmul_dense(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SpMM(m.clone(), x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Hadamard(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// `factor * a + offset`, elementwise.
    pub fn affine(&mut self, a: Var, factor: f64, offset: f64) -> Var {
        let value = self.value(a).map(|x| factor * x + offset);
        let rg = self.rg(a);
        self.push(value, Op::Affine(a, factor), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseMatrix::hstack(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, top: Var, bottom: Var) -> Result<Var> {
        let value = DenseMatrix::vstack(self.value(top), self.value(bottom))?;
        let rg = self.rg(top) || self.rg(bottom);
        Ok(self.push(value, Op::ConcatRows(top, bottom), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start > end || end > rows {
            return Err(Error::shape("slice_rows", (rows, cols), (start, end)));
        }
        let value = self.value(a).slice_rows(start, end);
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Arc<[u32]>) -> Result<Var> {
        let src = self.value(a);
        let (n, cols) = src.shape();
        let mut value = DenseMatrix::zeros(rows.len(), cols);
        for (k, &r) in rows.iter().enumerate() {
            if r as usize >= n {
                return Err(Error::shape("gather_rows", (n, cols), (r as usize, cols)));
            }
            value.row_mut(k).copy_from_slice(src.row(r as usize));
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, rows), rg))
    }

    /// Softmax of each row of `a / temperature`, shifted by the row max.
    pub fn row_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if temperature <= 0.0 {
            return Err(Error::Config(format!("softmax temperature {temperature} must be > 0")));
        }
        let src = self.value(a);
        let mut value = DenseMatrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            softmax_into(src.row(r), temperature, value.row_mut(r));
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowSoftmax(a, temperature), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    /// `ln σ(a)`, computed as `-softplus(-a)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log_sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::LogSigmoid(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    /// Elementwise absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(value, Op::Abs(a), rg)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::ReduceSum(a), rg)
    }

    /// Per-row sums as an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let sums = (0..src.rows()).map(|r| src.row(r).iter().sum()).collect();
        let value = DenseMatrix::from_vec(src.rows(), 1, sums).expect("column");
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Row `r` of `x` multiplied by `s[r]`; `s` is an `n x 1` column (`diag(s) · x`).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        if self.shape(s) != (n, 1) {
            return Err(Error::shape("scale_rows", (n, d), self.shape(s)));
        }
        let mut value = self.value(x).clone();
        let sv = self.value(s).as_slice();
        for r in 0..n {
            let f = sv[r];
            value.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::ScaleRows(x, s), rg))
    }

    /// Column of row dot products `a[rows_a[k]] · b[rows_b[k]]`.
    pub fn pair_dot(&mut self, a: Var, b: Var, rows_a: Arc<[u32]>, rows_b: Arc<[u32]>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() || rows_a.len() != rows_b.len() {
            return Err(Error::shape("pair_dot", va.shape(), vb.shape()));
        }
        let oob = rows_a.iter().any(|&r| r as usize >= va.rows())
            || rows_b.iter().any(|&r| r as usize >= vb.rows());
        if oob {
            return Err(Error::shape("pair_dot", va.shape(), vb.shape()));
        }
        let out: Vec<f64> = rows_a
            .iter()
            .zip(rows_b.iter())
            .map(|(&i, &j)| dot(va.row(i as usize), vb.row(j as usize)))
            .collect();
        let value = DenseMatrix::from_vec(out.len(), 1, out).expect("column");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            value,
            Op::PairDot {
                a,
                b,
                rows_a,
                rows_b,
            },
            rg,
        ))
    }

    /// Listwise cross-entropy over contiguous segments of a logit column.
    ///
    /// Segment `s` spans `offsets[s]..offsets[s+1]`. For each segment the
    /// result adds `-Σ_k targets[k] · ln softmax(logits / T)[k]`.
    pub fn segment_cross_entropy(
        &mut self,
        logits: Var,
        offsets: Arc<[usize]>,
        targets: Arc<[f64]>,
        temperature: f64,
    ) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || targets.len() != z.rows() || offsets.last().copied() != Some(z.rows()) {
            return Err(Error::shape("segment_cross_entropy", z.shape(), (targets.len(), 1)));
        }
        if temperature <= 0.0 {
            return Err(Error::Config(format!("temperature {temperature} must be > 0")));
        }
        let z = z.as_slice();
        let mut probs = vec![0.0; z.len()];
        let mut loss = 0.0;
        for w in offsets.windows(2) {
            let (s, e) = (w[0], w[1]);
            if s == e {
                continue;
            }
            let lse = log_sum_exp(&z[s..e], temperature);
            for k in s..e {
                let logp = z[k] / temperature - lse;
                probs[k] = logp.exp();
                if targets[k] != 0.0 {
                    loss -= targets[k] * logp;
                }
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            DenseMatrix::scalar(loss),
            Op::SegmentXent {
                logits,
                offsets,
                targets,
                temperature,
                probs,
            },
            rg,
        ))
    }

    /// Per-column normalisation `gamma · (x − mean) / sqrt(var + eps) + beta`.
    ///
    /// With `stats = None` the batch statistics of `x` are used and returned;
    /// otherwise the supplied running statistics are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<&BatchStats>,
    ) -> Result<(Var, BatchStats)> {
        let (n, d) = self.shape(x);
        if self.shape(gamma) != (1, d) || self.shape(beta) != (1, d) {
            return Err(Error::shape("batch_norm", (n, d), self.shape(gamma)));
        }
        let batch_mode = stats.is_none();
        let stats = match stats {
            Some(s) => {
                if s.mean.len() != d || s.var.len() != d {
                    return Err(Error::shape("batch_norm", (n, d), (1, s.mean.len())));
                }
                s.clone()
            }
            None => {
                if n < 2 {
                    return Err(Error::Data(format!(
                        "batch_norm in train mode needs at least 2 rows, got {n}"
                    )));
                }
                column_stats(self.value(x))
            }
        };
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let src = self.value(x);
        let mut normalized = DenseMatrix::zeros(n, d);
        for r in 0..n {
            for ((o, &v), (&m, &is)) in normalized
                .row_mut(r)
                .iter_mut()
                .zip(src.row(r))
                .zip(stats.mean.iter().zip(&inv_std))
            {
                *o = (v - m) * is;
            }
        }
        let (g, b) = (self.value(gamma).as_slice(), self.value(beta).as_slice());
        let mut value = normalized.clone();
        for r in 0..n {
            for (c, o) in value.row_mut(r).iter_mut().enumerate() {
                *o = g[c] * *o + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let var = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_mode,
            },
            rg,
        );
        Ok((var, stats))
    }

    /// Reverse pass from a 1x1 node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", self.shape(loss), (1, 1)));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let mut acc = |v: Var, delta: DenseMatrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?);
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::SpMM(m, x) => acc(*x, m.transpose.matmul_dense(g)?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Affine(a, factor) => acc(*a, g.map(|x| x * factor)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let mut part = DenseMatrix::zeros(rows, cols);
                    for r in 0..rows {
                        part.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    off += cols;
                    acc(p, part);
                }
            }
            Op::ConcatRows(top, bottom) => {
                let split = self.shape(*top).0;
                acc(*top, g.slice_rows(0, split));
                acc(*bottom, g.slice_rows(split, g.rows()));
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut full = DenseMatrix::zeros(rows, cols);
                for r in 0..g.rows() {
                    full.row_mut(start + r).copy_from_slice(g.row(r));
                }
                acc(*a, full);
            }
            Op::GatherRows(a, rows) => {
                let (n, cols) = self.shape(*a);
                let mut full = DenseMatrix::zeros(n, cols);
                for (k, &r) in rows.iter().enumerate() {
                    for (o, &v) in full.row_mut(r as usize).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, full);
            }
            Op::RowSoftmax(a, t) => {
                let y = &node.value;
                let mut out = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = dot(g.row(r), y.row(r));
                    for ((o, &gy), &yv) in out.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gy - inner) / t;
                    }
                }
                acc(*a, out);
            }
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv / x)),
            Op::LogSigmoid(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * sigmoid(-x))),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x)),
            Op::Abs(a) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::ReduceSum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, DenseMatrix::filled(r, c, g.item()));
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let mut out = DenseMatrix::zeros(r, c);
                for i in 0..r {
                    let gi = g.as_slice()[i];
                    out.row_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                acc(*a, out);
            }
            Op::ScaleRows(x, s) => {
                let xv = self.value(*x);
                let sv = self.value(*s).as_slice();
                if self.rg(*x) {
                    let mut gx = g.clone();
                    for (r, &f) in sv.iter().enumerate() {
                        gx.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    acc(*x, gx);
                }
                if self.rg(*s) {
                    let col = (0..xv.rows()).map(|r| dot(g.row(r), xv.row(r))).collect();
                    acc(*s, DenseMatrix::from_vec(xv.rows(), 1, col)?);
                }
            }
            Op::PairDot {
                a,
                b,
                rows_a,
                rows_b,
            } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let gs = g.as_slice();
                if self.rg(*a) {
                    let mut ga = DenseMatrix::zeros(va.rows(), va.cols());
                    for (k, (&i, &j)) in rows_a.iter().zip(rows_b.iter()).enumerate() {
                        let f = gs[k];
                        for (o, &bv) in ga.row_mut(i as usize).iter_mut().zip(vb.row(j as usize)) {
                            *o += f * bv;
                        }
                    }
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = DenseMatrix::zeros(vb.rows(), vb.cols());
                    for (k, (&i, &j)) in rows_a.iter().zip(rows_b.iter()).enumerate() {
                        let f = gs[k];
                        for (o, &av) in gb.row_mut(j as usize).iter_mut().zip(va.row(i as usize)) {
                            *o += f * av;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::SegmentXent {
                logits,
                offsets,
                targets,
                temperature,
                probs,
            } => {
                let gv = g.item();
                let mut out = vec![0.0; probs.len()];
                for w in offsets.windows(2) {
                    let (s, e) = (w[0], w[1]);
                    let mass: f64 = targets[s..e].iter().sum();
                    for k in s..e {
                        out[k] = gv * (mass * probs[k] - targets[k]) / temperature;
                    }
                }
                acc(*logits, DenseMatrix::from_vec(out.len(), 1, out)?);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_mode,
            } => {
                let (n, d) = normalized.shape();
                let gam = self.value(*gamma).as_slice();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        dgamma[c] += g.get(r, c) * normalized.get(r, c);
                        dbeta[c] += g.get(r, c);
                    }
                }
                if self.rg(*x) {
                    let mut dx = DenseMatrix::zeros(n, d);
                    if *batch_mode {
                        let nf = n as f64;
                        for r in 0..n {
                            for c in 0..d {
                                let dxhat = g.get(r, c) * gam[c];
                                let v = inv_std[c] / nf
                                    * (nf * dxhat
                                        - dbeta[c] * gam[c]
                                        - normalized.get(r, c) * dgamma[c] * gam[c]);
                                dx.set(r, c, v);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for c in 0..d {
                                dx.set(r, c, g.get(r, c) * gam[c] * inv_std[c]);
                            }
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, DenseMatrix::from_vec(1, d, dgamma)?);
                acc(*beta, DenseMatrix::from_vec(1, d, dbeta)?);
            }
        }
        Ok(())
    }
}

/// Biased per-column mean and variance.
pub fn column_stats(x: &DenseMatrix) -> BatchStats {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    BatchStats { mean, var }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x) = -softplus(-x)`, stable for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn log_sum_exp(z: &[f64], temperature: f64) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
    let s: f64 = z.iter().map(|&v| (v / temperature - max).exp()).sum();
    max + s.ln()
}

/// Writes `softmax(z / temperature)` into `out`.
pub fn softmax_into(z: &[f64], temperature: f64, out: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v / temperature - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}
