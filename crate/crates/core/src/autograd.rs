//! Reverse-mode automatic differentiation over `Array2<f64>` values.
//!
//! The design is a classic Wengert list: every operation appends a node to a
//! [`Tape`], forward values are computed eagerly, and [`Tape::backward`]
//! walks the list in reverse accumulating adjoints. Node indices are handed
//! out as opaque [`Var`] handles; construction order is the topological
//! order, which is what makes the single reverse sweep valid.
//!
//! f64 everywhere: gradient checks against central finite differences need
//! the headroom (f32 noise at step 1e-4 swamps a 1e-3 tolerance).

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// a (m×k) · b (k×n)
    MatMul(Var, Var),
    /// a (m×k) · bᵀ where b is (n×k); avoids materializing transposes
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// elementwise product
    Mul(Var, Var),
    /// x (m×n) + row (1×n), broadcast down the rows
    AddRow(Var, Var),
    /// x (m×n) ∘ row (1×n), broadcast down the rows
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// row-wise x / sqrt(mean(x²) + eps)
    RmsNorm(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    /// row-wise x / sqrt(Σx² + eps)
    NormalizeRows(Var, f64),
    /// row-wise cosine similarity of paired rows, output m×1
    CosineRows(Var, Var),
    /// gather rows by index (embedding lookup, reordering)
    Rows(Var, Vec<usize>),
    /// out[i, 0] = x[i, ids[i]]
    PickPerRow(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    /// rows [start, end)
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    /// columns [start, end)
    SliceCols(Var, usize, usize),
    /// weighted mean over rows, output 1×n; weights need not be normalized
    MaskedMeanRows(Var, Vec<f64>),
    /// mean of all entries, output 1×1
    MeanAll(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Panics if `v` did not
    /// require gradients or was unreachable from the loss.
    pub fn wrt(&self, v: Var) -> &Array2<f64> {
        self.grads[v.0]
            .as_ref()
            .expect("no gradient recorded for this var")
    }

    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

/// Wengert list holding forward values and enough structure to replay the
/// chain rule backwards. One tape per training step; drop it afterwards.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Insert a differentiable leaf (parameter or input requiring grads).
    pub fn leaf(&mut self, value: Array2<f64>, needs_grad: bool) -> Var {
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Extract a 1×1 node's value.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on a non-1x1 node");
        val[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul {ar}x{ac} . {br}x{bc}");
        let v = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, bc, "matmul_nt {ar}x{ac} . ({br}x{bc})T");
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMulNT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let v = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape");
        let v = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (_, n) = self.value(x).dim();
        assert_eq!(self.value(row).dim(), (1, n), "add_row shape");
        let v = self.value(x) + self.value(row);
        let ng = self.needs(x) || self.needs(row);
        self.push(v, Op::AddRow(x, row), ng)
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (_, n) = self.value(x).dim();
        assert_eq!(self.value(row).dim(), (1, n), "mul_row shape");
        let v = self.value(x) * self.value(row);
        let ng = self.needs(x) || self.needs(row);
        self.push(v, Op::MulRow(x, row), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x) * s;
        let ng = self.needs(x);
        self.push(v, Op::Scale(x, s), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|t| t.max(0.0));
        let ng = self.needs(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut v = xv.clone();
        for mut row in v.rows_mut() {
            let ms = row.iter().map(|t| t * t).sum::<f64>() / n;
            let r = (ms + eps).sqrt();
            row.mapv_inplace(|t| t / r);
        }
        let ng = self.needs(x);
        self.push(v, Op::RmsNorm(x, eps), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|t| (t - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|t| t / sum);
        }
        let ng = self.needs(x);
        self.push(v, Op::SoftmaxRows(x), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|t| t - lse);
        }
        let ng = self.needs(x);
        self.push(v, Op::LogSoftmaxRows(x), ng)
    }

    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let s: f64 = row.iter().map(|t| t * t).sum();
            let norm = (s + eps).sqrt();
            row.mapv_inplace(|t| t / norm);
        }
        let ng = self.needs(x);
        self.push(v, Op::NormalizeRows(x, eps), ng)
    }

    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.dim(), bv.dim(), "cosine_rows shape");
        let m = av.nrows();
        let mut v = Array2::zeros((m, 1));
        for i in 0..m {
            let ra = av.row(i);
            let rb = bv.row(i);
            let dot: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| x * y).sum();
            let na = (ra.iter().map(|x| x * x).sum::<f64>() + COS_EPS).sqrt();
            let nb = (rb.iter().map(|x| x * x).sum::<f64>() + COS_EPS).sqrt();
            v[(i, 0)] = dot / (na * nb);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::CosineRows(a, b), ng)
    }

    pub fn rows(&mut self, x: Var, ids: &[usize]) -> Var {
        let xv = self.value(x);
        let n = xv.ncols();
        let mut v = Array2::zeros((ids.len(), n));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < xv.nrows(), "row index {id} out of range");
            v.row_mut(i).assign(&xv.row(id));
        }
        let ng = self.needs(x);
        self.push(v, Op::Rows(x, ids.to_vec()), ng)
    }

    pub fn pick_per_row(&mut self, x: Var, ids: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), ids.len(), "pick_per_row length");
        let mut v = Array2::zeros((ids.len(), 1));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < xv.ncols(), "column index {id} out of range");
            v[(i, 0)] = xv[(i, id)];
        }
        let ng = self.needs(x);
        self.push(v, Op::PickPerRow(x, ids.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).ncols();
        let total: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut v = Array2::zeros((total, n));
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.ncols(), n, "concat_rows width");
            v.slice_mut(ndarray::s![off..off + pv.nrows(), ..]).assign(pv);
            off += pv.nrows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start < end && end <= xv.nrows(), "slice_rows bounds");
        let v = xv.slice(ndarray::s![start..end, ..]).to_owned();
        let ng = self.needs(x);
        self.push(v, Op::SliceRows(x, start, end), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Array2::zeros((m, total));
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), m, "concat_cols height");
            v.slice_mut(ndarray::s![.., off..off + pv.ncols()]).assign(pv);
            off += pv.ncols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start < end && end <= xv.ncols(), "slice_cols bounds");
        let v = xv.slice(ndarray::s![.., start..end]).to_owned();
        let ng = self.needs(x);
        self.push(v, Op::SliceCols(x, start, end), ng)
    }

    /// Weighted mean over rows with fixed (non-differentiated) weights.
    /// Weights must not sum to zero.
    pub fn masked_mean_rows(&mut self, x: Var, weights: &[f64]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), weights.len(), "masked_mean_rows length");
        let wsum: f64 = weights.iter().sum();
        assert!(wsum.abs() > 1e-12, "masked_mean_rows: zero weight sum");
        let mut acc = Array2::zeros((1, xv.ncols()));
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                acc.row_mut(0).scaled_add(w, &xv.row(i));
            }
        }
        acc /= wsum;
        let ng = self.needs(x);
        self.push(acc, Op::MaskedMeanRows(x, weights.to_vec()), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Array2::from_elem((1, 1), xv.mean().unwrap());
        let ng = self.needs(x);
        self.push(v, Op::MeanAll(x), ng)
    }

    /// Reverse sweep from `loss`, which must be 1×1. Returns one gradient per
    /// reachable node that required gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward seed must be 1x1");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = g.dot(&self.value(*b).t());
                    add_grad(grads, *a, ga, self.value(*a).dim());
                }
                if self.needs(*b) {
                    let gb = self.value(*a).t().dot(g);
                    add_grad(grads, *b, gb, self.value(*b).dim());
                }
            }
            Op::MatMulNT(a, b) => {
                if self.needs(*a) {
                    let ga = g.dot(self.value(*b));
                    add_grad(grads, *a, ga, self.value(*a).dim());
                }
                if self.needs(*b) {
                    let gb = g.t().dot(self.value(*a));
                    add_grad(grads, *b, gb, self.value(*b).dim());
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_grad(grads, *a, g.clone(), self.value(*a).dim());
                }
                if self.needs(*b) {
                    add_grad(grads, *b, g.clone(), self.value(*b).dim());
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    add_grad(grads, *a, g * self.value(*b), self.value(*a).dim());
                }
                if self.needs(*b) {
                    add_grad(grads, *b, g * self.value(*a), self.value(*b).dim());
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    add_grad(grads, *x, g.clone(), self.value(*x).dim());
                }
                if self.needs(*row) {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_grad(grads, *row, gr, self.value(*row).dim());
                }
            }
            Op::MulRow(x, row) => {
                if self.needs(*x) {
                    add_grad(grads, *x, g * self.value(*row), self.value(*x).dim());
                }
                if self.needs(*row) {
                    let gr = (g * self.value(*x)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_grad(grads, *row, gr, self.value(*row).dim());
                }
            }
            Op::Scale(x, s) => {
                if self.needs(*x) {
                    add_grad(grads, *x, g * *s, self.value(*x).dim());
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let mask = self.value(*x).mapv(|t| if t > 0.0 { 1.0 } else { 0.0 });
                    add_grad(grads, *x, g * &mask, self.value(*x).dim());
                }
            }
            Op::RmsNorm(x, eps) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let n = xv.ncols() as f64;
                    let mut gx = Array2::zeros(xv.dim());
                    for i in 0..xv.nrows() {
                        let xr = xv.row(i);
                        let gr = g.row(i);
                        let ms = xr.iter().map(|t| t * t).sum::<f64>() / n;
                        let r = (ms + eps).sqrt();
                        let xg: f64 = xr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        let coef = xg / (n * r * r * r);
                        for j in 0..xv.ncols() {
                            gx[(i, j)] = gr[j] / r - xr[j] * coef;
                        }
                    }
                    add_grad(grads, *x, gx, xv.dim());
                }
            }
            Op::SoftmaxRows(x) => {
                if self.needs(*x) {
                    let y = &node.value;
                    let mut gx = g * y;
                    for i in 0..y.nrows() {
                        let dot: f64 = gx.row(i).sum();
                        let yr = y.row(i).to_owned();
                        gx.row_mut(i).scaled_add(-dot, &yr);
                    }
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
            Op::LogSoftmaxRows(x) => {
                if self.needs(*x) {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for i in 0..y.nrows() {
                        let gsum: f64 = g.row(i).sum();
                        let soft = y.row(i).mapv(f64::exp);
                        gx.row_mut(i).scaled_add(-gsum, &soft);
                    }
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
            Op::NormalizeRows(x, eps) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let mut gx = Array2::zeros(xv.dim());
                    for i in 0..xv.nrows() {
                        let xr = xv.row(i);
                        let gr = g.row(i);
                        let s: f64 = xr.iter().map(|t| t * t).sum();
                        let norm = (s + eps).sqrt();
                        let xg: f64 = xr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        let coef = xg / (norm * norm * norm);
                        for j in 0..xv.ncols() {
                            gx[(i, j)] = gr[j] / norm - xr[j] * coef;
                        }
                    }
                    add_grad(grads, *x, gx, xv.dim());
                }
            }
            Op::CosineRows(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let need_a = self.needs(*a);
                let need_b = self.needs(*b);
                let mut ga = Array2::zeros(av.dim());
                let mut gb = Array2::zeros(bv.dim());
                for i in 0..av.nrows() {
                    let gi = g[(i, 0)];
                    let ra = av.row(i);
                    let rb = bv.row(i);
                    let dot: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| x * y).sum();
                    let na2 = ra.iter().map(|x| x * x).sum::<f64>() + COS_EPS;
                    let nb2 = rb.iter().map(|x| x * x).sum::<f64>() + COS_EPS;
                    let na = na2.sqrt();
                    let nb = nb2.sqrt();
                    let c = dot / (na * nb);
                    for j in 0..av.ncols() {
                        if need_a {
                            ga[(i, j)] += gi * (rb[j] / (na * nb) - c * ra[j] / na2);
                        }
                        if need_b {
                            gb[(i, j)] += gi * (ra[j] / (na * nb) - c * rb[j] / nb2);
                        }
                    }
                }
                if need_a {
                    add_grad(grads, *a, ga, av.dim());
                }
                if need_b {
                    add_grad(grads, *b, gb, bv.dim());
                }
            }
            Op::Rows(x, ids) => {
                if self.needs(*x) {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (i, &id) in ids.iter().enumerate() {
                        gx.row_mut(id).scaled_add(1.0, &g.row(i));
                    }
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
            Op::PickPerRow(x, ids) => {
                if self.needs(*x) {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (i, &id) in ids.iter().enumerate() {
                        gx[(i, id)] += g[(i, 0)];
                    }
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).nrows();
                    if self.needs(p) {
                        let gp = g.slice(ndarray::s![off..off + rows, ..]).to_owned();
                        add_grad(grads, p, gp, self.value(p).dim());
                    }
                    off += rows;
                }
            }
            Op::SliceRows(x, start, end) => {
                if self.needs(*x) {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(ndarray::s![*start..*end, ..]).assign(g);
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).ncols();
                    if self.needs(p) {
                        let gp = g.slice(ndarray::s![.., off..off + cols]).to_owned();
                        add_grad(grads, p, gp, self.value(p).dim());
                    }
                    off += cols;
                }
            }
            Op::SliceCols(x, start, end) => {
                if self.needs(*x) {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(ndarray::s![.., *start..*end]).assign(g);
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
            Op::MaskedMeanRows(x, weights) => {
                if self.needs(*x) {
                    let wsum: f64 = weights.iter().sum();
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (i, &w) in weights.iter().enumerate() {
                        if w != 0.0 {
                            gx.row_mut(i).scaled_add(w / wsum, &g.row(0));
                        }
                    }
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
            Op::MeanAll(x) => {
                if self.needs(*x) {
                    let (m, n) = self.value(*x).dim();
                    let gx = Array2::from_elem((m, n), g[(0, 0)] / (m as f64 * n as f64));
                    add_grad(grads, *x, gx, self.value(*x).dim());
                }
            }
        }
    }
}

/// Guard against zero-norm rows in cosine/normalize; small enough to be
/// invisible at f64 test tolerances for non-degenerate inputs.
const COS_EPS: f64 = 1e-12;

fn add_grad(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>, dim: (usize, usize)) {
    assert_eq!(g.dim(), dim, "gradient shape mismatch");
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Validated shape helper shared by the loss builders.
pub fn ensure_same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            op,
            detail: format!("{:?} vs {:?}", a.dim(), b.dim()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use semcot_oracles::{fd_gradient, loop_matmul, max_rel_error};

    fn rand_mat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0))
    }

    /// Gradient-check a graph builder against central differences on every
    /// input. The builder must produce a 1×1 loss node.
    fn grad_check<F>(build: F, inputs: &[Array2<f64>], tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);

        for (i, x) in inputs.iter().enumerate() {
            let flat: Vec<f64> = x.iter().cloned().collect();
            let numeric = fd_gradient(
                |p| {
                    let mut t = Tape::new();
                    let mut vs = Vec::new();
                    for (j, xj) in inputs.iter().enumerate() {
                        let arr = if j == i {
                            Array2::from_shape_vec(xj.dim(), p.to_vec()).unwrap()
                        } else {
                            xj.clone()
                        };
                        vs.push(t.leaf(arr, true));
                    }
                    let l = build(&mut t, &vs);
                    t.scalar(l)
                },
                &flat,
                1e-5,
            );
            let analytic: Vec<f64> = grads.wrt(vars[i]).iter().cloned().collect();
            let err = max_rel_error(&analytic, &numeric);
            assert!(err < tol, "input {i}: rel err {err:.3e}");
        }
    }

    /// Weighted mean with a fixed pseudorandom weight, so incoming adjoints
    /// are non-uniform and transposition bugs cannot cancel out.
    fn weighted_loss(t: &mut Tape, v: Var, seed: u64) -> Var {
        let dim = t.value(v).dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.constant(Array2::from_shape_fn(dim, |_| rng.random_range(0.2..1.0)));
        let prod = t.mul(v, w);
        t.mean_all(prod)
    }

    #[test]
    fn matmul_forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_mat(&mut rng, 3, 5);
        let b = rand_mat(&mut rng, 5, 4);
        let mut t = Tape::new();
        let va = t.leaf(a.clone(), false);
        let vb = t.leaf(b.clone(), false);
        let vc = t.matmul(va, vb);
        let a_rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        let b_rows: Vec<Vec<f64>> = b.rows().into_iter().map(|r| r.to_vec()).collect();
        let expect = loop_matmul(&a_rows, &b_rows);
        for i in 0..3 {
            for j in 0..4 {
                assert!((t.value(vc)[(i, j)] - expect[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        grad_check(
            |t, vs| {
                let y = t.matmul(vs[0], vs[1]);
                weighted_loss(t, y, 11)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_matmul_nt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 5, 4);
        grad_check(
            |t, vs| {
                let y = t.matmul_nt(vs[0], vs[1]);
                weighted_loss(t, y, 12)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_add_mul_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 4, 3);
        let b = rand_mat(&mut rng, 4, 3);
        grad_check(
            |t, vs| {
                let s = t.add(vs[0], vs[1]);
                let p = t.mul(s, vs[0]);
                let sc = t.scale(p, -1.7);
                weighted_loss(t, sc, 13)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_row_broadcasts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(&mut rng, 5, 3);
        let r = rand_mat(&mut rng, 1, 3);
        grad_check(
            |t, vs| {
                let a = t.add_row(vs[0], vs[1]);
                let m = t.mul_row(a, vs[1]);
                weighted_loss(t, m, 14)
            },
            &[x, r],
            1e-6,
        );
    }

    #[test]
    fn grad_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // keep entries away from the kink at 0
        let x = rand_mat(&mut rng, 4, 4).mapv(|t| if t.abs() < 0.05 { t + 0.1 } else { t });
        grad_check(
            |t, vs| {
                let y = t.relu(vs[0]);
                weighted_loss(t, y, 15)
            },
            &[x],
            1e-6,
        );
    }

    #[test]
    fn grad_rms_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_mat(&mut rng, 3, 6);
        grad_check(
            |t, vs| {
                let y = t.rms_norm(vs[0], 1e-6);
                weighted_loss(t, y, 16)
            },
            &[x],
            1e-6,
        );
    }

    #[test]
    fn grad_softmax_and_log_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_mat(&mut rng, 3, 5);
        grad_check(
            |t, vs| {
                let y = t.softmax_rows(vs[0]);
                weighted_loss(t, y, 17)
            },
            &[x.clone()],
            1e-6,
        );
        grad_check(
            |t, vs| {
                let y = t.log_softmax_rows(vs[0]);
                weighted_loss(t, y, 18)
            },
            &[x],
            1e-6,
        );
    }

    #[test]
    fn grad_normalize_and_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = rand_mat(&mut rng, 4, 5);
        let b = rand_mat(&mut rng, 4, 5);
        grad_check(
            |t, vs| {
                let y = t.normalize_rows(vs[0], 1e-12);
                weighted_loss(t, y, 19)
            },
            &[a.clone()],
            1e-6,
        );
        grad_check(
            |t, vs| {
                let c = t.cosine_rows(vs[0], vs[1]);
                weighted_loss(t, c, 20)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_gather_and_pick() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let table = rand_mat(&mut rng, 6, 4);
        grad_check(
            |t, vs| {
                // repeated index exercises scatter-add accumulation
                let y = t.rows(vs[0], &[2, 0, 2, 5]);
                weighted_loss(t, y, 21)
            },
            &[table.clone()],
            1e-6,
        );
        grad_check(
            |t, vs| {
                let picked = t.pick_per_row(vs[0], &[3, 0, 1, 3, 2, 0]);
                weighted_loss(t, picked, 22)
            },
            &[table],
            1e-6,
        );
    }

    #[test]
    fn grad_concat_and_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = rand_mat(&mut rng, 2, 4);
        let b = rand_mat(&mut rng, 3, 4);
        grad_check(
            |t, vs| {
                let cat = t.concat_rows(&[vs[0], vs[1], vs[0]]);
                let sl = t.slice_rows(cat, 1, 6);
                weighted_loss(t, sl, 23)
            },
            &[a, b],
            1e-6,
        );
        let c = rand_mat(&mut rng, 3, 2);
        let d = rand_mat(&mut rng, 3, 5);
        grad_check(
            |t, vs| {
                let cat = t.concat_cols(&[vs[0], vs[1]]);
                let sl = t.slice_cols(cat, 1, 6);
                weighted_loss(t, sl, 24)
            },
            &[c, d],
            1e-6,
        );
    }

    #[test]
    fn grad_masked_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_mat(&mut rng, 5, 3);
        grad_check(
            |t, vs| {
                let pooled = t.masked_mean_rows(vs[0], &[1.0, 1.0, 0.0, 1.0, 0.0]);
                weighted_loss(t, pooled, 25)
            },
            &[x],
            1e-6,
        );
    }

    #[test]
    fn grad_through_attention_shaped_graph() {
        // q·kᵀ -> scale -> mask -> softmax -> ·v, the attention core
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = rand_mat(&mut rng, 4, 3);
        let k = rand_mat(&mut rng, 4, 3);
        let v = rand_mat(&mut rng, 4, 3);
        grad_check(
            |t, vs| {
                let scores = t.matmul_nt(vs[0], vs[1]);
                let scaled = t.scale(scores, 1.0 / (3.0f64).sqrt());
                let mask = t.constant(Array2::from_shape_fn((4, 4), |(i, j)| {
                    if j > i {
                        -1e30
                    } else {
                        0.0
                    }
                }));
                let masked = t.add(scaled, mask);
                let attn = t.softmax_rows(masked);
                let out = t.matmul(attn, vs[2]);
                weighted_loss(t, out, 26)
            },
            &[q, k, v],
            1e-5,
        );
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = rand_mat(&mut rng, 2, 2);
        let b = rand_mat(&mut rng, 2, 2);
        let mut t = Tape::new();
        let va = t.leaf(a, true);
        let vb = t.leaf(b, false);
        let y = t.matmul(va, vb);
        let l = t.mean_all(y);
        let grads = t.backward(l);
        assert!(grads.get(va).is_some());
        assert!(grads.get(vb).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        // x used twice: loss = mean(x∘x), gradient 2x/(mn)
        let x = Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut t = Tape::new();
        let vx = t.leaf(x.clone(), true);
        let p = t.mul(vx, vx);
        let l = t.mean_all(p);
        let grads = t.backward(l);
        let gx = grads.wrt(vx);
        for (g, v) in gx.iter().zip(x.iter()) {
            assert!((g - 2.0 * v / 4.0).abs() < 1e-12);
        }
    }
}
