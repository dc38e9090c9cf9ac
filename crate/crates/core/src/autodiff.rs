//! Minimal reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] is an append-only list of nodes; every op records its parents
//! and enough saved state to run its backward rule. [`Tape::backward`] walks
//! the list in reverse and accumulates gradients for every node, so leaf
//! nodes (parameters, loss inputs) can be read out afterwards.
//!
//! Everything is a 2-D `f64` matrix. Batches of token sequences are packed as
//! `(batch * tokens, dim)` with block-diagonal attention handled by a fused
//! [`Tape::attention`] op.

use ndarray::{Array2, Axis};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Constant,
    Matmul(NodeId, NodeId),
    MatmulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    MulConstMat(NodeId, Matrix),
    AddConstMat(NodeId),
    GatherRows(NodeId, Vec<usize>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    RepeatRow(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LogClamped(NodeId, f64),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        block: usize,
        scale: f64,
        probs: Matrix,
    },
    L2NormalizeRows {
        x: NodeId,
        norms: Vec<f64>,
    },
    SumAll(NodeId),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`NodeId`].
pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.0[id.0].as_ref()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input (parameters, loss arguments).
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Non-differentiable input (data, targets, masks).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::Matmul(a, b))
    }

    /// `a @ b.T`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatmulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shapes");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shapes");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shapes");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    /// Add a `(1, cols)` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let b = self.value(bias);
        assert_eq!(b.nrows(), 1, "bias must be a single row");
        assert_eq!(self.value(a).ncols(), b.ncols(), "bias width");
        let value = self.value(a) + &b.row(0);
        self.push(value, Op::AddBias(a, bias))
    }

    /// Elementwise multiply by a constant matrix.
    pub fn mul_const_mat(&mut self, a: NodeId, m: Matrix) -> NodeId {
        assert_eq!(self.value(a).dim(), m.dim(), "mul_const_mat shapes");
        let value = self.value(a) * &m;
        self.push(value, Op::MulConstMat(a, m))
    }

    /// Elementwise add a constant matrix (used for logit masking).
    pub fn add_const_mat(&mut self, a: NodeId, m: &Matrix) -> NodeId {
        assert_eq!(self.value(a).dim(), m.dim(), "add_const_mat shapes");
        let value = self.value(a) + m;
        self.push(value, Op::AddConstMat(a))
    }

    /// `out.row(i) = a.row(idx[i])`; duplicate indices accumulate gradient.
    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let src = self.value(a);
        let mut value = Matrix::zeros((idx.len(), src.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < src.nrows(), "gather_rows index {r} out of {}", src.nrows());
            value.row_mut(i).assign(&src.row(r));
        }
        self.push(value, Op::GatherRows(a, idx))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut value = Matrix::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.ncols(), cols, "concat_rows widths");
            value
                .slice_mut(ndarray::s![at..at + v.nrows(), ..])
                .assign(v);
            at += v.nrows();
        }
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let src = self.value(a);
        assert!(start + len <= src.ncols(), "slice_cols range");
        let value = src.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut value = Matrix::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.nrows(), rows, "concat_cols heights");
            value
                .slice_mut(ndarray::s![.., at..at + v.ncols()])
                .assign(v);
            at += v.ncols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Repeat a `(1, cols)` row `n` times.
    pub fn repeat_row(&mut self, a: NodeId, n: usize) -> NodeId {
        let src = self.value(a);
        assert_eq!(src.nrows(), 1, "repeat_row source must be a single row");
        let mut value = Matrix::zeros((n, src.ncols()));
        for mut row in value.rows_mut() {
            row.assign(&src.row(0));
        }
        self.push(value, Op::RepeatRow(a))
    }

    /// Row-wise layer norm with learned `(1, cols)` gamma and beta.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let cols = xv.ncols();
        assert_eq!(g.dim(), (1, cols), "gamma shape");
        assert_eq!(b.dim(), (1, cols), "beta shape");
        let mut value = Matrix::zeros(xv.dim());
        let mut mean = Vec::with_capacity(xv.nrows());
        let mut rstd = Vec::with_capacity(xv.nrows());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mu = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            mean.push(mu);
            rstd.push(rs);
            for j in 0..cols {
                value[[i, j]] = (row[j] - mu) * rs * g[[0, j]] + b[[0, j]];
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
        )
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(value, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows_value(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// `ln(max(x, floor))`; gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: NodeId, floor: f64) -> NodeId {
        let value = self.value(a).mapv(|x| x.max(floor).ln());
        self.push(value, Op::LogClamped(a, floor))
    }

    /// Block-diagonal scaled-dot-product attention. `q`, `k`, `v` are
    /// `(blocks * block, dh)`; attention runs within each `block`-row group.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, block: usize, scale: f64) -> NodeId {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qm.dim(), km.dim(), "attention q/k");
        assert_eq!(qm.dim(), vm.dim(), "attention q/v");
        let rows = qm.nrows();
        assert!(block > 0 && rows % block == 0, "attention block size");
        let mut probs = Matrix::zeros((rows, block));
        let mut value = Matrix::zeros(qm.dim());
        for b in 0..rows / block {
            let r = b * block..(b + 1) * block;
            let qb = qm.slice(ndarray::s![r.clone(), ..]);
            let kb = km.slice(ndarray::s![r.clone(), ..]);
            let vb = vm.slice(ndarray::s![r.clone(), ..]);
            let scores = qb.dot(&kb.t()) * scale;
            let p = softmax_rows_value(&scores);
            value.slice_mut(ndarray::s![r.clone(), ..]).assign(&p.dot(&vb));
            probs.slice_mut(ndarray::s![r, ..]).assign(&p);
        }
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                block,
                scale,
                probs,
            },
        )
    }

    /// L2-normalize every row. Errors not raised here: rows with near-zero
    /// norm are a caller bug (asserted).
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut value = xv.clone();
        let mut norms = Vec::with_capacity(xv.nrows());
        for mut row in value.rows_mut() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n > 1e-30, "l2_normalize_rows: zero row");
            row.mapv_inplace(|v| v / n);
            norms.push(n);
        }
        self.push(value, Op::L2NormalizeRows { x, norms })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Backpropagate from `root` (seeded with ones) and return all gradients.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::ones(self.value(root).dim()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients(grads)
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let add_to = |grads: &mut [Option<Matrix>], id: NodeId, contrib: Matrix| {
            match &mut grads[id.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul(a, b) => {
                add_to(grads, *a, g.dot(&self.value(*b).t()));
                add_to(grads, *b, self.value(*a).t().dot(g));
            }
            Op::MatmulNT(a, b) => {
                add_to(grads, *a, g.dot(self.value(*b)));
                add_to(grads, *b, g.t().dot(self.value(*a)));
            }
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, g * self.value(*b));
                add_to(grads, *b, g * self.value(*a));
            }
            Op::Scale(a, c) => add_to(grads, *a, g * *c),
            Op::AddBias(a, bias) => {
                add_to(grads, *a, g.clone());
                let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                add_to(grads, *bias, col_sum);
            }
            Op::MulConstMat(a, m) => add_to(grads, *a, g * m),
            Op::AddConstMat(a) => add_to(grads, *a, g.clone()),
            Op::GatherRows(a, idx) => {
                let mut ga = Matrix::zeros(self.value(*a).dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = ga.row_mut(src);
                    row += &g.row(r);
                }
                add_to(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let n = self.value(*p).nrows();
                    add_to(grads, *p, g.slice(ndarray::s![at..at + n, ..]).to_owned());
                    at += n;
                }
            }
            Op::SliceCols(a, start) => {
                let mut ga = Matrix::zeros(self.value(*a).dim());
                ga.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                    .assign(g);
                add_to(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let n = self.value(*p).ncols();
                    add_to(grads, *p, g.slice(ndarray::s![.., at..at + n]).to_owned());
                    at += n;
                }
            }
            Op::RepeatRow(a) => {
                add_to(grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = self.value(*x);
                let gm = self.value(*gamma);
                let cols = xv.ncols() as f64;
                let mut gx = Matrix::zeros(xv.dim());
                let mut ggamma = Matrix::zeros((1, xv.ncols()));
                let mut gbeta = Matrix::zeros((1, xv.ncols()));
                for r in 0..xv.nrows() {
                    let mut dot_gg_xhat = 0.0;
                    let mut sum_gg = 0.0;
                    for c in 0..xv.ncols() {
                        let xhat = (xv[[r, c]] - mean[r]) * rstd[r];
                        let gg = g[[r, c]] * gm[[0, c]];
                        ggamma[[0, c]] += g[[r, c]] * xhat;
                        gbeta[[0, c]] += g[[r, c]];
                        sum_gg += gg;
                        dot_gg_xhat += gg * xhat;
                    }
                    let mean_gg = sum_gg / cols;
                    let mean_gg_xhat = dot_gg_xhat / cols;
                    for c in 0..xv.ncols() {
                        let xhat = (xv[[r, c]] - mean[r]) * rstd[r];
                        let gg = g[[r, c]] * gm[[0, c]];
                        gx[[r, c]] = rstd[r] * (gg - mean_gg - xhat * mean_gg_xhat);
                    }
                }
                add_to(grads, *x, gx);
                add_to(grads, *gamma, ggamma);
                add_to(grads, *beta, gbeta);
            }
            Op::Gelu(a) => {
                let xv = self.value(*a);
                let mut ga = g.clone();
                ndarray::Zip::from(&mut ga).and(xv).for_each(|gi, &x| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let t = u.tanh();
                    let sech2 = 1.0 - t * t;
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    *gi *= 0.5 * (1.0 + t) + 0.5 * x * sech2 * du;
                });
                add_to(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut ga = Matrix::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum();
                    for c in 0..y.ncols() {
                        ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::LogClamped(a, floor) => {
                let xv = self.value(*a);
                let mut ga = g.clone();
                ndarray::Zip::from(&mut ga).and(xv).for_each(|gi, &x| {
                    *gi = if x > *floor { *gi / x } else { 0.0 };
                });
                add_to(grads, *a, ga);
            }
            Op::Attention {
                q,
                k,
                v,
                block,
                scale,
                probs,
            } => {
                let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = Matrix::zeros(qm.dim());
                let mut gk = Matrix::zeros(km.dim());
                let mut gv = Matrix::zeros(vm.dim());
                for b in 0..qm.nrows() / block {
                    let r = b * block..(b + 1) * block;
                    let p = probs.slice(ndarray::s![r.clone(), ..]);
                    let gc = g.slice(ndarray::s![r.clone(), ..]);
                    let qb = qm.slice(ndarray::s![r.clone(), ..]);
                    let kb = km.slice(ndarray::s![r.clone(), ..]);
                    let vb = vm.slice(ndarray::s![r.clone(), ..]);
                    let dp = gc.dot(&vb.t());
                    gv.slice_mut(ndarray::s![r.clone(), ..])
                        .assign(&p.t().dot(&gc));
                    // softmax backward within each row
                    let mut ds = Matrix::zeros((p.nrows(), p.ncols()));
                    for rr in 0..p.nrows() {
                        let dot: f64 = (0..p.ncols()).map(|c| dp[[rr, c]] * p[[rr, c]]).sum();
                        for c in 0..p.ncols() {
                            ds[[rr, c]] = p[[rr, c]] * (dp[[rr, c]] - dot);
                        }
                    }
                    gq.slice_mut(ndarray::s![r.clone(), ..])
                        .assign(&(ds.dot(&kb) * *scale));
                    gk.slice_mut(ndarray::s![r, ..])
                        .assign(&(ds.t().dot(&qb) * *scale));
                }
                add_to(grads, *q, gq);
                add_to(grads, *k, gk);
                add_to(grads, *v, gv);
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = &self.nodes[i].value;
                let mut gx = Matrix::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum();
                    for c in 0..y.ncols() {
                        gx[[r, c]] = (g[[r, c]] - dot * y[[r, c]]) / norms[r];
                    }
                }
                add_to(grads, *x, gx);
            }
            Op::SumAll(a) => {
                let ga = Matrix::from_elem(self.value(*a).dim(), g[[0, 0]]);
                add_to(grads, *a, ga);
            }
        }
    }
}

/// Numerically stable row softmax (shared by the tape op and plain callers).
pub fn softmax_rows_value<S: ndarray::Data<Elem = f64>>(x: &ndarray::ArrayBase<S, ndarray::Ix2>) -> Matrix {
    let mut out = Matrix::zeros(x.dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[[i, j]] = e;
            denom += e;
        }
        for j in 0..row.len() {
            out[[i, j]] /= denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_standard_normal, seeded_rng};

    fn random_matrix(rng: &mut impl rand::Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_shape_fn((r, c), |_| sample_standard_normal(rng))
    }

    /// Central finite differences of `f` at `x`.
    fn finite_diff(f: &dyn Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
        let mut g = Matrix::zeros(x.dim());
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
            }
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let diff = (a - b).mapv(f64::abs).sum();
        let norm = a.mapv(f64::abs).sum() + b.mapv(f64::abs).sum();
        diff / norm.max(1e-12)
    }

    /// Gradient-check a scalar function built on the tape.
    fn check_gradient(build: &dyn Fn(&mut Tape, NodeId) -> NodeId, x: &Matrix) {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let loss = build(&mut tape, leaf);
        assert_eq!(tape.value(loss).dim(), (1, 1));
        let grads = tape.backward(loss);
        let analytic = grads.get(leaf).expect("leaf grad").clone();
        let numeric = finite_diff(
            &|xx: &Matrix| {
                let mut t = Tape::new();
                let l = t.leaf(xx.clone());
                let out = build(&mut t, l);
                t.scalar(out)
            },
            x,
            1e-5,
        );
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-6, "gradient mismatch: rel err {e}");
    }

    #[test]
    fn matmul_chain_gradient() {
        let mut rng = seeded_rng(1, "ad/matmul");
        let x = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 4, 5);
        let w2 = random_matrix(&mut rng, 3, 5);
        check_gradient(
            &|t, leaf| {
                let wc = t.constant(w.clone());
                let y = t.matmul(leaf, wc);
                let w2c = t.constant(w2.clone());
                let z = t.matmul_nt(y, w2c); // (3,3)
                let s = t.mul(z, z);
                t.mean_all(s)
            },
            &x,
        );
    }

    #[test]
    fn elementwise_and_bias_gradients() {
        let mut rng = seeded_rng(2, "ad/elem");
        let x = random_matrix(&mut rng, 4, 3);
        let b = random_matrix(&mut rng, 1, 3);
        let m = random_matrix(&mut rng, 4, 3);
        check_gradient(
            &|t, leaf| {
                let bc = t.leaf(b.clone());
                let y = t.add_bias(leaf, bc);
                let y = t.mul_const_mat(y, m.clone());
                let s = t.scale(y, 0.7);
                let g = t.gelu(s);
                t.sum_all(g)
            },
            &x,
        );
    }

    #[test]
    fn layer_norm_gradient_wrt_all_inputs() {
        let mut rng = seeded_rng(3, "ad/ln");
        let x = random_matrix(&mut rng, 5, 6);
        let gamma = random_matrix(&mut rng, 1, 6);
        let beta = random_matrix(&mut rng, 1, 6);
        // d/dx
        check_gradient(
            &|t, leaf| {
                let g = t.constant(gamma.clone());
                let b = t.constant(beta.clone());
                let y = t.layer_norm(leaf, g, b, 1e-6);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            &x,
        );
        // d/dgamma
        check_gradient(
            &|t, leaf| {
                let xc = t.constant(x.clone());
                let b = t.constant(beta.clone());
                let y = t.layer_norm(xc, leaf, b, 1e-6);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            &gamma,
        );
    }

    #[test]
    fn softmax_log_gather_concat_gradients() {
        let mut rng = seeded_rng(4, "ad/soft");
        let x = random_matrix(&mut rng, 4, 4);
        check_gradient(
            &|t, leaf| {
                let sm = t.softmax_rows(leaf);
                let lg = t.log_clamped(sm, 1e-12);
                let g = t.gather_rows(lg, vec![0, 2, 2, 3, 1]);
                let parts = t.concat_rows(&[g, lg]);
                t.mean_all(parts)
            },
            &x,
        );
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(5, "ad/attn");
        let q = random_matrix(&mut rng, 6, 4); // 2 blocks of 3
        let k = random_matrix(&mut rng, 6, 4);
        let v = random_matrix(&mut rng, 6, 4);
        for which in 0..3 {
            let inputs = [q.clone(), k.clone(), v.clone()];
            check_gradient(
                &|t, leaf| {
                    let mut ids = [NodeId(0); 3];
                    for (i, m) in inputs.iter().enumerate() {
                        ids[i] = if i == which { leaf } else { t.constant(m.clone()) };
                    }
                    let a = t.attention(ids[0], ids[1], ids[2], 3, 0.5);
                    let sq = t.mul(a, a);
                    t.mean_all(sq)
                },
                &inputs[which],
            );
        }
    }

    #[test]
    fn column_slice_and_concat_gradients() {
        let mut rng = seeded_rng(8, "ad/cols");
        let x = random_matrix(&mut rng, 3, 6);
        check_gradient(
            &|t, leaf| {
                let a = t.slice_cols(leaf, 0, 2);
                let b = t.slice_cols(leaf, 2, 4);
                let joined = t.concat_cols(&[b, a]);
                let sq = t.mul(joined, joined);
                t.mean_all(sq)
            },
            &x,
        );
    }

    #[test]
    fn normalize_and_repeat_gradients() {
        let mut rng = seeded_rng(6, "ad/norm");
        let x = random_matrix(&mut rng, 3, 5);
        let row = random_matrix(&mut rng, 1, 5);
        check_gradient(
            &|t, leaf| {
                let n = t.l2_normalize_rows(leaf);
                let rc = t.constant(row.clone());
                let r = t.repeat_row(rc, 3);
                let d = t.mul(n, r);
                t.sum_all(d)
            },
            &x,
        );
        check_gradient(
            &|t, leaf| {
                let r = t.repeat_row(leaf, 4);
                let sq = t.mul(r, r);
                t.mean_all(sq)
            },
            &row,
        );
    }

    #[test]
    fn attention_forward_is_rowwise_convex_combination() {
        let mut rng = seeded_rng(7, "ad/attn2");
        let q = random_matrix(&mut rng, 4, 3);
        let k = random_matrix(&mut rng, 4, 3);
        let mut v = Matrix::zeros((4, 3));
        v.fill(2.5); // constant values -> attention output must be 2.5 everywhere
        let mut t = Tape::new();
        let (qi, ki, vi) = (t.constant(q), t.constant(k), t.constant(v));
        let out = t.attention(qi, ki, vi, 2, 1.0);
        for x in t.value(out) {
            assert!((x - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_accumulates_over_shared_nodes() {
        // y = x + x -> dy/dx = 2
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_elem((2, 2), 3.0));
        let y = t.add(x, x);
        let s = t.sum_all(y);
        let g = t.backward(s);
        for v in g.get(x).unwrap() {
            assert_eq!(*v, 2.0);
        }
    }
}
