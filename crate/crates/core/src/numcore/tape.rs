//! Tape-based reverse-mode differentiation over [`TokenMatrix`] values.
//!
//! Every op evaluates eagerly and appends a record holding its output and
//! whatever it needs for the backward pass. [`Tape::backward`] walks the
//! records in reverse and accumulates gradients into leaves and into the
//! [`ParamSet`] that supplied the parameter nodes.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use super::matrix::{matmul_into, segment_max, NormStats};
use super::{ParamId, ParamSet, TokenMatrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    FeatureNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    DotConst(Var, TokenMatrix),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: TokenMatrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<TokenMatrix>>,
    consumed: bool,
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

    /// Drops all records so the tape can host a new forward pass.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &TokenMatrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&TokenMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: TokenMatrix, op: Op, requires_grad: bool) -> Var {
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

    pub fn leaf(&mut self, m: TokenMatrix) -> Var {
        let rg = m.requires_grad;
        self.push(m, Op::Leaf, rg)
    }

    pub fn constant(&mut self, mut m: TokenMatrix) -> Var {
        m.requires_grad = false;
        self.push(m, Op::Leaf, false)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let m = params.get(id).as_matrix();
        self.push(m, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// `x + 1·bᵀ` where `b` is a single row.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_row_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut out = xv.clone();
        out.requires_grad = false;
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRowBias(x, b), rg))
    }

    /// `x·w + b` with `w` of shape `in × out` and `b` of length `out`.
    pub fn linear(&mut self, x: Var, params: &ParamSet, w: ParamId, b: ParamId) -> Result<Var> {
        let (wr, wc) = params.get(w).matrix_shape();
        let xs = self.value(x).shape();
        if xs.1 != wr {
            return Err(Error::Shape {
                op: "linear",
                left: xs,
                right: (wr, wc),
            });
        }
        if params.get(b).shape() != [wc] {
            return Err(Error::Shape {
                op: "linear bias",
                left: (wr, wc),
                right: params.get(b).matrix_shape(),
            });
        }
        let wv = self.param(params, w);
        let bv = self.param(params, b);
        let xw = self.matmul(x, wv)?;
        self.add_row_bias(xw, bv)
    }

    fn elementwise(&self, a: Var, b: Var, op: &'static str, sign: f64) -> Result<TokenMatrix> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op,
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = av.clone();
        out.requires_grad = false;
        for (o, v) in out.data_mut().iter_mut().zip(bv.data()) {
            *o += sign * v;
        }
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "add", 1.0)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "sub", -1.0)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_rows()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Per-column normalization across the rows of `x`, see
    /// [`TokenMatrix::feature_norm`].
    pub fn feature_norm(
        &mut self,
        x: Var,
        params: &ParamSet,
        gamma: ParamId,
        beta: ParamId,
        eps: f64,
    ) -> Result<Var> {
        let (out, stats) = self.value(x).feature_norm(
            &params.get(gamma).values,
            &params.get(beta).values,
            eps,
        )?;
        let g = self.param(params, gamma);
        let b = self.param(params, beta);
        Ok(self.push(
            out,
            Op::FeatureNorm {
                x,
                gamma: g,
                beta: b,
                stats,
            },
            true,
        ))
    }

    /// 1×cols channel maxima over all rows.
    pub fn maxpool_set(&mut self, x: Var) -> Result<Var> {
        let rows = self.value(x).rows();
        let (out, argmax) = segment_max(self.value(x), &[0..rows], false, "maxpool_set")?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentMax { x, argmax }, rg))
    }

    /// One maxpooled row per segment; empty segments give a zero row that
    /// receives no gradient.
    pub fn segment_maxpool(&mut self, x: Var, segments: &[Range<usize>]) -> Result<Var> {
        let (out, argmax) = segment_max(self.value(x), segments, true, "segment_maxpool")?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentMax { x, argmax }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&TokenMatrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = TokenMatrix::concat_cols(&mats)?;
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Scalar `Σ x ⊙ w` for a constant weight matrix `w`.
    pub fn dot_const(&mut self, x: Var, w: &TokenMatrix) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != w.shape() {
            return Err(Error::Shape {
                op: "dot_const",
                left: xv.shape(),
                right: w.shape(),
            });
        }
        let s: f64 = xv.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(
            TokenMatrix::filled(1, 1, s),
            Op::DotConst(x, w.clone()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(TokenMatrix::filled(1, 1, s), Op::Sum(x), rg)
    }

    /// Fingerprint of every ReLU mask and maxpool argmax on the tape.
    ///
    /// Two forward passes with the same fingerprint took the same branch
    /// at every non-smooth op.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::SegmentMax { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates d`loss` back through the tape, accumulating into leaf
    /// gradients and into `params`.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape"));
        }
        if self.nodes.is_empty() {
            return Err(Error::State("backward on an empty tape"));
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward (loss must be 1x1)",
                left: shape,
                right: (1, 1),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<TokenMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(TokenMatrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads, params);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(
        &self,
        op: &Op,
        out: &TokenMatrix,
        g: &TokenMatrix,
        grads: &mut [Option<TokenMatrix>],
        params: &mut ParamSet,
    ) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, delta: TokenMatrix| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;

        match op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = params.get_mut(*id);
                for (pg, d) in p.grad.iter_mut().zip(g.data()) {
                    *pg += d;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    // dA = G·Bᵀ
                    let bt = bv.transpose();
                    let mut da = TokenMatrix::zeros(av.rows(), av.cols());
                    matmul_into(g.data(), bt.data(), da.data_mut(), g.rows(), g.cols(), av.cols());
                    acc(*a, da);
                }
                if wants(*b) {
                    // dB = Aᵀ·G
                    let at = av.transpose();
                    let mut db = TokenMatrix::zeros(bv.rows(), bv.cols());
                    matmul_into(at.data(), g.data(), db.data_mut(), at.rows(), at.cols(), g.cols());
                    acc(*b, db);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::AddRowBias(x, b) => {
                acc(*x, g.clone());
                let mut db = TokenMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*b, db);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::Relu(a) => {
                let x = val(*a);
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if *xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                acc(*a, d);
            }
            Op::Softmax(a) => {
                let mut d = TokenMatrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = g.row(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for (c, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = y[c] * (gy[c] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::FeatureNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let xv = val(*x);
                let gam = val(*gamma).data();
                let (n, cols) = xv.shape();
                let nf = n as f64;
                let mut dgamma = TokenMatrix::zeros(1, cols);
                let mut dbeta = TokenMatrix::zeros(1, cols);
                let mut dx = TokenMatrix::zeros(n, cols);
                for c in 0..cols {
                    let inv = stats.inv_std[c];
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for r in 0..n {
                        let xhat = (xv.get(r, c) - stats.mean[c]) * inv;
                        let gv = g.get(r, c);
                        sum_g += gv;
                        sum_gx += gv * xhat;
                    }
                    dbeta.data_mut()[c] = sum_g;
                    dgamma.data_mut()[c] = sum_gx;
                    // dx = γ/(nσ) · (n·g − Σg − x̂·Σ(g·x̂))
                    for r in 0..n {
                        let xhat = (xv.get(r, c) - stats.mean[c]) * inv;
                        let v = gam[c] * inv / nf * (nf * g.get(r, c) - sum_g - xhat * sum_gx);
                        dx.set(r, c, v);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::SegmentMax { x, argmax } => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut d = TokenMatrix::zeros(xv.rows(), cols);
                for (k, &row) in argmax.iter().enumerate() {
                    if row == usize::MAX {
                        continue;
                    }
                    let (s, c) = (k / cols, k % cols);
                    let cur = d.get(row, c);
                    d.set(row, c, cur + g.get(s, c));
                }
                acc(*x, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, g.column_block(start, w));
                    start += w;
                }
            }
            Op::DotConst(x, w) => {
                let s = g.get(0, 0);
                acc(*x, w.map(|v| v * s));
            }
            Op::Sum(x) => {
                let s = g.get(0, 0);
                let (r, c) = val(*x).shape();
                acc(*x, TokenMatrix::filled(r, c, s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin_setup() -> (ParamSet, ParamId, ParamId) {
        let mut ps = ParamSet::new();
        let w = ps.push(
            super::super::Parameter::new("w", vec![2, 3], vec![1.0, -2.0, 0.5, 0.3, 0.7, -1.1])
                .unwrap(),
        );
        let b = ps.push(super::super::Parameter::new("b", vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        (ps, w, b)
    }

    #[test]
    fn linear_identity_and_scalar() {
        let mut ps = ParamSet::new();
        let w = ps.push(
            super::super::Parameter::new("w", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let b = ps.constant("b", 2, 0.0);
        let mut t = Tape::new();
        let x = t.constant(TokenMatrix::from_rows(&[[1.0, 1.0]]));
        let y = t.linear(x, &ps, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 1.0]);

        let mut ps = ParamSet::new();
        let w = ps.constant("w", 1, 3.0);
        let w = {
            let p = super::super::Parameter::new("w2", vec![1, 1], ps.get(w).values.clone());
            ps.push(p.unwrap())
        };
        let b = ps.constant("b", 1, 1.0);
        let mut t = Tape::new();
        let x = t.constant(TokenMatrix::from_rows(&[[2.0]]));
        let y = t.linear(x, &ps, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[7.0]);
    }

    #[test]
    fn linear_shape_errors() {
        let (ps, w, b) = lin_setup();
        let mut t = Tape::new();
        let x = t.constant(TokenMatrix::zeros(4, 3));
        assert!(matches!(t.linear(x, &ps, w, b), Err(Error::Shape { .. })));
        let x = t.constant(TokenMatrix::zeros(4, 2));
        assert!(matches!(t.linear(x, &ps, w, w), Err(Error::Shape { .. })));
    }

    #[test]
    fn bias_gradient_is_row_count() {
        let (mut ps, w, b) = lin_setup();
        let mut t = Tape::new();
        let x = t.constant(TokenMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [0.0, 1.0]]));
        let y = t.linear(x, &ps, w, b).unwrap();
        let loss = t.sum(y);
        t.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(b).grad, vec![4.0, 4.0, 4.0]);
        // dW[k][j] = Σ_rows x[r][k]
        assert_eq!(ps.get(w).grad, vec![9.0, 9.0, 9.0, 13.0, 13.0, 13.0]);
    }

    #[test]
    fn relu_of_negative_blocks_upstream_grads() {
        let (mut ps, w, b) = lin_setup();
        let mut t = Tape::new();
        let x = t.constant(TokenMatrix::from_rows(&[[1.0, 1.0]]));
        let y = t.linear(x, &ps, w, b).unwrap();
        let neg = t.scale(y, 0.0);
        let shift = t.constant(TokenMatrix::filled(1, 3, 5.0));
        let z = t.sub(neg, shift).unwrap();
        let r = t.relu(z);
        let loss = t.sum(r);
        t.backward(loss, &mut ps).unwrap();
        assert!(ps.get(w).grad.iter().all(|&g| g == 0.0));
        assert!(ps.get(b).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_errors() {
        let (mut ps, _, _) = lin_setup();
        let mut t = Tape::new();
        let dummy = Var(0);
        assert!(matches!(t.backward(dummy, &mut ps), Err(Error::State(_))));

        let x = t.leaf(TokenMatrix::zeros(2, 2).with_grad());
        assert!(matches!(t.backward(x, &mut ps), Err(Error::Shape { .. })));
        let s = t.sum(x);
        t.backward(s, &mut ps).unwrap();
        assert!(matches!(t.backward(s, &mut ps), Err(Error::State(_))));
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 4]);
        t.clear();
        let x = t.leaf(TokenMatrix::zeros(2, 2).with_grad());
        let s = t.sum(x);
        t.backward(s, &mut ps).unwrap();
    }

    #[test]
    fn maxpool_grad_goes_to_first_max() {
        let mut ps = ParamSet::new();
        let mut t = Tape::new();
        let x = t.leaf(TokenMatrix::from_rows(&[[2.0, 1.0], [2.0, 3.0]]).with_grad());
        let m = t.maxpool_set(x).unwrap();
        let s = t.sum(m);
        t.backward(s, &mut ps).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn segment_maxpool_empty_segment_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(TokenMatrix::from_rows(&[[1.0], [4.0], [2.0]]).with_grad());
        let m = t.segment_maxpool(x, &[0..2, 2..2, 2..3]).unwrap();
        assert_eq!(t.value(m).data(), &[4.0, 0.0, 2.0]);
    }

    #[test]
    fn constant_inputs_do_not_record_grad() {
        let mut t = Tape::new();
        let a = t.constant(TokenMatrix::filled(2, 2, 1.0));
        let b = t.constant(TokenMatrix::filled(2, 2, 2.0));
        let c = t.matmul(a, b).unwrap();
        assert!(!t.requires_grad(c));
        let d = t.leaf(TokenMatrix::filled(2, 2, 1.0).with_grad());
        let e = t.matmul(a, d).unwrap();
        assert!(t.requires_grad(e));
    }
}
