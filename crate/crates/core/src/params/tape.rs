//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Tape`] records a computation built from a small set of primitives
//! (matrix-vector products, element-wise arithmetic, concatenation, the usual
//! non-linearities, softmax and the smoothed softmax). Parameters enter the
//! tape as leaves bound to a tensor (or one row of it) in a [`ParamStore`];
//! [`Tape::backward`] writes exact gradients back into the store.
//!
//! Leaves are memoised: asking twice for the same parameter row returns the
//! same node, so every parameter appears at most once per tape.

use std::collections::HashMap;

use super::{ParamId, ParamStore};
use crate::error::{RcfError, Result};
use crate::real::{dot, Real};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; indexes the result of [`Tape::gradients`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param { id: ParamId, row: Option<u32> },
    /// `y = M[:, off..off + x.len()] · x` with `M` stored row-major as `rows × cols`.
    MatVec { m: Var, x: Var, cols: usize, offset: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Vector times scalar node.
    Scale(Var, Var),
    AddN(Vec<Var>),
    Concat(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    /// `ln σ(x)`, evaluated without overflow.
    LogSigmoid(Var),
    Sum(Var),
    Dot(Var, Var),
    Mean(Vec<Var>),
    /// Gathers scalar nodes into a vector.
    Stack(Vec<Var>),
    Index(Var, usize),
    Softmax(Var),
    /// `exp(b_k) / (Σ exp b)^ρ`; aux holds the plain softmax.
    SmoothedSoftmax(Var, f64),
    /// `Σ_k w[k] · v_k` for a weight vector and a list of equal-length vectors.
    WeightedSum { weights: Var, vecs: Vec<Var> },
    /// `hᵀ ReLU(Σ parts)`; aux holds the pre-activation.
    AttentionScore { parts: Vec<Var>, h: Var },
    /// Element-wise product with a fixed (already rescaled) mask.
    Mask(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    aux: Vec<T>,
    op: Op,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaves: HashMap<(ParamId, Option<u32>), Var>,
    check_finite: bool,
    first_non_finite: Option<String>,
    relu_margin: f64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param { .. } => "param",
        Op::MatVec { .. } => "matvec",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddN(..) => "add_n",
        Op::Concat(..) => "concat",
        Op::Relu(..) => "relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Log(..) => "log",
        Op::Exp(..) => "exp",
        Op::LogSigmoid(..) => "log_sigmoid",
        Op::Sum(..) => "sum",
        Op::Dot(..) => "dot",
        Op::Mean(..) => "mean",
        Op::Stack(..) => "stack",
        Op::Index(..) => "index",
        Op::Softmax(..) => "softmax",
        Op::SmoothedSoftmax(..) => "smoothed_softmax",
        Op::WeightedSum { .. } => "weighted_sum",
        Op::AttentionScore { .. } => "attention_score",
        Op::Mask(..) => "mask",
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    // ln σ(x) = min(x, 0) − ln(1 + e^{−|x|})
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Standard softmax with max subtraction.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Smoothed softmax `exp(b_k − ρ·logsumexp(b))`.
pub fn smoothed_softmax(xs: &[f64], rho: f64) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - rho * lse).exp()).collect()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaves: HashMap::new(),
            check_finite: false,
            first_non_finite: None,
            relu_margin: f64::INFINITY,
        }
    }

    /// Enables the per-node finiteness check; `backward` then fails naming the
    /// first operation that produced a NaN or infinity.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest |pre-activation| seen by any ReLU on this tape.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<T>, aux: Vec<T>, op: Op) -> Var {
        if self.check_finite && self.first_non_finite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.first_non_finite = Some(op_name(&op).to_string());
        }
        self.nodes.push(Node { value, aux, op });
        Var(self.nodes.len() - 1)
    }

    fn vals(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Vec<T>) -> Var {
        self.push(value, Vec::new(), Op::Constant)
    }

    pub fn constant_scalar(&mut self, value: T) -> Var {
        self.constant(vec![value])
    }

    /// Whole-tensor leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&(id, None)) {
            return v;
        }
        let v = self.push(store.tensor(id).data.clone(), Vec::new(), Op::Param { id, row: None });
        self.leaves.insert((id, None), v);
        v
    }

    /// Single-row leaf.
    pub fn param_row(&mut self, store: &ParamStore<T>, id: ParamId, row: u32) -> Var {
        if let Some(&v) = self.leaves.get(&(id, Some(row))) {
            return v;
        }
        let v = self.push(store.row(id, row).to_vec(), Vec::new(), Op::Param { id, row: Some(row) });
        self.leaves.insert((id, Some(row)), v);
        v
    }

    /// `M[:, offset..offset + len(x)] · x` where `M` has `cols` columns.
    pub fn matvec_block(&mut self, m: Var, cols: usize, offset: usize, x: Var) -> Var {
        let mv = self.vals(m);
        let xv = self.vals(x);
        let width = xv.len();
        assert!(offset + width <= cols && mv.len().is_multiple_of(cols), "matvec shape mismatch");
        let rows = mv.len() / cols;
        let out: Vec<T> = (0..rows)
            .map(|r| T::from_f64(dot(&mv[r * cols + offset..r * cols + offset + width], xv)))
            .collect();
        self.push(out, Vec::new(), Op::MatVec { m, x, cols, offset })
    }

    pub fn matvec(&mut self, m: Var, cols: usize, x: Var) -> Var {
        self.matvec_block(m, cols, 0, x)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let (av, bv) = (self.vals(a), self.vals(b));
        assert_eq!(av.len(), bv.len(), "{} shape mismatch", op_name(&op));
        let out = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        self.push(out, Vec::new(), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Vector `v` times scalar node `s`.
    pub fn scale(&mut self, v: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let out = self.vals(v).iter().map(|&x| x * sv).collect();
        self.push(out, Vec::new(), Op::Scale(v, s))
    }

    pub fn add_n(&mut self, xs: Vec<Var>) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let n = self.vals(xs[0]).len();
        let mut acc = vec![0.0f64; n];
        for &x in &xs {
            let v = self.vals(x);
            assert_eq!(v.len(), n, "add_n shape mismatch");
            for (a, &b) in acc.iter_mut().zip(v) {
                *a += b.to_f64();
            }
        }
        let out = acc.into_iter().map(T::from_f64).collect();
        self.push(out, Vec::new(), Op::AddN(xs))
    }

    pub fn concat(&mut self, xs: Vec<Var>) -> Var {
        let out = xs.iter().flat_map(|&x| self.vals(x).iter().copied()).collect();
        self.push(out, Vec::new(), Op::Concat(xs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.vals(x);
        let margin = v.iter().map(|t| t.to_f64().abs()).fold(f64::INFINITY, f64::min);
        let out = v.iter().map(|&t| if t > T::ZERO { t } else { T::ZERO }).collect();
        self.relu_margin = self.relu_margin.min(margin);
        self.push(out, Vec::new(), Op::Relu(x))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.vals(x).iter().map(|&t| T::from_f64(f(t.to_f64()))).collect();
        self.push(out, Vec::new(), op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, Op::Log(x), f64::ln)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::LogSigmoid(x), log_sigmoid)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.vals(x).iter().map(|t| t.to_f64()).sum();
        self.push(vec![T::from_f64(s)], Vec::new(), Op::Sum(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.vals(a), self.vals(b));
        assert_eq!(av.len(), bv.len(), "dot shape mismatch");
        let s = dot(av, bv);
        self.push(vec![T::from_f64(s)], Vec::new(), Op::Dot(a, b))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: Vec<Var>) -> Var {
        assert!(!xs.is_empty(), "mean of nothing");
        let s: f64 = xs.iter().map(|&x| self.scalar(x).to_f64()).sum();
        let out = vec![T::from_f64(s / xs.len() as f64)];
        self.push(out, Vec::new(), Op::Mean(xs))
    }

    pub fn stack(&mut self, xs: Vec<Var>) -> Var {
        let out = xs.iter().map(|&x| self.scalar(x)).collect();
        self.push(out, Vec::new(), Op::Stack(xs))
    }

    pub fn index(&mut self, x: Var, k: usize) -> Var {
        let out = vec![self.vals(x)[k]];
        self.push(out, Vec::new(), Op::Index(x, k))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xs: Vec<f64> = self.vals(x).iter().map(|t| t.to_f64()).collect();
        let out = softmax(&xs).into_iter().map(T::from_f64).collect();
        self.push(out, Vec::new(), Op::Softmax(x))
    }

    /// Smoothed softmax with exponent `rho` on the denominator.
    pub fn smoothed_softmax(&mut self, x: Var, rho: f64) -> Var {
        let xs: Vec<f64> = self.vals(x).iter().map(|t| t.to_f64()).collect();
        let lse = log_sum_exp(&xs);
        let out = xs.iter().map(|&b| T::from_f64((b - rho * lse).exp())).collect();
        let aux = xs.iter().map(|&b| T::from_f64((b - lse).exp())).collect();
        self.push(out, aux, Op::SmoothedSoftmax(x, rho))
    }

    pub fn weighted_sum(&mut self, weights: Var, vecs: Vec<Var>) -> Var {
        let w = self.vals(weights);
        assert_eq!(w.len(), vecs.len(), "weighted_sum arity mismatch");
        assert!(!vecs.is_empty(), "weighted_sum of nothing");
        let n = self.vals(vecs[0]).len();
        let mut acc = vec![0.0f64; n];
        for (k, &v) in vecs.iter().enumerate() {
            let wk = w[k].to_f64();
            let vv = self.vals(v);
            assert_eq!(vv.len(), n, "weighted_sum shape mismatch");
            for (a, &x) in acc.iter_mut().zip(vv) {
                *a += wk * x.to_f64();
            }
        }
        let out = acc.into_iter().map(T::from_f64).collect();
        self.push(out, Vec::new(), Op::WeightedSum { weights, vecs })
    }

    /// `hᵀ ReLU(Σ parts)`: the output layer of a one-hidden-layer attention
    /// network whose pre-activation is split into additive parts.
    pub fn attention_score(&mut self, parts: Vec<Var>, h: Var) -> Var {
        let hv = self.vals(h);
        let n = hv.len();
        let mut pre = vec![0.0f64; n];
        for &p in &parts {
            let pv = self.vals(p);
            assert_eq!(pv.len(), n, "attention_score shape mismatch");
            for (a, &x) in pre.iter_mut().zip(pv) {
                *a += x.to_f64();
            }
        }
        let pre: Vec<T> = pre.into_iter().map(T::from_f64).collect();
        let mut s = 0.0f64;
        let mut margin = f64::INFINITY;
        for (&p, &hk) in pre.iter().zip(hv) {
            margin = margin.min(p.to_f64().abs());
            if p > T::ZERO {
                s += p.to_f64() * hk.to_f64();
            }
        }
        self.relu_margin = self.relu_margin.min(margin);
        self.push(vec![T::from_f64(s)], pre, Op::AttentionScore { parts, h })
    }

    /// Element-wise product with a constant mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let out = self.vals(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        self.push(out, mask, Op::Mask(x))
    }

    /// Back-propagates from the scalar `loss` and adds the gradients of every
    /// parameter leaf into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param { id, row }, Some(g)) = (&node.op, g) {
                let g: Vec<T> = g.into_iter().map(T::from_f64).collect();
                store.accumulate_grad(*id, *row, &g);
            }
        }
        Ok(())
    }

    /// Gradient of the scalar `loss` with respect to every node (`None` when
    /// the node does not influence the loss).
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if let Some(op) = &self.first_non_finite {
            return Err(RcfError::Numerical(format!("non-finite value produced by `{op}`")));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(RcfError::Numerical(format!(
                "backward needs a scalar loss, got {} elements",
                self.nodes[loss.0].value.len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let f = |t: T| t.to_f64();

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param { .. } => {}
                Op::MatVec { m, x, cols, offset } => {
                    let mv = &self.nodes[m.0].value;
                    let xv = &self.nodes[x.0].value;
                    let width = xv.len();
                    let mlen = mv.len();
                    {
                        let gm = acc(&mut grads, *m, mlen);
                        for (r, &g) in gy.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let base = r * cols + offset;
                            for (c, &xc) in xv.iter().enumerate() {
                                gm[base + c] += g * f(xc);
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, width);
                    for (r, &g) in gy.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let base = r * cols + offset;
                        for c in 0..width {
                            gx[c] += g * f(mv[base + c]);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let g = acc(&mut grads, v, gy.len());
                        for (d, &s) in g.iter_mut().zip(&gy) {
                            *d += s;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    let g = acc(&mut grads, *a, gy.len());
                    for (d, &s) in g.iter_mut().zip(&gy) {
                        *d += s;
                    }
                    let g = acc(&mut grads, *b, gy.len());
                    for (d, &s) in g.iter_mut().zip(&gy) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = gy.iter().zip(bv).map(|(&g, &y)| g * f(y)).collect();
                    let gb: Vec<f64> = gy.iter().zip(av).map(|(&g, &x)| g * f(x)).collect();
                    add_into(acc(&mut grads, *a, ga.len()), &ga);
                    add_into(acc(&mut grads, *b, gb.len()), &gb);
                }
                Op::Scale(v, s) => {
                    let vv = &self.nodes[v.0].value;
                    let sv = f(self.nodes[s.0].value[0]);
                    let gs: f64 = gy.iter().zip(vv).map(|(&g, &x)| g * f(x)).sum();
                    let gv: Vec<f64> = gy.iter().map(|&g| g * sv).collect();
                    add_into(acc(&mut grads, *v, gv.len()), &gv);
                    acc(&mut grads, *s, 1)[0] += gs;
                }
                Op::AddN(xs) => {
                    for &x in xs {
                        add_into(acc(&mut grads, x, gy.len()), &gy);
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.nodes[x.0].value.len();
                        add_into(acc(&mut grads, x, n), &gy[off..off + n]);
                        off += n;
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let g: Vec<f64> = gy
                        .iter()
                        .zip(xv)
                        .map(|(&g, &t)| if t > T::ZERO { g } else { 0.0 })
                        .collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
                Op::Sigmoid(x) => {
                    let g: Vec<f64> = gy
                        .iter()
                        .zip(&node.value)
                        .map(|(&g, &s)| g * f(s) * (1.0 - f(s)))
                        .collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
                Op::Log(x) => {
                    let xv = &self.nodes[x.0].value;
                    let g: Vec<f64> = gy.iter().zip(xv).map(|(&g, &t)| g / f(t)).collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
                Op::Exp(x) => {
                    let g: Vec<f64> = gy.iter().zip(&node.value).map(|(&g, &e)| g * f(e)).collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
                Op::LogSigmoid(x) => {
                    let xv = &self.nodes[x.0].value;
                    let g: Vec<f64> = gy.iter().zip(xv).map(|(&g, &t)| g * sigmoid(-f(t))).collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    for d in acc(&mut grads, *x, n).iter_mut() {
                        *d += gy[0];
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = bv.iter().map(|&y| gy[0] * f(y)).collect();
                    let gb: Vec<f64> = av.iter().map(|&x| gy[0] * f(x)).collect();
                    add_into(acc(&mut grads, *a, ga.len()), &ga);
                    add_into(acc(&mut grads, *b, gb.len()), &gb);
                }
                Op::Mean(xs) => {
                    let g = gy[0] / xs.len() as f64;
                    for &x in xs {
                        acc(&mut grads, x, 1)[0] += g;
                    }
                }
                Op::Stack(xs) => {
                    for (k, &x) in xs.iter().enumerate() {
                        acc(&mut grads, x, 1)[0] += gy[k];
                    }
                }
                Op::Index(x, k) => {
                    let n = self.nodes[x.0].value.len();
                    acc(&mut grads, *x, n)[*k] += gy[0];
                }
                Op::Softmax(x) => {
                    let y: Vec<f64> = node.value.iter().map(|&t| f(t)).collect();
                    let inner: f64 = gy.iter().zip(&y).map(|(g, y)| g * y).sum();
                    let g: Vec<f64> = y.iter().zip(&gy).map(|(&y, &g)| y * (g - inner)).collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
                Op::SmoothedSoftmax(x, rho) => {
                    // dβ_k/db_m = β_k (δ_km − ρ p_m), p = softmax(b)
                    let beta: Vec<f64> = node.value.iter().map(|&t| f(t)).collect();
                    let p: Vec<f64> = node.aux.iter().map(|&t| f(t)).collect();
                    let inner: f64 = gy.iter().zip(&beta).map(|(g, b)| g * b).sum();
                    let g: Vec<f64> = (0..beta.len())
                        .map(|m| gy[m] * beta[m] - rho * p[m] * inner)
                        .collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
                Op::WeightedSum { weights, vecs } => {
                    let w = &self.nodes[weights.0].value;
                    let gw: Vec<f64> = vecs
                        .iter()
                        .map(|&v| gy.iter().zip(&self.nodes[v.0].value).map(|(&g, &x)| g * f(x)).sum())
                        .collect();
                    add_into(acc(&mut grads, *weights, gw.len()), &gw);
                    for (k, &v) in vecs.iter().enumerate() {
                        let wk = f(w[k]);
                        let gv: Vec<f64> = gy.iter().map(|&g| g * wk).collect();
                        add_into(acc(&mut grads, v, gv.len()), &gv);
                    }
                }
                Op::AttentionScore { parts, h } => {
                    let hv = &self.nodes[h.0].value;
                    let pre = &node.aux;
                    let g = gy[0];
                    let gh: Vec<f64> = pre
                        .iter()
                        .map(|&p| if p > T::ZERO { g * f(p) } else { 0.0 })
                        .collect();
                    let gp: Vec<f64> = pre
                        .iter()
                        .zip(hv)
                        .map(|(&p, &hk)| if p > T::ZERO { g * f(hk) } else { 0.0 })
                        .collect();
                    add_into(acc(&mut grads, *h, gh.len()), &gh);
                    for &p in parts {
                        add_into(acc(&mut grads, p, gp.len()), &gp);
                    }
                }
                Op::Mask(x) => {
                    let g: Vec<f64> = gy.iter().zip(&node.aux).map(|(&g, &m)| g * f(m)).collect();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                }
            }
            grads[idx] = Some(gy);
        }
        Ok(grads)
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
