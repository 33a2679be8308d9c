use std::collections::HashMap;
use std::sync::Arc;

use super::backend::Backend;
use super::matrix::{gemm_into, matmul, Matrix, Real};
use super::ops;
use super::params::ParameterStore;

/// Clamp applied to probabilities before every logarithm in the losses.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TVar(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    SoftmaxRows(usize),
    SoftmaxGroups(usize, usize),
    GroupSum(usize, usize),
    Gather(usize, Arc<Vec<i64>>),
    Concat(Vec<usize>),
    Propagate(usize, Arc<Vec<[u32; 4]>>),
    Bce {
        p: usize,
        pos: Arc<Vec<f64>>,
        neg: Arc<Vec<f64>>,
        denom: f64,
    },
    NeighborCe {
        p: usize,
        adj: Arc<Vec<[u32; 4]>>,
        denom: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(..) => "relu",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::SoftmaxGroups(..) => "softmax_groups",
            Op::GroupSum(..) => "group_sum",
            Op::Gather(..) => "gather_rows",
            Op::Concat(..) => "concat_cols",
            Op::Propagate(..) => "propagate",
            Op::Bce { .. } => "multi_label_bce",
            Op::NeighborCe { .. } => "neighbor_cross_entropy",
        }
    }
}

struct Node<T> {
    value: Matrix<T>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode recording of one forward pass. Parameters are read from a
/// [`ParameterStore`] and appear once each, so gradients of shared weights
/// accumulate on a single node.
pub struct Tape<'p, T: Real> {
    store: &'p ParameterStore,
    nodes: Vec<Node<T>>,
    params: HashMap<String, usize>,
    checked: bool,
    first_non_finite: Option<(usize, &'static str)>,
    kinks: u64,
}

/// Gradients of a scalar with respect to every tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
    params: HashMap<String, usize>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, v: TVar) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a named parameter; `None` if it did not influence the output.
    pub fn param(&self, name: &str) -> Option<&Matrix<T>> {
        self.params.get(name).and_then(|&i| self.grads[i].as_ref())
    }

    /// f64 gradients for every parameter of `store` (zeros where unused).
    pub fn for_store(&self, store: &ParameterStore) -> HashMap<String, Matrix<f64>> {
        store
            .iter()
            .map(|(name, m)| {
                let g = match self.param(name) {
                    Some(g) => g.cast::<f64>(),
                    None => Matrix::zeros(m.rows(), m.cols()),
                };
                (name.to_string(), g)
            })
            .collect()
    }
}

#[inline]
fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01B3).rotate_left(17)
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(store: &'p ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            checked: false,
            first_non_finite: None,
            kinks: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// In checked mode every op output is scanned for NaN/Inf and the first
    /// offender is remembered.
    pub fn set_checked(&mut self, on: bool) {
        self.checked = on;
    }

    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    /// Hash of every ReLU activation pattern and probability-clamp state in
    /// this pass. Two passes with equal signatures are on the same smooth
    /// piece of the loss.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op, needs_grad: bool) -> TVar {
        if self.checked && self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        TVar(self.nodes.len() - 1)
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn val(&self, v: TVar) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Multi-label binary cross-entropy on column 0 of `probs`:
    /// `-(1/denom) Σ_i [pos_i ln p_i + neg_i ln(1 - p_i)]` with `p` clamped
    /// to `[ε, 1-ε]`. `pos_i`/`neg_i` count inside/outside labels of row `i`.
    pub fn multi_label_bce(&mut self, probs: TVar, pos: Arc<Vec<f64>>, neg: Arc<Vec<f64>>, denom: f64) -> TVar {
        let p = self.val(probs);
        assert_eq!(p.rows(), pos.len(), "label rows");
        assert_eq!(p.rows(), neg.len(), "label rows");
        let mut total = 0.0f64;
        let mut h = self.kinks;
        for i in 0..p.rows() {
            let raw = p.get(i, 0).to_f64();
            let pc = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
            h = mix(h, (pc != raw) as u64);
            total += pos[i] * pc.ln() + neg[i] * (1.0 - pc).ln();
        }
        self.kinks = h;
        let needs = self.ng(probs.0);
        self.push(
            Matrix::filled(1, 1, T::from_f64(-total / denom)),
            Op::Bce {
                p: probs.0,
                pos,
                neg,
                denom,
            },
            needs,
        )
    }

    /// Directed neighbor cross-entropy
    /// `-(1/denom) Σ_i Σ_j Σ_c p_i(c) ln clamp(p_{adj[i][j]}(c))`.
    pub fn neighbor_cross_entropy(&mut self, probs: TVar, adj: Arc<Vec<[u32; 4]>>, denom: f64) -> TVar {
        let p = self.val(probs);
        assert_eq!(p.rows(), adj.len(), "adjacency rows");
        let c = p.cols();
        let mut total = 0.0f64;
        let mut h = self.kinks;
        for (i, nb) in adj.iter().enumerate() {
            for &j in nb {
                for k in 0..c {
                    let raw = p.get(j as usize, k).to_f64();
                    let q = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
                    h = mix(h, (q != raw) as u64);
                    total += p.get(i, k).to_f64() * q.ln();
                }
            }
        }
        self.kinks = h;
        let needs = self.ng(probs.0);
        self.push(
            Matrix::filled(1, 1, T::from_f64(-total / denom)),
            Op::NeighborCe {
                p: probs.0,
                adj,
                denom,
            },
            needs,
        )
    }

    /// Gradients of the 1×1 node `out` with respect to every node.
    pub fn backward(&self, out: TVar) -> Gradients<T> {
        assert_eq!(self.val(out).shape(), (1, 1), "backward needs a scalar");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix<T>>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Matrix::filled(1, 1, T::one()));

        fn acc<T: Real>(grads: &mut [Option<Matrix<T>>], i: usize, g: Matrix<T>) {
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(dy);
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Param => {}
                &Op::MatMul(a, b) => {
                    if self.ng(a) {
                        acc(&mut grads, a, matmul(&dy, false, &self.nodes[b].value, true));
                    }
                    if self.ng(b) {
                        let av = &self.nodes[a].value;
                        let bv = &self.nodes[b].value;
                        let mut g = Matrix::zeros(bv.rows(), bv.cols());
                        gemm_into(av, true, &dy, false, T::zero(), &mut g);
                        acc(&mut grads, b, g);
                    }
                }
                &Op::AddBias(x, b) => {
                    if self.ng(b) {
                        let c = dy.cols();
                        let mut g = Matrix::zeros(1, c);
                        for r in 0..dy.rows() {
                            for (o, &v) in g.data_mut().iter_mut().zip(dy.row(r)) {
                                *o = *o + v;
                            }
                        }
                        acc(&mut grads, b, g);
                    }
                    if self.ng(x) {
                        acc(&mut grads, x, dy.clone());
                    }
                }
                &Op::Relu(x) => {
                    if self.ng(x) {
                        let mut g = dy.clone();
                        for (gv, &y) in g.data_mut().iter_mut().zip(node.value.data()) {
                            if !(y > T::zero()) {
                                *gv = T::zero();
                            }
                        }
                        acc(&mut grads, x, g);
                    }
                }
                &Op::Add(a, b) => {
                    if self.ng(a) {
                        acc(&mut grads, a, dy.clone());
                    }
                    if self.ng(b) {
                        acc(&mut grads, b, dy.clone());
                    }
                }
                &Op::Mul(a, b) => {
                    if self.ng(a) {
                        acc(&mut grads, a, ops::mul(dy.clone(), &self.nodes[b].value));
                    }
                    if self.ng(b) {
                        acc(&mut grads, b, ops::mul(dy.clone(), &self.nodes[a].value));
                    }
                }
                &Op::Scale(x, s) => {
                    if self.ng(x) {
                        acc(&mut grads, x, ops::scale(dy.clone(), T::from_f64(s)));
                    }
                }
                &Op::SoftmaxRows(x) => {
                    if self.ng(x) {
                        acc(&mut grads, x, ops::softmax_rows_backward(&node.value, &dy));
                    }
                }
                &Op::SoftmaxGroups(x, g) => {
                    if self.ng(x) {
                        acc(&mut grads, x, ops::softmax_groups_backward(&node.value, &dy, g));
                    }
                }
                &Op::GroupSum(x, g) => {
                    if self.ng(x) {
                        acc(&mut grads, x, ops::repeat_rows(&dy, g));
                    }
                }
                Op::Gather(x, ids) => {
                    if self.ng(*x) {
                        let n = self.nodes[*x].value.rows();
                        acc(&mut grads, *x, ops::scatter_add_rows(&dy, ids, n));
                    }
                }
                Op::Concat(xs) => {
                    let widths: Vec<usize> = xs.iter().map(|&x| self.nodes[x].value.cols()).collect();
                    for (&x, g) in xs.iter().zip(ops::split_cols(&dy, &widths)) {
                        if self.ng(x) {
                            acc(&mut grads, x, g);
                        }
                    }
                }
                Op::Propagate(x, adj) => {
                    if self.ng(*x) {
                        acc(&mut grads, *x, ops::propagate(&dy, adj));
                    }
                }
                Op::Bce { p, pos, neg, denom } => {
                    let pv = &self.nodes[*p].value;
                    let up = dy.get(0, 0).to_f64();
                    let mut g = Matrix::zeros(pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        let raw = pv.get(r, 0).to_f64();
                        if raw > PROB_EPS && raw < 1.0 - PROB_EPS {
                            let d = -(pos[r] / raw - neg[r] / (1.0 - raw)) / denom;
                            g.set(r, 0, T::from_f64(up * d));
                        }
                    }
                    acc(&mut grads, *p, g);
                }
                Op::NeighborCe { p, adj, denom } => {
                    let pv = &self.nodes[*p].value;
                    let up = dy.get(0, 0).to_f64();
                    let c = pv.cols();
                    let mut g = vec![0.0f64; pv.rows() * c];
                    for (i, nb) in adj.iter().enumerate() {
                        for &j in nb {
                            let j = j as usize;
                            for k in 0..c {
                                let raw = pv.get(j, k).to_f64();
                                let q = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
                                g[i * c + k] -= q.ln() / denom;
                                if q == raw {
                                    g[j * c + k] -= pv.get(i, k).to_f64() / (q * denom);
                                }
                            }
                        }
                    }
                    let g = Matrix::from_vec(pv.rows(), c, g.into_iter().map(|x| T::from_f64(up * x)).collect());
                    acc(&mut grads, *p, g);
                }
            }
            grads[i] = Some(dy);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }
}

impl<T: Real> Backend for Tape<'_, T> {
    type T = T;
    type Var = TVar;

    fn value<'s>(&'s self, v: &'s TVar) -> &'s Matrix<T> {
        &self.nodes[v.0].value
    }

    fn constant(&mut self, m: Matrix<T>) -> TVar {
        self.push(m, Op::Leaf, false)
    }

    fn param(&mut self, name: &str) -> TVar {
        if let Some(&i) = self.params.get(name) {
            return TVar(i);
        }
        let value = self.store.expect(name).cast::<T>();
        let v = self.push(value, Op::Param, true);
        self.params.insert(name.to_string(), v.0);
        v
    }

    fn matmul(&mut self, a: TVar, b: TVar) -> TVar {
        let y = matmul(self.val(a), false, self.val(b), false);
        let ng = self.ng(a.0) || self.ng(b.0);
        self.push(y, Op::MatMul(a.0, b.0), ng)
    }

    fn add_bias(&mut self, x: TVar, b: TVar) -> TVar {
        let y = ops::add_bias(self.val(x).clone(), self.val(b));
        let ng = self.ng(x.0) || self.ng(b.0);
        self.push(y, Op::AddBias(x.0, b.0), ng)
    }

    fn relu(&mut self, x: TVar) -> TVar {
        let y = ops::relu(self.val(x).clone());
        let mut h = self.kinks;
        for (k, chunk) in self.val(x).data().chunks(64).enumerate() {
            let mut bits = 0u64;
            for (b, v) in chunk.iter().enumerate() {
                if *v > T::zero() {
                    bits |= 1 << b;
                }
            }
            h = mix(h, bits ^ (k as u64).rotate_left(40));
        }
        self.kinks = h;
        let ng = self.ng(x.0);
        self.push(y, Op::Relu(x.0), ng)
    }

    fn add(&mut self, a: TVar, b: TVar) -> TVar {
        let y = ops::add(self.val(a).clone(), self.val(b));
        let ng = self.ng(a.0) || self.ng(b.0);
        self.push(y, Op::Add(a.0, b.0), ng)
    }

    fn mul(&mut self, a: TVar, b: TVar) -> TVar {
        let y = ops::mul(self.val(a).clone(), self.val(b));
        let ng = self.ng(a.0) || self.ng(b.0);
        self.push(y, Op::Mul(a.0, b.0), ng)
    }

    fn scale(&mut self, x: TVar, s: f64) -> TVar {
        let y = ops::scale(self.val(x).clone(), T::from_f64(s));
        let ng = self.ng(x.0);
        self.push(y, Op::Scale(x.0, s), ng)
    }

    fn softmax_rows(&mut self, x: TVar) -> TVar {
        let y = ops::softmax_rows(self.val(x).clone());
        let ng = self.ng(x.0);
        self.push(y, Op::SoftmaxRows(x.0), ng)
    }

    fn softmax_groups(&mut self, x: TVar, g: usize) -> TVar {
        let y = ops::softmax_groups(self.val(x).clone(), g);
        let ng = self.ng(x.0);
        self.push(y, Op::SoftmaxGroups(x.0, g), ng)
    }

    fn group_sum(&mut self, x: TVar, g: usize) -> TVar {
        let y = ops::group_sum(self.val(x), g);
        let ng = self.ng(x.0);
        self.push(y, Op::GroupSum(x.0, g), ng)
    }

    fn gather_rows(&mut self, x: TVar, ids: &Arc<Vec<i64>>) -> TVar {
        let y = ops::gather_rows(self.val(x), ids);
        let ng = self.ng(x.0);
        self.push(y, Op::Gather(x.0, ids.clone()), ng)
    }

    fn concat_cols(&mut self, xs: Vec<TVar>) -> TVar {
        let refs: Vec<&Matrix<T>> = xs.iter().map(|&x| self.val(x)).collect();
        let y = ops::concat_cols(&refs);
        let ng = xs.iter().any(|x| self.ng(x.0));
        self.push(y, Op::Concat(xs.iter().map(|x| x.0).collect()), ng)
    }

    fn propagate(&mut self, x: TVar, adj: &Arc<Vec<[u32; 4]>>) -> TVar {
        let y = ops::propagate(self.val(x), adj);
        let ng = self.ng(x.0);
        self.push(y, Op::Propagate(x.0, adj.clone()), ng)
    }
}
