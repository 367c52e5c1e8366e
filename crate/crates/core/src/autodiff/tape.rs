use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{Array2, Zip};
use rand::Rng;

use super::{AutodiffError, ParamId, ParamStore};
use crate::real::Real;
use crate::sparse::SparseOperator;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Transpose(Var),
    Spmm(Arc<SparseOperator<T>>, Var),
    SpmmT(Arc<SparseOperator<T>>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Affine(Var, T),
    ScaleBy(Var, Var),
    Hadamard(Var, Var),
    RowScale(Var, Var),
    Relu(Var),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Mask(Var, Array2<T>),
    SoftmaxCe {
        logits: Var,
        probs: Array2<T>,
        targets: Vec<(usize, usize)>,
    },
    SumSquares(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of one forward computation.
///
/// Inputs always precede the operations that consume them, so the
/// recording order is a topological order and backward simply runs it in
/// reverse.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    relu_margin: Option<T>,
}

/// Gradients of leaves produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Array2<T>>,
    params: HashMap<ParamId, Array2<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf, `None` if it received none.
    pub fn wrt(&self, var: Var) -> Option<&Array2<T>> {
        self.leaves.get(&var.idx)
    }

    /// Gradient of a parameter, summed over every time it was bound.
    pub fn param(&self, id: ParamId) -> Option<&Array2<T>> {
        self.params.get(&id)
    }

    /// Zeroes every gradient in `store`, then writes the parameter
    /// gradients collected here.
    pub fn write_to(&self, store: &mut ParamStore<T>) {
        store.zero_grads();
        for (id, g) in &self.params {
            store.get_mut(*id).grad.assign(g);
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            relu_margin: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Smallest `|x|` seen at any ReLU input so far.
    pub fn relu_margin(&self) -> Option<T> {
        self.relu_margin
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx]
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// A leaf that is not differentiated.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    /// A free leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf(None), true)
    }

    /// Binds the current value of a stored parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Leaf(Some(id)), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions");
        let out = va.dot(vb);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().as_standard_layout().into_owned();
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    /// `op · x` with a constant sparse operator.
    pub fn spmm(&mut self, op: &Arc<SparseOperator<T>>, x: Var) -> Var {
        let out = op
            .spmm(self.value(x).view())
            .unwrap_or_else(|e| panic!("spmm: {e}"));
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Spmm(Arc::clone(op), x), rg)
    }

    /// `opᵀ · x` with a constant sparse operator.
    pub fn spmm_t(&mut self, op: &Arc<SparseOperator<T>>, x: Var) -> Var {
        let out = op
            .spmm_transposed(self.value(x).view())
            .unwrap_or_else(|e| panic!("spmm_t: {e}"));
        let rg = self.any_grad(&[x]);
        self.push(out, Op::SpmmT(Arc::clone(op), x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = self.value(a) + self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = self.value(a) - self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).mapv(|v| v * s);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `s · a + b` elementwise with real constants.
    pub fn affine(&mut self, a: Var, s: T, b: T) -> Var {
        let out = self.value(a).mapv(|v| v * s + b);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Affine(a, s), rg)
    }

    /// Multiplies every entry of `x` by the 1x1 tensor `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by expects a 1x1 scale");
        let sv = self.value(s)[[0, 0]];
        let out = self.value(x).mapv(|v| sv * v);
        let rg = self.any_grad(&[s, x]);
        self.push(out, Op::ScaleBy(s, x), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "hadamard");
        let out = self.value(a) * self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Hadamard(a, b), rg)
    }

    /// Multiplies row `e` of `x` by `d[e]`, where `d` is a column vector.
    pub fn row_scale(&mut self, d: Var, x: Var) -> Var {
        let (dv, xv) = (self.value(d), self.value(x));
        assert_eq!(dv.ncols(), 1, "row_scale expects a column vector");
        assert_eq!(dv.nrows(), xv.nrows(), "row_scale length");
        let mut out = xv.clone();
        for (mut row, &w) in out.rows_mut().into_iter().zip(dv.column(0)) {
            row.mapv_inplace(|v| w * v);
        }
        let rg = self.any_grad(&[d, x]);
        self.push(out, Op::RowScale(d, x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let margin = xv.iter().fold(None, |m: Option<T>, v| {
            let a = v.abs();
            Some(m.map_or(a, |m| m.min(a)))
        });
        let out = xv.mapv(|v| if v > T::zero() { v } else { T::zero() });
        if let Some(m) = margin {
            self.relu_margin = Some(self.relu_margin.map_or(m, |r| r.min(m)));
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .mapv(|v| if v > T::zero() { v } else { v.exp_m1() });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Elu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(T::tanh);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Inverted dropout: surviving entries are scaled by `1/(1-p)` during
    /// training; identity otherwise. Draws from `rng` only when it drops.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} outside [0, 1)");
        if !training || p == 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask = Array2::from_shape_simple_fn(self.value(x).raw_dim(), || {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let out = self.value(x) * &mask;
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Mask(x, mask), rg)
    }

    /// Mean softmax cross-entropy over the rows selected by `mask`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[bool]) -> Var {
        let lv = self.value(logits);
        let (n, classes) = lv.dim();
        assert_eq!(labels.len(), n, "labels length");
        assert_eq!(mask.len(), n, "mask length");
        let targets: Vec<(usize, usize)> = (0..n)
            .filter(|&i| mask[i])
            .map(|i| {
                assert!(labels[i] < classes, "label {} out of range", labels[i]);
                (i, labels[i])
            })
            .collect();
        assert!(!targets.is_empty(), "empty loss mask");
        let mut probs = Array2::zeros((n, classes));
        let mut total = T::zero();
        for &(i, y) in &targets {
            let row = lv.row(i);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for (k, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[[i, k]] = e;
                z = z + e;
            }
            for k in 0..classes {
                probs[[i, k]] = probs[[i, k]] / z;
            }
            total = total + (z.ln() + max - row[y]);
        }
        let count = T::of(targets.len() as f64);
        let out = Array2::from_elem((1, 1), total / count);
        let rg = self.any_grad(&[logits]);
        self.push(
            out,
            Op::SoftmaxCe {
                logits,
                probs,
                targets,
            },
            rg,
        )
    }

    /// `½ Σ x²` as a 1x1 tensor.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|&v| v * v).sum::<T>() * T::of(0.5);
        let rg = self.any_grad(&[x]);
        self.push(Array2::from_elem((1, 1), s), Op::SumSquares(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if loss.tape != self.id {
            return Err(AutodiffError::ForeignVar);
        }
        let (r, c) = self.nodes[loss.idx].value.dim();
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(r, c));
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Array2::from_elem((1, 1), T::one()));
        let mut out = Gradients {
            leaves: HashMap::new(),
            params: HashMap::new(),
        };

        for i in (0..=loss.idx).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| &self.nodes[v.idx].value;
            let mut acc = |v: Var, d: Array2<T>| {
                if !self.nodes[v.idx].requires_grad {
                    return;
                }
                match &mut grads[v.idx] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf(param) => {
                    if let Some(id) = param {
                        match out.params.get_mut(id) {
                            Some(existing) => *existing += &g,
                            None => {
                                out.params.insert(*id, g.clone());
                            }
                        }
                    }
                    out.leaves.insert(i, g);
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&val(*b).t()));
                    acc(*b, val(*a).t().dot(&g));
                }
                Op::Transpose(a) => acc(*a, g.t().as_standard_layout().into_owned()),
                Op::Spmm(op, x) => acc(*x, op.spmm_transposed(g.view()).expect("shape")),
                Op::SpmmT(op, x) => acc(*x, op.spmm(g.view()).expect("shape")),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.mapv(|v| -v));
                }
                Op::Scale(a, s) | Op::Affine(a, s) => acc(*a, g.mapv(|v| v * *s)),
                Op::ScaleBy(s, x) => {
                    let sv = val(*s)[[0, 0]];
                    let ds = Zip::from(&g).and(val(*x)).fold(T::zero(), |m, &a, &b| m + a * b);
                    acc(*s, Array2::from_elem((1, 1), ds));
                    acc(*x, g.mapv(|v| sv * v));
                }
                Op::Hadamard(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, &g * val(*a));
                }
                Op::RowScale(d, x) => {
                    let dv = val(*d);
                    let xv = val(*x);
                    let dd = Array2::from_shape_fn(dv.raw_dim(), |(e, _)| {
                        g.row(e).iter().zip(xv.row(e)).fold(T::zero(), |m, (&a, &b)| m + a * b)
                    });
                    let mut dx = g.clone();
                    for (mut row, &w) in dx.rows_mut().into_iter().zip(dv.column(0)) {
                        row.mapv_inplace(|v| w * v);
                    }
                    acc(*d, dd);
                    acc(*x, dx);
                }
                Op::Relu(x) => {
                    let d = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&gv, &y| if y > T::zero() { gv } else { T::zero() });
                    acc(*x, d);
                }
                Op::Elu(x) => {
                    let d = Zip::from(&g).and(val(*x)).map_collect(|&gv, &xv| {
                        if xv > T::zero() {
                            gv
                        } else {
                            gv * xv.exp()
                        }
                    });
                    acc(*x, d);
                }
                Op::Tanh(x) => {
                    let d = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&gv, &y| gv * (T::one() - y * y));
                    acc(*x, d);
                }
                Op::Sigmoid(x) => {
                    let d = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&gv, &y| gv * y * (T::one() - y));
                    acc(*x, d);
                }
                Op::Mask(x, mask) => acc(*x, &g * mask),
                Op::SoftmaxCe {
                    logits,
                    probs,
                    targets,
                } => {
                    let scale = g[[0, 0]] / T::of(targets.len() as f64);
                    let mut d = Array2::zeros(probs.raw_dim());
                    for &(i, y) in targets {
                        for k in 0..probs.ncols() {
                            d[[i, k]] = probs[[i, k]] * scale;
                        }
                        d[[i, y]] = d[[i, y]] - scale;
                    }
                    acc(*logits, d);
                }
                Op::SumSquares(x) => {
                    let s = g[[0, 0]];
                    acc(*x, val(*x).mapv(|v| v * s));
                }
                Op::Sum(x) => {
                    let s = g[[0, 0]];
                    acc(*x, Array2::from_elem(val(*x).raw_dim(), s));
                }
            }
        }
        Ok(out)
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
