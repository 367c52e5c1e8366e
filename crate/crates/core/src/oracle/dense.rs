//! Naive dense reference: explicit loops over dense `G`, `A`, `P`.

use ndarray::Array2;

use crate::blocks::{Activation, BlockKind, EdgeWeightMode};
use crate::graph::Graph;
use crate::network::Model;

/// Dense copies of the graph operators.
#[derive(Debug, Clone)]
pub struct DenseGraph {
    pub n: usize,
    pub m: usize,
    /// m × n incidence: −1 at the tail, +1 at the head.
    pub g: Array2<f64>,
    /// m × n edge averaging.
    pub a: Array2<f64>,
    /// n × n symmetric-normalized adjacency with self-loops.
    pub p: Array2<f64>,
}

impl DenseGraph {
    pub fn new(graph: &Graph) -> Self {
        let (n, m) = (graph.n(), graph.m());
        let mut g = Array2::zeros((m, n));
        let mut a = Array2::zeros((m, n));
        let mut adj = Array2::<f64>::zeros((n, n));
        for (e, &(t, h)) in graph.edges().iter().enumerate() {
            g[[e, t]] = -1.0;
            g[[e, h]] = 1.0;
            a[[e, t]] = 0.5;
            a[[e, h]] = 0.5;
            adj[[t, h]] = 1.0;
            adj[[h, t]] = 1.0;
        }
        for i in 0..n {
            adj[[i, i]] = 1.0;
        }
        let mut deg = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                deg[i] += adj[[i, j]];
            }
        }
        let mut p = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                p[[i, j]] = adj[[i, j]] / (deg[i] * deg[j]).sqrt();
            }
        }
        Self { n, m, g, a, p }
    }
}

pub fn mm(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let (r, k) = x.dim();
    let (k2, c) = y.dim();
    assert_eq!(k, k2, "inner dimensions");
    let mut out = Array2::zeros((r, c));
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for t in 0..k {
                s += x[[i, t]] * y[[t, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

pub fn tr(x: &Array2<f64>) -> Array2<f64> {
    let (r, c) = x.dim();
    let mut out = Array2::zeros((c, r));
    for i in 0..r {
        for j in 0..c {
            out[[j, i]] = x[[i, j]];
        }
    }
    out
}

fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Identity => x,
        Activation::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp() - 1.0
            }
        }
        Activation::Tanh => x.tanh(),
    }
}

fn act_all(kind: Activation, x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for v in out.iter_mut() {
        *v = act(kind, *v);
    }
    out
}

fn scale_rows(d: Option<&[f64]>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    if let Some(d) = d {
        for e in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[[e, j]] *= d[e];
            }
        }
    }
    out
}

/// `a·x + b·y` elementwise.
fn lin(a: f64, x: &Array2<f64>, b: f64, y: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = a * x[[i, j]] + b * y[[i, j]];
    }
    out
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-layer weights in effective (post-sigmoid) form.
#[derive(Debug, Clone)]
pub struct DenseWeights {
    pub kernel: Array2<f64>,
    pub activation: Activation,
    pub alpha: f64,
    pub d_diff: Option<Vec<f64>>,
    pub d_wave: Option<Vec<f64>>,
}

/// `Gᵀ σ(D_W A u K)`.
pub fn dense_advection_term(dg: &DenseGraph, w: &DenseWeights, u: &Array2<f64>) -> Array2<f64> {
    let edge = mm(&dg.a, &mm(u, &w.kernel));
    let flux = act_all(w.activation, &scale_rows(w.d_wave.as_deref(), &edge));
    mm(&tr(&dg.g), &flux)
}

/// `Gᵀ σ(D_D G u K) Kᵀ`.
pub fn dense_diffusion_term(dg: &DenseGraph, w: &DenseWeights, u: &Array2<f64>) -> Array2<f64> {
    let edge = mm(&dg.g, &mm(u, &w.kernel));
    let flux = act_all(w.activation, &scale_rows(w.d_diff.as_deref(), &edge));
    mm(&tr(&dg.g), &mm(&flux, &tr(&w.kernel)))
}

/// One layer of `kind` from `(u, u_prev)`. Edge weights that are `None`
/// act as ones.
pub fn dense_block_step(
    kind: BlockKind,
    dg: &DenseGraph,
    w: &DenseWeights,
    u: &Array2<f64>,
    u_prev: &Array2<f64>,
    h: f64,
) -> Array2<f64> {
    match kind {
        BlockKind::Gcn => act_all(w.activation, &mm(&mm(&dg.p, u), &w.kernel)),
        BlockKind::Advection => lin(1.0, u, -h, &dense_advection_term(dg, w, u)),
        BlockKind::Burgers => {
            let uk = mm(u, &w.kernel);
            let mut sq = uk.clone();
            for v in sq.iter_mut() {
                *v = *v * *v;
            }
            let div = mm(&tr(&dg.g), &mm(&dg.a, &sq));
            lin(1.0, u, -h / 2.0, &div)
        }
        BlockKind::Diffusion => lin(1.0, u, -h, &dense_diffusion_term(dg, w, u)),
        BlockKind::Wave => {
            let base = lin(2.0, u, -1.0, u_prev);
            lin(1.0, &base, -h * h, &dense_diffusion_term(dg, w, u))
        }
        BlockKind::MixAd | BlockKind::MixAw => {
            let alpha = w.alpha;
            let diff = dense_diffusion_term(dg, w, u);
            let adv = dense_advection_term(dg, w, u);
            let rhs = lin(-(1.0 - alpha) * h * h, &diff, -alpha * h, &adv);
            let base = if kind == BlockKind::MixAd {
                u.clone()
            } else {
                lin(2.0 - alpha, u, -(1.0 - alpha), u_prev)
            };
            lin(1.0, &base, 1.0, &rhs)
        }
    }
}

/// Dense copy of a model's parameters, evaluated without dropout.
#[derive(Debug, Clone)]
pub struct DenseModel {
    pub graph: DenseGraph,
    pub kind: BlockKind,
    pub h: f64,
    pub w_in: Array2<f64>,
    pub w_out: Array2<f64>,
    pub layers: Vec<DenseWeights>,
}

impl DenseModel {
    pub fn from_model(model: &Model<f64>, graph: &Graph) -> Self {
        let cfg = model.config();
        let store = model.params();
        let value = |name: &str| store.get(store.id(name).expect("parameter exists")).value.clone();
        let (alpha, d_diff, d_wave) = match model.mix_params() {
            Some(mix) => {
                let edge = |raw: Array2<f64>| -> Vec<f64> {
                    raw.iter()
                        .map(|&r| match mix.edge_mode {
                            EdgeWeightMode::Bounded => logistic(r),
                            EdgeWeightMode::Signed => r,
                        })
                        .collect()
                };
                let alpha = mix
                    .alpha_clamp
                    .unwrap_or_else(|| logistic(value("alpha_raw")[[0, 0]]));
                (alpha, Some(edge(value("d_diff_raw"))), Some(edge(value("d_wave_raw"))))
            }
            None => (0.0, None, None),
        };
        let layers = (0..cfg.depth)
            .map(|l| {
                let k = if cfg.tie_weights { 0 } else { l };
                DenseWeights {
                    kernel: value(&format!("k.{k}")),
                    activation: cfg.activation,
                    alpha,
                    d_diff: d_diff.clone(),
                    d_wave: d_wave.clone(),
                }
            })
            .collect();
        Self {
            graph: DenseGraph::new(graph),
            kind: cfg.block,
            h: cfg.h,
            w_in: value("w_in"),
            w_out: value("w_out"),
            layers,
        }
    }

    /// Block stack on hidden features; returns every state, input first.
    pub fn run_blocks(&self, hidden: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut states = vec![hidden.clone()];
        let mut prev = hidden.clone();
        for w in &self.layers {
            let cur = states.last().expect("nonempty").clone();
            let next = dense_block_step(self.kind, &self.graph, w, &cur, &prev, self.h);
            prev = cur;
            states.push(next);
        }
        states
    }

    pub fn forward(&self, features: &Array2<f64>) -> Array2<f64> {
        let hidden = act_all(Activation::Relu, &mm(features, &self.w_in));
        let out = self.run_blocks(&hidden).pop().expect("nonempty");
        mm(&out, &self.w_out)
    }
}
