//! Property suite: one PASS/FAIL outcome per property and block kind.

use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::audit::feature_variance;
use super::dense::{dense_advection_term, dense_block_step, dense_diffusion_term, DenseGraph, DenseWeights};
use super::fd::{gradient_check, model_loss, FD_STEP};
use crate::autodiff::Tape;
use crate::blocks::{
    advection_step, burgers_step, diffusion_step, gcn_step, mix_ad_step, mix_aw_step, wave_step, Activation,
    BlockError, BlockKind, BlockParams, BlockState, EdgeWeightMode, MixWeights, StepConfig,
};
use crate::data::synth::{make_random, make_random_regular};
use crate::graph::Graph;
use crate::network::{init_model, Model, ModelConfig};
use crate::real::Real;
use crate::sparse::GraphOperators;

pub const CONSERVATION_TOL: f64 = 1e-9;
pub const ORACLE_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const GCN_VARIANCE_RATIO: f64 = 1e-6;
pub const ADVECTION_VARIANCE_RATIO: f64 = 1e-3;
pub const EQUIVARIANCE_TOL: f64 = 1e-6;
pub const RELU_MARGIN: f64 = 1e-3;

/// Deliberate defects for checking that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Advection steps use `−h` in place of `h`.
    NegateAdvectionStep,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub conservation_graphs: usize,
    pub conservation_max_nodes: usize,
    pub max_depth: usize,
    pub oracle_trials: usize,
    pub oracle_max_nodes: usize,
    pub gradient_models: usize,
    pub reduction_trials: usize,
    pub equivariance_trials: usize,
    pub fault: Option<Fault>,
}

impl VerifyOptions {
    /// Trial counts of the acceptance criteria.
    pub fn full() -> Self {
        Self {
            seed: 0,
            conservation_graphs: 200,
            conservation_max_nodes: 200,
            max_depth: 64,
            oracle_trials: 500,
            oracle_max_nodes: 40,
            gradient_models: 3,
            reduction_trials: 100,
            equivariance_trials: 21,
            fault: None,
        }
    }

    pub fn quick() -> Self {
        Self {
            conservation_graphs: 20,
            oracle_trials: 100,
            gradient_models: 1,
            reduction_trials: 20,
            equivariance_trials: 7,
            ..Self::full()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} measured={:.3e} tolerance={:.1e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

fn outcome(name: impl Into<String>, passed: bool, measured: f64, tolerance: f64, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        measured,
        tolerance,
        detail,
    }
}

/// `measured ≤ tolerance`, with NaN failing.
fn at_most(name: impl Into<String>, measured: f64, tolerance: f64, detail: String) -> CheckOutcome {
    outcome(name, measured <= tolerance, measured, tolerance, detail)
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed).count()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            writeln!(f, "{o}")?;
        }
        write!(
            f,
            "{} checks, {} failed",
            self.outcomes.len(),
            self.failures()
        )
    }
}

/// One sparse step of `kind` on fresh constants. Edge weights that are
/// `None` are omitted (mixing blocks substitute ones).
pub fn sparse_block_step(
    kind: BlockKind,
    ops: &GraphOperators<f64>,
    w: &DenseWeights,
    u: &Array2<f64>,
    u_prev: &Array2<f64>,
    h: f64,
    fault: Option<Fault>,
) -> Result<Array2<f64>, BlockError> {
    let mut tape = Tape::<f64>::new();
    let state = BlockState {
        u_curr: tape.constant(u.clone()),
        u_prev: tape.constant(u_prev.clone()),
    };
    let params = BlockParams {
        kernel: tape.constant(w.kernel.clone()),
        activation: w.activation,
    };
    let m = ops.m();
    let edge = |d: &Option<Vec<f64>>, tape: &mut Tape<f64>| {
        d.as_ref()
            .map(|d| tape.constant(Array2::from_shape_vec((m, 1), d.clone()).expect("m weights")))
    };
    let d_diff = edge(&w.d_diff, &mut tape);
    let d_wave = edge(&w.d_wave, &mut tape);
    let cfg = StepConfig::new(h)?;
    let next = match kind {
        BlockKind::Gcn => gcn_step(&mut tape, state, ops, &params)?,
        BlockKind::Advection => {
            let next = advection_step(&mut tape, state, ops, &params, cfg, d_wave)?;
            match fault {
                Some(Fault::NegateAdvectionStep) => {
                    let two_u = tape.scale(state.u_curr, 2.0);
                    BlockState {
                        u_curr: tape.sub(two_u, next.u_curr),
                        u_prev: state.u_curr,
                    }
                }
                None => next,
            }
        }
        BlockKind::Burgers => burgers_step(&mut tape, state, ops, &params, cfg)?,
        BlockKind::Diffusion => diffusion_step(&mut tape, state, ops, &params, cfg, d_diff)?,
        BlockKind::Wave => wave_step(&mut tape, state, ops, &params, cfg, d_diff)?,
        BlockKind::MixAd | BlockKind::MixAw => {
            let ones = || Array2::from_elem((m, 1), 1.0);
            let mix = MixWeights {
                alpha: tape.constant(Array2::from_elem((1, 1), w.alpha)),
                d_diff: d_diff.unwrap_or_else(|| tape.constant(ones())),
                d_wave: d_wave.unwrap_or_else(|| tape.constant(ones())),
            };
            if kind == BlockKind::MixAd {
                mix_ad_step(&mut tape, state, ops, &params, &mix, cfg)?
            } else {
                mix_aw_step(&mut tape, state, ops, &params, &mix, cfg)?
            }
        }
    };
    Ok(tape.value(next.u_curr).clone())
}

/// Random simple graph with random edge orientation and order.
pub fn random_oriented_graph<R: Rng>(rng: &mut R, n: usize, mean_degree: f64) -> Graph {
    let p = if n > 1 { (mean_degree / (n - 1) as f64).min(1.0) } else { 0.0 };
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push(if rng.random::<bool>() { (i, j) } else { (j, i) });
            }
        }
    }
    edges.shuffle(rng);
    Graph::from_oriented(n, edges).expect("simple by construction")
}

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

const ACTIVATIONS: [Activation; 4] = [Activation::Relu, Activation::Identity, Activation::Elu, Activation::Tanh];

/// A randomized single-step problem.
#[derive(Debug, Clone)]
pub struct Case {
    pub graph: Graph,
    pub weights: DenseWeights,
    pub u: Array2<f64>,
    pub u_prev: Array2<f64>,
    pub h: f64,
}

pub fn random_case<R: Rng>(rng: &mut R, kind: BlockKind, max_nodes: usize) -> Case {
    let n = rng.random_range(1..=max_nodes);
    let mean_degree = rng.random_range(0.5..5.0);
    let graph = random_oriented_graph(rng, n, mean_degree);
    let c = rng.random_range(1..=4);
    let m = graph.m();
    let edge = |rng: &mut R, always: bool| {
        (always || rng.random::<bool>()).then(|| (0..m).map(|_| rng.random_range(0.05..1.0)).collect())
    };
    let mixing = kind.is_mixing();
    let weights = DenseWeights {
        kernel: uniform(rng, c, c, -1.0, 1.0),
        activation: *ACTIVATIONS.choose(rng).expect("nonempty"),
        alpha: rng.random_range(0.0..1.0),
        d_diff: edge(rng, mixing),
        d_wave: edge(rng, mixing),
    };
    Case {
        u: uniform(rng, n, c, -1.0, 1.0),
        u_prev: uniform(rng, n, c, -1.0, 1.0),
        h: rng.random_range(0.05..1.0),
        graph,
        weights,
    }
}

fn max_abs(x: &Array2<f64>) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    if a.dim() != b.dim() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_nan() {
            f64::INFINITY
        } else {
            m.max(d)
        }
    })
}

fn kind_rng(seed: u64, salt: u64, kind: BlockKind) -> ChaCha8Rng {
    let k = BlockKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
    ChaCha8Rng::seed_from_u64(seed ^ (salt << 32) ^ (k << 48))
}

/// Per-channel sum drift over deep stacks of each conserving block. Kernels
/// are scaled so the explicit scheme stays bounded: Burgers' quadratic flux
/// gets a quarter of the scale of the others.
pub fn check_conservation(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    BlockKind::CONSERVING
        .iter()
        .map(|&kind| {
            let kernel_scale = if kind == BlockKind::Burgers { 0.25 } else { 1.0 };
            let mut rng = kind_rng(opts.seed, 1, kind);
            let mut worst: f64 = 0.0;
            let mut peak: f64 = 0.0;
            for _ in 0..opts.conservation_graphs {
                let n = rng.random_range(1..=opts.conservation_max_nodes);
                let mean_degree = rng.random_range(0.5..6.0);
                let graph = random_oriented_graph(&mut rng, n, mean_degree);
                let dmax = graph.degrees().into_iter().max().unwrap_or(0).max(1) as f64;
                let ops = GraphOperators::new(graph);
                let depth = rng.random_range(1..=opts.max_depth);
                let c = rng.random_range(1..=4);
                let h = rng.random_range(0.05..0.5) / dmax;
                let mut u = uniform(&mut rng, n, c, -1.0, 1.0);
                let mut prev = u.clone();
                let base = u.sum_axis(Axis(0));
                for _ in 0..depth {
                    let mut case = random_case(&mut rng, kind, 1);
                    case.weights.kernel = uniform(&mut rng, c, c, -1.0, 1.0) * (kernel_scale / (c as f64).sqrt());
                    let m = ops.m();
                    for d in [&mut case.weights.d_diff, &mut case.weights.d_wave] {
                        if d.is_some() {
                            *d = Some((0..m).map(|_| rng.random_range(0.05..1.0)).collect());
                        }
                    }
                    let next = match sparse_block_step(kind, &ops, &case.weights, &u, &prev, h, opts.fault) {
                        Ok(x) => x,
                        Err(_) => return at_most(format!("conservation/{kind}"), f64::INFINITY, CONSERVATION_TOL, "step failed".into()),
                    };
                    prev = std::mem::replace(&mut u, next);
                    peak = peak.max(max_abs(&u));
                    let drift = max_abs_diff(&u.sum_axis(Axis(0)).insert_axis(Axis(0)), &base.clone().insert_axis(Axis(0)));
                    worst = worst.max(drift);
                }
            }
            at_most(
                format!("conservation/{kind}"),
                worst,
                CONSERVATION_TOL,
                format!("({} graphs, n<={}, depth<={}, max|u|={peak:.2e})", opts.conservation_graphs, opts.conservation_max_nodes, opts.max_depth),
            )
        })
        .collect()
}

/// Sparse step against the dense loop implementation.
pub fn check_oracle(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    BlockKind::ALL
        .iter()
        .map(|&kind| {
            let mut rng = kind_rng(opts.seed, 2, kind);
            let mut worst: f64 = 0.0;
            for _ in 0..opts.oracle_trials {
                let case = random_case(&mut rng, kind, opts.oracle_max_nodes);
                let ops = GraphOperators::new(case.graph.clone());
                let dense = dense_block_step(kind, &DenseGraph::new(&case.graph), &case.weights, &case.u, &case.u_prev, case.h);
                let err = match sparse_block_step(kind, &ops, &case.weights, &case.u, &case.u_prev, case.h, opts.fault) {
                    Ok(sparse) => max_abs_diff(&sparse, &dense) / max_abs(&dense).max(f64::MIN_POSITIVE),
                    Err(_) => f64::INFINITY,
                };
                worst = worst.max(if max_abs(&dense) == 0.0 && err == 0.0 { 0.0 } else { err });
            }
            at_most(
                format!("oracle/{kind}"),
                worst,
                ORACLE_TOL,
                format!("(max relative error, {} trials, n<={})", opts.oracle_trials, opts.oracle_max_nodes),
            )
        })
        .collect()
}

/// Randomizes every mixing and edge parameter so gradients are generic.
pub fn perturb_mixing<T: Real, R: Rng>(model: &mut Model<T>, rng: &mut R) {
    if let Some(mix) = model.mix_params().copied() {
        let offset = match mix.edge_mode {
            EdgeWeightMode::Bounded => 0.0,
            EdgeWeightMode::Signed => 0.5,
        };
        for id in [mix.alpha_raw, mix.d_diff_raw, mix.d_wave_raw] {
            let p = model.params_mut().get_mut(id);
            p.value.mapv_inplace(|_| T::of(offset + rng.random_range(-1.0..1.0)));
        }
    }
}

/// Autodiff against central differences on small models of every kind.
pub fn check_gradients(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    BlockKind::ALL
        .iter()
        .map(|&kind| {
            let name = format!("gradient/{kind}");
            let mut rng = kind_rng(opts.seed, 3, kind);
            let mut worst: f64 = 0.0;
            let mut worst_param = String::new();
            for trial in 0..opts.gradient_models {
                let n = rng.random_range(5..=9);
                let graph = random_oriented_graph(&mut rng, n, 2.5);
                let cfg = ModelConfig {
                    block: kind,
                    depth: 2,
                    channels: 3,
                    dropout: 0.0,
                    h: 0.3,
                    seed: opts.seed + trial as u64,
                    ..ModelConfig::default()
                };
                let mut model = match init_model::<f64>(&cfg, graph, 3, 3) {
                    Ok(m) => m,
                    Err(e) => return at_most(name, f64::INFINITY, GRADIENT_TOL, e.to_string()),
                };
                perturb_mixing(&mut model, &mut rng);
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
                let mask = vec![true; n];
                let mut features = None;
                for _ in 0..200 {
                    let x = uniform(&mut rng, n, 3, -1.0, 1.0);
                    let margin = model_loss(&model, &x, &labels, &mask).ok().and_then(|(_, m)| m);
                    if margin.is_none_or(|m| m >= RELU_MARGIN) {
                        features = Some(x);
                        break;
                    }
                }
                let Some(x) = features else {
                    return at_most(name, f64::INFINITY, GRADIENT_TOL, "no input clear of ReLU kinks".into());
                };
                match gradient_check(&model, &x, &labels, &mask, FD_STEP) {
                    Ok(checks) => {
                        for c in checks {
                            if !(c.rel_error <= worst) {
                                worst = c.rel_error;
                                worst_param = c.name;
                            }
                        }
                    }
                    Err(e) => return at_most(name, f64::INFINITY, GRADIENT_TOL, e.to_string()),
                }
            }
            at_most(
                name,
                worst,
                GRADIENT_TOL,
                format!("(worst parameter {worst_param}, {} models, step {FD_STEP:e})", opts.gradient_models),
            )
        })
        .collect()
}

/// Exact agreement of clamped mixtures with their pure counterparts.
pub fn check_reductions(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let specs: [(&str, BlockKind, f64, BlockKind); 4] = [
        ("mix_ad(alpha=1)=advection", BlockKind::MixAd, 1.0, BlockKind::Advection),
        ("mix_ad(alpha=0)=diffusion(h^2)", BlockKind::MixAd, 0.0, BlockKind::Diffusion),
        ("mix_aw(alpha=1)=advection", BlockKind::MixAw, 1.0, BlockKind::Advection),
        ("mix_aw(alpha=0)=wave", BlockKind::MixAw, 0.0, BlockKind::Wave),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, &(label, mixed, alpha, pure))| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (4 << 32) ^ i as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..opts.reduction_trials {
                let mut case = random_case(&mut rng, mixed, opts.oracle_max_nodes);
                case.weights.alpha = alpha;
                let ops = GraphOperators::new(case.graph.clone());
                let lhs = sparse_block_step(mixed, &ops, &case.weights, &case.u, &case.u_prev, case.h, opts.fault);
                let mut pure_w = case.weights.clone();
                let h = match pure {
                    BlockKind::Advection => {
                        pure_w.d_diff = None;
                        case.h
                    }
                    BlockKind::Diffusion => {
                        pure_w.d_wave = None;
                        case.h * case.h
                    }
                    _ => {
                        pure_w.d_wave = None;
                        case.h
                    }
                };
                let rhs = sparse_block_step(pure, &ops, &pure_w, &case.u, &case.u_prev, h, opts.fault);
                worst = worst.max(match (lhs, rhs) {
                    (Ok(a), Ok(b)) => max_abs_diff(&a, &b),
                    _ => f64::INFINITY,
                });
            }
            outcome(
                format!("reduction/{label}"),
                worst == 0.0,
                worst,
                0.0,
                format!("(exact equality, {} trials)", opts.reduction_trials),
            )
        })
        .collect()
}

/// Substitutes the mixed advection–wave output into its defining
/// implicit relation and measures the residual.
pub fn check_mix_aw_residual(opts: &VerifyOptions) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (5 << 32));
    let mut worst: f64 = 0.0;
    for _ in 0..opts.reduction_trials {
        let case = random_case(&mut rng, BlockKind::MixAw, opts.oracle_max_nodes);
        let ops = GraphOperators::new(case.graph.clone());
        let Ok(next) = sparse_block_step(BlockKind::MixAw, &ops, &case.weights, &case.u, &case.u_prev, case.h, opts.fault)
        else {
            worst = f64::INFINITY;
            continue;
        };
        let dg = DenseGraph::new(&case.graph);
        let (a, h) = (case.weights.alpha, case.h);
        let diff = dense_diffusion_term(&dg, &case.weights, &case.u);
        let adv = dense_advection_term(&dg, &case.weights, &case.u);
        let lhs = (&next - &case.u * 2.0 + &case.u_prev) * (1.0 - a) + (&next - &case.u) * a;
        let rhs = diff * (-(1.0 - a) * h * h) - adv * (h * a);
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    at_most(
        "residual/mix_aw",
        worst,
        RESIDUAL_TOL,
        format!("(max abs residual, {} trials)", opts.reduction_trials),
    )
}

/// Variance after 50 layers relative to the input, on a connected
/// 10-regular graph with 100 nodes.
pub fn check_smoothing(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    const LAYERS: usize = 50;
    const C: usize = 8;
    let graph = make_random_regular(100, 10, opts.seed);
    let ops = GraphOperators::new(graph.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (6 << 32));
    let x0 = uniform(&mut rng, 100, C, 0.0, 1.0);
    let run = |kind: BlockKind, w: &DenseWeights, h: f64, ops: &GraphOperators<f64>, x0: &Array2<f64>| {
        let (mut u, mut prev) = (x0.clone(), x0.clone());
        for _ in 0..LAYERS {
            let next = sparse_block_step(kind, ops, w, &u, &prev, h, opts.fault)?;
            prev = std::mem::replace(&mut u, next);
        }
        Ok::<_, BlockError>(u)
    };
    let ratio = |r: Result<Array2<f64>, BlockError>, x0: &Array2<f64>| {
        r.map(|u| feature_variance(&u) / feature_variance(x0)).unwrap_or(f64::NAN)
    };
    let identity = DenseWeights {
        kernel: Array2::eye(C),
        activation: Activation::Relu,
        alpha: 0.0,
        d_diff: None,
        d_wave: None,
    };
    let gcn = ratio(run(BlockKind::Gcn, &identity, 1.0, &ops, &x0), &x0);
    let random_k = DenseWeights {
        kernel: uniform(&mut rng, C, C, -1.0, 1.0) / (C as f64).sqrt(),
        ..identity.clone()
    };
    let adv = ratio(run(BlockKind::Advection, &random_k, 0.5, &ops, &x0), &x0);

    let er = make_random(100, 0.1, opts.seed);
    let er_ops = GraphOperators::new(er.clone());
    let scale: Vec<f64> = er.degrees().iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let normalized = |u: &Array2<f64>| {
        let mut s = u.clone();
        for (mut row, k) in s.rows_mut().into_iter().zip(&scale) {
            row *= *k;
        }
        feature_variance(&s)
    };
    let er_ratio = run(BlockKind::Gcn, &identity, 1.0, &er_ops, &x0)
        .map(|u| normalized(&u) / normalized(&x0))
        .unwrap_or(f64::NAN);
    vec![
        at_most(
            "smoothing/gcn",
            gcn,
            GCN_VARIANCE_RATIO,
            format!("(variance ratio after {LAYERS} layers, W=I, 10-regular n=100)"),
        ),
        outcome(
            "smoothing/advection",
            adv > ADVECTION_VARIANCE_RATIO,
            adv,
            ADVECTION_VARIANCE_RATIO,
            format!("(variance ratio after {LAYERS} layers must exceed tolerance, K ~ U(-1,1)/sqrt(C), h=0.5)"),
        ),
        at_most(
            "smoothing/gcn-degree-normalized",
            er_ratio,
            GCN_VARIANCE_RATIO,
            format!("(variance ratio of u/sqrt(d+1) after {LAYERS} layers, G(100, 0.1), connected={})", er.is_connected()),
        ),
    ]
}

/// Relabeling nodes permutes the logits of the full model (32-bit).
pub fn check_equivariance(opts: &VerifyOptions) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (7 << 32));
    let mut worst: f64 = 0.0;
    for t in 0..opts.equivariance_trials {
        let kind = BlockKind::ALL[t % BlockKind::ALL.len()];
        let n = rng.random_range(2..=30);
        let graph = random_oriented_graph(&mut rng, n, 3.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let relabeled = graph.relabel(&perm).expect("valid permutation");
        let cfg = ModelConfig {
            block: kind,
            depth: rng.random_range(1..=4),
            channels: 4,
            h: 0.3,
            seed: opts.seed + t as u64,
            ..ModelConfig::default()
        };
        let mix_seed = rng.random::<u64>();
        let build = |g: Graph| -> Option<Model<f32>> {
            let mut m = init_model::<f32>(&cfg, g, 3, 3).ok()?;
            perturb_mixing(&mut m, &mut ChaCha8Rng::seed_from_u64(mix_seed));
            Some(m)
        };
        let (Some(a), Some(b)) = (build(graph), build(relabeled)) else {
            worst = f64::INFINITY;
            continue;
        };
        let x = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0f32..1.0));
        let mut xp = Array2::zeros((n, 3));
        for i in 0..n {
            xp.row_mut(perm[i]).assign(&x.row(i));
        }
        let logits = |m: &Model<f32>, x: Array2<f32>| {
            let mut tape = Tape::new();
            let v = tape.constant(x);
            let mut r = ChaCha8Rng::seed_from_u64(0);
            m.forward(&mut tape, v, false, &mut r).map(|l| tape.value(l).clone()).ok()
        };
        let (Some(la), Some(lb)) = (logits(&a, x), logits(&b, xp)) else {
            worst = f64::INFINITY;
            continue;
        };
        for i in 0..n {
            for k in 0..3 {
                let (p, q) = (la[[i, k]] as f64, lb[[perm[i], k]] as f64);
                let e = (p - q).abs() / p.abs().max(1.0);
                worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
            }
        }
    }
    at_most(
        "equivariance/full-model-f32",
        worst,
        EQUIVARIANCE_TOL,
        format!("({} trials, n<=30, all block kinds)", opts.equivariance_trials),
    )
}

/// Every check above.
pub fn run_suite(opts: &VerifyOptions) -> VerifyReport {
    let mut outcomes = check_conservation(opts);
    outcomes.extend(check_oracle(opts));
    outcomes.extend(check_gradients(opts));
    outcomes.extend(check_reductions(opts));
    outcomes.push(check_mix_aw_residual(opts));
    outcomes.extend(check_smoothing(opts));
    outcomes.push(check_equivariance(opts));
    VerifyReport { outcomes }
}
