//! Layer update rules.
//!
//! Every PDE block is one explicit Euler step whose update term is a graph
//! divergence `Gᵀ(·)` of an edge field. Since `1ᵀGᵀ = 0`, each block
//! preserves the per-channel sum of node features up to roundoff. The GCN
//! step is the non-conserving control.
//!
//! | block     | update                                                           |
//! |-----------|------------------------------------------------------------------|
//! | gcn       | `u ← σ(P u W)`                                                   |
//! | advection | `u ← u − h Gᵀ σ(D_W A u K)`                                      |
//! | burgers   | `u ← u − (h/2) Gᵀ A (uK ⊙ uK)`                                   |
//! | diffusion | `u ← u − h Gᵀ σ(D_D G u K) Kᵀ`                                   |
//! | wave      | `u ← 2u − u_prev − h² Gᵀ σ(D_D G u K) Kᵀ`                        |
//! | mix_ad    | `u ← u − (1−α) h² Gᵀ σ(D_D G u K) Kᵀ − α h Gᵀ σ(D_W A u K)`      |
//! | mix_aw    | `u ← (2−α) u − (1−α) u_prev − (same two flux terms)`             |
//!
//! Here `G` is the m × n incidence (gradient) operator and `A` the m × n
//! edge averaging operator; `D_W`, `D_D` are optional per-edge weights.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::real::Real;
use crate::sparse::GraphOperators;

/// Magnitude beyond which an explicit step is reported as diverging.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlockError {
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("{0} block needs mixing parameters")]
    MissingMix(BlockKind),
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Gcn,
    Advection,
    Burgers,
    Diffusion,
    Wave,
    MixAd,
    MixAw,
}

impl BlockKind {
    pub const ALL: [BlockKind; 7] = [
        BlockKind::Gcn,
        BlockKind::Advection,
        BlockKind::Burgers,
        BlockKind::Diffusion,
        BlockKind::Wave,
        BlockKind::MixAd,
        BlockKind::MixAw,
    ];

    /// The six divergence-form blocks.
    pub const CONSERVING: [BlockKind; 6] = [
        BlockKind::Advection,
        BlockKind::Burgers,
        BlockKind::Diffusion,
        BlockKind::Wave,
        BlockKind::MixAd,
        BlockKind::MixAw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Gcn => "gcn",
            BlockKind::Advection => "advection",
            BlockKind::Burgers => "burgers",
            BlockKind::Diffusion => "diffusion",
            BlockKind::Wave => "wave",
            BlockKind::MixAd => "mix_ad",
            BlockKind::MixAw => "mix_aw",
        }
    }

    pub fn is_mixing(self) -> bool {
        matches!(self, BlockKind::MixAd | BlockKind::MixAw)
    }

    pub fn is_conserving(self) -> bool {
        self != BlockKind::Gcn
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = BlockError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| BlockError::Unknown {
                what: "block kind",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Elu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = BlockError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "identity" | "none" => Ok(Activation::Identity),
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(BlockError::Unknown {
                what: "activation",
                value: s.to_string(),
            }),
        }
    }
}

/// Current and previous node features. Second-order-in-time blocks read
/// `u_prev`; every block rotates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockState {
    pub u_curr: Var,
    pub u_prev: Var,
}

impl BlockState {
    /// Zero initial velocity: `u_prev = u`.
    pub fn at_rest(u: Var) -> Self {
        Self {
            u_curr: u,
            u_prev: u,
        }
    }

    fn advance(self, next: Var) -> Self {
        Self {
            u_curr: next,
            u_prev: self.u_curr,
        }
    }
}

/// Per-layer weights: the c × c channel-mixing kernel and the activation.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub kernel: Var,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    h: f64,
}

impl StepConfig {
    pub fn new(h: f64) -> Result<Self, BlockError> {
        if h > 0.0 && h.is_finite() {
            Ok(Self { h })
        } else {
            Err(BlockError::BadStep(h))
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// How raw edge parameters map to effective edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeightMode {
    /// `sigmoid(raw) ∈ (0, 1)`.
    #[default]
    Bounded,
    /// `raw` used as is, allowing flow reversal.
    Signed,
}

impl EdgeWeightMode {
    /// Raw value giving the default effective weight of one half.
    pub fn initial_raw(self) -> f64 {
        match self {
            EdgeWeightMode::Bounded => 0.0,
            EdgeWeightMode::Signed => 0.5,
        }
    }
}

impl FromStr for EdgeWeightMode {
    type Err = BlockError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "bounded" => Ok(EdgeWeightMode::Bounded),
            "signed" => Ok(EdgeWeightMode::Signed),
            _ => Err(BlockError::Unknown {
                what: "edge weight mode",
                value: s.to_string(),
            }),
        }
    }
}

/// Trainable mixing parameters shared by all layers of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixParams {
    pub alpha_raw: ParamId,
    pub d_diff_raw: ParamId,
    pub d_wave_raw: ParamId,
    /// Replaces `sigmoid(alpha_raw)` by a fixed value when set.
    pub alpha_clamp: Option<f64>,
    pub edge_mode: EdgeWeightMode,
}

/// Effective mixing weights recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MixWeights {
    /// 1 × 1, in (0, 1).
    pub alpha: Var,
    /// m × 1 diffusion edge weights `D_D`.
    pub d_diff: Var,
    /// m × 1 advection edge weights `D_W`.
    pub d_wave: Var,
}

impl MixParams {
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> MixWeights {
        let alpha = match self.alpha_clamp {
            Some(a) => tape.constant(Array2::from_elem((1, 1), T::of(a))),
            None => {
                let raw = tape.param(store, self.alpha_raw);
                tape.sigmoid(raw)
            }
        };
        let edge = |tape: &mut Tape<T>, id| {
            let raw = tape.param(store, id);
            match self.edge_mode {
                EdgeWeightMode::Bounded => tape.sigmoid(raw),
                EdgeWeightMode::Signed => raw,
            }
        };
        let d_diff = edge(tape, self.d_diff_raw);
        let d_wave = edge(tape, self.d_wave_raw);
        MixWeights {
            alpha,
            d_diff,
            d_wave,
        }
    }
}

fn expect_shape(
    tape: &Tape<impl Real>,
    v: Var,
    what: &'static str,
    expected: (usize, usize),
) -> Result<(), BlockError> {
    let got = tape.shape(v);
    if got == expected {
        Ok(())
    } else {
        Err(BlockError::Shape {
            what,
            expected,
            got,
        })
    }
}

fn check_inputs<T: Real>(
    tape: &Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    edge_weights: &[Option<Var>],
) -> Result<(), BlockError> {
    let (_, c) = tape.shape(state.u_curr);
    expect_shape(tape, state.u_curr, "node features", (ops.n(), c))?;
    expect_shape(tape, state.u_prev, "previous node features", (ops.n(), c))?;
    expect_shape(tape, params.kernel, "kernel", (c, c))?;
    for d in edge_weights.iter().flatten() {
        expect_shape(tape, *d, "edge weights", (ops.m(), 1))?;
    }
    Ok(())
}

fn warn_on_blowup<T: Real>(tape: &Tape<T>, v: Var, kind: BlockKind) {
    let limit = T::of(BLOWUP_THRESHOLD);
    if tape.value(v).iter().any(|x| !(x.abs() <= limit)) {
        static WARNED: AtomicBool = AtomicBool::new(false);
        if WARNED.swap(true, Ordering::Relaxed) {
            log::debug!("{kind} step exceeded |u| > {BLOWUP_THRESHOLD:e}");
        } else {
            log::warn!("{kind} step exceeded |u| > {BLOWUP_THRESHOLD:e}; explicit scheme is diverging, reduce h (reported once)");
        }
    }
}

/// `σ(D_W · A (u K))`: the advective flux on edges.
fn advective_flux<T: Real>(
    tape: &mut Tape<T>,
    u: Var,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    d_wave: Option<Var>,
) -> Var {
    let uk = tape.matmul(u, params.kernel);
    let mut edge = tape.spmm(&ops.averaging, uk);
    if let Some(d) = d_wave {
        edge = tape.row_scale(d, edge);
    }
    params.activation.apply(tape, edge)
}

/// `Gᵀ σ(D_D · G (u K)) Kᵀ`: the (nonlinear) diffusive flux divergence.
fn diffusive_term<T: Real>(
    tape: &mut Tape<T>,
    u: Var,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    d_diff: Option<Var>,
) -> Var {
    let uk = tape.matmul(u, params.kernel);
    let mut edge = tape.spmm(&ops.gradient, uk);
    if let Some(d) = d_diff {
        edge = tape.row_scale(d, edge);
    }
    let act = params.activation.apply(tape, edge);
    let kt = tape.transpose(params.kernel);
    let back = tape.matmul(act, kt);
    tape.spmm_t(&ops.gradient, back)
}

/// `u ← σ(P u W)`.
pub fn gcn_step<T: Real>(
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
) -> Result<BlockState, BlockError> {
    check_inputs(tape, state, ops, params, &[])?;
    let pu = tape.spmm(&ops.propagation, state.u_curr);
    let puw = tape.matmul(pu, params.kernel);
    let next = params.activation.apply(tape, puw);
    Ok(state.advance(next))
}

/// `u ← u − h Gᵀ σ(D_W A u K)`.
pub fn advection_step<T: Real>(
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    cfg: StepConfig,
    d_wave: Option<Var>,
) -> Result<BlockState, BlockError> {
    check_inputs(tape, state, ops, params, &[d_wave])?;
    let flux = advective_flux(tape, state.u_curr, ops, params, d_wave);
    let div = tape.spmm_t(&ops.gradient, flux);
    let upd = tape.scale(div, T::of(cfg.h));
    let next = tape.sub(state.u_curr, upd);
    warn_on_blowup(tape, next, BlockKind::Advection);
    Ok(state.advance(next))
}

/// `u ← u − (h/2) Gᵀ A (uK ⊙ uK)`. No activation: the square is the
/// nonlinearity, so `params.activation` is ignored.
pub fn burgers_step<T: Real>(
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    cfg: StepConfig,
) -> Result<BlockState, BlockError> {
    check_inputs(tape, state, ops, params, &[])?;
    let uk = tape.matmul(state.u_curr, params.kernel);
    let sq = tape.hadamard(uk, uk);
    let edge = tape.spmm(&ops.averaging, sq);
    let div = tape.spmm_t(&ops.gradient, edge);
    let upd = tape.scale(div, T::of(cfg.h / 2.0));
    let next = tape.sub(state.u_curr, upd);
    warn_on_blowup(tape, next, BlockKind::Burgers);
    Ok(state.advance(next))
}

/// `u ← u − h Gᵀ σ(D_D G u K) Kᵀ`.
pub fn diffusion_step<T: Real>(
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    cfg: StepConfig,
    d_diff: Option<Var>,
) -> Result<BlockState, BlockError> {
    check_inputs(tape, state, ops, params, &[d_diff])?;
    let term = diffusive_term(tape, state.u_curr, ops, params, d_diff);
    let upd = tape.scale(term, T::of(cfg.h));
    let next = tape.sub(state.u_curr, upd);
    warn_on_blowup(tape, next, BlockKind::Diffusion);
    Ok(state.advance(next))
}

/// `u ← 2u − u_prev − h² Gᵀ σ(D_D G u K) Kᵀ`.
pub fn wave_step<T: Real>(
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    cfg: StepConfig,
    d_diff: Option<Var>,
) -> Result<BlockState, BlockError> {
    check_inputs(tape, state, ops, params, &[d_diff])?;
    let term = diffusive_term(tape, state.u_curr, ops, params, d_diff);
    let two_u = tape.scale(state.u_curr, T::of(2.0));
    let base = tape.sub(two_u, state.u_prev);
    let upd = tape.scale(term, T::of(cfg.h * cfg.h));
    let next = tape.sub(base, upd);
    warn_on_blowup(tape, next, BlockKind::Wave);
    Ok(state.advance(next))
}

/// The two mixed flux terms, pre-multiplied by their coefficients
/// `(1−α)h²` and `αh`.
fn mixed_terms<T: Real>(
    tape: &mut Tape<T>,
    u: Var,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    mix: &MixWeights,
    cfg: StepConfig,
) -> (Var, Var) {
    let one_minus_alpha = tape.affine(mix.alpha, -T::one(), T::one());
    let coef_diff = tape.scale(one_minus_alpha, T::of(cfg.h * cfg.h));
    let coef_adv = tape.scale(mix.alpha, T::of(cfg.h));
    let diff = diffusive_term(tape, u, ops, params, Some(mix.d_diff));
    let flux = advective_flux(tape, u, ops, params, Some(mix.d_wave));
    let adv = tape.spmm_t(&ops.gradient, flux);
    let diff = tape.scale_by(coef_diff, diff);
    let adv = tape.scale_by(coef_adv, adv);
    (diff, adv)
}

fn check_mix<T: Real>(
    tape: &Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    mix: &MixWeights,
) -> Result<(), BlockError> {
    check_inputs(tape, state, ops, params, &[Some(mix.d_diff), Some(mix.d_wave)])?;
    expect_shape(tape, mix.alpha, "alpha", (1, 1))
}

/// Advection–diffusion mixture.
pub fn mix_ad_step<T: Real>(
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    mix: &MixWeights,
    cfg: StepConfig,
) -> Result<BlockState, BlockError> {
    check_mix(tape, state, ops, params, mix)?;
    let (diff, adv) = mixed_terms(tape, state.u_curr, ops, params, mix, cfg);
    let partial = tape.sub(state.u_curr, diff);
    let next = tape.sub(partial, adv);
    warn_on_blowup(tape, next, BlockKind::MixAd);
    Ok(state.advance(next))
}

/// Advection–wave mixture, solved for the new state:
/// `(1−α)(u⁺ − 2u + u⁻) + α(u⁺ − u) = rhs` gives
/// `u⁺ = (2−α)u − (1−α)u⁻ + rhs`.
pub fn mix_aw_step<T: Real>(
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    mix: &MixWeights,
    cfg: StepConfig,
) -> Result<BlockState, BlockError> {
    check_mix(tape, state, ops, params, mix)?;
    let c_curr = tape.affine(mix.alpha, -T::one(), T::of(2.0));
    let c_prev = tape.affine(mix.alpha, -T::one(), T::one());
    let cu = tape.scale_by(c_curr, state.u_curr);
    let cp = tape.scale_by(c_prev, state.u_prev);
    let base = tape.sub(cu, cp);
    let (diff, adv) = mixed_terms(tape, state.u_curr, ops, params, mix, cfg);
    let partial = tape.sub(base, diff);
    let next = tape.sub(partial, adv);
    warn_on_blowup(tape, next, BlockKind::MixAw);
    Ok(state.advance(next))
}

/// Dispatches one layer of `kind`. Non-mixing blocks run without edge
/// weights; mixing blocks require `mix`.
pub fn apply_block<T: Real>(
    kind: BlockKind,
    tape: &mut Tape<T>,
    state: BlockState,
    ops: &GraphOperators<T>,
    params: &BlockParams,
    mix: Option<&MixWeights>,
    cfg: StepConfig,
) -> Result<BlockState, BlockError> {
    match kind {
        BlockKind::Gcn => gcn_step(tape, state, ops, params),
        BlockKind::Advection => advection_step(tape, state, ops, params, cfg, None),
        BlockKind::Burgers => burgers_step(tape, state, ops, params, cfg),
        BlockKind::Diffusion => diffusion_step(tape, state, ops, params, cfg, None),
        BlockKind::Wave => wave_step(tape, state, ops, params, cfg, None),
        BlockKind::MixAd => {
            mix_ad_step(tape, state, ops, params, mix.ok_or(BlockError::MissingMix(kind))?, cfg)
        }
        BlockKind::MixAw => {
            mix_aw_step(tape, state, ops, params, mix.ok_or(BlockError::MissingMix(kind))?, cfg)
        }
    }
}
