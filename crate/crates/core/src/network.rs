//! Node-classification model:
//! dropout → 1×1 embedding → ReLU → L blocks → dropout → 1×1 classifier.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Var};
use crate::blocks::{
    apply_block, Activation, BlockError, BlockKind, BlockParams, BlockState, EdgeWeightMode, MixParams,
    StepConfig,
};
use crate::graph::Graph;
use crate::real::Real;
use crate::sparse::GraphOperators;

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("features are {got:?}, model expects {expected:?}")]
    Features {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub block: BlockKind,
    pub depth: usize,
    pub channels: usize,
    pub dropout: f64,
    pub h: f64,
    pub activation: Activation,
    /// Share one kernel across all layers.
    pub tie_weights: bool,
    pub edge_mode: EdgeWeightMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            block: BlockKind::MixAd,
            depth: 2,
            channels: 64,
            dropout: 0.5,
            h: 0.6,
            activation: Activation::Relu,
            tie_weights: false,
            edge_mode: EdgeWeightMode::Bounded,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.channels == 0 {
            return Err(NetworkError::Config("channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetworkError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        StepConfig::new(self.h)?;
        Ok(())
    }

    /// Flat `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "block={}", self.block);
        let _ = writeln!(s, "depth={}", self.depth);
        let _ = writeln!(s, "channels={}", self.channels);
        let _ = writeln!(s, "dropout={}", self.dropout);
        let _ = writeln!(s, "h={}", self.h);
        let _ = writeln!(s, "activation={}", self.activation);
        let _ = writeln!(s, "tie_weights={}", self.tie_weights);
        let _ = writeln!(
            s,
            "edge_mode={}",
            match self.edge_mode {
                EdgeWeightMode::Bounded => "bounded",
                EdgeWeightMode::Signed => "signed",
            }
        );
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self, NetworkError> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| NetworkError::Config(format!("malformed line {line:?}")))?;
            let bad = |_| NetworkError::Config(format!("bad value for {key}: {value:?}"));
            let value = value.trim();
            match key.trim() {
                "block" => cfg.block = value.parse()?,
                "depth" => cfg.depth = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "channels" => cfg.channels = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "dropout" => cfg.dropout = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "h" => cfg.h = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "activation" => cfg.activation = value.parse()?,
                "tie_weights" => cfg.tie_weights = value.parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?,
                "edge_mode" => cfg.edge_mode = value.parse()?,
                "seed" => cfg.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                other => return Err(NetworkError::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Glorot-uniform bound `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot<T: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let b = glorot_bound(rows, cols);
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-b..b)))
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    ops: Arc<GraphOperators<T>>,
    params: ParamStore<T>,
    w_in: ParamId,
    w_out: ParamId,
    kernels: Vec<ParamId>,
    mix: Option<MixParams>,
    f_in: usize,
    classes: usize,
}

/// Per-layer node features recorded by [`Model::forward_traced`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    /// Embedding output followed by the output of every block.
    pub layers: Vec<Var>,
}

/// Builds a model with Glorot-initialized weights drawn from `cfg.seed`.
/// Mixing and edge raws start at their neutral values.
pub fn init_model<T: Real>(
    cfg: &ModelConfig,
    graph: Graph,
    f_in: usize,
    classes: usize,
) -> Result<Model<T>, NetworkError> {
    Model::new(cfg, Arc::new(GraphOperators::new(graph)), f_in, classes)
}

impl<T: Real> Model<T> {
    pub fn new(
        cfg: &ModelConfig,
        ops: Arc<GraphOperators<T>>,
        f_in: usize,
        classes: usize,
    ) -> Result<Self, NetworkError> {
        cfg.validate()?;
        if f_in == 0 || classes == 0 {
            return Err(NetworkError::Config("f_in and classes must be positive".into()));
        }
        let c = cfg.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let w_in = params.add("w_in", glorot(f_in, c, &mut rng), true)?;
        let n_kernels = match (cfg.depth, cfg.tie_weights) {
            (0, _) => 0,
            (_, true) => 1,
            (d, false) => d,
        };
        let kernels = (0..n_kernels)
            .map(|l| params.add(format!("k.{l}"), glorot(c, c, &mut rng), true))
            .collect::<Result<Vec<_>, _>>()?;
        let w_out = params.add("w_out", glorot(c, classes, &mut rng), true)?;
        let mix = if cfg.block.is_mixing() {
            let m = ops.m();
            let raw = T::of(cfg.edge_mode.initial_raw());
            Some(MixParams {
                alpha_raw: params.add("alpha_raw", Array2::zeros((1, 1)), false)?,
                d_diff_raw: params.add("d_diff_raw", Array2::from_elem((m, 1), raw), false)?,
                d_wave_raw: params.add("d_wave_raw", Array2::from_elem((m, 1), raw), false)?,
                alpha_clamp: None,
                edge_mode: cfg.edge_mode,
            })
        } else {
            None
        };
        Ok(Self {
            config: cfg.clone(),
            ops,
            params,
            w_in,
            w_out,
            kernels,
            mix,
            f_in,
            classes,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ops(&self) -> &Arc<GraphOperators<T>> {
        &self.ops
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn kernel_ids(&self) -> &[ParamId] {
        &self.kernels
    }

    pub fn mix_params(&self) -> Option<&MixParams> {
        self.mix.as_ref()
    }

    /// Fixes the effective α (testing and ablations).
    pub fn clamp_alpha(&mut self, alpha: Option<f64>) {
        if let Some(mix) = &mut self.mix {
            mix.alpha_clamp = alpha;
        }
    }

    pub fn f_in(&self) -> usize {
        self.f_in
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        features: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, NetworkError> {
        Ok(self.run(tape, features, training, rng, false)?.logits)
    }

    pub fn forward_traced<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        features: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardTrace, NetworkError> {
        self.run(tape, features, training, rng, true)
    }

    /// Runs only the block stack on given hidden features (n × c),
    /// returning the state after every block.
    pub fn run_blocks(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Vec<Var>, NetworkError> {
        let mut layers = vec![hidden];
        self.blocks(tape, hidden, Some(&mut layers))?;
        Ok(layers)
    }

    fn blocks(
        &self,
        tape: &mut Tape<T>,
        hidden: Var,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var, NetworkError> {
        let cfg = &self.config;
        let step = StepConfig::new(cfg.h)?;
        let kernels: Vec<Var> = self.kernels.iter().map(|&k| tape.param(&self.params, k)).collect();
        let mix = self.mix.map(|m| m.bind(tape, &self.params));
        let mut state = BlockState::at_rest(hidden);
        for l in 0..cfg.depth {
            let kernel = if cfg.tie_weights { kernels[0] } else { kernels[l] };
            let params = BlockParams {
                kernel,
                activation: cfg.activation,
            };
            state = apply_block(cfg.block, tape, state, &self.ops, &params, mix.as_ref(), step)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(state.u_curr);
            }
        }
        Ok(state.u_curr)
    }

    fn run<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        features: Var,
        training: bool,
        rng: &mut R,
        traced: bool,
    ) -> Result<ForwardTrace, NetworkError> {
        let expected = (self.ops.n(), self.f_in);
        let got = tape.shape(features);
        if got != expected {
            return Err(NetworkError::Features { expected, got });
        }
        let p = self.config.dropout;
        let x = tape.dropout(features, p, training, rng);
        let w_in = tape.param(&self.params, self.w_in);
        let emb = tape.matmul(x, w_in);
        let hidden = tape.relu(emb);
        let mut layers = Vec::new();
        if traced {
            layers.push(hidden);
        }
        let out = self.blocks(tape, hidden, traced.then_some(&mut layers))?;
        let y = tape.dropout(out, p, training, rng);
        let w_out = tape.param(&self.params, self.w_out);
        let logits = tape.matmul(y, w_out);
        Ok(ForwardTrace { logits, layers })
    }

    /// `½ Σ ‖θ‖²` over weight-decay-eligible parameters (matrix weights;
    /// not α or edge weights).
    pub fn l2_penalty(&self, tape: &mut Tape<T>) -> Var {
        let mut total = tape.constant(Array2::zeros((1, 1)));
        for (id, p) in self.params.iter() {
            if p.weight_decay {
                let v = tape.param(&self.params, id);
                let sq = tape.sum_squares(v);
                total = tape.add(total, sq);
            }
        }
        total
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<(), NetworkError> {
        Checkpoint::from_model(self).write(path)
    }

    /// Rebuilds a model from a checkpoint on `graph`, checking every stored
    /// parameter's name and shape.
    pub fn from_checkpoint(ckpt: &Checkpoint, graph: Graph) -> Result<Self, NetworkError> {
        let (f_in, classes) = ckpt.io_dims()?;
        let mut model = init_model(&ckpt.config, graph, f_in, classes)?;
        if ckpt.params.len() != model.params.len() {
            return Err(NetworkError::Checkpoint(format!(
                "{} parameters stored, model has {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for (name, value) in &ckpt.params {
            let id = model
                .params
                .id(name)
                .ok_or_else(|| NetworkError::Checkpoint(format!("unknown parameter {name:?}")))?;
            let p = model.params.get_mut(id);
            if p.value.dim() != value.dim() {
                return Err(NetworkError::Checkpoint(format!(
                    "{name}: stored {:?}, model {:?}",
                    value.dim(),
                    p.value.dim()
                )));
            }
            p.value = value.mapv(T::of);
        }
        Ok(model)
    }
}
