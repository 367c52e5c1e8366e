//! Adam training with early stopping on validation accuracy.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamStore, Tape};
use crate::data::{DatasetBundle, SplitSpec};
use crate::network::{Model, ModelConfig, NetworkError};
use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const CSV_HEADER: &str = "dataset,block,depth,seed,best_val,test,epochs,seconds,config_hash";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("bundle has {bundle} nodes, split has {split}")]
    SplitSize { bundle: usize, split: usize },
    #[error("non-finite loss {loss} at epoch {epoch}; parameter norms: {norms}")]
    NonFinite { epoch: usize, loss: f64, norms: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 1500,
            patience: 100,
            eval_every: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.eval_every == 0 {
            return Err(TrainError::Config("eval_every must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(TrainError::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lr={}\nweight_decay={}\nmax_epochs={}\npatience={}\neval_every={}\n",
            self.lr, self.weight_decay, self.max_epochs, self.patience, self.eval_every
        )
    }
}

/// First and second Adam moments, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Array2<T>> = params.iter().map(|(_, p)| Array2::zeros(p.value.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Bias-corrected Adam on the gradients stored in `params`. Weight decay
/// is added to the gradient of every decay-eligible parameter first.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>, cfg: &OptimConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let c1 = T::one() - T::of(ADAM_BETA1.powi(t));
    let c2 = T::one() - T::of(ADAM_BETA2.powi(t));
    let (lr, eps, wd) = (T::of(cfg.lr), T::of(ADAM_EPS), T::of(cfg.weight_decay));
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id);
        let decay = if p.weight_decay { wd } else { T::zero() };
        Zip::from(&mut p.value)
            .and(&p.grad)
            .and(&mut state.m[k])
            .and(&mut state.v[k])
            .for_each(|w, &g, m, v| {
                let g = g + decay * *w;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}

/// Row-wise argmax, ties going to the lowest index.
pub fn predictions<T: Real>(logits: ArrayView2<T>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Percentage of masked nodes whose prediction matches the label.
pub fn accuracy(pred: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let mut total = 0usize;
    let mut hit = 0usize;
    for ((&p, &y), &on) in pred.iter().zip(labels).zip(mask) {
        if on {
            total += 1;
            hit += (p == y) as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * hit as f64 / total as f64
    }
}

fn features_as<T: Real>(bundle: &DatasetBundle) -> Array2<T> {
    bundle.features.mapv(|v| T::of(v as f64))
}

fn eval_logits<T: Real>(model: &Model<T>, features: &Array2<T>) -> Result<Array2<T>, TrainError> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = model.forward(&mut tape, x, false, &mut rng)?;
    Ok(tape.value(logits).clone())
}

/// Evaluation-mode accuracy (%) of `model` on the nodes selected by `mask`.
pub fn evaluate<T: Real>(model: &Model<T>, bundle: &DatasetBundle, mask: &[bool]) -> Result<f64, TrainError> {
    let logits = eval_logits(model, &features_as(bundle))?;
    Ok(accuracy(&predictions(logits.view()), &bundle.labels, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_val_acc: f64,
    pub test_acc: f64,
    /// Epoch whose parameters were restored (0 is the initialization).
    pub best_epoch: usize,
    pub epochs_ran: usize,
    pub wall_seconds: f64,
    pub config: ModelConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub config_hash: String,
    /// Training loss (without the decay term) per epoch.
    pub train_loss: Vec<f64>,
    /// One entry per evaluation, starting with the initialization.
    pub history: Vec<EvalRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl RunResult {
    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{},{},{},{},{:.4},{:.4},{},{:.3},{}",
            dataset,
            self.config.block,
            self.config.depth,
            self.seed,
            self.best_val_acc,
            self.test_acc,
            self.epochs_ran,
            self.wall_seconds,
            self.config_hash
        )
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

/// Full-graph training on `split.train`; stops after `patience` evaluations
/// without a validation improvement and restores the best parameters.
pub fn train<T: Real>(
    model: &mut Model<T>,
    bundle: &DatasetBundle,
    split: &SplitSpec,
    cfg: &OptimConfig,
    seed: u64,
) -> Result<RunResult, TrainError> {
    cfg.validate()?;
    if split.n() != bundle.n() {
        return Err(TrainError::SplitSize {
            bundle: bundle.n(),
            split: split.n(),
        });
    }
    let start = Instant::now();
    let features: Array2<T> = features_as(bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(model.params());

    let scores = |model: &Model<T>, epoch: usize| -> Result<EvalRecord, TrainError> {
        let pred = predictions(eval_logits(model, &features)?.view());
        Ok(EvalRecord {
            epoch,
            train: accuracy(&pred, &bundle.labels, &split.train),
            val: accuracy(&pred, &bundle.labels, &split.val),
            test: accuracy(&pred, &bundle.labels, &split.test),
        })
    };

    let first = scores(model, 0)?;
    let mut history = vec![first];
    let (mut best_val, mut best_test) = (first.val, first.test);
    let mut best_epoch = 0;
    let mut best_params = model.params().snapshot();
    let mut stale = 0;
    let mut train_loss = Vec::new();
    let mut epochs_ran = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let logits = model.forward(&mut tape, x, true, &mut rng)?;
        let loss = tape.softmax_cross_entropy(logits, &bundle.labels, &split.train);
        let value = tape.value(loss)[[0, 0]].as_f64();
        if !value.is_finite() {
            let norms = model
                .params()
                .norms()
                .into_iter()
                .map(|(n, v)| format!("{n}={v:.3e}"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(TrainError::NonFinite {
                epoch,
                loss: value,
                norms,
            });
        }
        train_loss.push(value);
        tape.backward(loss)?.write_to(model.params_mut());
        adam_step(model.params_mut(), &mut adam, cfg);
        epochs_ran = epoch;

        if epoch % cfg.eval_every == 0 {
            let rec = scores(model, epoch)?;
            history.push(rec);
            if rec.val > best_val {
                best_val = rec.val;
                best_test = rec.test;
                best_epoch = epoch;
                best_params = model.params().snapshot();
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log::debug!("early stop at epoch {epoch}, best epoch {best_epoch}");
                    break;
                }
            }
        }
    }
    model.params_mut().restore(&best_params);

    let config = model.config().clone();
    let hash = config_hash(&format!("{}{}seed={seed}\n", config.to_kv(), cfg.to_kv()));
    Ok(RunResult {
        best_val_acc: best_val,
        test_acc: best_test,
        best_epoch,
        epochs_ran,
        wall_seconds: start.elapsed().as_secs_f64(),
        config,
        optim: cfg.clone(),
        seed,
        config_hash: hash,
        train_loss,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockKind;
    use crate::data::separable_toy;
    use crate::network::init_model;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", array![[1.5, -2.0]], false).unwrap();
        let before = store.snapshot();
        let mut st = AdamState::new(&store);
        for _ in 0..10 {
            adam_step(&mut store, &mut st, &OptimConfig::default());
        }
        assert_eq!(store.snapshot(), before);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", array![[0.0]], false).unwrap();
        store.get_mut(id).grad.fill(1.0);
        let mut st = AdamState::new(&store);
        let cfg = OptimConfig {
            lr: 0.1,
            ..OptimConfig::default()
        };
        adam_step(&mut store, &mut st, &cfg);
        assert!((store.get(id).value[[0, 0]] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn decay_only_touches_eligible_parameters() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", array![[1.0]], true).unwrap();
        let b = store.add("b", array![[1.0]], false).unwrap();
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &mut st, &OptimConfig::default());
        assert!(store.get(a).value[[0, 0]] < 1.0);
        assert_eq!(store.get(b).value[[0, 0]], 1.0);
    }

    #[test]
    fn ties_break_to_lowest_class() {
        let logits = array![[0.0, 0.0, 0.0], [1.0, 3.0, 3.0], [2.0, 1.0, 0.0]];
        assert_eq!(predictions(logits.view()), vec![0, 1, 0]);
        let onehot = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(accuracy(&predictions(onehot.view()), &[0, 1], &[true, true]), 100.0);
        assert_eq!(accuracy(&[0, 0, 0], &[0, 1, 2], &[true, true, false]), 50.0);
    }

    fn toy_cfg(block: BlockKind) -> ModelConfig {
        ModelConfig {
            block,
            depth: 2,
            channels: 8,
            dropout: 0.0,
            h: 0.2,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_epochs_echo_initial_evaluation() {
        let b = separable_toy(0);
        let split = b.masks.clone().unwrap();
        let mut model = init_model::<f64>(&toy_cfg(BlockKind::Advection), b.graph().unwrap(), 2, 2).unwrap();
        let cfg = OptimConfig {
            max_epochs: 0,
            patience: 0,
            ..OptimConfig::default()
        };
        let r = train(&mut model, &b, &split, &cfg, 1).unwrap();
        assert_eq!(r.epochs_ran, 0);
        assert_eq!(r.best_epoch, 0);
        assert_eq!(r.best_val_acc, evaluate(&model, &b, &split.val).unwrap());
        assert_eq!(r.test_acc, evaluate(&model, &b, &split.test).unwrap());
    }

    #[test]
    fn separable_toy_is_learned() {
        let b = separable_toy(0);
        let split = b.masks.clone().unwrap();
        let mut model = init_model::<f64>(&toy_cfg(BlockKind::MixAd), b.graph().unwrap(), 2, 2).unwrap();
        let cfg = OptimConfig {
            lr: 0.05,
            weight_decay: 0.0,
            max_epochs: 200,
            patience: 200,
            eval_every: 1,
        };
        let r = train(&mut model, &b, &split, &cfg, 0).unwrap();
        assert!(r.history.iter().any(|e| e.train == 100.0));
        assert!(r.history.iter().all(|e| e.epoch <= 200));
    }

    #[test]
    fn runs_are_reproducible() {
        let b = separable_toy(1);
        let split = b.masks.clone().unwrap();
        let cfg = OptimConfig {
            max_epochs: 30,
            patience: 10,
            ..OptimConfig::default()
        };
        let run = || {
            let mut c = toy_cfg(BlockKind::MixAw);
            c.dropout = 0.3;
            let mut m = init_model::<f64>(&c, b.graph().unwrap(), 2, 2).unwrap();
            let mut r = train(&mut m, &b, &split, &cfg, 9).unwrap();
            r.wall_seconds = 0.0;
            (r, m.params().snapshot())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = OptimConfig {
            lr: 0.0,
            ..OptimConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
        let cfg = OptimConfig {
            patience: 10,
            max_epochs: 5,
            ..OptimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
