//! Experiment configuration.
//!
//! Grammar: one `key=value` per line, UTF-8. Blank lines and lines starting
//! with `#` are ignored; whitespace around keys and values is trimmed. Lists
//! (`depths`, `seeds`) are comma separated. Unknown keys are errors.
//!
//! Layering, lowest first: built-in defaults, the published preset for the
//! bundle's name and split (when `preset=true`), the `--config` file, then
//! command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use pdegnn_core::presets::{preset, Protocol};
use pdegnn_core::{Activation, BlockKind, EdgeWeightMode, ModelConfig, OptimConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({reason})")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

pub const KEYS: &[&str] = &[
    "dataset",
    "split",
    "preset",
    "block",
    "depths",
    "seeds",
    "channels",
    "dropout",
    "h",
    "activation",
    "tie_weights",
    "edge_mode",
    "lr",
    "weight_decay",
    "max_epochs",
    "patience",
    "eval_every",
    "row_normalize",
    "f64",
    "jobs",
    "out",
];

/// Raw settings from one layer, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layer(pub BTreeMap<String, String>);

impl Layer {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            map.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// `other` wins on conflicts.
    pub fn merged(&self, other: &Layer) -> Layer {
        let mut map = self.0.clone();
        map.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
        Layer(map)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<String>,
    pub split: Protocol,
    pub preset: bool,
    pub block: BlockKind,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub channels: usize,
    pub dropout: f64,
    pub h: f64,
    pub activation: Activation,
    pub tie_weights: bool,
    pub edge_mode: EdgeWeightMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    /// `None` means on for the citation networks and off otherwise.
    pub row_normalize: Option<bool>,
    pub f64: bool,
    pub jobs: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let o = OptimConfig::default();
        Self {
            dataset: None,
            split: Protocol::Semi,
            preset: true,
            block: m.block,
            depths: vec![m.depth],
            seeds: vec![0],
            channels: m.channels,
            dropout: m.dropout,
            h: m.h,
            activation: m.activation,
            tie_weights: m.tie_weights,
            edge_mode: m.edge_mode,
            lr: o.lr,
            weight_decay: o.weight_decay,
            max_epochs: o.max_epochs,
            patience: o.patience,
            eval_every: o.eval_every,
            row_normalize: None,
            f64: false,
            jobs: 1,
            out: PathBuf::from("results"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Semi => "semi",
        Protocol::Full => "full",
    }
}

impl ExperimentConfig {
    /// Resolves `layer` on top of the defaults. `bundle_name` selects the
    /// preset; keys present in `layer` override it.
    pub fn resolve(layer: &Layer, bundle_name: Option<&str>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for key in ["split", "preset"] {
            if let Some(v) = layer.get(key) {
                cfg.apply(key, v)?;
            }
        }
        if let (true, Some(name)) = (cfg.preset, bundle_name) {
            if let Some(p) = preset(name, cfg.split) {
                cfg.lr = p.lr;
                cfg.weight_decay = p.weight_decay;
                cfg.channels = p.channels;
                cfg.dropout = p.dropout;
                cfg.h = p.h;
            }
        }
        for (k, v) in &layer.0 {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "dataset" => self.dataset = (!v.is_empty()).then(|| v.to_string()),
            "split" => {
                self.split = match v {
                    "semi" => Protocol::Semi,
                    "full" => Protocol::Full,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected semi or full".into(),
                        })
                    }
                }
            }
            "preset" => self.preset = parse(key, v)?,
            "block" => self.block = parse(key, v)?,
            "depths" => self.depths = parse_list(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "h" => self.h = parse(key, v)?,
            "activation" => self.activation = parse(key, v)?,
            "tie_weights" => self.tie_weights = parse(key, v)?,
            "edge_mode" => self.edge_mode = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "row_normalize" => self.row_normalize = if v == "auto" { None } else { Some(parse(key, v)?) },
            "f64" => self.f64 = parse(key, v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.depths.is_empty() {
            return Err(ConfigError::Invalid("depths must list at least one depth".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must list at least one seed".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        self.model(self.depths[0], self.seeds[0])
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn row_normalize_for(&self, bundle_name: &str) -> bool {
        self.row_normalize.unwrap_or_else(|| {
            matches!(bundle_name.to_ascii_lowercase().as_str(), "cora" | "citeseer" | "pubmed")
        })
    }

    pub fn model(&self, depth: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            block: self.block,
            depth,
            channels: self.channels,
            dropout: self.dropout,
            h: self.h,
            activation: self.activation,
            tie_weights: self.tie_weights,
            edge_mode: self.edge_mode,
            seed,
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            patience: self.patience,
            eval_every: self.eval_every,
        }
    }

    /// Effective settings as config-file lines, in `KEYS` order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key}={}", self.value(key));
        }
        s
    }

    fn value(&self, key: &str) -> String {
        match key {
            "dataset" => self.dataset.clone().unwrap_or_default(),
            "split" => protocol_name(self.split).into(),
            "preset" => self.preset.to_string(),
            "block" => self.block.to_string(),
            "depths" => join(&self.depths),
            "seeds" => join(&self.seeds),
            "channels" => self.channels.to_string(),
            "dropout" => self.dropout.to_string(),
            "h" => self.h.to_string(),
            "activation" => self.activation.to_string(),
            "tie_weights" => self.tie_weights.to_string(),
            "edge_mode" => match self.edge_mode {
                EdgeWeightMode::Bounded => "bounded".into(),
                EdgeWeightMode::Signed => "signed".into(),
            },
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "row_normalize" => self.row_normalize.map_or("auto".into(), |b| b.to_string()),
            "f64" => self.f64.to_string(),
            "jobs" => self.jobs.to_string(),
            "out" => self.out.display().to_string(),
            _ => unreachable!("{key} is not a config key"),
        }
    }

    /// Echo for a single (depth, seed) run, with the bundle identity in
    /// place of `dataset`, `out` and `jobs`.
    pub fn run_echo(&self, bundle_name: &str, payload_sha: &str, depth: usize, seed: u64) -> String {
        let mut s = String::new();
        for key in KEYS.iter().filter(|k| !matches!(**k, "out" | "jobs" | "dataset")) {
            let value = match *key {
                "depths" => depth.to_string(),
                "seeds" => seed.to_string(),
                "row_normalize" => self.row_normalize_for(bundle_name).to_string(),
                _ => self.value(key),
            };
            let _ = writeln!(s, "{key}={value}");
        }
        let _ = writeln!(s, "bundle={bundle_name}");
        let _ = writeln!(s, "payload_sha256={payload_sha}");
        s
    }
}
