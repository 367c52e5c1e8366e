//! Published hyperparameters per dataset and protocol.

use crate::network::ModelConfig;
use crate::trainer::OptimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Semi,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub lr: f64,
    pub weight_decay: f64,
    pub channels: usize,
    pub dropout: f64,
    pub h: f64,
}

impl Preset {
    /// Applies channels, dropout and `h` to `model`, and returns the
    /// optimizer settings with the default epoch budget.
    pub fn apply(&self, model: &mut ModelConfig) -> OptimConfig {
        model.channels = self.channels;
        model.dropout = self.dropout;
        model.h = self.h;
        OptimConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..OptimConfig::default()
        }
    }
}

pub fn preset(dataset: &str, protocol: Protocol) -> Option<Preset> {
    let p = |lr, weight_decay, channels, dropout, h| Preset {
        lr,
        weight_decay,
        channels,
        dropout,
        h,
    };
    Some(match (dataset.to_ascii_lowercase().as_str(), protocol) {
        ("cora", Protocol::Semi) => p(4.6e-5, 1.2e-4, 64, 0.5, 0.6),
        ("citeseer", Protocol::Semi) => p(1.0e-5, 8.1e-3, 256, 0.7, 0.3),
        ("pubmed", Protocol::Semi) => p(2.4e-5, 1.2e-4, 256, 0.6, 0.7),
        ("cora", Protocol::Full) => p(2.3e-5, 1.0e-4, 64, 0.5, 0.2),
        ("citeseer", Protocol::Full) => p(2.1e-4, 1.1e-4, 64, 0.6, 0.3),
        ("pubmed", Protocol::Full) => p(4.3e-5, 2.6e-4, 64, 0.5, 0.4),
        ("chameleon", Protocol::Full) => p(8.0e-4, 9.2e-5, 64, 0.6, 0.5),
        _ => return None,
    })
}
