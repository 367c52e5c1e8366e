//! Conservation and over-smoothing diagnostics on the block stack.

use ndarray::{Array2, Axis};

use crate::autodiff::Tape;
use crate::network::{Model, NetworkError};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    /// Largest `|Σ_i u_ic(l) − Σ_i u_ic(0)|` over layers and channels.
    pub max_drift: f64,
    /// Per-layer maximum over channels, input layer first.
    pub per_layer: Vec<f64>,
    /// Largest `|u|` seen anywhere in the stack.
    pub max_abs: f64,
}

/// Runs the model's block stack on `hidden` (n × channels) and measures how
/// far per-channel sums move from their input values.
pub fn conservation_audit<T: Real>(model: &Model<T>, hidden: &Array2<T>) -> Result<ConservationReport, NetworkError> {
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let layers = model.run_blocks(&mut tape, h)?;
    let sums = |x: &Array2<T>| -> Vec<f64> {
        x.axis_iter(Axis(1))
            .map(|c| c.iter().map(|v| v.as_f64()).sum())
            .collect()
    };
    let base = sums(hidden);
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut max_abs: f64 = 0.0;
    for &v in &layers {
        let x = tape.value(v);
        max_abs = x.iter().fold(max_abs, |m, v| m.max(v.as_f64().abs()));
        let drift = sums(x)
            .iter()
            .zip(&base)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        per_layer.push(drift);
    }
    Ok(ConservationReport {
        max_drift: per_layer.iter().copied().fold(0.0, f64::max),
        per_layer,
        max_abs,
    })
}

/// Mean over channels of the population variance across nodes.
pub fn feature_variance<T: Real>(x: &Array2<T>) -> f64 {
    let (n, c) = x.dim();
    if n == 0 || c == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for col in x.axis_iter(Axis(1)) {
        let mean = col.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        total += col.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
    }
    total / c as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingProfile {
    /// Feature variance per layer, input first; length depth + 1.
    pub variance: Vec<f64>,
    /// Variance of `u_i / sqrt(d_i + 1)`, which removes the degree profile
    /// of the propagation operator's fixed point.
    pub normalized_variance: Vec<f64>,
    /// Per-layer per-channel sums.
    pub channel_sums: Vec<Vec<f64>>,
}

/// Runs the block stack on `hidden` and records the variance trajectory.
pub fn smoothing_profile<T: Real>(model: &Model<T>, hidden: &Array2<T>) -> Result<SmoothingProfile, NetworkError> {
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let layers = model.run_blocks(&mut tape, h)?;
    let scale: Vec<f64> = model
        .ops()
        .graph
        .degrees()
        .iter()
        .map(|&d| 1.0 / ((d + 1) as f64).sqrt())
        .collect();
    let mut profile = SmoothingProfile {
        variance: Vec::with_capacity(layers.len()),
        normalized_variance: Vec::with_capacity(layers.len()),
        channel_sums: Vec::with_capacity(layers.len()),
    };
    for &v in &layers {
        let x = tape.value(v).mapv(|v| v.as_f64());
        profile.variance.push(feature_variance(&x));
        let mut scaled = x.clone();
        for (mut row, s) in scaled.rows_mut().into_iter().zip(&scale) {
            row *= *s;
        }
        profile.normalized_variance.push(feature_variance(&scaled));
        profile
            .channel_sums
            .push(x.axis_iter(Axis(1)).map(|c| c.sum()).collect());
    }
    Ok(profile)
}
