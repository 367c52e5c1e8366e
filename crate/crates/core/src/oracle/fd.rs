//! Central finite differences and model-level gradient checks.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::network::{Model, NetworkError};

pub const FD_STEP: f64 = 1e-5;

/// Norms below this count as zero when forming relative errors.
pub const ZERO_NORM: f64 = 1e-7;

/// Central-difference gradient of `loss` at `x`, one coordinate at a time.
pub fn fd_gradient<F>(mut loss: F, x: &Array2<f64>, step: f64) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + step;
        let up = loss(&probe);
        probe[[r, c]] = orig - step;
        let down = loss(&probe);
        probe[[r, c]] = orig;
        grad[[r, c]] = (up - down) / (2.0 * step);
    }
    grad
}

fn norm(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both norms
/// are below [`ZERO_NORM`].
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = norm(&(a - b));
    let scale = norm(a).max(norm(b));
    if scale < ZERO_NORM {
        diff
    } else {
        diff / scale
    }
}

/// Evaluation-mode masked cross-entropy and the smallest `|x|` seen at any
/// ReLU input.
pub fn model_loss(
    model: &Model<f64>,
    features: &Array2<f64>,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, Option<f64>), NetworkError> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = model.forward(&mut tape, x, false, &mut rng)?;
    let loss = tape.softmax_cross_entropy(logits, labels, mask);
    Ok((tape.value(loss)[[0, 0]], tape.relu_margin()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub rel_error: f64,
}

/// Autodiff against central differences for every parameter of `model`.
pub fn gradient_check(
    model: &Model<f64>,
    features: &Array2<f64>,
    labels: &[usize],
    mask: &[bool],
    step: f64,
) -> Result<Vec<ParamCheck>, NetworkError> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = model.forward(&mut tape, x, false, &mut rng)?;
    let loss = tape.softmax_cross_entropy(logits, labels, mask);
    let grads = tape.backward(loss)?;

    let mut probe = model.clone();
    let mut out = Vec::new();
    for (id, p) in model.params().iter() {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(p.value.dim()));
        let numeric = fd_gradient(
            |v| {
                probe.params_mut().get_mut(id).value = v.clone();
                model_loss(&probe, features, labels, mask)
                    .map(|(l, _)| l)
                    .unwrap_or(f64::NAN)
            },
            &p.value,
            step,
        );
        probe.params_mut().get_mut(id).value = p.value.clone();
        out.push(ParamCheck {
            name: p.name.clone(),
            rel_error: relative_error(&analytic, &numeric),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_gradient() {
        let g = fd_gradient(|x| 0.5 * x[[0, 0]] * x[[0, 0]], &array![[2.0]], FD_STEP);
        assert!((g[[0, 0]] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_handles_zero() {
        let z = Array2::<f64>::zeros((2, 2));
        assert_eq!(relative_error(&z, &z), 0.0);
        assert!((relative_error(&array![[1.0]], &array![[1.1]]) - 0.1 / 1.1).abs() < 1e-12);
    }
}
