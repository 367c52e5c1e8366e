//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use pdegnn_core::data::{planted_partition, DatasetBundle};
use pdegnn_core::{init_model, BlockKind, Model, ModelConfig, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Planted-partition bundle with Cora's shape: 2709 nodes, 7 classes,
/// 1433 binary features and roughly 5.4k edges.
pub fn cora_like() -> DatasetBundle {
    planted_partition("cora-like", 7, 387, 1433, 0.0085, 0.0003, 0)
}

pub fn uniform<T: Real>(rows: usize, cols: usize, seed: u64) -> Array2<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-1.0..1.0)))
}

pub fn model<T: Real>(bundle: &DatasetBundle, block: BlockKind, depth: usize, channels: usize) -> Model<T> {
    let cfg = ModelConfig {
        block,
        depth,
        channels,
        h: 0.3,
        ..ModelConfig::default()
    };
    init_model(&cfg, bundle.graph().expect("valid bundle"), bundle.f_in(), bundle.classes).expect("valid config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cora_like_has_the_right_shape() {
        let b = cora_like();
        assert_eq!((b.n(), b.f_in(), b.classes), (2709, 1433, 7));
        assert!((4500..6500).contains(&b.m()), "{} edges", b.m());
    }
}
