//! Dataset bundles, splits and synthetic graphs.

pub mod bundle;
pub mod split;
pub mod synth;

pub use bundle::{benchmark_stats, load_bundle, read_meta, save_bundle, BenchmarkStats, BundleError, BundleMeta, DatasetBundle};
pub use split::{full_split, semi_split, SplitError, SplitSpec};
pub use synth::{make_cycle, make_grid_graph, make_random, make_random_regular, planted_partition, separable_toy};
