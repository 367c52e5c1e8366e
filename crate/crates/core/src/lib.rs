//! Graph neural networks whose layers are explicit Euler steps of
//! conservation laws on graphs: advection, Burgers, and their mixtures with
//! diffusion and wave dynamics, plus the GCN propagation rule as a control.

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod graph;
pub mod network;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod presets;
pub mod real;
pub mod sparse;
pub mod trainer;

pub use autodiff::{ParamId, ParamStore, Parameter, Tape, Var};
pub use blocks::{Activation, BlockKind, BlockParams, BlockState, EdgeWeightMode, MixParams, MixWeights, StepConfig};
pub use data::{DatasetBundle, SplitSpec};
pub use graph::Graph;
pub use network::{init_model, Model, ModelConfig};
pub use real::Real;
pub use sparse::{GraphOperators, SparseOperator};
pub use trainer::{train, OptimConfig, RunResult};
