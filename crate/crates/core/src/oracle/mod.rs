//! Independent reference implementations and verification checks.

pub mod audit;
pub mod dense;
pub mod fd;
pub mod verify;

pub use audit::{conservation_audit, feature_variance, smoothing_profile, ConservationReport, SmoothingProfile};
pub use dense::{dense_block_step, DenseGraph, DenseModel, DenseWeights};
pub use fd::{fd_gradient, gradient_check, relative_error, FD_STEP};
pub use verify::{run_suite, CheckOutcome, Fault, VerifyOptions, VerifyReport};
