use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point element type used by tensors and operators.
///
/// Implemented for `f32` (training) and `f64` (verification).
pub trait Real:
    Float
    + NumAssignOps
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Byte width on disk, used by checkpoints.
    const WIDTH: u8;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const WIDTH: u8 = 4;
}

impl Real for f64 {
    const WIDTH: u8 = 8;
}
