//! Scalar abstraction for the numeric kernels: f32 or f64.

use num_traits::{Float, FromPrimitive, NumAssignOps};

pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from f64 (lossless for f64 itself).
    fn c(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 conversion")
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

/// Rates are stored in kHz and times in us, so rate*time products carry a
/// factor of 1e-3 to become dimensionless. Applied once, here.
pub fn khz_us<S: Scalar>(rate_khz: S, time_us: S) -> S {
    rate_khz * time_us * S::c(1e-3)
}

/// kHz -> 1/us.
pub fn khz_to_per_us<S: Scalar>(rate_khz: S) -> S {
    rate_khz * S::c(1e-3)
}
