//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! Linear algebra goes through nalgebra, so the bound is built on
//! [`nalgebra::RealField`]; conversions to and from `f64` go through
//! num-traits. Random draws are always made in `f64` and then cast, which
//! keeps the random stream identical between `f32` and `f64` runs.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` literal. Never fails for `f32`/`f64`.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Tolerance used for symmetry checks and pseudo-inverse cutoffs.
    fn default_tolerance() -> f64;
}

impl Real for f32 {
    fn default_tolerance() -> f64 {
        1e-5
    }
}

impl Real for f64 {
    fn default_tolerance() -> f64 {
        1e-10
    }
}
