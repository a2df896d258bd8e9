use std::fmt::{Debug, Display};

use num_traits::Float;

/// Floating-point scalar the whole stack is generic over.
///
/// Training runs in `f32`. `f64` exists so gradient checks can separate
/// analytic errors from finite-difference noise.
pub trait Element: Float + Default + Debug + Display + Send + Sync + 'static {
    const NAME: &'static str;

    fn erf(self) -> Self;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn erf(self) -> Self {
        libm::erff(self)
    }

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn erf(self) -> Self {
        libm::erf(self)
    }

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
