use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

use crate::spectral::FftPlanCache;

/// Floating-point element type accepted by every tensor, transform and layer.
///
/// Implemented for `f32` (benchmarks) and `f64` (correctness tests). Each
/// implementation owns a process-wide FFT plan cache.
pub trait Scalar:
    Float
    + FftNum
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Display
    + Debug
    + Element
    + Send
    + Sync
    + 'static
{
    fn plan_cache() -> &'static FftPlanCache<Self>;

    /// Converts an `f64` literal. Total for both implementations.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn plan_cache() -> &'static FftPlanCache<Self> {
                static CACHE: std::sync::OnceLock<FftPlanCache<$t>> = std::sync::OnceLock::new();
                CACHE.get_or_init(FftPlanCache::new)
            }
        }
    )*};
}

impl_scalar!(f32, f64);

/// Element stored in a [`Tensor`](crate::tensor::Tensor): a real scalar or a complex number over one.
pub trait Element: Copy + Default + Send + Sync + Debug + 'static {
    fn is_finite_value(&self) -> bool;
}

macro_rules! impl_element {
    ($($t:ty),*) => {$(
        impl Element for $t {
            #[inline]
            fn is_finite_value(&self) -> bool {
                self.is_finite()
            }
        }
    )*};
}

impl_element!(f32, f64);

impl<T: Scalar> Element for Complex<T> {
    #[inline]
    fn is_finite_value(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}
