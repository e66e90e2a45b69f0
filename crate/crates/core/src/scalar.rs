use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type the numerics run on (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Scalar>(value: f64) -> T {
    T::from_f64(value).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Scalar>(value: T) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

#[inline]
pub(crate) fn from_usize<T: Scalar>(value: usize) -> T {
    T::from_usize(value).expect("index representable in scalar type")
}

/// Scientific notation with 17 significant digits, enough to round-trip an `f64`.
pub fn format_real(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else {
        format!("{value}")
    }
}
