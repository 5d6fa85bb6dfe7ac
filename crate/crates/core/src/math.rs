//! Scalar functions that resolve to `std` when available and `libm` otherwise.

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    num_traits::Float::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    num_traits::Float::ln(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    num_traits::Float::tanh(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    num_traits::Float::cos(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    num_traits::Float::sin(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    num_traits::Float::floor(x)
}

#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    num_traits::Float::powi(x, n)
}
