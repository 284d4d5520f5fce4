//! Scalar type selection and the handful of transcendental functions the
//! crate needs. `libm` is used in every build so results do not depend on
//! whether `std` is linked.

#[cfg(not(feature = "f64"))]
pub type Real = f32;
#[cfg(feature = "f64")]
pub type Real = f64;

/// Guard used by every normalization.
pub const EPS_NORM: Real = 1e-12;

/// Clamp applied inside logarithms of probabilities.
pub const LOG_CLAMP: Real = 1e-12;

#[cfg(not(feature = "f64"))]
mod imp {
    #[inline]
    pub fn exp(x: f32) -> f32 {
        libm::expf(x)
    }
    #[inline]
    pub fn ln(x: f32) -> f32 {
        libm::logf(x)
    }
    #[inline]
    pub fn sqrt(x: f32) -> f32 {
        libm::sqrtf(x)
    }
    #[inline]
    pub fn sin(x: f32) -> f32 {
        libm::sinf(x)
    }
    #[inline]
    pub fn cos(x: f32) -> f32 {
        libm::cosf(x)
    }
}

#[cfg(feature = "f64")]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn sin(x: f64) -> f64 {
        libm::sin(x)
    }
    #[inline]
    pub fn cos(x: f64) -> f64 {
        libm::cos(x)
    }
}

pub use imp::{cos, exp, ln, sin, sqrt};

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Dot product accumulated in 64-bit.
#[inline]
pub fn dot(a: &[Real], b: &[Real]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

#[inline]
pub fn norm(a: &[Real]) -> f64 {
    libm::sqrt(dot(a, a))
}
