//! Scalar math used on hot paths. With the `std` feature these map to the
//! platform implementation, otherwise to `libm`.

#[cfg(feature = "std")]
mod imp {
    extern crate std;

    #[inline]
    pub fn ln(x: f64) -> f64 {
        std::primitive::f64::ln(x)
    }

    #[inline]
    pub fn exp(x: f64) -> f64 {
        std::primitive::f64::exp(x)
    }

    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        std::primitive::f64::sqrt(x)
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }

    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }

    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
}

pub use imp::{exp, ln, sqrt};
