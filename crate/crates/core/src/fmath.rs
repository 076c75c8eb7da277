//! Scalar math shims for `no_std` builds, plus periodized trigonometry.

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

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

/// Fractional part in [0, 1).
#[inline]
pub fn frac(x: f64) -> f64 {
    x - floor(x)
}

/// cos(2 pi x), evaluated after reduction of x mod 1. Arguments far from the
/// unit cell lose no accuracy, and integer shifts that leave the argument
/// exactly representable are bit-identical.
#[inline]
pub fn cos_2pi(x: f64) -> f64 {
    cos(2.0 * core::f64::consts::PI * frac(x))
}

/// sin(2 pi x) with the same reduction as [`cos_2pi`].
#[inline]
pub fn sin_2pi(x: f64) -> f64 {
    sin(2.0 * core::f64::consts::PI * frac(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodization_shift_invariance() {
        // dyadic arguments shift exactly
        for &x in &[0.75, -3.75, 2.5, 0.0] {
            assert_eq!(cos_2pi(x), cos_2pi(x + 3.0));
            assert_eq!(sin_2pi(x), sin_2pi(x - 5.0));
        }
        // generic arguments shift up to one rounding of the sum
        for &x in &[0.1234, 17.0 / 3.0, -0.987] {
            assert!((cos_2pi(x) - cos_2pi(x + 3.0)).abs() < 1e-13);
            assert!((sin_2pi(x) - sin_2pi(x - 5.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn matches_plain_trig_on_unit_cell() {
        for i in 0..32 {
            let x = i as f64 / 32.0;
            assert!((cos_2pi(x) - (2.0 * core::f64::consts::PI * x).cos()).abs() < 1e-15);
        }
    }
}
