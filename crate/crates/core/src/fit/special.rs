//! Complementary error function and its scaled form.

use crate::scalar::Real;

/// Below this argument `erf` is summed from its power series; above it the
/// continued fraction for `erfcx` converges quickly.
const SERIES_LIMIT: f64 = 2.5;

/// `erf(x)` for `0 ≤ x ≤ SERIES_LIMIT` from the all-positive series
/// `erf(x) = 2/√π · e^{−x²} · Σ (2x²)ⁿ x / (2n+1)!!`.
fn erf_series<T: Real>(x: T) -> T {
    let two_x2 = T::lit(2.0) * x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0usize;
    while term > T::epsilon() * sum * T::lit(0.25) && n < 500 {
        n += 1;
        term = term * two_x2 / T::from_usize_lossy(2 * n + 1);
        sum = sum + term;
    }
    T::FRAC_2_SQRT_PI() * (-x * x).exp() * sum
}

/// `e^{x²}·erfc(x)` for `x ≥ SERIES_LIMIT` via the Laplace continued fraction
/// `√π·erfcx(x) = 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`, evaluated
/// with the modified Lentz algorithm.
fn erfcx_continued_fraction<T: Real>(x: T) -> T {
    let tiny = T::min_positive_value().sqrt();
    let mut f = x;
    let mut c = f;
    let mut d = T::zero();
    for k in 1..2000usize {
        let a = T::from_usize_lossy(k) * T::lit(0.5);
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = T::one() / d;
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f = f * delta;
        if (delta - T::one()).abs() <= T::epsilon() {
            break;
        }
    }
    T::FRAC_2_SQRT_PI() / (T::lit(2.0) * f)
}

/// Scaled complementary error function `e^{x²}·erfc(x)`. Finite for all
/// `x ≥ 0`; grows like `2e^{x²}` for negative `x`.
pub fn erfcx<T: Real>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    if x < T::zero() {
        return T::lit(2.0) * (x * x).exp() - erfcx(-x);
    }
    if x < T::lit(SERIES_LIMIT) {
        (x * x).exp() * (T::one() - erf_series(x))
    } else {
        erfcx_continued_fraction(x)
    }
}

/// `erfc(x) = 1 − erf(x) = 2/√π ∫ₓ^∞ e^{−t²} dt`.
pub fn erfc<T: Real>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    if x < T::zero() {
        return T::lit(2.0) - erfc(-x);
    }
    if x < T::lit(SERIES_LIMIT) {
        T::one() - erf_series(x)
    } else if x > T::lit(27.3) {
        T::zero()
    } else {
        erfcx_continued_fraction(x) * (-x * x).exp()
    }
}

pub fn erf<T: Real>(x: T) -> T {
    T::one() - erfc(x)
}
