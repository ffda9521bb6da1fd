//! Exponentially modified Gaussian lineshape.

use serde::{Deserialize, Serialize};

use super::special::{erfc, erfcx};
use crate::scalar::Real;

/// EMG component scaled by `amplitude`. The exponential tail points toward
/// higher frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct EmgParams<T> {
    /// Gaussian centre, MHz.
    pub mu: T,
    /// Gaussian width, MHz.
    pub sigma: T,
    /// Exponential rate, 1/MHz.
    pub lambda: T,
    /// Integrated contrast, %·MHz.
    pub amplitude: T,
}

impl<T: Real> EmgParams<T> {
    pub fn is_valid(&self) -> bool {
        self.mu.is_finite()
            && self.sigma > T::zero()
            && self.lambda > T::zero()
            && self.amplitude > T::zero()
            && self.sigma.is_finite()
            && self.lambda.is_finite()
            && self.amplitude.is_finite()
    }

    pub fn shifted(&self, delta: T) -> Self {
        Self { mu: self.mu + delta, ..*self }
    }

    /// Mean of the unit-amplitude density, `μ + 1/λ`.
    pub fn mean(&self) -> T {
        self.mu + T::one() / self.lambda
    }
}

/// `amplitude · (λ/2)·e^{(λ/2)(2μ + λσ² − 2x)}·erfc((μ + λσ² − x)/(√2σ))`.
///
/// Where the erfc argument is positive the exponent and erfc are combined
/// through `erfcx`, giving `(λ/2)·e^{−(x−μ)²/2σ²}·erfcx(z)`, which cannot
/// overflow.
pub fn emg_pdf<T: Real>(x: T, p: &EmgParams<T>) -> T {
    let two = T::lit(2.0);
    let half_lambda = p.lambda / two;
    let z = (p.mu + p.lambda * p.sigma * p.sigma - x) / (T::SQRT_2() * p.sigma);
    let value = if z > T::zero() {
        let u = (x - p.mu) / p.sigma;
        half_lambda * (-(u * u) / two).exp() * erfcx(z)
    } else {
        let exponent = half_lambda * (two * p.mu + p.lambda * p.sigma * p.sigma - two * x);
        half_lambda * exponent.exp() * erfc(z)
    };
    p.amplitude * value
}

/// Location of the maximum of the EMG, by golden-section search on
/// `[μ − 5σ, μ + 5σ + 5/λ]` to `tol` MHz.
pub fn peak_mode_tol<T: Real>(p: &EmgParams<T>, tol: T) -> T {
    let unit = EmgParams { amplitude: T::one(), ..*p };
    let f = |x: T| emg_pdf(x, &unit);
    let five = T::lit(5.0);
    let mut a = p.mu - five * p.sigma;
    let mut b = p.mu + five * p.sigma + five / p.lambda;
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iter = 0;
    while (b - a).abs() > tol && iter < 200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * inv_phi;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * inv_phi;
            fd = f(d);
        }
        iter += 1;
    }
    (a + b) / T::lit(2.0)
}

/// Mode with a 1 Hz search tolerance (well inside the 1 kHz requirement).
pub fn peak_mode<T: Real>(p: &EmgParams<T>) -> T {
    let tol = T::lit(1e-6).max(p.sigma * T::lit(1e-9));
    peak_mode_tol(p, tol)
}
