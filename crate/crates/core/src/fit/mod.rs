//! Two-peak EMG fitting of ODMR spectra.
//!
//! The model is `baseline + Σᵢ emg_pdf(x; μᵢ, σᵢ, λᵢ, Aᵢ)` with nine free
//! parameters, laid out as `[μ₁, σ₁, λ₁, A₁, μ₂, σ₂, λ₂, A₂, baseline]`.
//! Residuals are uniformly weighted. Peak positions are reported as modes
//! of the fitted components.

pub mod emg;
pub mod lm;
pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emg::{emg_pdf, peak_mode, peak_mode_tol, EmgParams};
pub use lm::{levenberg_marquardt, LeastSquaresProblem, LmConfig, LmError, LmReport};
pub use special::{erf, erfc, erfcx};

use crate::linalg::symmetric_eigenvalues;
use crate::lindblad::OdmrSpectrum;
use crate::scalar::Real;

pub const N_PARAMS: usize = 9;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "mu1", "sigma1", "lambda1", "amplitude1", "mu2", "sigma2", "lambda2", "amplitude2", "baseline",
];

/// Minimum spectrum length accepted by [`initial_guess`].
pub const MIN_POINTS: usize = 20;

/// Offset of the fallback guesses from the centre, MHz.
pub const FALLBACK_OFFSET_MHZ: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("spectrum has {0} points; at least {MIN_POINTS} are required")]
    TooFewPoints(usize),
    #[error("initial parameters are invalid: {0}")]
    InvalidInit(String),
    #[error("fit did not converge after {iterations} iterations (best RSS {cost:e})")]
    NotConverged { best: Vec<f64>, cost: f64, iterations: usize },
    #[error("normal matrix is singular; rescale parameters or supply a better initial guess")]
    Singular,
}

impl From<LmError> for FitError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::BadStart => FitError::InvalidInit("non-finite or infeasible start".into()),
            LmError::NotConverged { params, cost, iterations } => {
                FitError::NotConverged { best: params, cost, iterations }
            }
            LmError::Singular => FitError::Singular,
        }
    }
}

/// Per-parameter 95% half-widths, mirroring the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ParamIntervals<T> {
    pub peak1: EmgParams<T>,
    pub peak2: EmgParams<T>,
    pub baseline: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct TwoPeakFit<T> {
    pub peak1: EmgParams<T>,
    pub peak2: EmgParams<T>,
    /// %.
    pub baseline: T,
    /// 9×9, parameter order as in [`PARAM_NAMES`].
    pub covariance: Vec<Vec<T>>,
    pub ci95: ParamIntervals<T>,
    /// Ascending component modes, MHz.
    pub peak_modes: (T, T),
    /// Midpoint of the modes, MHz.
    pub zfs: T,
    pub zfs_ci95: T,
    /// Mode difference, MHz.
    pub splitting: T,
    pub splitting_ci95: T,
    /// %.
    pub residual_rms: T,
    pub iterations: usize,
    /// Sum of squared residuals after each accepted step, initial cost first.
    #[serde(default)]
    pub cost_history: Vec<T>,
}

impl<T: Real> TwoPeakFit<T> {
    /// Builds an unfitted result (zero covariance) from parameters.
    pub fn from_params(peak1: EmgParams<T>, peak2: EmgParams<T>, baseline: T) -> Self {
        let zero_ci = EmgParams { mu: T::zero(), sigma: T::zero(), lambda: T::zero(), amplitude: T::zero() };
        let (m1, m2) = (peak_mode(&peak1), peak_mode(&peak2));
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        Self {
            peak1,
            peak2,
            baseline,
            covariance: vec![vec![T::zero(); N_PARAMS]; N_PARAMS],
            ci95: ParamIntervals { peak1: zero_ci, peak2: zero_ci, baseline: T::zero() },
            peak_modes: (lo, hi),
            zfs: (lo + hi) / T::lit(2.0),
            zfs_ci95: T::zero(),
            splitting: hi - lo,
            splitting_ci95: T::zero(),
            residual_rms: T::zero(),
            iterations: 0,
            cost_history: Vec::new(),
        }
    }

    pub fn params(&self) -> [T; N_PARAMS] {
        pack(&self.peak1, &self.peak2, self.baseline)
    }

    /// Model contrast at `x`.
    pub fn evaluate(&self, x: T) -> T {
        self.baseline + emg_pdf(x, &self.peak1) + emg_pdf(x, &self.peak2)
    }

    pub fn with_peaks_swapped(&self) -> Self {
        Self { peak1: self.peak2, peak2: self.peak1, ..self.clone() }
    }

    pub fn ci95_vec(&self) -> [T; N_PARAMS] {
        pack(&self.ci95.peak1, &self.ci95.peak2, self.ci95.baseline)
    }
}

fn pack<T: Real>(a: &EmgParams<T>, b: &EmgParams<T>, baseline: T) -> [T; N_PARAMS] {
    [a.mu, a.sigma, a.lambda, a.amplitude, b.mu, b.sigma, b.lambda, b.amplitude, baseline]
}

fn unpack<T: Real>(p: &[T]) -> (EmgParams<T>, EmgParams<T>, T) {
    let e = |o: usize| EmgParams { mu: p[o], sigma: p[o + 1], lambda: p[o + 2], amplitude: p[o + 3] };
    (e(0), e(4), p[8])
}

struct TwoEmgProblem<'a, T> {
    x: &'a [T],
    y: &'a [T],
    baseline_scale: T,
}

impl<T: Real> LeastSquaresProblem<T> for TwoEmgProblem<'_, T> {
    fn n_params(&self) -> usize {
        N_PARAMS
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, params: &[T], out: &mut [T]) {
        let (a, b, base) = unpack(params);
        for ((o, &x), &y) in out.iter_mut().zip(self.x).zip(self.y) {
            *o = base + emg_pdf(x, &a) + emg_pdf(x, &b) - y;
        }
    }

    fn feasible(&self, params: &[T]) -> bool {
        let (a, b, base) = unpack(params);
        a.is_valid() && b.is_valid() && base.is_finite()
    }

    fn scale(&self, params: &[T]) -> Vec<T> {
        let mut s: Vec<T> = params.iter().map(|p| p.abs()).collect();
        // Centres move on the scale of their widths, not of their magnitude.
        s[0] = params[1];
        s[4] = params[5];
        s[8] = params[8].abs().max(self.baseline_scale);
        s
    }
}

fn moving_average<T: Real>(y: &[T], half: usize) -> Vec<T> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let sum = y[lo..=hi].iter().fold(T::zero(), |a, &b| a + b);
            sum / T::from_usize_lossy(hi - lo + 1)
        })
        .collect()
}

fn percentile<T: Real>(y: &[T], q: f64) -> T {
    let mut s = y.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let idx = ((s.len() - 1) as f64 * q).round() as usize;
    s[idx]
}

/// Gaussian σ from the half-maximum crossing around index `i`.
fn half_max_sigma<T: Real>(x: &[T], s: &[T], i: usize, baseline: T) -> T {
    let half = baseline + (s[i] - baseline) / T::lit(2.0);
    let mut l = i;
    while l > 0 && s[l] > half {
        l -= 1;
    }
    let mut r = i;
    while r + 1 < s.len() && s[r] > half {
        r += 1;
    }
    let spacing = (x[x.len() - 1] - x[0]) / T::from_usize_lossy(x.len() - 1);
    ((x[r] - x[l]) / T::lit(2.354_820_045)).max(spacing)
}

fn guess_component<T: Real>(x_peak: T, height: T, sigma: T) -> EmgParams<T> {
    let lambda = T::lit(2.0) / sigma;
    let unit = EmgParams { mu: T::zero(), sigma, lambda, amplitude: T::one() };
    let offset = peak_mode(&unit);
    let unit_height = emg_pdf(offset, &unit);
    let amplitude = (height / unit_height).max(T::lit(1e-9));
    EmgParams { mu: x_peak - offset, sigma, lambda, amplitude }
}

/// Starting values for [`fit_two_peak`].
///
/// Smooths with a 5-point moving average, then takes the two highest local
/// maxima that are not adjacent and are separated by a dip of at least 10%
/// of the lower peak height. Widths come from half-maximum crossings,
/// `λ = 2/σ`, and the baseline is the 5th percentile. With fewer than two
/// maxima the guesses straddle the global maximum by ±5 MHz; a flat
/// spectrum yields guesses at the range midpoint ±5 MHz.
pub fn initial_guess<T: Real>(spec: &OdmrSpectrum<T>) -> Result<TwoPeakFit<T>, FitError> {
    let n = spec.len();
    if n < MIN_POINTS {
        return Err(FitError::TooFewPoints(n));
    }
    let x = &spec.freqs;
    let s = moving_average(&spec.contrast, 2);
    let baseline = percentile(&spec.contrast, 0.05);
    let off = T::lit(FALLBACK_OFFSET_MHZ);

    let (smin, smax) = s.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
    if !(smax > smin) {
        let mid = (x[0] + x[n - 1]) / T::lit(2.0);
        let sigma = (x[n - 1] - x[0]) / T::lit(40.0);
        let h = T::lit(1e-3);
        return Ok(TwoPeakFit::from_params(
            guess_component(mid - off, h, sigma),
            guess_component(mid + off, h, sigma),
            baseline,
        ));
    }

    let mut maxima: Vec<usize> = (1..n - 1).filter(|&i| s[i] > s[i - 1] && s[i] >= s[i + 1]).collect();
    maxima.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));

    let first = maxima.first().copied();
    let second = first.and_then(|i| {
        maxima.iter().skip(1).copied().find(|&j| {
            if i.abs_diff(j) <= 1 {
                return false;
            }
            let (lo, hi) = (i.min(j), i.max(j));
            let valley = s[lo..=hi].iter().fold(T::infinity(), |a, &b| a.min(b));
            let lower = s[j].min(s[i]) - baseline;
            s[j].min(s[i]) - valley >= T::lit(0.1) * lower
        })
    });

    match (first, second) {
        (Some(i), Some(j)) => {
            let (i, j) = if x[i] <= x[j] { (i, j) } else { (j, i) };
            let pi = guess_component(x[i], s[i] - baseline, half_max_sigma(x, &s, i, baseline));
            let pj = guess_component(x[j], s[j] - baseline, half_max_sigma(x, &s, j, baseline));
            Ok(TwoPeakFit::from_params(pi, pj, baseline))
        }
        _ => {
            let g = (0..n).fold(0, |b, k| if s[k] > s[b] { k } else { b });
            let sigma = half_max_sigma(x, &s, g, baseline);
            let h = (s[g] - baseline).max(T::lit(1e-3)) / T::lit(2.0);
            Ok(TwoPeakFit::from_params(
                guess_component(x[g] - off, h, sigma),
                guess_component(x[g] + off, h, sigma),
                baseline,
            ))
        }
    }
}

fn mode_gradient<T: Real>(p: &EmgParams<T>) -> [T; 4] {
    // ∂mode/∂μ = 1 by translation; amplitude does not move the mode.
    let tol = p.sigma * T::lit(1e-11);
    let h_sigma = p.sigma * T::lit(1e-4);
    let h_lambda = p.lambda * T::lit(1e-4);
    let m = |q: EmgParams<T>| peak_mode_tol(&q, tol);
    let d_sigma = (m(EmgParams { sigma: p.sigma + h_sigma, ..*p }) - m(EmgParams { sigma: p.sigma - h_sigma, ..*p }))
        / (h_sigma + h_sigma);
    let d_lambda = (m(EmgParams { lambda: p.lambda + h_lambda, ..*p })
        - m(EmgParams { lambda: p.lambda - h_lambda, ..*p }))
        / (h_lambda + h_lambda);
    [T::one(), d_sigma, d_lambda, T::zero()]
}

fn quad_form<T: Real>(g: &[T; N_PARAMS], cov: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..N_PARAMS {
        for j in 0..N_PARAMS {
            acc = acc + g[i] * cov[i * N_PARAMS + j] * g[j];
        }
    }
    acc.max(T::zero())
}

/// Least-squares fit of two EMG components plus a shared baseline.
///
/// Converges when an accepted step lowers the RSS by less than 1e-10
/// relative, or when no step lowers it at all; more than 500 iterations is
/// an error carrying the best parameters. Covariance is `s²(JᵀJ)⁻¹` with
/// `s² = RSS/(n − 9)`; intervals are `1.96·√diag`. The modes, ZFS and
/// splitting intervals follow from the covariance by the delta method. The
/// returned peaks are ordered by mode.
pub fn fit_two_peak<T: Real>(spec: &OdmrSpectrum<T>, init: &TwoPeakFit<T>) -> Result<TwoPeakFit<T>, FitError> {
    fit_two_peak_with(spec, init, &LmConfig::default())
}

pub fn fit_two_peak_with<T: Real>(
    spec: &OdmrSpectrum<T>,
    init: &TwoPeakFit<T>,
    cfg: &LmConfig<T>,
) -> Result<TwoPeakFit<T>, FitError> {
    let n = spec.len();
    if n <= N_PARAMS {
        return Err(FitError::TooFewPoints(n));
    }
    if !init.peak1.is_valid() || !init.peak2.is_valid() || !init.baseline.is_finite() {
        return Err(FitError::InvalidInit("sigma, lambda and amplitude must be positive".into()));
    }
    let ymax = spec.contrast.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let problem = TwoEmgProblem {
        x: &spec.freqs,
        y: &spec.contrast,
        baseline_scale: (ymax * T::lit(1e-2)).max(T::lit(1e-6)),
    };
    let report = levenberg_marquardt(&problem, &init.params(), cfg)?;
    let mut cov = report.covariance(n)?;
    let mut params = report.params.clone();

    let (a, b, _) = unpack(&params);
    if peak_mode(&b) < peak_mode(&a) {
        let perm: [usize; N_PARAMS] = [4, 5, 6, 7, 0, 1, 2, 3, 8];
        params = perm.iter().map(|&k| report.params[k]).collect();
        let old = cov.clone();
        for i in 0..N_PARAMS {
            for j in 0..N_PARAMS {
                cov[i * N_PARAMS + j] = old[perm[i] * N_PARAMS + perm[j]];
            }
        }
    }
    let (peak1, peak2, baseline) = unpack(&params);
    let z = T::lit(Z95);
    let ci: Vec<T> = (0..N_PARAMS).map(|i| z * cov[i * N_PARAMS + i].max(T::zero()).sqrt()).collect();
    let (ci1, ci2, cib) = unpack(&ci);

    let (g1, g2) = (mode_gradient(&peak1), mode_gradient(&peak2));
    let half = T::lit(0.5);
    let mut g_zfs = [T::zero(); N_PARAMS];
    let mut g_split = [T::zero(); N_PARAMS];
    for k in 0..4 {
        g_zfs[k] = g1[k] * half;
        g_zfs[4 + k] = g2[k] * half;
        g_split[k] = -g1[k];
        g_split[4 + k] = g2[k];
    }

    let mut fit = TwoPeakFit::from_params(peak1, peak2, baseline);
    fit.covariance = (0..N_PARAMS).map(|i| cov[i * N_PARAMS..(i + 1) * N_PARAMS].to_vec()).collect();
    fit.ci95 = ParamIntervals { peak1: ci1, peak2: ci2, baseline: cib };
    fit.zfs_ci95 = z * quad_form(&g_zfs, &cov).sqrt();
    fit.splitting_ci95 = z * quad_form(&g_split, &cov).sqrt();
    fit.residual_rms = (report.cost / T::from_usize_lossy(n)).sqrt();
    fit.iterations = report.iterations;
    fit.cost_history = report.cost_history;
    Ok(fit)
}

/// Smallest eigenvalue of the fitted covariance (PSD check).
pub fn covariance_min_eigenvalue<T: Real>(fit: &TwoPeakFit<T>) -> T {
    let flat: Vec<T> = fit.covariance.iter().flatten().copied().collect();
    symmetric_eigenvalues(&flat, N_PARAMS)[0]
}

/// Fitted spectrum model sampled on `freqs`.
pub fn model_curve<T: Real>(fit: &TwoPeakFit<T>, freqs: &[T]) -> Vec<T> {
    freqs.iter().map(|&x| fit.evaluate(x)).collect()
}
