//! Measurement chain: amplitude-modulated detection, lock-in demodulation,
//! widefield contrast images and emitter localization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{pairwise_sum, Real};

/// Minimum sampling rate in units of the modulation frequency.
pub const MIN_OVERSAMPLING: f64 = 10.0;
/// Minimum record length accepted by [`lockin_demodulate`], in periods.
pub const MIN_LOCKIN_PERIODS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("sample rate {fs} Hz is below 10x the modulation frequency {f_mod} Hz")]
    Undersampled { fs: f64, f_mod: f64 },
    #[error("record spans {periods:.2} reference periods; at least {MIN_LOCKIN_PERIODS} are required")]
    TooShort { periods: f64 },
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("off-frame pixel {index} (x={x}, y={y}) is not positive")]
    NonPositiveOff { index: usize, x: usize, y: usize },
    #[error("NV emission integrates to zero above the cutoff")]
    ZeroIntegral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct TimeSeries<T> {
    /// Hz.
    pub sample_rate: T,
    pub values: Vec<T>,
}

impl<T: Real> TimeSeries<T> {
    pub fn new(sample_rate: T, values: Vec<T>) -> Result<Self, SignalError> {
        if !(sample_rate > T::zero()) || !sample_rate.is_finite() {
            return Err(SignalError::Invalid(format!("sample_rate must be positive, got {sample_rate}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::Invalid(format!("sample {i} is not finite")));
        }
        Ok(Self { sample_rate, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Microwave amplitude modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ModulationSpec<T> {
    /// Hz.
    pub f_mod: T,
    /// Fraction of each period spent in the "on" phase.
    #[serde(default = "half")]
    pub duty: T,
    /// 1 is full on/off switching.
    #[serde(default = "one")]
    pub depth: T,
}

fn half<T: Real>() -> T {
    T::lit(0.5)
}

fn one<T: Real>() -> T {
    T::one()
}

impl<T: Real> Default for ModulationSpec<T> {
    fn default() -> Self {
        Self { f_mod: T::lit(1000.0), duty: half(), depth: one() }
    }
}

impl<T: Real> ModulationSpec<T> {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.f_mod > T::zero()) || !self.f_mod.is_finite() {
            return Err(SignalError::Invalid(format!("f_mod must be positive, got {}", self.f_mod)));
        }
        if !(self.duty > T::zero() && self.duty < T::one()) {
            return Err(SignalError::Invalid(format!("duty must lie in (0, 1), got {}", self.duty)));
        }
        if !(self.depth >= T::zero() && self.depth <= T::one()) {
            return Err(SignalError::Invalid(format!("depth must lie in [0, 1], got {}", self.depth)));
        }
        Ok(())
    }
}

/// Square wave that is 1 in the "on" phase and `1 − depth` otherwise,
/// starting "on" at t = 0.
pub fn modulation_envelope<T: Real>(spec: &ModulationSpec<T>, n: usize, fs: T) -> Result<TimeSeries<T>, SignalError> {
    spec.validate()?;
    if !(fs >= T::lit(MIN_OVERSAMPLING) * spec.f_mod) {
        return Err(SignalError::Undersampled { fs: fs.as_f64(), f_mod: spec.f_mod.as_f64() });
    }
    let ratio = spec.f_mod.as_f64() / fs.as_f64();
    let duty = spec.duty.as_f64();
    let low = T::one() - spec.depth;
    let values = (0..n)
        .map(|k| {
            let phase = (k as f64 * ratio).fract();
            if phase < duty {
                T::one()
            } else {
                low
            }
        })
        .collect();
    TimeSeries::new(fs, values)
}

/// Detector trace: background plus NV fluorescence switching between
/// `nv_on` (MW applied) and `nv_off`, with additive Gaussian noise.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_detector_signal<T: Real>(
    background: T,
    nv_on: T,
    nv_off: T,
    spec: &ModulationSpec<T>,
    n: usize,
    fs: T,
    noise_sigma: T,
    seed: u64,
) -> Result<TimeSeries<T>, SignalError> {
    if !(background >= T::zero()) {
        return Err(SignalError::Invalid(format!("background must be non-negative, got {background}")));
    }
    if !(nv_on <= nv_off) {
        return Err(SignalError::Invalid(format!("nv_on ({nv_on}) exceeds nv_off ({nv_off})")));
    }
    if !(noise_sigma >= T::zero()) {
        return Err(SignalError::Invalid(format!("noise_sigma must be non-negative, got {noise_sigma}")));
    }
    let env = modulation_envelope(spec, n, fs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = env
        .values
        .iter()
        .map(|&e| {
            let clean = background + e * nv_on + (T::one() - e) * nv_off;
            if noise_sigma > T::zero() {
                let z: f64 = StandardNormal.sample(&mut rng);
                clean + noise_sigma * T::lit(z)
            } else {
                clean
            }
        })
        .collect();
    TimeSeries::new(fs, values)
}

/// Dual-phase lock-in output at `f_ref`.
///
/// Uses the largest whole number of reference periods in the record, removes
/// the window mean, and returns `(π/2)·√(X² + Y²)` with `X`, `Y` the mean
/// products with sine and cosine. A full-depth square wave of peak-to-peak
/// `a` therefore reads `a/2`.
pub fn lockin_demodulate<T: Real>(ts: &TimeSeries<T>, f_ref: T) -> Result<T, SignalError> {
    if !(f_ref > T::zero()) || !f_ref.is_finite() {
        return Err(SignalError::Invalid(format!("f_ref must be positive, got {f_ref}")));
    }
    let fs = ts.sample_rate.as_f64();
    let f = f_ref.as_f64();
    let periods = ts.len() as f64 * f / fs;
    if periods < MIN_LOCKIN_PERIODS as f64 {
        return Err(SignalError::TooShort { periods });
    }
    let whole = periods.floor();
    let m = ((whole * fs / f).round() as usize).min(ts.len());
    let window = &ts.values[..m];
    let mean = pairwise_sum(window) / T::from_usize_lossy(m);
    let omega = std::f64::consts::TAU * f / fs;
    let (xs, ys): (Vec<T>, Vec<T>) = window
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let (s, c) = (omega * k as f64).sin_cos();
            let d = v - mean;
            (d * T::lit(s), d * T::lit(c))
        })
        .unzip();
    let nm = T::from_usize_lossy(m);
    let x = pairwise_sum(&xs) / nm;
    let y = pairwise_sum(&ys) / nm;
    Ok(T::FRAC_PI_2() * (x * x + y * y).sqrt())
}

/// Row-major image; `px_size` in μm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ContrastImage<T> {
    pub width: usize,
    pub height: usize,
    pub px_size: T,
    pub pixels: Vec<T>,
}

impl<T: Real> ContrastImage<T> {
    pub fn new(width: usize, height: usize, px_size: T, pixels: Vec<T>) -> Result<Self, SignalError> {
        if width * height != pixels.len() {
            return Err(SignalError::Invalid(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        if !(px_size > T::zero()) {
            return Err(SignalError::Invalid(format!("px_size must be positive, got {px_size}")));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::Invalid(format!("pixel {i} is not finite")));
        }
        Ok(Self { width, height, px_size, pixels })
    }

    pub fn filled(width: usize, height: usize, px_size: T, value: T) -> Self {
        Self { width, height, px_size, pixels: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.pixels[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn max_value(&self) -> T {
        self.pixels.iter().fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    pub fn min_value(&self) -> T {
        self.pixels.iter().fold(T::infinity(), |a, &b| a.min(b))
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, SignalError> {
        if self.dims() != other.dims() {
            return Err(SignalError::DimensionMismatch { a: self.dims(), b: other.dims() });
        }
        let pixels = self.pixels.iter().zip(&other.pixels).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { pixels, ..self.clone() })
    }
}

/// Per-pixel `|on − off|`.
pub fn contrast_image<T: Real>(on: &ContrastImage<T>, off: &ContrastImage<T>) -> Result<ContrastImage<T>, SignalError> {
    on.zip_map(off, |a, b| (a - b).abs())
}

/// Per-pixel `(1 − on/off)·100`.
pub fn percent_contrast_image<T: Real>(
    on: &ContrastImage<T>,
    off: &ContrastImage<T>,
) -> Result<ContrastImage<T>, SignalError> {
    if on.dims() != off.dims() {
        return Err(SignalError::DimensionMismatch { a: on.dims(), b: off.dims() });
    }
    if let Some(index) = off.pixels.iter().position(|&v| !(v > T::zero())) {
        return Err(SignalError::NonPositiveOff { index, x: index % off.width, y: index / off.width });
    }
    on.zip_map(off, |a, b| (T::one() - a / b) * T::lit(100.0))
}

/// Point emitter for widefield synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Emitter<T> {
    /// μm.
    pub x: T,
    /// μm.
    pub y: T,
    /// Fluorescence drop under resonant MW, %.
    pub contrast: T,
    /// Peak spot amplitude in the off frame, detector units.
    #[serde(default = "one")]
    pub brightness: T,
}

/// Field of view. Pixel `(i, j)` is centred at `(i·px_size, j·px_size)` μm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct ImageGeometry<T> {
    pub width: usize,
    pub height: usize,
    /// μm.
    pub px_size: T,
}

impl<T: Real> ImageGeometry<T> {
    pub fn contains(&self, x_um: T, y_um: T) -> bool {
        let w = T::from_usize_lossy(self.width.saturating_sub(1)) * self.px_size;
        let h = T::from_usize_lossy(self.height.saturating_sub(1)) * self.px_size;
        x_um >= T::zero() && y_um >= T::zero() && x_um <= w && y_um <= h
    }
}

/// Gaussian-PSF on/off frame pair. Each frame gets independent Gaussian noise
/// drawn from one generator stream per (frame, row), so the result does not
/// depend on scheduling.
pub fn synthesize_widefield_pair<T: Real>(
    emitters: &[Emitter<T>],
    psf_sigma: T,
    background: T,
    noise_sigma: T,
    geometry: &ImageGeometry<T>,
    seed: u64,
) -> Result<(ContrastImage<T>, ContrastImage<T>), SignalError> {
    if geometry.width == 0 || geometry.height == 0 || !(geometry.px_size > T::zero()) {
        return Err(SignalError::Invalid("image geometry must be non-empty with positive px_size".into()));
    }
    if !(psf_sigma > T::zero()) {
        return Err(SignalError::Invalid(format!("psf_sigma must be positive, got {psf_sigma}")));
    }
    if !(noise_sigma >= T::zero()) {
        return Err(SignalError::Invalid(format!("noise_sigma must be non-negative, got {noise_sigma}")));
    }
    if let Some(i) = emitters.iter().position(|e| !geometry.contains(e.x, e.y)) {
        return Err(SignalError::Invalid(format!("emitter {i} lies outside the field of view")));
    }
    let (w, h) = (geometry.width, geometry.height);
    let two_s2 = T::lit(2.0) * psf_sigma * psf_sigma;
    let spot = |x: T, y: T, e: &Emitter<T>| {
        let (dx, dy) = (x - e.x, y - e.y);
        e.brightness * (-(dx * dx + dy * dy) / two_s2).exp()
    };
    let frame = |index: u64, dim: bool| -> Vec<T> {
        (0..h)
            .into_par_iter()
            .flat_map_iter(|row| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index * h as u64 + row as u64);
                let y = T::from_usize_lossy(row) * geometry.px_size;
                (0..w)
                    .map(|col| {
                        let x = T::from_usize_lossy(col) * geometry.px_size;
                        let signal = emitters.iter().fold(T::zero(), |acc, e| {
                            let scale = if dim { T::one() - e.contrast / T::lit(100.0) } else { T::one() };
                            acc + scale * spot(x, y, e)
                        });
                        let z: f64 = StandardNormal.sample(&mut rng);
                        background + signal + noise_sigma * T::lit(z)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let off = ContrastImage { width: w, height: h, px_size: geometry.px_size, pixels: frame(0, false) };
    let on = ContrastImage { width: w, height: h, px_size: geometry.px_size, pixels: frame(1, true) };
    Ok((on, off))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Detection<T> {
    /// px.
    pub x: T,
    /// px.
    pub y: T,
    pub peak: T,
}

/// Local maxima above `threshold`, greedily suppressed within
/// `min_separation` pixels of a brighter detection, brightest first.
/// Positions are the 3×3 intensity centroid around the maximum pixel.
pub fn localize_emitters<T: Real>(
    img: &ContrastImage<T>,
    threshold: T,
    min_separation: T,
) -> Result<Vec<Detection<T>>, SignalError> {
    if !(threshold > T::zero()) {
        return Err(SignalError::Invalid(format!("threshold must be positive, got {threshold}")));
    }
    let (w, h) = img.dims();
    let idx = |x: usize, y: usize| y * w + x;
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = img.pixels[idx(x, y)];
            if !(v > threshold) {
                continue;
            }
            let mut is_max = true;
            'nb: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if (nx, ny) == (x, y) {
                        continue;
                    }
                    let u = img.pixels[idx(nx, ny)];
                    // Plateaus keep only their first pixel in raster order.
                    if u > v || (u == v && idx(nx, ny) < idx(x, y)) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((x, y, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal).then(idx(a.0, a.1).cmp(&idx(b.0, b.1))));

    let min_sep2 = min_separation * min_separation;
    let mut kept: Vec<(usize, usize, T)> = Vec::new();
    for c in candidates {
        let far = kept.iter().all(|k| {
            let dx = T::from_usize_lossy(c.0) - T::from_usize_lossy(k.0);
            let dy = T::from_usize_lossy(c.1) - T::from_usize_lossy(k.1);
            dx * dx + dy * dy >= min_sep2
        });
        if far {
            kept.push(c);
        }
    }

    Ok(kept
        .into_iter()
        .map(|(x, y, peak)| {
            let (mut sw, mut sx, mut sy) = (T::zero(), T::zero(), T::zero());
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let wgt = img.pixels[idx(nx, ny)].max(T::zero());
                    sw = sw + wgt;
                    sx = sx + wgt * T::from_usize_lossy(nx);
                    sy = sy + wgt * T::from_usize_lossy(ny);
                }
            }
            Detection { x: sx / sw, y: sy / sw, peak }
        })
        .collect())
}

/// Emission spectrum; wavelengths in nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct EmissionTable<T> {
    pub wavelengths: Vec<T>,
    pub intensity: Vec<T>,
}

impl<T: Real> EmissionTable<T> {
    pub fn new(wavelengths: Vec<T>, intensity: Vec<T>) -> Result<Self, SignalError> {
        if wavelengths.len() != intensity.len() || wavelengths.len() < 2 {
            return Err(SignalError::Invalid(format!(
                "need at least two samples of equal length, got {} wavelengths and {} intensities",
                wavelengths.len(),
                intensity.len()
            )));
        }
        if let Some(i) = wavelengths.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(SignalError::Invalid(format!("wavelengths not strictly increasing at index {}", i + 1)));
        }
        if let Some(i) = intensity.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(SignalError::Invalid(format!("intensity {i} must be finite and non-negative")));
        }
        Ok(Self { wavelengths, intensity })
    }

    /// Gaussian band with unit peak sampled every nanometre on `[lo, hi]`.
    pub fn gaussian(center: T, sd: T, lo: usize, hi: usize) -> Self {
        let wavelengths: Vec<T> = (lo..=hi).map(T::from_usize_lossy).collect();
        let intensity = wavelengths
            .iter()
            .map(|&l| {
                let u = (l - center) / sd;
                (-(u * u) / T::lit(2.0)).exp()
            })
            .collect();
        Self { wavelengths, intensity }
    }

    fn interpolate(&self, x: T) -> T {
        let i = self.wavelengths.partition_point(|&w| w <= x).clamp(1, self.wavelengths.len() - 1);
        let (x0, x1) = (self.wavelengths[i - 1], self.wavelengths[i]);
        let (y0, y1) = (self.intensity[i - 1], self.intensity[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Trapezoid integral over wavelengths at or above `cutoff`.
    pub fn integral_above(&self, cutoff: T) -> Result<T, SignalError> {
        let (lo, hi) = (self.wavelengths[0], self.wavelengths[self.wavelengths.len() - 1]);
        if !(cutoff >= lo && cutoff <= hi) {
            return Err(SignalError::Invalid(format!("cutoff {cutoff} nm outside table range [{lo}, {hi}]")));
        }
        let mut xs = vec![cutoff];
        let mut ys = vec![self.interpolate(cutoff)];
        for (&x, &y) in self.wavelengths.iter().zip(&self.intensity) {
            if x > cutoff {
                xs.push(x);
                ys.push(y);
            }
        }
        let terms: Vec<T> =
            xs.windows(2).zip(ys.windows(2)).map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / T::lit(2.0)).collect();
        Ok(pairwise_sum(&terms))
    }
}

/// Toy NV emission band centred at 680 nm.
pub fn bundled_nv_emission<T: Real>() -> EmissionTable<T> {
    EmissionTable::gaussian(T::lit(680.0), T::lit(40.0), 550, 850)
}

/// Toy resin autofluorescence band centred at 620 nm.
pub fn bundled_resin_emission<T: Real>() -> EmissionTable<T> {
    EmissionTable::gaussian(T::lit(620.0), T::lit(30.0), 550, 850)
}

/// Background-to-signal ratio after a long-pass filter at `cutoff`:
/// `resin·(1 − f) / (nv·f)` for NV loading fraction `f`.
pub fn filtered_band_ratio<T: Real>(
    nv: &EmissionTable<T>,
    resin: &EmissionTable<T>,
    cutoff: T,
    nv_fraction: T,
) -> Result<T, SignalError> {
    if !(nv_fraction > T::zero() && nv_fraction <= T::one()) {
        return Err(SignalError::Invalid(format!("nv_fraction must lie in (0, 1], got {nv_fraction}")));
    }
    let s = nv.integral_above(cutoff)?;
    let b = resin.integral_above(cutoff)?;
    if !(s > T::zero()) {
        return Err(SignalError::ZeroIntegral);
    }
    Ok(b * (T::one() - nv_fraction) / (s * nv_fraction))
}
