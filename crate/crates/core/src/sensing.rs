//! Calibrations, inversions and derived sensing figures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::Z95;
use crate::scalar::Real;

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Carbon number density of diamond (3.51 g/cm³), atoms per μm³.
pub const DIAMOND_CARBON_DENSITY_UM3: f64 = 1.76e11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("need at least 3 calibration points, got {0}")]
    TooFewPoints(usize),
    #[error("calibration point {0} has a non-positive or non-finite error")]
    BadError(usize),
    #[error("calibration x values are degenerate (all equal)")]
    Degenerate,
    #[error("calibration slope has the wrong sign for this inversion: {0}")]
    WrongSlopeSign(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct CalibrationPoint<T> {
    pub x: T,
    /// MHz.
    pub y: T,
    /// MHz.
    pub y_err: T,
}

/// `y = y0 + slope·(x − x0)`; `intercept` is the value at `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct LinearCalibration<T> {
    /// MHz per unit of x.
    pub slope: T,
    pub slope_ci95: T,
    /// MHz.
    pub intercept: T,
    pub intercept_ci95: T,
    /// Anchor `(x0, y0)` on the fitted line.
    pub reference: (T, T),
    /// Unit of x, e.g. "K" or "uT".
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub source: String,
}

impl<T: Real> LinearCalibration<T> {
    pub fn validate(&self) -> Result<(), SensingError> {
        let vals = [self.slope, self.slope_ci95, self.intercept, self.intercept_ci95, self.reference.0, self.reference.1];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SensingError::Invalid("calibration values must be finite".into()));
        }
        if self.slope_ci95 < T::zero() || self.intercept_ci95 < T::zero() {
            return Err(SensingError::Invalid("confidence half-widths must be non-negative".into()));
        }
        Ok(())
    }

    /// Line through `reference` with the given slope.
    pub fn anchored(slope: T, slope_ci95: T, reference: (T, T)) -> Self {
        Self {
            slope,
            slope_ci95,
            intercept: reference.1 - slope * reference.0,
            intercept_ci95: slope_ci95 * reference.0.abs(),
            reference,
            unit: String::new(),
            source: String::new(),
        }
    }

    pub fn predict(&self, x: T) -> T {
        self.reference.1 + self.slope * (x - self.reference.0)
    }
}

/// Weighted least squares line with weights `1/y_err²`.
///
/// Parameter uncertainties take the point errors as absolute, so the
/// covariance is the inverse weighted normal matrix. The anchor is the
/// lowest-x point, placed on the fitted line.
pub fn fit_linear_calibration<T: Real>(points: &[CalibrationPoint<T>]) -> Result<LinearCalibration<T>, SensingError> {
    if points.len() < 3 {
        return Err(SensingError::TooFewPoints(points.len()));
    }
    if let Some(i) = points.iter().position(|p| !(p.y_err > T::zero()) || !p.y_err.is_finite()) {
        return Err(SensingError::BadError(i));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(SensingError::Invalid("calibration points must be finite".into()));
    }
    let (mut s, mut sx, mut sy) = (T::zero(), T::zero(), T::zero());
    for p in points {
        let w = T::one() / (p.y_err * p.y_err);
        s = s + w;
        sx = sx + w * p.x;
        sy = sy + w * p.y;
    }
    // Centre x for conditioning.
    let xm = sx / s;
    let ym = sy / s;
    let (mut sxx, mut sxy) = (T::zero(), T::zero());
    for p in points {
        let w = T::one() / (p.y_err * p.y_err);
        let dx = p.x - xm;
        sxx = sxx + w * dx * dx;
        sxy = sxy + w * dx * (p.y - ym);
    }
    let spread = points.iter().fold(T::zero(), |a, p| a.max((p.x - xm).abs()));
    if !(spread > T::epsilon() * (xm.abs() + T::one()) * T::lit(16.0)) || !(sxx > T::zero()) {
        return Err(SensingError::Degenerate);
    }
    let slope = sxy / sxx;
    let var_slope = T::one() / sxx;
    // Intercept at x = 0: ym − slope·xm, with var 1/S + xm²/Sxx.
    let intercept = ym - slope * xm;
    let var_intercept = T::one() / s + xm * xm / sxx;
    let x0 = points.iter().fold(T::infinity(), |a, p| a.min(p.x));
    let z = T::lit(Z95);
    Ok(LinearCalibration {
        slope,
        slope_ci95: z * var_slope.sqrt(),
        intercept,
        intercept_ci95: z * var_intercept.sqrt(),
        reference: (x0, ym + slope * (x0 - xm)),
        unit: String::new(),
        source: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Estimate<T> {
    pub value: T,
    pub err: T,
}

/// Temperature (K) from a ZFS reading. The error combines `zfs_err` and the
/// slope half-width to first order.
pub fn invert_temperature<T: Real>(
    calib: &LinearCalibration<T>,
    zfs: T,
    zfs_err: T,
) -> Result<Estimate<T>, SensingError> {
    calib.validate()?;
    if !(calib.slope < T::zero()) {
        return Err(SensingError::WrongSlopeSign(calib.slope.as_f64()));
    }
    Ok(invert(calib, calib.reference.0, zfs - calib.reference.1, zfs_err))
}

/// Field (μT) from a splitting reading, for a slope in MHz/μT:
/// `B = (splitting − intercept)/slope`.
pub fn invert_field<T: Real>(
    calib: &LinearCalibration<T>,
    splitting: T,
    err: T,
) -> Result<Estimate<T>, SensingError> {
    calib.validate()?;
    if !(calib.slope > T::zero()) {
        return Err(SensingError::WrongSlopeSign(calib.slope.as_f64()));
    }
    Ok(invert(calib, T::zero(), splitting - calib.intercept, err))
}

fn invert<T: Real>(calib: &LinearCalibration<T>, x0: T, dy: T, y_err: T) -> Estimate<T> {
    let dx = dy / calib.slope;
    let a = y_err / calib.slope;
    let b = dx * calib.slope_ci95 / calib.slope;
    Estimate { value: x0 + dx, err: (a * a + b * b).sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct SensitivityInput<T> {
    /// Standard error of a single point measurement, MHz.
    pub sigma_p: T,
    /// Integration time, s.
    pub dt_int: T,
    /// MHz per unit.
    pub slope: T,
}

/// `η = σ_P·√δt / |slope|`, in units per √Hz.
pub fn sensitivity<T: Real>(inp: &SensitivityInput<T>) -> Result<T, SensingError> {
    if !(inp.sigma_p >= T::zero()) || !(inp.dt_int > T::zero()) || !(inp.slope != T::zero()) || !inp.slope.is_finite() {
        return Err(SensingError::Invalid("need sigma_p >= 0, dt_int > 0 and a finite non-zero slope".into()));
    }
    Ok(inp.sigma_p * inp.dt_int.sqrt() / inp.slope.abs())
}

/// Infinite straight wire: `μ0·I/(2π·d)` in T, for I in A and d in m.
pub fn wire_field<T: Real>(current: T, distance: T) -> Result<T, SensingError> {
    if !(distance > T::zero()) {
        return Err(SensingError::Invalid(format!("distance must be positive, got {distance}")));
    }
    Ok(T::lit(MU0) * current / (T::TAU() * distance))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Census<T> {
    pub particle_volume_um3: T,
    pub particles_per_um3: T,
    pub nv_per_particle: T,
}

/// Spherical-particle counting from diameter (nm), NV concentration (ppm of
/// carbon atoms) and particle volume fraction.
pub fn particle_census<T: Real>(diameter_nm: T, nv_ppm: T, volume_fraction: T) -> Result<Census<T>, SensingError> {
    if !(diameter_nm > T::zero() && nv_ppm > T::zero() && volume_fraction > T::zero()) {
        return Err(SensingError::Invalid("diameter, ppm and volume fraction must be positive".into()));
    }
    let d_um = diameter_nm / T::lit(1000.0);
    let v = T::PI() / T::lit(6.0) * d_um * d_um * d_um;
    Ok(Census {
        particle_volume_um3: v,
        particles_per_um3: volume_fraction / v,
        nv_per_particle: v * T::lit(DIAMOND_CARBON_DENSITY_UM3) * nv_ppm * T::lit(1e-6),
    })
}
