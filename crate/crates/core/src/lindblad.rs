//! Driven, dissipative three-level dynamics and CW-ODMR spectrum synthesis.
//!
//! Each microwave transition is treated in its rotating frame. The reduced
//! state is stored in the slots `[e+, g, e−]`, mirroring the spin basis
//! `{|+1⟩, |0⟩, |−1⟩}` so that `Sz` and `|0⟩⟨±1|` keep their usual form.
//!
//! Units: Hamiltonians in MHz (cyclic, so the commutator carries 2π), rates
//! in 1/μs, times in μs, and the step `dt` in ns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use num_complex::Complex;

use crate::linalg::{hermitian_eigen, CMat3};
use crate::scalar::{pairwise_sum, Real};
use crate::spin::{
    build_hamiltonian, build_spin_operators, sensing_lines, FieldEnvironment, NvParams,
    Orientation, SpinError, Transitions, MS0,
};

/// Slot of the upper excited level in the reduced basis.
pub const SLOT_PLUS: usize = 0;
/// Slot of the lower excited level in the reduced basis.
pub const SLOT_MINUS: usize = 2;

/// Largest tolerated trace drift during integration.
pub const MAX_TRACE_DRIFT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(
        "integration unstable at step {step}: trace drift {drift:e} exceeds {MAX_TRACE_DRIFT:e}; \
         reduce dt"
    )]
    Unstable { step: usize, drift: f64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// 3×3 density matrix: unit trace, Hermitian, positive semidefinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix<T> {
    rho: CMat3<T>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn new(rho: CMat3<T>) -> Result<Self, SimError> {
        let dm = Self { rho };
        let drift = (dm.trace() - T::one()).abs();
        if drift > T::lit(1e-9) {
            return Err(SimError::Invalid(format!("trace deviates from 1 by {drift}")));
        }
        if dm.hermitian_defect() > T::lit(1e-12) {
            return Err(SimError::Invalid("density matrix is not Hermitian".into()));
        }
        if dm.min_eigenvalue() < T::lit(-1e-9) {
            return Err(SimError::Invalid("density matrix is not positive semidefinite".into()));
        }
        Ok(dm)
    }

    /// Pure basis state `|k⟩⟨k|`.
    pub fn pure(k: usize) -> Self {
        Self { rho: CMat3::ket_bra(k, k) }
    }

    /// `|0⟩⟨0|`, the optically polarized state.
    pub fn polarized() -> Self {
        Self::pure(MS0)
    }

    pub fn matrix(&self) -> &CMat3<T> {
        &self.rho
    }

    pub fn trace(&self) -> T {
        self.rho.trace().re
    }

    pub fn population(&self, k: usize) -> T {
        self.rho.m[k][k].re
    }

    /// Population of the `m_s = 0` (ground sensing) slot.
    pub fn ground_population(&self) -> T {
        self.population(MS0)
    }

    pub fn hermitian_defect(&self) -> T {
        self.rho.hermitian_defect()
    }

    pub fn min_eigenvalue(&self) -> T {
        hermitian_eigen(&self.rho.hermitian_part().to_dynamic()).values[0]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        (self.rho - other.rho).max_abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct DissipatorSpec<T> {
    /// Pure dephasing rate through `Sz`, 1/μs.
    pub gamma_dephase: T,
    /// Optical repolarization rate into `|0⟩`, 1/μs.
    pub gamma_repol: T,
    /// Microwave Rabi frequency, MHz.
    pub rabi: T,
    /// Maps depleted `|0⟩` population to fractional contrast.
    pub contrast_scale: T,
}

impl<T: Real> Default for DissipatorSpec<T> {
    fn default() -> Self {
        Self {
            gamma_dephase: T::lit(5.0),
            gamma_repol: T::lit(1.0),
            rabi: T::lit(1.0),
            contrast_scale: T::lit(0.02),
        }
    }
}

impl<T: Real> DissipatorSpec<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("gamma_dephase", self.gamma_dephase),
            ("gamma_repol", self.gamma_repol),
            ("rabi", self.rabi),
        ] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(SimError::Invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.contrast_scale > T::zero() && self.contrast_scale <= T::one()) {
            return Err(SimError::Invalid("contrast_scale must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Collapse operators `√γ L` for the current rates.
    pub fn collapse_operators(&self) -> Vec<CMat3<T>> {
        let mut ops = Vec::with_capacity(3);
        if self.gamma_dephase > T::zero() {
            ops.push(build_spin_operators::<T>().sz.scale(self.gamma_dephase.sqrt()));
        }
        if self.gamma_repol > T::zero() {
            let g = self.gamma_repol.sqrt();
            ops.push(CMat3::ket_bra(MS0, SLOT_PLUS).scale(g));
            ops.push(CMat3::ket_bra(MS0, SLOT_MINUS).scale(g));
        }
        ops
    }
}

/// Microwave sweep and integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct SweepConfig<T> {
    /// MHz.
    pub f_start: T,
    /// MHz.
    pub f_stop: T,
    pub n_points: usize,
    /// μs.
    #[serde(default = "default_t_integrate")]
    pub t_integrate: T,
    /// ns.
    #[serde(default = "default_dt")]
    pub dt: T,
    pub seed: u64,
}

fn default_t_integrate<T: Real>() -> T {
    T::lit(0.5)
}

fn default_dt<T: Real>() -> T {
    T::one()
}

impl<T: Real> SweepConfig<T> {
    /// Sweep over 2800 to 2925 MHz in 0.5 MHz steps.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            f_start: T::lit(2800.0),
            f_stop: T::lit(2925.0),
            n_points: 251,
            t_integrate: default_t_integrate(),
            dt: default_dt(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.f_start < self.f_stop) {
            return Err(SimError::Invalid("f_start must be below f_stop".into()));
        }
        if self.n_points < 2 {
            return Err(SimError::Invalid("n_points must be >= 2".into()));
        }
        if !(self.dt > T::zero() && self.dt <= T::lit(10.0)) {
            return Err(SimError::Invalid("dt must lie in (0, 10] ns".into()));
        }
        if !(self.t_integrate > T::zero()) {
            return Err(SimError::Invalid("t_integrate must be positive".into()));
        }
        Ok(())
    }

    pub fn freqs(&self) -> Vec<T> {
        let n = self.n_points;
        let step = (self.f_stop - self.f_start) / T::from_usize_lossy(n - 1);
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.f_stop
                } else {
                    self.f_start + step * T::from_usize_lossy(i)
                }
            })
            .collect()
    }
}

/// Provenance attached to every spectrum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub kind: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_orient: usize,
    /// Set when a dip-polarity input was negated into peak polarity.
    #[serde(default)]
    pub sign_flipped: bool,
    #[serde(default)]
    pub parameters: serde_json::Value,
}

/// Contrast (%) sampled on a strictly increasing frequency axis (MHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct OdmrSpectrum<T> {
    pub freqs: Vec<T>,
    pub contrast: Vec<T>,
    #[serde(default)]
    pub meta: SpectrumMeta,
}

impl<T: Real> OdmrSpectrum<T> {
    /// Checks lengths, finiteness and strict monotonicity of the axis. The
    /// `[0, 100]` contrast range is guaranteed for simulated spectra but not
    /// required of measured ones, which may carry noise around zero.
    pub fn new(freqs: Vec<T>, contrast: Vec<T>, meta: SpectrumMeta) -> Result<Self, SimError> {
        if freqs.len() != contrast.len() {
            return Err(SimError::Invalid(format!(
                "freqs ({}) and contrast ({}) differ in length",
                freqs.len(),
                contrast.len()
            )));
        }
        if freqs.iter().chain(&contrast).any(|v| !v.is_finite()) {
            return Err(SimError::Invalid("non-finite sample".into()));
        }
        if let Some(i) = freqs.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(SimError::Invalid(format!(
                "frequencies not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { freqs, contrast, meta })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn in_percent_range(&self) -> bool {
        self.contrast.iter().all(|&c| c >= T::zero() && c <= T::lit(100.0))
    }

    pub fn max_contrast(&self) -> T {
        self.contrast.iter().fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    /// Negates dip-polarity data (dominant excursion below the median) so the
    /// strongest feature becomes a positive peak; records the flip in `meta`.
    pub fn normalize_polarity(mut self) -> Self {
        let mut sorted = self.contrast.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if sorted.is_empty() {
            return self;
        }
        let median = sorted[sorted.len() / 2];
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        if median - lo > hi - median {
            self.contrast.iter_mut().for_each(|c| *c = -*c);
            self.meta.sign_flipped = !self.meta.sign_flipped;
        }
        self
    }
}

/// Draws an isotropic orientation: `θ = arccos(u)`, `u ~ U[−1, 1]`,
/// `φ ~ U[0, 2π)`.
pub fn sample_orientation<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Orientation<T> {
    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let v: f64 = rng.random::<f64>();
    let theta = T::lit(u.clamp(-1.0, 1.0).acos()).min(T::PI());
    let mut phi = T::lit(v * std::f64::consts::TAU);
    if phi >= T::TAU() {
        phi = T::zero();
    }
    Orientation { theta, phi }
}

/// Independent generator for orientation `index` of the ensemble seeded by
/// `seed`. Streams do not overlap, so draws do not depend on scheduling.
pub fn orientation_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Rotating-frame Hamiltonian for a drive at `f_drive` (MHz) on both lines.
pub fn rwa_hamiltonian<T: Real>(lines: &Transitions<T>, f_drive: T, rabi: T) -> CMat3<T> {
    let mut h = CMat3::zeros();
    h.m[SLOT_PLUS][SLOT_PLUS] = Complex::new(lines.f_plus - f_drive, T::zero());
    h.m[SLOT_MINUS][SLOT_MINUS] = Complex::new(lines.f_minus - f_drive, T::zero());
    let half = rabi * T::lit(0.5);
    let two = T::lit(2.0);
    let cp = Complex::new(half * (two * lines.w_plus.max(T::zero())).sqrt(), T::zero());
    let cm = Complex::new(half * (two * lines.w_minus.max(T::zero())).sqrt(), T::zero());
    h.m[SLOT_PLUS][MS0] = cp;
    h.m[MS0][SLOT_PLUS] = cp;
    h.m[SLOT_MINUS][MS0] = cm;
    h.m[MS0][SLOT_MINUS] = cm;
    h
}

type Super<T> = [[Complex<T>; 9]; 9];

/// Lindblad generator as a 9×9 superoperator on row-major `vec(ρ)`:
/// `dρ/dt = −2πi[H, ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})`.
#[derive(Debug, Clone)]
pub struct Liouvillian<T> {
    op: Super<T>,
}

impl<T: Real> Liouvillian<T> {
    pub fn new(h: &CMat3<T>, collapse: &[CMat3<T>]) -> Self {
        let zero = Complex::new(T::zero(), T::zero());
        let mut op: Super<T> = [[zero; 9]; 9];
        let idx = |i: usize, j: usize| i * 3 + j;
        let minus_i_2pi = Complex::new(T::zero(), -T::TAU());
        let half = T::lit(0.5);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    // −2πi (H ρ − ρ H)
                    op[idx(i, j)][idx(k, j)] = op[idx(i, j)][idx(k, j)] + minus_i_2pi * h.m[i][k];
                    op[idx(i, j)][idx(i, k)] = op[idx(i, j)][idx(i, k)] - minus_i_2pi * h.m[k][j];
                }
            }
        }
        for l in collapse {
            let m = l.dagger() * *l;
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for q in 0..3 {
                            let jump = l.m[i][k] * l.m[j][q].conj();
                            op[idx(i, j)][idx(k, q)] = op[idx(i, j)][idx(k, q)] + jump;
                        }
                        op[idx(i, j)][idx(k, j)] = op[idx(i, j)][idx(k, j)] - m.m[i][k] * half;
                        op[idx(i, j)][idx(i, k)] = op[idx(i, j)][idx(i, k)] - m.m[k][j] * half;
                    }
                }
            }
        }
        Self { op }
    }

    /// `dρ/dt` for the state `rho`.
    pub fn apply(&self, rho: &[Complex<T>; 9]) -> [Complex<T>; 9] {
        let mut out = [Complex::new(T::zero(), T::zero()); 9];
        for (o, row) in out.iter_mut().zip(self.op.iter()) {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (a, r) in row.iter().zip(rho.iter()) {
                acc = acc + *a * *r;
            }
            *o = acc;
        }
        out
    }
}

fn to_vec<T: Real>(m: &CMat3<T>) -> [Complex<T>; 9] {
    let mut v = [Complex::new(T::zero(), T::zero()); 9];
    for i in 0..3 {
        for j in 0..3 {
            v[i * 3 + j] = m.m[i][j];
        }
    }
    v
}

fn from_vec<T: Real>(v: &[Complex<T>; 9]) -> CMat3<T> {
    let mut m = CMat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m.m[i][j] = v[i * 3 + j];
        }
    }
    m
}

fn axpy<T: Real>(y: &[Complex<T>; 9], a: T, x: &[Complex<T>; 9]) -> [Complex<T>; 9] {
    let mut out = *y;
    for (o, xi) in out.iter_mut().zip(x) {
        *o = *o + *xi * a;
    }
    out
}

/// Integrates the master equation with classical fixed-step RK4 for
/// `t` μs in steps of `dt_ns` ns, re-Hermitizing after every step.
///
/// RK4 does not preserve positivity. At 1 ns, with lines tens of MHz from
/// the drive and dephasing well below 1/μs, the smallest eigenvalue can
/// dip to about −1e-5; a smaller `dt_ns` restores it.
pub fn lindblad_evolve<T: Real>(
    rho0: &DensityMatrix<T>,
    h_rwa: &CMat3<T>,
    diss: &DissipatorSpec<T>,
    t: T,
    dt_ns: T,
) -> Result<DensityMatrix<T>, SimError> {
    if !(dt_ns > T::zero()) || !(t >= T::zero()) {
        return Err(SimError::Invalid("t must be >= 0 and dt > 0".into()));
    }
    let h = dt_ns / T::lit(1000.0);
    let n_steps = (t / h).round().to_usize().unwrap_or(0);
    if (T::from_usize_lossy(n_steps) * h - t).abs() > h {
        return Err(SimError::Invalid("dt does not divide t".into()));
    }
    let liou = Liouvillian::new(h_rwa, &diss.collapse_operators());
    let half = T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let mut y = to_vec(rho0.matrix());
    for step in 0..n_steps {
        let k1 = liou.apply(&y);
        let k2 = liou.apply(&axpy(&y, h * half, &k1));
        let k3 = liou.apply(&axpy(&y, h * half, &k2));
        let k4 = liou.apply(&axpy(&y, h, &k3));
        for i in 0..9 {
            y[i] = y[i] + (k1[i] + (k2[i] + k3[i]) * T::lit(2.0) + k4[i]) * sixth;
        }
        let rho = from_vec(&y).hermitian_part();
        let drift = (rho.trace().re - T::one()).abs();
        if !(drift <= T::lit(MAX_TRACE_DRIFT)) {
            return Err(SimError::Unstable { step: step + 1, drift: drift.as_f64() });
        }
        y = to_vec(&rho);
    }
    Ok(DensityMatrix { rho: from_vec(&y) })
}

fn check_inputs<T: Real>(
    params: &NvParams<T>,
    env: &FieldEnvironment<T>,
    diss: &DissipatorSpec<T>,
    sweep: &SweepConfig<T>,
) -> Result<(), SimError> {
    params.validate()?;
    env.validate()?;
    diss.validate()?;
    sweep.validate()
}

fn spectrum_for_lines<T: Real>(
    lines: &[Transitions<T>],
    diss: &DissipatorSpec<T>,
    sweep: &SweepConfig<T>,
) -> Result<(Vec<T>, Vec<T>), SimError> {
    let freqs = sweep.freqs();
    let rho0 = DensityMatrix::polarized();
    let hundred = T::lit(100.0);
    let n_lines = T::from_usize_lossy(lines.len());
    let contrast = freqs
        .par_iter()
        .map(|&f| {
            let mut per_line = Vec::with_capacity(lines.len());
            for line in lines {
                let h = rwa_hamiltonian(line, f, diss.rabi);
                let rho = lindblad_evolve(&rho0, &h, diss, sweep.t_integrate, sweep.dt)?;
                per_line.push(T::one() - rho.ground_population());
            }
            let depleted = pairwise_sum(&per_line) / n_lines;
            Ok((diss.contrast_scale * depleted * hundred).max(T::zero()).min(hundred))
        })
        .collect::<Result<Vec<T>, SimError>>()?;
    Ok((freqs, contrast))
}

fn parameters_record<T: Real>(
    params: &NvParams<T>,
    env: &FieldEnvironment<T>,
    diss: &DissipatorSpec<T>,
    sweep: &SweepConfig<T>,
    orient: Option<&Orientation<T>>,
) -> serde_json::Value {
    let mut rec = serde_json::json!({
        "nv_params": params,
        "environment": env,
        "dissipators": diss,
        "sweep": sweep,
    });
    if let Some(o) = orient {
        rec["orientation"] = serde_json::to_value(o).unwrap_or_default();
    }
    rec
}

/// CW-ODMR spectrum of one center: contrast = scale·(1 − ρ₀₀(t))·100.
pub fn simulate_single_spectrum<T: Real>(
    params: &NvParams<T>,
    env: &FieldEnvironment<T>,
    orient: &Orientation<T>,
    diss: &DissipatorSpec<T>,
    sweep: &SweepConfig<T>,
) -> Result<OdmrSpectrum<T>, SimError> {
    check_inputs(params, env, diss, sweep)?;
    let lines = sensing_lines(&build_hamiltonian(params, env, orient)?);
    let (freqs, contrast) = spectrum_for_lines(&lines, diss, sweep)?;
    let meta = SpectrumMeta {
        kind: "single".into(),
        seed: Some(sweep.seed),
        n_orient: 1,
        sign_flipped: false,
        parameters: parameters_record(params, env, diss, sweep, Some(orient)),
    };
    Ok(OdmrSpectrum { freqs, contrast, meta })
}

/// Orientations `0..n` of the ensemble seeded by `seed`.
pub fn ensemble_orientations<T: Real>(seed: u64, n: usize) -> Vec<Orientation<T>> {
    (0..n as u64).map(|i| sample_orientation(&mut orientation_rng(seed, i))).collect()
}

/// Mean of `n_orient` single-center spectra at isotropically drawn
/// orientations. Bit-identical for a fixed seed whatever the thread count.
pub fn simulate_ensemble_spectrum<T: Real>(
    params: &NvParams<T>,
    env: &FieldEnvironment<T>,
    diss: &DissipatorSpec<T>,
    sweep: &SweepConfig<T>,
    n_orient: usize,
) -> Result<OdmrSpectrum<T>, SimError> {
    if n_orient == 0 {
        return Err(SimError::Invalid("n_orient must be >= 1".into()));
    }
    check_inputs(params, env, diss, sweep)?;
    let orientations = ensemble_orientations::<T>(sweep.seed, n_orient);
    let members = orientations
        .par_iter()
        .map(|o| {
            let lines = sensing_lines(&build_hamiltonian(params, env, o)?);
            spectrum_for_lines(&lines, diss, sweep).map(|(_, c)| c)
        })
        .collect::<Result<Vec<Vec<T>>, SimError>>()?;
    let freqs = sweep.freqs();
    let n = T::from_usize_lossy(n_orient);
    let mut column = vec![T::zero(); n_orient];
    let contrast = (0..freqs.len())
        .map(|i| {
            for (c, m) in column.iter_mut().zip(&members) {
                *c = m[i];
            }
            pairwise_sum(&column) / n
        })
        .collect();
    let meta = SpectrumMeta {
        kind: "ensemble".into(),
        seed: Some(sweep.seed),
        n_orient,
        sign_flipped: false,
        parameters: parameters_record(params, env, diss, sweep, None),
    };
    Ok(OdmrSpectrum { freqs, contrast, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(f_minus: f64, f_plus: f64, w_minus: f64, w_plus: f64) -> Transitions<f64> {
        Transitions { f_minus, f_plus, w_minus, w_plus }
    }

    fn no_diss(rabi: f64) -> DissipatorSpec<f64> {
        DissipatorSpec { gamma_dephase: 0.0, gamma_repol: 0.0, rabi, contrast_scale: 0.02 }
    }

    #[test]
    fn rwa_on_resonance_and_undriven() {
        let l = lines(2861.6, 2879.2, 0.5, 0.5);
        let h = rwa_hamiltonian(&l, 2879.2, 3.0);
        assert_eq!(h.m[SLOT_PLUS][SLOT_PLUS].re, 0.0);
        assert!((h.m[SLOT_PLUS][MS0].re - 1.5).abs() < 1e-15);
        let h0 = rwa_hamiltonian(&l, 2870.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(h0.m[i][j].norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn rwa_symmetric_detunings() {
        let l = lines(2870.0 - 28.0, 2870.0 + 28.0, 0.5, 0.5);
        let h = rwa_hamiltonian(&l, 2870.0, 1.0);
        assert!((h.m[SLOT_PLUS][SLOT_PLUS].re - 28.0).abs() < 1e-12);
        assert!((h.m[SLOT_MINUS][SLOT_MINUS].re + 28.0).abs() < 1e-12);
    }

    #[test]
    fn polarized_state_is_dark_without_drive() {
        let diss = DissipatorSpec { rabi: 0.0, ..DissipatorSpec::default() };
        let h = rwa_hamiltonian(&lines(2860.0, 2880.0, 0.5, 0.5), 2870.0, 0.0);
        let rho = lindblad_evolve(&DensityMatrix::polarized(), &h, &diss, 0.5, 1.0).unwrap();
        assert_eq!(rho, DensityMatrix::polarized());
    }

    #[test]
    fn repolarization_rate_equation() {
        let diss = DissipatorSpec { gamma_dephase: 0.0, gamma_repol: 1.0, rabi: 0.0, contrast_scale: 0.02 };
        let h = rwa_hamiltonian(&lines(2860.0, 2880.0, 0.5, 0.5), 2870.0, 0.0);
        for t in [0.1, 0.5, 2.0] {
            let rho = lindblad_evolve(&DensityMatrix::pure(SLOT_PLUS), &h, &diss, t, 1.0).unwrap();
            let expect = 1.0 - (-t * 1.0f64).exp();
            assert!((rho.ground_population() - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn resonant_rabi_oscillation() {
        let rabi = 2.0;
        let l = lines(2860.0, 2880.0, 0.0, 0.5);
        let h = rwa_hamiltonian(&l, 2880.0, rabi);
        for t in [0.05, 0.125, 0.2, 0.5] {
            let rho = lindblad_evolve(&DensityMatrix::polarized(), &h, &no_diss(rabi), t, 1.0).unwrap();
            let expect = (std::f64::consts::PI * rabi * t).cos().powi(2);
            assert!((rho.ground_population() - expect).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn rejects_non_dividing_step() {
        let h = CMat3::<f64>::zeros();
        let err = lindblad_evolve(&DensityMatrix::polarized(), &h, &no_diss(0.0), 0.0005, 2.0);
        assert!(err.is_ok(), "one step of slack is allowed");
        assert!(lindblad_evolve(&DensityMatrix::polarized(), &h, &no_diss(0.0), 1.0, -1.0).is_err());
    }

    #[test]
    fn large_steps_report_instability() {
        let diss = DissipatorSpec { gamma_dephase: 5000.0, gamma_repol: 1000.0, rabi: 10.0, contrast_scale: 0.02 };
        let h = rwa_hamiltonian(&lines(2860.0, 2880.0, 0.5, 0.5), 2870.0, 10.0);
        let err = lindblad_evolve(&DensityMatrix::polarized(), &h, &diss, 0.5, 10.0).unwrap_err();
        assert!(matches!(err, SimError::Unstable { .. }), "{err}");
        assert!(err.to_string().contains("reduce dt"));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMat3::<f64>::identity()).is_err());
        assert!(DensityMatrix::new(CMat3::diag_real([0.5, 0.7, -0.2])).is_err());
        assert!(DensityMatrix::new(CMat3::diag_real([0.2, 0.7, 0.1])).is_ok());
    }

    #[test]
    fn orientation_sampling_is_reproducible() {
        let a: Orientation<f64> = sample_orientation(&mut orientation_rng(7, 3));
        let b: Orientation<f64> = sample_orientation(&mut orientation_rng(7, 3));
        assert_eq!(a, b);
        let c: Orientation<f64> = sample_orientation(&mut orientation_rng(7, 4));
        assert_ne!(a, c);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn sweep_axis_endpoints() {
        let s = SweepConfig::<f64>::with_seed(1);
        let f = s.freqs();
        assert_eq!(f.len(), 251);
        assert_eq!(f[0], 2800.0);
        assert_eq!(f[250], 2925.0);
        assert!((f[1] - 2800.5).abs() < 1e-12);
        let bad = SweepConfig { dt: 20.0, ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn undriven_spectrum_is_flat_zero() {
        let diss = DissipatorSpec { rabi: 0.0, ..DissipatorSpec::default() };
        let sweep = SweepConfig { n_points: 21, ..SweepConfig::with_seed(0) };
        let s = simulate_single_spectrum(
            &NvParams::default(),
            &FieldEnvironment::default(),
            &Orientation::aligned(),
            &diss,
            &sweep,
        )
        .unwrap();
        assert!(s.contrast.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn polarity_normalization_flips_dips() {
        let f = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let s = OdmrSpectrum::new(f.clone(), vec![0.0, 0.0, -2.0, 0.0, 0.0], SpectrumMeta::default())
            .unwrap()
            .normalize_polarity();
        assert!(s.meta.sign_flipped);
        assert_eq!(s.contrast[2], 2.0);
        let p = OdmrSpectrum::new(f, vec![0.0, 0.0, 2.0, 0.0, 0.0], SpectrumMeta::default())
            .unwrap()
            .normalize_polarity();
        assert!(!p.meta.sign_flipped);
    }

    #[test]
    fn spectrum_rejects_bad_axis() {
        assert!(OdmrSpectrum::new(vec![1.0, 1.0], vec![0.0, 0.0], SpectrumMeta::default()).is_err());
        assert!(OdmrSpectrum::new(vec![1.0, 2.0], vec![0.0], SpectrumMeta::default()).is_err());
    }
}
