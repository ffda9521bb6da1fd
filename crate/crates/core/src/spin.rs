//! NV⁻ ground-state spin Hamiltonian.
//!
//! Units: frequencies in MHz, fields in mT, temperatures in K, angles in rad.
//! Spin matrices use the `{|+1⟩, |0⟩, |−1⟩}` basis with ħ = 1.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{hermitian_eigen, CMat3, CMatrix};
use crate::scalar::Real;

/// Index of `m_s = 0` in the spin basis.
pub const MS0: usize = 1;

/// Validity window of the linear ZFS temperature model, in K.
pub const ZFS_WINDOW_K: (f64, f64) = (250.0, 400.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("temperature {t} K outside the linear ZFS window [{lo}, {hi}] K")]
    TemperatureOutOfWindow { t: f64, lo: f64, hi: f64 },
    #[error("lattice separation r must be positive (got {0})")]
    NonPositiveSeparation(f64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Spin-1 angular momentum matrices.
#[derive(Debug, Clone, Copy)]
pub struct SpinOperators<T> {
    pub sx: CMat3<T>,
    pub sy: CMat3<T>,
    pub sz: CMat3<T>,
}

pub fn build_spin_operators<T: Real>() -> SpinOperators<T> {
    let r = T::one() / T::lit(2.0).sqrt();
    let z = Complex::new(T::zero(), T::zero());
    let re = |v: T| Complex::new(v, T::zero());
    let im = |v: T| Complex::new(T::zero(), v);
    let sx = CMat3 { m: [[z, re(r), z], [re(r), z, re(r)], [z, re(r), z]] };
    let sy = CMat3 { m: [[z, im(-r), z], [im(r), z, im(-r)], [z, im(r), z]] };
    let sz = CMat3::diag_real([T::one(), T::zero(), -T::one()]);
    SpinOperators { sx, sy, sz }
}

/// Physical constants of an NV population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct NvParams<T> {
    /// Zero-field splitting at `T0`, MHz.
    #[serde(rename = "D0")]
    pub d0: T,
    /// Reference temperature, K.
    #[serde(rename = "T0")]
    pub t0: T,
    /// Linear ZFS slope, MHz/K.
    #[serde(rename = "dD_dT")]
    pub dd_dt: T,
    /// Transverse strain splitting, MHz.
    #[serde(rename = "E_strain")]
    pub e_strain: T,
    /// Electron gyromagnetic ratio, MHz/mT.
    pub gamma_e: T,
    /// Hyperfine tensor, MHz.
    #[serde(rename = "hyperfine_A", default)]
    pub hyperfine_a: Option<[[T; 3]; 3]>,
    #[serde(default)]
    pub include_hyperfine: bool,
}

impl<T: Real> Default for NvParams<T> {
    fn default() -> Self {
        Self {
            d0: T::lit(2870.4),
            t0: T::lit(295.0),
            dd_dt: T::lit(-0.07447),
            e_strain: T::lit(8.8),
            gamma_e: T::lit(28.0),
            hyperfine_a: None,
            include_hyperfine: false,
        }
    }
}

impl<T: Real> NvParams<T> {
    /// Axially symmetric hyperfine tensor diag(A⊥, A⊥, A∥).
    pub fn axial_hyperfine(a_par: T, a_perp: T) -> [[T; 3]; 3] {
        let z = T::zero();
        [[a_perp, z, z], [z, a_perp, z], [z, z, a_par]]
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        let all = [self.d0, self.t0, self.dd_dt, self.e_strain, self.gamma_e];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SpinError::Invalid("non-finite NV parameter".into()));
        }
        if !(self.d0 > T::zero()) {
            return Err(SpinError::Invalid("D0 must be positive".into()));
        }
        if !(self.gamma_e > T::zero()) {
            return Err(SpinError::Invalid("gamma_e must be positive".into()));
        }
        if self.e_strain < T::zero() {
            return Err(SpinError::Invalid("E_strain must be non-negative".into()));
        }
        if self.include_hyperfine {
            let a = self.hyperfine_a.ok_or_else(|| {
                SpinError::Invalid("include_hyperfine set but hyperfine_A missing".into())
            })?;
            let tol = T::lit(1e-12);
            for i in 0..3 {
                for j in 0..3 {
                    let scale = T::one().max(a[i][j].abs());
                    if (a[i][j] - a[j][i]).abs() > tol * scale {
                        return Err(SpinError::Invalid("hyperfine_A must be symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Direction of the lab field in the NV frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Orientation<T> {
    pub theta: T,
    pub phi: T,
}

impl<T: Real> Orientation<T> {
    pub fn new(theta: T, phi: T) -> Result<Self, SpinError> {
        let o = Self { theta, phi };
        o.validate()?;
        Ok(o)
    }

    pub fn aligned() -> Self {
        Self { theta: T::zero(), phi: T::zero() }
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if !(self.theta >= T::zero() && self.theta <= T::PI()) {
            return Err(SpinError::Invalid(format!("theta {} outside [0, π]", self.theta)));
        }
        if !(self.phi >= T::zero() && self.phi < T::TAU()) {
            return Err(SpinError::Invalid(format!("phi {} outside [0, 2π)", self.phi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct FieldEnvironment<T> {
    /// Field magnitude, mT.
    #[serde(rename = "B0")]
    pub b0: T,
    /// Temperature, K.
    pub temperature: T,
}

impl<T: Real> Default for FieldEnvironment<T> {
    fn default() -> Self {
        Self { b0: T::zero(), temperature: T::lit(295.0) }
    }
}

impl<T: Real> FieldEnvironment<T> {
    pub fn validate(&self) -> Result<(), SpinError> {
        if !(self.b0 >= T::zero()) {
            return Err(SpinError::Invalid("B0 must be non-negative".into()));
        }
        if !(self.temperature > T::zero()) {
            return Err(SpinError::Invalid("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Dipolar lattice model of the ZFS used for qualitative thermal-expansion
/// studies; only ratios of its output are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct LatticeModel<T> {
    /// Spin-spin constant times squared electron density.
    pub prefactor: T,
    pub r: T,
    pub z: T,
}

pub fn zfs_at_temperature<T: Real>(params: &NvParams<T>, temperature: T) -> Result<T, SpinError> {
    let (lo, hi) = ZFS_WINDOW_K;
    if !(temperature >= T::lit(lo) && temperature <= T::lit(hi)) {
        return Err(SpinError::TemperatureOutOfWindow { t: temperature.as_f64(), lo, hi });
    }
    Ok(params.d0 + params.dd_dt * (temperature - params.t0))
}

pub fn relative_zfs_lattice<T: Real>(model: &LatticeModel<T>) -> Result<T, SpinError> {
    let r = model.r;
    if !(r > T::zero()) {
        return Err(SpinError::NonPositiveSeparation(r.as_f64()));
    }
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    Ok(model.prefactor * (T::one() / r3 - T::lit(3.0) * model.z * model.z / r5))
}

/// Electron-only Hamiltonian or its hyperfine (electron ⊗ ¹⁴N) extension.
#[derive(Debug, Clone, PartialEq)]
pub enum NvHamiltonian<T> {
    Electron(CMat3<T>),
    /// 9×9, electron index major: `|m_s⟩ ⊗ |m_I⟩`.
    Hyperfine(CMatrix<T>),
}

impl<T: Real> NvHamiltonian<T> {
    pub fn to_dynamic(&self) -> CMatrix<T> {
        match self {
            NvHamiltonian::Electron(h) => h.to_dynamic(),
            NvHamiltonian::Hyperfine(h) => h.clone(),
        }
    }
}

/// Electron part: D(T)(Sz² − 2/3) + E(Sx² − Sy²) + γB(sinθ(cosφ Sx + sinφ Sy) + cosθ Sz).
pub fn electron_hamiltonian<T: Real>(
    params: &NvParams<T>,
    env: &FieldEnvironment<T>,
    orient: &Orientation<T>,
    ops: &SpinOperators<T>,
) -> Result<CMat3<T>, SpinError> {
    let d = zfs_at_temperature(params, env.temperature)?;
    let SpinOperators { sx, sy, sz } = *ops;
    let zfs = (sz * sz - CMat3::identity().scale(T::lit(2.0 / 3.0))).scale(d);
    let strain = (sx * sx - sy * sy).scale(params.e_strain);
    let gb = params.gamma_e * env.b0;
    let (st, ct) = orient.theta.sin_cos();
    let (sp, cp) = orient.phi.sin_cos();
    let zeeman = (sx.scale(st * cp) + sy.scale(st * sp) + sz.scale(ct)).scale(gb);
    Ok(zfs + strain + zeeman)
}

pub fn build_hamiltonian<T: Real>(
    params: &NvParams<T>,
    env: &FieldEnvironment<T>,
    orient: &Orientation<T>,
) -> Result<NvHamiltonian<T>, SpinError> {
    params.validate()?;
    env.validate()?;
    orient.validate()?;
    let ops = build_spin_operators::<T>();
    let he = electron_hamiltonian(params, env, orient, &ops)?;
    if !params.include_hyperfine {
        return Ok(NvHamiltonian::Electron(he));
    }
    let a = params.hyperfine_a.expect("validated above");
    let s = [ops.sx.to_dynamic(), ops.sy.to_dynamic(), ops.sz.to_dynamic()];
    // ¹⁴N is also spin-1, so the same matrices serve as I.
    let id3 = CMatrix::identity(3);
    let mut h = CMatrix::kron(&he.to_dynamic(), &id3);
    for (i, si) in s.iter().enumerate() {
        for (j, ij) in s.iter().enumerate() {
            if a[i][j] != T::zero() {
                h.add_assign_scaled(&CMatrix::kron(si, ij), a[i][j]);
            }
        }
    }
    Ok(NvHamiltonian::Hyperfine(h))
}

/// The two microwave transitions out of the `m_s ≈ 0` sensing state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Transitions<T> {
    pub f_minus: T,
    pub f_plus: T,
    pub w_minus: T,
    pub w_plus: T,
}

/// Diagonalizes the electron Hamiltonian and returns the transitions from
/// the eigenstate with the largest `|0⟩` overlap. Ties go to the lowest
/// eigenvalue. Drive weights are the transverse-polarization average
/// `(|⟨e|Sx|g⟩|² + |⟨e|Sy|g⟩|²)/2`, which sums to 1 at zero field.
pub fn transition_frequencies<T: Real>(h: &CMat3<T>, ops: &SpinOperators<T>) -> Transitions<T> {
    let eig = hermitian_eigen(&h.to_dynamic());
    let overlap = |k: usize| eig.vectors[k][MS0].norm_sqr();
    let tie = T::lit(1e-12);
    let mut g = 0;
    for k in 1..3 {
        if overlap(k) > overlap(g) + tie {
            g = k;
        }
    }
    let drive = [ops.sx.to_dynamic(), ops.sy.to_dynamic()];
    let mut lines: Vec<(T, T)> = (0..3)
        .filter(|&k| k != g)
        .map(|k| {
            let f = (eig.values[k] - eig.values[g]).abs();
            (f, drive_weight(&drive, &eig.vectors[k], &eig.vectors[g]))
        })
        .collect();
    lines.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Transitions { f_minus: lines[0].0, f_plus: lines[1].0, w_minus: lines[0].1, w_plus: lines[1].1 }
}

fn drive_weight<T: Real>(drive: &[CMatrix<T>; 2], e: &[Complex<T>], g: &[Complex<T>]) -> T {
    (drive[0].sandwich(e, g).norm_sqr() + drive[1].sandwich(e, g).norm_sqr()) * T::lit(0.5)
}

/// Per-nuclear-manifold transitions of the 9×9 hyperfine Hamiltonian.
///
/// The three eigenstates with the largest `m_s = 0` character are the
/// ground states; for each, the two eigenstates most strongly coupled by
/// the transverse drive `(Sx, Sy) ⊗ 1` are its lower and upper lines.
pub fn hyperfine_transitions<T: Real>(h: &CMatrix<T>) -> Vec<Transitions<T>> {
    assert_eq!(h.dim(), 9, "hyperfine Hamiltonian must be 9x9");
    let ops = build_spin_operators::<T>();
    let id3 = CMatrix::identity(3);
    let drive = [
        CMatrix::kron(&ops.sx.to_dynamic(), &id3),
        CMatrix::kron(&ops.sy.to_dynamic(), &id3),
    ];
    let eig = hermitian_eigen(h);
    let ms0_weight = |k: usize| -> T {
        (0..3).map(|mi| eig.vectors[k][MS0 * 3 + mi].norm_sqr()).sum()
    };
    let mut by_weight: Vec<usize> = (0..9).collect();
    by_weight.sort_by(|&a, &b| {
        ms0_weight(b)
            .partial_cmp(&ms0_weight(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let grounds: Vec<usize> = {
        let mut g = by_weight[..3].to_vec();
        g.sort();
        g
    };
    grounds
        .iter()
        .map(|&g| {
            let mut cands: Vec<(T, T)> = (0..9)
                .filter(|k| !grounds.contains(k))
                .map(|k| {
                    let f = (eig.values[k] - eig.values[g]).abs();
                    (f, drive_weight(&drive, &eig.vectors[k], &eig.vectors[g]))
                })
                .collect();
            cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            let mut top = [cands[0], cands[1]];
            top.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            Transitions { f_minus: top[0].0, f_plus: top[1].0, w_minus: top[0].1, w_plus: top[1].1 }
        })
        .collect()
}

/// Transition lines for any Hamiltonian variant; one entry for the
/// electron-only case, three for the hyperfine case.
pub fn sensing_lines<T: Real>(h: &NvHamiltonian<T>) -> Vec<Transitions<T>> {
    match h {
        NvHamiltonian::Electron(he) => vec![transition_frequencies(he, &build_spin_operators())],
        NvHamiltonian::Hyperfine(h9) => hyperfine_transitions(h9),
    }
}
