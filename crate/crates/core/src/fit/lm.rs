//! Damped Gauss-Newton (Levenberg-Marquardt) least squares.
//!
//! The cost is the residual sum of squares. Only steps that lower the cost
//! are accepted, so the accepted cost sequence is non-increasing.

use thiserror::Error;

use crate::linalg::{cholesky, cholesky_solve, spd_inverse};
use crate::scalar::Real;

pub trait LeastSquaresProblem<T: Real> {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Fills `out` with residuals at `params`.
    fn residuals(&self, params: &[T], out: &mut [T]);
    /// Whether `params` lies in the model domain.
    fn feasible(&self, _params: &[T]) -> bool {
        true
    }
    /// Typical magnitude of each parameter; sets finite-difference steps.
    fn scale(&self, params: &[T]) -> Vec<T> {
        params.iter().map(|p| p.abs().max(T::one())).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig<T> {
    pub max_iterations: usize,
    /// Converged once an accepted step lowers the cost by less than this
    /// fraction.
    pub rel_cost_tol: T,
    /// Relative central-difference step. Defaults to `ε^{1/3}`.
    pub fd_step: T,
}

impl<T: Real> Default for LmConfig<T> {
    fn default() -> Self {
        Self { max_iterations: 500, rel_cost_tol: T::lit(1e-10), fd_step: T::epsilon().cbrt() }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport<T> {
    pub params: Vec<T>,
    pub cost: T,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<T>,
    /// Jacobian at the solution, row-major `n_residuals × n_params`.
    pub jacobian: Vec<T>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("initial parameters are infeasible or give a non-finite cost")]
    BadStart,
    #[error("no convergence after {iterations} iterations (best cost {cost:e})")]
    NotConverged { params: Vec<f64>, cost: f64, iterations: usize },
    #[error("normal matrix JᵀJ is singular; rescale parameters or improve the initial guess")]
    Singular,
}

impl<T: Real> LmReport<T> {
    /// `s²·(JᵀJ)⁻¹` with `s² = cost/(n − p)`. Inverted after Jacobi scaling.
    pub fn covariance(&self, n_residuals: usize) -> Result<Vec<T>, LmError> {
        let p = self.params.len();
        let jtj = normal_matrix(&self.jacobian, n_residuals, p);
        let d: Vec<T> = (0..p).map(|i| jtj[i * p + i].sqrt()).collect();
        if d.iter().any(|v| !(*v > T::zero())) {
            return Err(LmError::Singular);
        }
        let mut scaled = jtj.clone();
        for i in 0..p {
            for j in 0..p {
                scaled[i * p + j] = jtj[i * p + j] / (d[i] * d[j]);
            }
        }
        let inv = spd_inverse(&scaled, p).ok_or(LmError::Singular)?;
        let dof = n_residuals.saturating_sub(p).max(1);
        let s2 = self.cost / T::from_usize_lossy(dof);
        let mut cov = vec![T::zero(); p * p];
        for i in 0..p {
            for j in 0..p {
                cov[i * p + j] = s2 * inv[i * p + j] / (d[i] * d[j]);
            }
        }
        Ok(cov)
    }
}

fn rss<T: Real>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

fn normal_matrix<T: Real>(jac: &[T], m: usize, p: usize) -> Vec<T> {
    let mut a = vec![T::zero(); p * p];
    for row in 0..m {
        let jr = &jac[row * p..(row + 1) * p];
        for i in 0..p {
            if jr[i] == T::zero() {
                continue;
            }
            for j in i..p {
                a[i * p + j] = a[i * p + j] + jr[i] * jr[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a[i * p + j] = a[j * p + i];
        }
    }
    a
}

fn jacobian<T: Real, P: LeastSquaresProblem<T>>(
    problem: &P,
    params: &[T],
    step: T,
    r0: &[T],
) -> Vec<T> {
    let (m, p) = (problem.n_residuals(), problem.n_params());
    let scale = problem.scale(params);
    let mut jac = vec![T::zero(); m * p];
    let mut probe = params.to_vec();
    let mut rp = vec![T::zero(); m];
    let mut rm = vec![T::zero(); m];
    for j in 0..p {
        let h = step * scale[j];
        probe[j] = params[j] + h;
        let up_ok = problem.feasible(&probe);
        if up_ok {
            problem.residuals(&probe, &mut rp);
        }
        probe[j] = params[j] - h;
        let down_ok = problem.feasible(&probe);
        if down_ok {
            problem.residuals(&probe, &mut rm);
        }
        probe[j] = params[j];
        for i in 0..m {
            jac[i * p + j] = match (up_ok, down_ok) {
                (true, true) => (rp[i] - rm[i]) / (h + h),
                (true, false) => (rp[i] - r0[i]) / h,
                (false, true) => (r0[i] - rm[i]) / h,
                (false, false) => T::zero(),
            };
        }
    }
    jac
}

pub fn levenberg_marquardt<T: Real, P: LeastSquaresProblem<T>>(
    problem: &P,
    start: &[T],
    cfg: &LmConfig<T>,
) -> Result<LmReport<T>, LmError> {
    let (m, p) = (problem.n_residuals(), problem.n_params());
    assert_eq!(start.len(), p, "parameter count mismatch");
    if !problem.feasible(start) {
        return Err(LmError::BadStart);
    }
    let mut params = start.to_vec();
    let mut r = vec![T::zero(); m];
    problem.residuals(&params, &mut r);
    let mut cost = rss(&r);
    if !cost.is_finite() {
        return Err(LmError::BadStart);
    }
    let mut history = vec![cost];
    let mut damping = T::lit(1e-3);
    let mut trial = vec![T::zero(); p];
    let mut r_trial = vec![T::zero(); m];

    for iteration in 1..=cfg.max_iterations {
        let jac = jacobian(problem, &params, cfg.fd_step, &r);
        if cost == T::zero() {
            return Ok(LmReport { params, cost, iterations: iteration, cost_history: history, jacobian: jac });
        }
        let a = normal_matrix(&jac, m, p);
        let mut g = vec![T::zero(); p];
        for row in 0..m {
            for j in 0..p {
                g[j] = g[j] - jac[row * p + j] * r[row];
            }
        }
        let diag_floor = (0..p).fold(T::zero(), |acc, i| acc.max(a[i * p + i])) * T::lit(1e-15);
        let mut accepted = false;
        while damping < T::lit(1e16) {
            let mut damped = a.clone();
            for i in 0..p {
                damped[i * p + i] = damped[i * p + i] + damping * a[i * p + i].max(diag_floor);
            }
            if let Some(l) = cholesky(&damped, p) {
                let delta = cholesky_solve(&l, p, &g);
                for j in 0..p {
                    trial[j] = params[j] + delta[j];
                }
                if problem.feasible(&trial) {
                    problem.residuals(&trial, &mut r_trial);
                    let c = rss(&r_trial);
                    if c.is_finite() && c < cost {
                        let gain = (cost - c) / cost;
                        params.copy_from_slice(&trial);
                        std::mem::swap(&mut r, &mut r_trial);
                        cost = c;
                        history.push(cost);
                        damping = (damping / T::lit(3.0)).max(T::lit(1e-12));
                        accepted = true;
                        if gain < cfg.rel_cost_tol {
                            let jac = jacobian(problem, &params, cfg.fd_step, &r);
                            return Ok(LmReport {
                                params,
                                cost,
                                iterations: iteration,
                                cost_history: history,
                                jacobian: jac,
                            });
                        }
                        break;
                    }
                }
            }
            damping = damping * T::lit(4.0);
        }
        if !accepted {
            // No descent direction left at machine precision: a minimum.
            return Ok(LmReport { params, cost, iterations: iteration, cost_history: history, jacobian: jac });
        }
    }
    Err(LmError::NotConverged {
        params: params.iter().map(|v| v.as_f64()).collect(),
        cost: cost.as_f64(),
        iterations: cfg.max_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exponential {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem<f64> for Exponential {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for ((o, x), y) in out.iter_mut().zip(&self.x).zip(&self.y) {
                *o = p[0] * (-p[1] * x).exp() - y;
            }
        }
    }

    #[test]
    fn recovers_exponential_decay() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y = x.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let prob = Exponential { x, y };
        let rep = levenberg_marquardt(&prob, &[1.0, 0.1], &LmConfig::default()).unwrap();
        assert!((rep.params[0] - 3.0).abs() < 1e-9);
        assert!((rep.params[1] - 0.7).abs() < 1e-9);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iteration_cap_reports_best_so_far() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y = x.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let prob = Exponential { x, y };
        let cfg = LmConfig { max_iterations: 1, ..LmConfig::default() };
        match levenberg_marquardt(&prob, &[1.0, 0.1], &cfg) {
            Err(LmError::NotConverged { params, cost, .. }) => {
                assert_eq!(params.len(), 2);
                assert!(cost.is_finite());
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_model_has_singular_covariance() {
        struct Redundant;
        impl LeastSquaresProblem<f64> for Redundant {
            fn n_params(&self) -> usize {
                2
            }
            fn n_residuals(&self) -> usize {
                5
            }
            fn residuals(&self, p: &[f64], out: &mut [f64]) {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = p[0] + p[1] - i as f64;
                }
            }
        }
        let rep = levenberg_marquardt(&Redundant, &[0.0, 0.0], &LmConfig::default()).unwrap();
        assert_eq!(rep.covariance(5), Err(LmError::Singular));
    }
}
