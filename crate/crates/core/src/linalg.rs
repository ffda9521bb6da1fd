//! Small dense linear algebra: fixed 3×3 complex matrices for the spin
//! problem, a dynamic complex matrix for the hyperfine space, a Hermitian
//! Jacobi eigensolver, and Cholesky routines for the least-squares normal
//! equations.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex;

use crate::scalar::Real;

/// Dense 3×3 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat3<T> {
    pub m: [[Complex<T>; 3]; 3],
}

impl<T: Real> CMat3<T> {
    pub fn zeros() -> Self {
        Self { m: [[Complex::new(T::zero(), T::zero()); 3]; 3] }
    }

    pub fn identity() -> Self {
        Self::diag_real([T::one(); 3])
    }

    pub fn diag_real(d: [T; 3]) -> Self {
        let mut out = Self::zeros();
        for (i, &v) in d.iter().enumerate() {
            out.m[i][i] = Complex::new(v, T::zero());
        }
        out
    }

    pub fn from_real(rows: [[T; 3]; 3]) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = Complex::new(rows[i][j], T::zero());
            }
        }
        out
    }

    /// Outer product |a⟩⟨b| of two basis states.
    pub fn ket_bra(a: usize, b: usize) -> Self {
        let mut out = Self::zeros();
        out.m[a][b] = Complex::new(T::one(), T::zero());
        out
    }

    pub fn dagger(&self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[j][i].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        self.scale_c(Complex::new(s, T::zero()))
    }

    pub fn scale_c(&self, s: Complex<T>) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for v in row.iter_mut() {
                *v = *v * s;
            }
        }
        out
    }

    pub fn trace(&self) -> Complex<T> {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        *self * *other + *other * *self
    }

    /// Largest elementwise modulus.
    pub fn max_abs(&self) -> T {
        self.m
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |acc, v| acc.max(v.norm()))
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermitian_defect(&self) -> T {
        (*self - self.dagger()).max_abs()
    }

    /// (A + A†)/2.
    pub fn hermitian_part(&self) -> Self {
        (*self + self.dagger()).scale(T::lit(0.5))
    }

    pub fn to_dynamic(&self) -> CMatrix<T> {
        let mut out = CMatrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] = self.m[i][j];
            }
        }
        out
    }
}

impl<T: Real> Add for CMat3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[i][j] + rhs.m[i][j];
            }
        }
        out
    }
}

impl<T: Real> Sub for CMat3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[i][j] - rhs.m[i][j];
            }
        }
        out
    }
}

impl<T: Real> Neg for CMat3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Real> Mul for CMat3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..3 {
                    acc = acc + self.m[i][k] * rhs.m[k][j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }
}

/// Dense square complex matrix of runtime dimension, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Complex::new(T::zero(), T::zero()); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n);
        for i in 0..n {
            out[(i, i)] = Complex::new(T::one(), T::zero());
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Kronecker product `a ⊗ b`.
    pub fn kron(a: &CMatrix<T>, b: &CMatrix<T>) -> Self {
        let (na, nb) = (a.n, b.n);
        let mut out = Self::zeros(na * nb);
        for i in 0..na {
            for j in 0..na {
                let aij = a[(i, j)];
                for k in 0..nb {
                    for l in 0..nb {
                        out[(i * nb + k, j * nb + l)] = aij * b[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn dagger(&self) -> Self {
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(i, j)] = self[(j, i)].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = *v * s;
        }
        out
    }

    pub fn add_assign_scaled(&mut self, other: &CMatrix<T>, s: T) {
        assert_eq!(self.n, other.n, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b * s;
        }
    }

    pub fn matmul(&self, other: &CMatrix<T>) -> Self {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a.norm_sqr() == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.n).fold(Complex::new(T::zero(), T::zero()), |acc, i| acc + self[(i, i)])
    }

    pub fn hermitian_defect(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `⟨u|self|v⟩` for column vectors `u`, `v`.
    pub fn sandwich(&self, u: &[Complex<T>], v: &[Complex<T>]) -> Complex<T> {
        let mut acc = Complex::new(T::zero(), T::zero());
        for i in 0..self.n {
            let mut row = Complex::new(T::zero(), T::zero());
            for j in 0..self.n {
                row = row + self[(i, j)] * v[j];
            }
            acc = acc + u[i].conj() * row;
        }
        acc
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.n + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.n + j]
    }
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen<T> {
    /// Ascending eigenvalues.
    pub values: Vec<T>,
    /// `vectors[k]` is the normalized eigenvector for `values[k]`.
    pub vectors: Vec<Vec<Complex<T>>>,
}

/// Cyclic complex Jacobi eigensolver for Hermitian matrices.
///
/// Each rotation first removes the phase of the pivot element and then
/// applies a real Jacobi rotation, so the accumulated transform stays
/// unitary. Intended for the small (n ≤ 16) matrices of this crate.
pub fn hermitian_eigen<T: Real>(a: &CMatrix<T>) -> HermitianEigen<T> {
    let n = a.dim();
    let zero = Complex::new(T::zero(), T::zero());
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] = Complex::new(m[(i, i)].re, T::zero());
    }
    let mut v = CMatrix::identity(n);
    let norm: T = (0..n * n).fold(T::zero(), |acc, k| acc + m.data[k].norm_sqr()).sqrt();
    let tol = T::epsilon() * T::epsilon() * (norm * norm).max(T::min_positive_value());

    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .fold(T::zero(), |acc, (i, j)| acc + m[(i, j)].norm_sqr());
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = m[(p, q)];
                let babs = b.norm();
                if babs == T::zero() {
                    continue;
                }
                let phase = b / babs; // e^{iφ}
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (T::lit(2.0) * babs);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                // U restricted to (p, q): columns are the rotated basis vectors.
                let u_pp = Complex::new(c, T::zero());
                let u_pq = Complex::new(s, T::zero());
                let u_qp = phase.conj() * (-s);
                let u_qq = phase.conj() * c;

                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = akp * u_pp + akq * u_qp;
                    m[(k, q)] = akp * u_pq + akq * u_qq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = u_pp.conj() * apk + u_qp.conj() * aqk;
                    m[(q, k)] = u_pq.conj() * apk + u_qq.conj() * aqk;
                }
                m[(p, q)] = zero;
                m[(q, p)] = zero;
                m[(p, p)] = Complex::new(m[(p, p)].re, T::zero());
                m[(q, q)] = Complex::new(m[(q, q)].re, T::zero());

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * u_pp + vkq * u_qp;
                    v[(k, q)] = vkp * u_pq + vkq * u_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .re
            .partial_cmp(&m[(j, j)].re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&k| m[(k, k)].re).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| v[(i, k)]).collect())
        .collect();
    HermitianEigen { values, vectors }
}

/// Eigenvalues (ascending) of a real symmetric row-major matrix.
pub fn symmetric_eigenvalues<T: Real>(a: &[T], n: usize) -> Vec<T> {
    assert_eq!(a.len(), n * n, "matrix shape mismatch");
    let mut m = CMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = Complex::new(a[i * n + j], T::zero());
        }
    }
    hermitian_eigen(&m).values
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n, "matrix shape mismatch");
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum = sum - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > T::zero()) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve<T: Real>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum = sum - l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix, or `None` if singular.
pub fn spd_inverse<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let l = cholesky(a, n)?;
    let mut inv = vec![T::zero(); n * n];
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[j] = T::one();
        let col = cholesky_solve(&l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    // symmetrize round-off
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (inv[i * n + j] + inv[j * n + i]) * T::lit(0.5);
            inv[i * n + j] = avg;
            inv[j * n + i] = avg;
        }
    }
    Some(inv)
}
