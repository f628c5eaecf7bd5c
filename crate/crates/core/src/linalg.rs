//! Small dense complex linear algebra.
//!
//! Everything here works on matrices of at most a few dozen rows: closed-loop
//! samples, Gram matrices and return differences. Row-major storage, no
//! blocking, no BLAS.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Convergence target for the off-diagonal Frobenius norm in Jacobi sweeps.
pub const JACOBI_OFF_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative asymmetry accepted by [`hermitian_eig_max`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Pivots below this fraction of the matrix norm are treated as singular.
pub const PIVOT_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("singular matrix: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    Singular { pivot: f64, threshold: f64 },
}

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidInput(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self, LinalgError> {
        Self::from_vec(rows, cols, data.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn scalar(z: Complex64) -> Self {
        Self { rows: 1, cols: 1, data: vec![z] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self += s * other`, shapes must agree.
    pub fn axpy(&mut self, s: f64, other: &CMat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols, "matvec length mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Sub-block with the given row and column index sets.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row(&self, i: usize) -> Vec<Complex64> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, " ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, " {:+.6e}{:+.6e}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Mul for &CMat {
    type Output = CMat;
    fn mul(self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Add for &CMat {
    type Output = CMat;
    fn add(self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMat {
    type Output = CMat;
    fn sub(self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Maximum singular value with its singular vectors.
#[derive(Debug, Clone)]
pub struct SvdTriplet {
    pub sigma: f64,
    pub u: Vec<Complex64>,
    pub v: Vec<Complex64>,
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Rotate `v` so its first non-negligible component is real and positive.
fn phase_normalize(v: &mut [Complex64]) {
    let scale = vec_norm(v);
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-12 * scale).copied() {
        let rot = first.conj() / first.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

fn lexicographic_cmp(a: &[Complex64], b: &[Complex64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let ord = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    std::cmp::Ordering::Equal
}

/// Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the matching eigenvectors (as columns, phase
/// normalized), unsorted.
pub fn hermitian_eig(m: &CMat) -> Result<(Vec<f64>, Vec<Vec<Complex64>>), LinalgError> {
    if !m.is_square() || m.rows() == 0 {
        return Err(LinalgError::InvalidInput(format!(
            "expected nonempty square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(LinalgError::InvalidInput("non-finite entry".into()));
    }
    let n = m.rows();
    let scale = m.frobenius_norm();
    let asym = (m - &m.adjoint()).frobenius_norm();
    if asym > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(LinalgError::NotHermitian(asym / scale));
    }

    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
    }
    let mut w = CMat::identity(n);
    // Rounding keeps the off-diagonal mass around eps*|M|; never ask for less.
    let target = JACOBI_OFF_TOL.max(4.0 * f64::EPSILON * scale);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let beta = a[(p, q)];
                let mag = beta.norm();
                if mag <= f64::MIN_POSITIVE {
                    continue;
                }
                let phase = beta / mag;
                let alpha = a[(p, p)].re;
                let delta = a[(q, q)].re;
                let theta = (delta - alpha) / (2.0 * mag);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // V = diag(1, conj(phase)) * [[c, s], [-s, c]]
                let v00 = Complex64::new(c, 0.0);
                let v01 = Complex64::new(s, 0.0);
                let v10 = -phase.conj() * s;
                let v11 = phase.conj() * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * v00 + akq * v10;
                    a[(k, q)] = akp * v01 + akq * v11;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = v00.conj() * apk + v10.conj() * aqk;
                    a[(q, k)] = v01.conj() * apk + v11.conj() * aqk;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
                for k in 0..n {
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    w[(k, p)] = wkp * v00 + wkq * v10;
                    w[(k, q)] = wkp * v01 + wkq * v11;
                }
            }
        }
    }

    let values = (0..n).map(|i| a[(i, i)].re).collect();
    let vectors = (0..n)
        .map(|j| {
            let mut v = w.column(j);
            let nv = vec_norm(&v);
            v.iter_mut().for_each(|z| *z /= nv);
            phase_normalize(&mut v);
            v
        })
        .collect();
    Ok((values, vectors))
}

/// Largest eigenvalue of a Hermitian matrix and a unit eigenvector.
///
/// When the top eigenvalue is degenerate the eigenvector returned is the
/// lexicographically largest of the phase-normalized candidates.
pub fn hermitian_eig_max(m: &CMat) -> Result<(f64, Vec<Complex64>), LinalgError> {
    let (values, vectors) = hermitian_eig(m)?;
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-12 * m.frobenius_norm().max(1.0);
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= top - tie)
        .map(|(i, _)| i)
        .max_by(|&i, &j| lexicographic_cmp(&vectors[i], &vectors[j]).then(j.cmp(&i)))
        .expect("nonempty spectrum");
    Ok((values[best], vectors[best].clone()))
}

/// Maximum singular value triplet, via the smaller Gram matrix.
pub fn max_svd(m: &CMat) -> Result<SvdTriplet, LinalgError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(LinalgError::InvalidInput("empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(LinalgError::InvalidInput("non-finite entry".into()));
    }
    let adj = m.adjoint();
    let right = m.cols() <= m.rows();
    let gram = if right { &adj * m } else { m * &adj };
    let (_, w) = hermitian_eig_max(&gram)?;
    let (image, basis_len) = if right { (m.matvec(&w), m.rows()) } else { (adj.matvec(&w), m.cols()) };
    let sigma = vec_norm(&image);
    let other = if sigma > 0.0 {
        image.iter().map(|z| z / sigma).collect()
    } else {
        let mut e = vec![Complex64::new(0.0, 0.0); basis_len];
        e[0] = Complex64::new(1.0, 0.0);
        e
    };
    let (u, v) = if right { (other, w) } else { (w, other) };
    Ok(SvdTriplet { sigma, u, v })
}

/// Largest singular value only.
pub fn sigma_max(m: &CMat) -> Result<f64, LinalgError> {
    max_svd(m).map(|t| t.sigma)
}

/// In-place LU factorization with partial pivoting of a square complex matrix.
#[derive(Debug, Clone)]
pub struct ComplexLu {
    lu: CMat,
    perm: Vec<usize>,
}

impl ComplexLu {
    pub fn factor(a: &CMat) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::InvalidInput(format!("LU of non-square {}x{}", a.rows(), a.cols())));
        }
        let n = a.rows();
        let threshold = PIVOT_TOL * a.norm_inf();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, mag) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if mag <= threshold || mag == 0.0 {
                return Err(LinalgError::Singular { pivot: mag, threshold });
            }
            if piv != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                for j in (k + 1)..n {
                    let t = lu[(k, j)];
                    lu[(i, j)] -= factor * t;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &CMat) -> Result<CMat, LinalgError> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(LinalgError::InvalidInput(format!("rhs has {} rows, expected {n}", b.rows())));
        }
        let mut x = CMat::from_fn(n, b.cols(), |i, j| b[(self.perm[i], j)]);
        for c in 0..b.cols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        Ok(x)
    }

    pub fn determinant(&self) -> Complex64 {
        let n = self.lu.rows();
        let mut det = Complex64::new(1.0, 0.0);
        for i in 0..n {
            det *= self.lu[(i, i)];
        }
        let mut visited = vec![false; n];
        let mut sign = 1.0;
        for start in 0..n {
            if visited[start] {
                continue;
            }
            let mut len = 0;
            let mut j = start;
            while !visited[j] {
                visited[j] = true;
                j = self.perm[j];
                len += 1;
            }
            if len % 2 == 0 {
                sign = -sign;
            }
        }
        det * sign
    }
}

/// Solve `A X = B` with partial pivoting.
pub fn solve(a: &CMat, b: &CMat) -> Result<CMat, LinalgError> {
    ComplexLu::factor(a)?.solve(b)
}

/// Dense real LU solve for the small systems of the QP layer.
///
/// Returns `None` when a pivot falls below `tol` times the largest entry.
pub fn real_solve(a: &[f64], n: usize, b: &[f64], tol: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (piv, mag) = (k..n)
            .map(|i| (i, m[i * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if mag <= tol * scale {
            return None;
        }
        if piv != k {
            for j in 0..n {
                m.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        for i in (k + 1)..n {
            let f = m[i * n + k] / m[k * n + k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[i * n + j] -= f * m[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let a = random_matrix(rng, n, n);
        (&a + &a.adjoint()).scale_real(0.5)
    }

    /// Shifted inverse iteration, independent of the Jacobi sweep.
    fn inverse_iteration_top(m: &CMat) -> f64 {
        let n = m.rows();
        let bound = m.norm_inf();
        // power iteration for a rough estimate, then shift slightly above it
        let mut v: Vec<Complex64> = (0..n).map(|i| c(1.0 + i as f64 * 0.1, 0.3)).collect();
        let shifted = &(m + &CMat::identity(n).scale_real(bound)) * &CMat::identity(n);
        for _ in 0..2000 {
            let w = shifted.matvec(&v);
            let nw = vec_norm(&w);
            v = w.iter().map(|z| z / nw).collect();
        }
        let mut mu: f64 = {
            let mv = m.matvec(&v);
            v.iter().zip(&mv).map(|(a, b)| (a.conj() * b).re).sum()
        };
        for _ in 0..50 {
            let shift = &CMat::identity(n).scale_real(mu + 1e-9);
            let a = m - shift;
            let Ok(x) = solve(&a, &CMat::from_vec(n, 1, v.clone()).unwrap()) else { break };
            let col = x.column(0);
            let nx = vec_norm(&col);
            v = col.iter().map(|z| z / nx).collect();
            let mv = m.matvec(&v);
            mu = v.iter().zip(&mv).map(|(a, b)| (a.conj() * b).re).sum();
        }
        mu
    }

    #[test]
    fn diagonal_top_eigenpair() {
        let m = CMat::from_real(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let (l, w) = hermitian_eig_max(&m).unwrap();
        assert!((l - 3.0).abs() < 1e-14);
        assert!((w[1] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(w[0].norm() < 1e-14 && w[2].norm() < 1e-14);
    }

    #[test]
    fn swap_matrix_eigenpair() {
        let m = CMat::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let (l, w) = hermitian_eig_max(&m).unwrap();
        assert!((l - 1.0).abs() < 1e-14);
        let s = 1.0 / 2f64.sqrt();
        assert!((w[0] - c(s, 0.0)).norm() < 1e-12);
        assert!((w[1] - c(s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn degenerate_top_is_deterministic() {
        let m = CMat::identity(3);
        let (l, w) = hermitian_eig_max(&m).unwrap();
        assert_eq!(l, 1.0);
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMat::from_real(2, 2, &[0.0, 1.0, 0.5, 0.0]).unwrap();
        assert!(matches!(hermitian_eig_max(&m), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn random_hermitian_matches_inverse_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_hermitian(&mut rng, 6);
            let (l, w) = hermitian_eig_max(&m).unwrap();
            let oracle = inverse_iteration_top(&m);
            assert!((l - oracle).abs() < 1e-9, "{l} vs {oracle}");
            let mw = m.matvec(&w);
            let resid: f64 = mw.iter().zip(&w).map(|(a, b)| (a - b * l).norm_sqr()).sum::<f64>().sqrt();
            assert!(resid <= 1e-9 * m.frobenius_norm());
        }
    }

    #[test]
    fn unitary_conjugation_preserves_top_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // fixed test unitary: a complex Givens rotation composed with a diagonal phase
        let (cs, sn) = (0.6, 0.8);
        let mut u = CMat::identity(4);
        u[(0, 0)] = c(cs, 0.0);
        u[(0, 1)] = c(0.0, -sn);
        u[(1, 0)] = c(0.0, -sn);
        u[(1, 1)] = c(cs, 0.0);
        u[(3, 3)] = Complex64::from_polar(1.0, 0.7);
        for _ in 0..20 {
            let m = random_hermitian(&mut rng, 4);
            let conj = &(&u.adjoint() * &m) * &u;
            let (a, _) = hermitian_eig_max(&m).unwrap();
            let (b, _) = hermitian_eig_max(&conj).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn svd_diagonal_and_zero() {
        let m = CMat::from_real(2, 2, &[3.0, 0.0, 0.0, 4.0]).unwrap();
        let t = max_svd(&m).unwrap();
        assert!((t.sigma - 4.0).abs() < 1e-14);
        let z = CMat::zeros(3, 2);
        let t = max_svd(&z).unwrap();
        assert_eq!(t.sigma, 0.0);
        assert_eq!(t.v, vec![c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(t.u[0], c(1.0, 0.0));
    }

    #[test]
    fn svd_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 4, 3);
            let t = max_svd(&m).unwrap();
            let gram = &m.adjoint() * &m;
            let mut v = vec![c(1.0, 0.2), c(0.5, -0.1), c(-0.3, 0.4)];
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let w = gram.matvec(&v);
                lambda = vec_norm(&w);
                v = w.iter().map(|z| z / lambda).collect();
            }
            assert!((t.sigma - lambda.sqrt()).abs() < 1e-10);
            let mv = m.matvec(&t.v);
            let resid: f64 =
                mv.iter().zip(&t.u).map(|(a, b)| (a - b * t.sigma).norm_sqr()).sum::<f64>().sqrt();
            assert!(resid <= 1e-9 * m.frobenius_norm());
            assert!((vec_norm(&t.u) - 1.0).abs() < 1e-12);
            assert!((vec_norm(&t.v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_matrix_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_matrix(&mut rng, 2, 5);
        let t = max_svd(&m).unwrap();
        let tt = max_svd(&m.adjoint()).unwrap();
        assert!((t.sigma - tt.sigma).abs() < 1e-12);
        let mv = m.matvec(&t.v);
        let resid: f64 = mv.iter().zip(&t.u).map(|(a, b)| (a - b * t.sigma).norm_sqr()).sum::<f64>().sqrt();
        assert!(resid < 1e-9 * m.frobenius_norm());
    }

    #[test]
    fn solve_identity_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_matrix(&mut rng, 3, 2);
        let x = solve(&CMat::identity(3), &b).unwrap();
        assert_eq!(x, b);
        let x = solve(&CMat::identity(3).scale_real(2.0), &CMat::identity(3)).unwrap();
        assert!((&x - &CMat::identity(3).scale_real(0.5)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn solve_residual_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=6);
            let a = &random_matrix(&mut rng, n, n) + &CMat::identity(n).scale_real(2.0);
            let b = random_matrix(&mut rng, n, 2);
            let x = solve(&a, &b).unwrap();
            let r = (&(&a * &x) - &b).frobenius_norm();
            assert!(r <= 1e-9 * a.frobenius_norm() * x.frobenius_norm().max(1e-300));
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = CMat::from_real(2, 2, &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(solve(&a, &CMat::identity(2)), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn determinant_with_pivoting() {
        let a = CMat::from_real(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let det = ComplexLu::factor(&a).unwrap().determinant();
        assert!((det - c(-2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn real_solve_small() {
        let x = real_solve(&[2.0, 1.0, 1.0, 3.0], 2, &[3.0, 5.0], 1e-14).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert!(real_solve(&[1.0, 1.0, 1.0, 1.0], 2, &[1.0, 1.0], 1e-14).is_none());
    }
}
