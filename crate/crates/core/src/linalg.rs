//! Direct solvers and small dense helpers.
//!
//! Symmetric positive definite systems go through a skyline (envelope)
//! Cholesky factorization that keeps the banded structure of grid
//! operators. Everything else falls back to dense LU with partial pivoting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::SparseMatrix;

/// Largest order for which a general (non-SPD) matrix is factored densely.
pub const DENSE_LU_LIMIT: usize = 6000;

/// Lower Cholesky factor in row-envelope storage: row `i` holds
/// `L[i, first[i]..=i]`.
#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    n: usize,
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Factors the symmetric matrix `a`; only its lower triangle is read.
    pub fn factor(a: &SparseMatrix) -> Result<SkylineCholesky> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "Cholesky of a {}x{} matrix",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let n = a.n_rows();
        let first: Vec<usize> = (0..n)
            .map(|i| a.row(i).map(|(j, _)| j).find(|&j| j <= i).unwrap_or(i))
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; offsets[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[offsets[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let oi = offsets[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offsets[j];
                let k0 = fi.max(fj);
                let mut s = data[oi + j - fi];
                for k in k0..j {
                    s -= data[oi + k - fi] * data[oj + k - fj];
                }
                data[oi + j - fi] = s / data[oj + j - fj];
            }
            let mut d = data[oi + i - fi];
            for k in fi..i {
                let l = data[oi + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotSpd(format!("nonpositive pivot {d:e} at row {i}")));
            }
            data[oi + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky {
            n,
            first,
            offsets,
            data,
        })
    }

    fn l(&self, i: usize, k: usize) -> f64 {
        self.data[self.offsets[i] + k - self.first[i]]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "rhs length");
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        for i in (0..self.n).rev() {
            let xi = y[i] / self.l(i, i);
            y[i] = xi;
            for k in self.first[i]..i {
                y[k] -= self.l(i, k) * xi;
            }
        }
        y
    }

    /// `log det A = 2 sum_i log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l(i, i).ln()).sum::<f64>()
    }
}

/// A factored square matrix ready for repeated solves.
#[derive(Debug)]
pub enum Factorization {
    Cholesky(SkylineCholesky),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factorization {
    pub fn dim(&self) -> usize {
        match self {
            Factorization::Cholesky(c) => c.dim(),
            Factorization::Lu(lu) => lu.l().nrows(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = match self {
            Factorization::Cholesky(c) => c.solve(b),
            Factorization::Lu(lu) => lu
                .solve(&DVector::from_column_slice(b))
                .ok_or_else(|| Error::Factorization("singular LU factor".into()))?
                .as_slice()
                .to_vec(),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear solve".into()));
        }
        Ok(x)
    }

    pub fn solve_dense(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col: Vec<f64> = b.column(j).iter().copied().collect();
            let x = self.solve(&col)?;
            out.column_mut(j).copy_from_slice(&x);
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.solve_dense(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Log-determinant; defined for Cholesky factors only.
    pub fn log_det(&self) -> Result<f64> {
        match self {
            Factorization::Cholesky(c) => Ok(c.log_det()),
            Factorization::Lu(_) => Err(Error::NotSpd("log-determinant needs a Cholesky factor".into())),
        }
    }
}

/// Cholesky when `spd`, dense partial-pivoting LU otherwise.
pub fn factorize(a: &SparseMatrix, spd: bool) -> Result<Factorization> {
    if spd {
        return SkylineCholesky::factor(a).map(Factorization::Cholesky);
    }
    factorize_dense(&a.to_dense_checked()?)
}

pub fn factorize_dense(a: &DMatrix<f64>) -> Result<Factorization> {
    if a.nrows() != a.ncols() {
        return Err(Error::ShapeMismatch("LU of a non-square matrix".into()));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = scale * f64::EPSILON * a.nrows() as f64;
    if (0..u.nrows()).any(|i| !(u[(i, i)].abs() > tiny)) {
        return Err(Error::Factorization("matrix is singular to working precision".into()));
    }
    Ok(Factorization::Lu(lu))
}

impl SparseMatrix {
    pub(crate) fn to_dense_checked(&self) -> Result<DMatrix<f64>> {
        if self.n_rows().max(self.n_cols()) > DENSE_LU_LIMIT {
            return Err(Error::invalid(format!(
                "dense fallback limited to order {DENSE_LU_LIMIT}, got {}",
                self.n_rows()
            )));
        }
        Ok(self.to_dense())
    }
}

/// Spectral norm `||M||_2` by power iteration on `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    spectral_norm_with(m, 200, 1e-10)
}

pub fn spectral_norm_with(m: &DMatrix<f64>, max_iter: usize, rel_tol: f64) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v /= v.norm();
    let mut sigma2 = 0.0;
    for _ in 0..max_iter {
        let w = m.tr_mul(&(m * &v));
        let est = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (est - sigma2).abs() <= rel_tol * est.abs() {
            sigma2 = est;
            break;
        }
        sigma2 = est;
    }
    // Rayleigh quotient at the final iterate.
    let mv = m * &v;
    mv.norm().max(sigma2.max(0.0).sqrt())
}

/// Smallest and largest eigenvalues of a symmetric dense matrix.
pub fn symmetric_extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// `M^p` by repeated multiplication (`p = 0` gives the identity).
pub fn dense_power(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..p {
        out = &out * m;
    }
    out
}

pub fn rel_frobenius(reference: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    let denom = reference.norm();
    let num = (reference - approx).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * n as f64
    }

    fn banded(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
            if i + 5 < n {
                t.push((i, i + 5, -0.5));
                t.push((i + 5, i, -0.5));
            }
        }
        SparseMatrix::from_triplets(n, n, t).unwrap()
    }

    #[test]
    fn skyline_matches_dense_solve() {
        let a = banded(40);
        let f = factorize(&a, true).unwrap();
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b).unwrap();
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let dense_ld = a.to_dense().cholesky().unwrap().l().diagonal().map(|v| v.ln()).sum() * 2.0;
        assert!((f.log_det().unwrap() - dense_ld).abs() < 1e-10);
    }

    #[test]
    fn skyline_on_dense_spd() {
        let a = random_spd(12, 3);
        let s = SparseMatrix::from_dense(&a, 0.0).unwrap();
        let inv = factorize(&s, true).unwrap().inverse().unwrap();
        assert!((&inv * &a - DMatrix::identity(12, 12)).amax() < 1e-11);
    }

    #[test]
    fn rejects_indefinite() {
        let a = SparseMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(factorize(&a, true), Err(Error::NotSpd(_))));
        // Still factorable as a general matrix.
        let x = factorize(&a, false).unwrap().solve(&[1.0, 1.0]).unwrap();
        assert_eq!(x, vec![1.0, -1.0]);
    }

    #[test]
    fn singular_lu_is_reported() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)])
            .unwrap();
        assert!(matches!(factorize(&a, false), Err(Error::Factorization(_))));
    }

    #[test]
    fn spectral_norm_of_known_matrices() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((spectral_norm(&d) - 3.0).abs() < 1e-8);
        let a = random_spd(8, 11);
        let (_, hi) = symmetric_extreme_eigenvalues(&a);
        assert!((spectral_norm(&a) - hi).abs() < 1e-6 * hi);
    }

    #[test]
    fn nonsymmetric_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(7, 7, |i, j| if i == j { 5.0 } else { rng.gen_range(-1.0..1.0) });
        let s = SparseMatrix::from_dense(&a, 0.0).unwrap();
        let inv = factorize(&s, false).unwrap().inverse().unwrap();
        assert!((&a * &inv - DMatrix::identity(7, 7)).amax() < 1e-12);
    }
}
