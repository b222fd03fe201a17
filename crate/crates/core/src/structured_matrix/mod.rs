//! Block-diagonal-plus-low-rank (BDLR) matrices.
//!
//! A [`BdlrMatrix`] stores `A = blockdiag(B0, diag(D0)) + P Qᵀ` where `B0`
//! is a dense symmetric `n_B × n_B` block, `D0` holds the remaining
//! `n − n_B` diagonal entries and `P`, `Q` are `n × R` factors.

mod io;
mod synthetic;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use io::{from_bytes, read_bdlr, to_bytes, write_bdlr, MAGIC};
pub use synthetic::{generate_synthetic, preset, preset_names, SpectrumProfile, SyntheticSpec};

/// Largest dimension [`BdlrMatrix::materialize_dense`] will allocate.
pub const DENSE_LIMIT: usize = 8192;

/// Tolerance on the relative Frobenius asymmetry of `B0`.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BdlrMatrix {
    b0: DMatrix<f64>,
    d0: DVector<f64>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl BdlrMatrix {
    /// Assembles a matrix from its factors, checking shapes and the symmetry of `b0`.
    pub fn new(b0: DMatrix<f64>, d0: DVector<f64>, p: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if b0.nrows() != b0.ncols() {
            return Err(Error::Dimension(format!(
                "dense block must be square, got {}x{}",
                b0.nrows(),
                b0.ncols()
            )));
        }
        let n = b0.nrows() + d0.len();
        if n == 0 {
            return Err(Error::Dimension("matrix dimension must be positive".into()));
        }
        if p.shape() != q.shape() {
            return Err(Error::Dimension(format!(
                "low-rank factors differ in shape: P is {:?}, Q is {:?}",
                p.shape(),
                q.shape()
            )));
        }
        if p.nrows() != n {
            return Err(Error::Dimension(format!(
                "low-rank factors have {} rows, expected n = {n}",
                p.nrows()
            )));
        }
        if p.ncols() > n {
            return Err(Error::Dimension(format!("rank {} exceeds n = {n}", p.ncols())));
        }
        let asym = asymmetry(&b0);
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidParameter(format!(
                "dense block is not symmetric (relative deviation {asym:.3e})"
            )));
        }
        Ok(Self { b0, d0, p, q })
    }

    /// Symmetric case `P = Q`.
    pub fn symmetric(b0: DMatrix<f64>, d0: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        Self::new(b0, d0, q.clone(), q)
    }

    /// Diagonal matrix with no dense block and no correction.
    pub fn diagonal(d0: DVector<f64>) -> Result<Self> {
        let n = d0.len();
        Self::new(DMatrix::zeros(0, 0), d0, DMatrix::zeros(n, 0), DMatrix::zeros(n, 0))
    }

    pub fn n(&self) -> usize {
        self.b0.nrows() + self.d0.len()
    }

    pub fn n_b(&self) -> usize {
        self.b0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.p.ncols()
    }

    pub fn b0(&self) -> &DMatrix<f64> {
        &self.b0
    }

    pub fn d0(&self) -> &DVector<f64> {
        &self.d0
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// True when the two low-rank factors are bitwise identical.
    pub fn is_symmetric(&self) -> bool {
        self.p == self.q
    }

    /// Dense `n × n` matrix `blockdiag(B0, diag(D0)) + P Qᵀ`.
    pub fn materialize_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        if n > DENSE_LIMIT {
            return Err(Error::Size {
                what: "dense dimension",
                size: n,
                limit: DENSE_LIMIT,
            });
        }
        let nb = self.n_b();
        let mut a = &self.p * self.q.transpose();
        for j in 0..nb {
            for i in 0..nb {
                a[(i, j)] += self.b0[(i, j)];
            }
        }
        for (k, d) in self.d0.iter().enumerate() {
            a[(nb + k, nb + k)] += d;
        }
        Ok(a)
    }

    /// Structured product `A x` in `O(n_B² + nR)` work.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let nb = self.n_b();
        let mut y = &self.p * (self.q.transpose() * x);
        if nb > 0 {
            let head = &self.b0 * x.rows(0, nb);
            let mut top = y.rows_mut(0, nb);
            top += &head;
        }
        for (k, d) in self.d0.iter().enumerate() {
            y[nb + k] += d * x[nb + k];
        }
        y
    }

    /// Largest eigenvalue magnitude estimated by power iteration on [`Self::matvec`].
    pub fn spectral_radius_estimate(&self, iterations: usize) -> f64 {
        let n = self.n();
        // A deterministic, non-degenerate start vector.
        let mut x = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
        x /= x.norm();
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            let y = self.matvec(&x);
            let norm = y.norm();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            x = y / norm;
        }
        lambda
    }
}

fn asymmetry(b: &DMatrix<f64>) -> f64 {
    let norm = b.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (b - b.transpose()).norm() / norm
}

/// Finite-difference Laplacian `tridiag(−1, 2, −1)` of size `n`, stored as a dense block.
///
/// Its eigenvalues are `4 sin²(πk / (2(n+1)))`, `k = 1..n`.
pub fn generate_laplacian1d(n: usize) -> Result<BdlrMatrix> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "Laplacian needs n >= 2, got {n}"
        )));
    }
    let b0 = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    });
    BdlrMatrix::new(b0, DVector::zeros(0), DMatrix::zeros(n, 0), DMatrix::zeros(n, 0))
}

/// Analytic Laplacian spectrum in ascending order.
pub fn laplacian1d_eigenvalues(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / (2.0 * (n as f64 + 1.0))).sin();
            4.0 * s * s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;

    #[test]
    fn zero_rank_diagonal() {
        let m = BdlrMatrix::diagonal(DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let a = m.materialize_dense().unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn one_by_one() {
        let m = BdlrMatrix::symmetric(
            DMatrix::from_element(1, 1, 3.0),
            DVector::zeros(0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_eq!(m.materialize_dense().unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn materialize_matches_brute_force() {
        let spec = SyntheticSpec::new(64, 8, 4, 7);
        let m = generate_synthetic(&spec).unwrap();
        let a = m.materialize_dense().unwrap();
        let n = m.n();
        let nb = m.n_b();
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                if i < nb && j < nb {
                    v += m.b0()[(i, j)];
                }
                if i == j && i >= nb {
                    v += m.d0()[i - nb];
                }
                for k in 0..m.rank() {
                    v += m.p()[(i, k)] * m.q()[(j, k)];
                }
                assert!((a[(i, j)] - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
        let asym = (&a - a.transpose()).amax();
        assert!(asym <= 1e-12 * a.norm());
    }

    #[test]
    fn matvec_matches_dense() {
        let m = generate_synthetic(&SyntheticSpec::new(40, 6, 3, 2)).unwrap();
        let x = DVector::from_fn(40, |i, _| (i as f64).sin());
        let dense = m.materialize_dense().unwrap() * &x;
        assert!((m.matvec(&x) - dense).norm() < 1e-10 * x.norm() * m.materialize_dense().unwrap().norm());
    }

    #[test]
    fn laplacian_two() {
        let m = generate_laplacian1d(2).unwrap();
        assert_eq!(m.b0(), &DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        let ev = symmetric_eigenvalues(&m.materialize_dense().unwrap()).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn laplacian_spectrum_matches_oracle() {
        for n in [8, 100, 257] {
            let m = generate_laplacian1d(n).unwrap();
            let ev = symmetric_eigenvalues(&m.materialize_dense().unwrap()).unwrap();
            let exact = laplacian1d_eigenvalues(n);
            let tol = if n == 8 { 1e-12 } else { 1e-10 };
            for (a, b) in ev.iter().zip(&exact) {
                assert!((a - b).abs() < tol, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn laplacian_large_min_eigenvalue() {
        let ev = laplacian1d_eigenvalues(2047);
        let s = (std::f64::consts::PI / 4096.0).sin();
        assert!((ev[0] - 4.0 * s * s).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(generate_laplacian1d(1).is_err());
        let bad = BdlrMatrix::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            DVector::zeros(0),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(2, 0),
        );
        assert!(bad.is_err());
        let bad = BdlrMatrix::new(
            DMatrix::zeros(1, 1),
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
        );
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn power_iteration_bounds_spectrum() {
        let m = generate_laplacian1d(50).unwrap();
        let est = m.spectral_radius_estimate(200);
        assert!(est <= 4.0 && est > 3.9);
    }
}
