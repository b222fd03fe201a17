//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};


/// Scalars accepted by [`thin_svd`].
pub trait SvdScalar: ComplexField<RealField = f64> + faer::traits::ComplexField + Copy {}
impl<T: ComplexField<RealField = f64> + faer::traits::ComplexField + Copy> SvdScalar for T {}

/// Thin SVD with singular values sorted in descending order.
///
/// Returns `(U, s, Vᴴ)` with `U: m × k`, `Vᴴ: k × n`, `k = min(m, n)`.
pub fn thin_svd<T: SvdScalar>(m: &DMatrix<T>) -> Result<(DMatrix<T>, Vec<f64>, DMatrix<T>)> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok((DMatrix::zeros(rows, 0), Vec::new(), DMatrix::zeros(0, cols)));
    }
    let svd = faer::MatRef::from_column_major_slice(m.as_slice(), rows, cols)
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, sv, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = rows.min(cols);
    let u = DMatrix::from_fn(rows, k, |i, j| u[(i, j)]);
    let vt = DMatrix::from_fn(k, cols, |i, j| ComplexField::conjugate(v[(j, i)]));
    let s = (0..k).map(|j| ComplexField::real(sv[j])).collect();
    Ok((u, s, vt))
}

/// Smallest rank `r ≥ 1` whose discarded tail `sqrt(Σ_{i≥r} s_i²)` is at most `delta`.
pub fn truncation_rank(s: &[f64], delta: f64) -> usize {
    let mut tail = 0.0;
    let mut r = s.len();
    for (i, &v) in s.iter().enumerate().rev() {
        tail += v * v;
        if tail.sqrt() > delta {
            break;
        }
        r = i;
    }
    r.max(1).min(s.len().max(1))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Fill column-major so the draw order is fixed by the storage order.
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let g = standard_normal_matrix(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// 1-norm of a complex matrix (max column sum).
pub fn norm1_complex(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of a small complex matrix with a 1-norm condition estimate.
pub fn inverse_with_condition(k: &DMatrix<Complex64>) -> Option<(DMatrix<Complex64>, f64)> {
    let inv = k.clone().lu().try_inverse()?;
    let cond = norm1_complex(k) * norm1_complex(&inv);
    if !cond.is_finite() {
        return None;
    }
    Some((inv, cond))
}

/// Relative pivot size at which [`maxvol_seeded`] keeps a preferred row.
pub const PREFERRED_PIVOT: f64 = 0.5;

/// Row indices of a quasi-maximal-volume `r × r` submatrix of a tall `m × r` matrix.
///
/// Starts from partial-pivoting LU row choices and swaps rows while some
/// coefficient of `A · A[sel]⁻¹` exceeds `tol` in modulus.
pub fn maxvol(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<Vec<usize>> {
    maxvol_seeded(a, &[], tol, max_iter)
}

/// [`maxvol`] that pivots on rows from `preferred` whenever their pivot is
/// within a factor [`PREFERRED_PIVOT`] of the best one.
pub fn maxvol_seeded(a: &DMatrix<f64>, preferred: &[usize], tol: f64, max_iter: usize) -> Result<Vec<usize>> {
    let (m, r) = a.shape();
    if r == 0 {
        return Ok(Vec::new());
    }
    if r > m {
        return Err(Error::Dimension(format!(
            "maxvol needs at least as many rows as columns ({m} < {r})"
        )));
    }
    let mut work = a.clone();
    let mut available: Vec<bool> = vec![true; m];
    let mut sel = Vec::with_capacity(r);
    for c in 0..r {
        let mut best = None;
        let mut best_val = -1.0;
        for i in 0..m {
            if available[i] && work[(i, c)].abs() > best_val {
                best_val = work[(i, c)].abs();
                best = Some(i);
            }
        }
        let mut p = best.expect("rows available");
        if let Some(&i) = preferred
            .iter()
            .filter(|&&i| i < m && available[i])
            .max_by(|&&x, &&y| work[(x, c)].abs().total_cmp(&work[(y, c)].abs()))
        {
            if work[(i, c)].abs() >= PREFERRED_PIVOT * best_val {
                p = i;
            }
        }
        available[p] = false;
        sel.push(p);
        let pivot = work[(p, c)];
        if pivot != 0.0 {
            for i in 0..m {
                if available[i] {
                    let f = work[(i, c)] / pivot;
                    if f != 0.0 {
                        for cc in c + 1..r {
                            let v = work[(p, cc)];
                            work[(i, cc)] -= f * v;
                        }
                    }
                }
            }
        }
    }

    for _ in 0..max_iter {
        let sub = DMatrix::from_fn(r, r, |i, j| a[(sel[i], j)]);
        let Some(inv) = sub.lu().try_inverse() else {
            break;
        };
        let b = a * inv;
        let mut best = (0usize, 0usize, 0.0f64);
        for j in 0..r {
            for i in 0..m {
                let v = b[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        if best.2 <= tol || sel.contains(&best.0) {
            break;
        }
        sel[best.1] = best.0;
    }
    Ok(sel)
}

/// Real and imaginary parts of a complex matrix.
pub fn split_complex(m: &DMatrix<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|v| v.re), m.map(|v| v.im))
}

/// Complex product through four real products, which run on the fast
/// real matrix-multiplication kernel.
pub fn complex_matmul(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = split_complex(a);
    let (br, bi) = split_complex(b);
    complex_matmul_split(&ar, &ai, &br, &bi)
}

pub fn complex_matmul_split(
    ar: &DMatrix<f64>,
    ai: &DMatrix<f64>,
    br: &DMatrix<f64>,
    bi: &DMatrix<f64>,
) -> DMatrix<Complex64> {
    let re = ar * br - ai * bi;
    let im = ar * bi + ai * br;
    re.zip_map(&im, Complex64::new)
}

/// In-place partial-pivoting LU of a column-major `n × n` buffer. Returns
/// the row order `perm` with `(P K)[i, :] = K[perm[i], :]`, or `None` for a
/// singular or non-finite factor.
fn lu_factor(k: &mut [f64], n: usize) -> Option<Vec<usize>> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::linalg::lu::partial_pivoting::factor::{lu_in_place, lu_in_place_scratch};
    let mut fwd = vec![0usize; n];
    let mut bwd = vec![0usize; n];
    let mut buf = MemBuffer::new(lu_in_place_scratch::<usize, f64>(n, n, faer::Par::Seq, Default::default()));
    lu_in_place(
        faer::MatMut::from_column_major_slice_mut(k, n, n),
        &mut fwd,
        &mut bwd,
        faer::Par::Seq,
        MemStack::new(&mut buf),
        Default::default(),
    );
    let diag_ok = (0..n).all(|i| {
        let d = k[i * n + i];
        d != 0.0 && d.is_finite()
    });
    diag_ok.then_some(fwd)
}

/// Applies the row order from [`lu_factor`] and the unit lower factor to
/// the columns of `z`.
fn lower_solve(lu: &[f64], perm: &[usize], z: &[f64], n: usize) -> Vec<f64> {
    let m = z.len() / n;
    let mut w = vec![0.0; n * m];
    for (dst, src) in w.chunks_exact_mut(n).zip(z.chunks_exact(n)) {
        for (d, &p) in dst.iter_mut().zip(perm) {
            *d = src[p];
        }
    }
    faer::linalg::triangular_solve::solve_unit_lower_triangular_in_place(
        faer::MatRef::from_column_major_slice(lu, n, n),
        faer::MatMut::from_column_major_slice_mut(&mut w, n, m),
        faer::Par::Seq,
    );
    w
}

/// Solves `K X = Z` for small dense column-major `K` (`n × n`) and `Z`
/// (`n × m`) with a partial-pivoting LU, returning `X` column-major.
///
/// This is the per-shift core solve of the SMW traces, so it skips the
/// condition estimate and reports only a singular factor (as `None`).
pub fn small_solve(k: &[f64], z: &[f64], n: usize) -> Option<Vec<f64>> {
    assert_eq!(k.len(), n * n, "core matrix must be square");
    assert!(n > 0 && z.len() % n == 0, "right-hand side has the wrong number of rows");
    let mut lu = k.to_vec();
    let perm = lu_factor(&mut lu, n)?;
    let mut x = lower_solve(&lu, &perm, z, n);
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(
        faer::MatRef::from_column_major_slice(&lu, n, n),
        faer::MatMut::from_column_major_slice_mut(&mut x, n, z.len() / n),
        faer::Par::Seq,
    );
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(3, 11), (11, 3), (5, 5)] {
            let m = standard_normal_matrix(r, c, &mut rng);
            let (u, s, vt) = thin_svd(&m).unwrap();
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
            let rec = &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * &vt;
            assert!((rec - &m).norm() < 1e-12 * m.norm());
        }
    }

    #[test]
    fn truncation_rank_respects_tail() {
        let s = [4.0, 2.0, 1.0, 0.1];
        assert_eq!(truncation_rank(&s, 0.0), 4);
        assert_eq!(truncation_rank(&s, 0.1), 3);
        assert_eq!(truncation_rank(&s, 1.01f64.hypot(0.1)), 2);
        assert_eq!(truncation_rank(&s, 100.0), 1);
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_orthogonal(12, &mut rng);
        let err = (q.transpose() * &q - DMatrix::identity(12, 12)).norm();
        assert!(err < 1e-13);
    }

    #[test]
    fn complex_product_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mk = |r, c, rng: &mut ChaCha8Rng| {
            let re = standard_normal_matrix(r, c, rng);
            let im = standard_normal_matrix(r, c, rng);
            re.zip_map(&im, Complex64::new)
        };
        let a = mk(7, 5, &mut rng);
        let b = mk(5, 3, &mut rng);
        assert!((complex_matmul(&a, &b) - &a * &b).norm() < 1e-12);
    }

    #[test]
    fn small_solve_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in [1usize, 5, 33, 64] {
            let k = standard_normal_matrix(n, n, &mut rng);
            let z = standard_normal_matrix(n, 3, &mut rng);
            let exact = k.clone().lu().solve(&z).unwrap();
            let x = small_solve(k.as_slice(), z.as_slice(), n).unwrap();
            let x = DMatrix::from_column_slice(n, 3, &x);
            assert!((x - &exact).amax() < 1e-9 * exact.amax());
        }
        assert!(small_solve(&[0.0; 4], &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn maxvol_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = standard_normal_matrix(40, 5, &mut rng);
        let sel = maxvol(&a, 1.01, 200).unwrap();
        let sub = DMatrix::from_fn(5, 5, |i, j| a[(sel[i], j)]);
        let b = &a * sub.try_inverse().unwrap();
        assert!(b.iter().all(|v| v.abs() <= 1.01 + 1e-12));
    }
}
