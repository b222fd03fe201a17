//! Traces of shifted resolvents of a [`BdlrMatrix`].
//!
//! With `z = t − iη` and `E(z) = zI − blockdiag(B0, diag(D0))` the shifted
//! matrix is `S(z) = zI − A = E − P Qᵀ`, and Sherman–Morrison–Woodbury gives
//!
//! ```text
//! trace S⁻¹ = trace E⁻¹ + Σ (U ⊙ V),   U = E⁻¹P K⁻¹,  V = E⁻ᵀQ,  K = I − QᵀE⁻¹P.
//! ```
//!
//! For `P = Q` the real-valued variant works with
//! `(tI − A)² + η²I = E₀ + P̄ Q̄ᵀ`, where `M₀ = tI − E`, `E₀ = M₀² + η²I`,
//! `P̄ = [−M₀Q + Q(QᵀQ), −Q]` and `Q̄ = [Q, M₀Q]`, so that
//!
//! ```text
//! trace[((tI − A)² + η²I)⁻¹] = trace E₀⁻¹ − trace[K⁻¹ Q̄ᵀE₀⁻²P̄],   K = I + Q̄ᵀE₀⁻¹P̄.
//! ```
//!
//! Splitting the cross terms around `M₀` rather than `E` keeps every entry
//! of `Q̄ᵀE₀⁻¹` and `E₀⁻¹P̄` bounded by `1/η` times the size of `Q`; the
//! split `[EQ − 2tQ + Q(QᵀQ), Q]`, `[Q, EQ]` is algebraically the same but
//! loses a factor of about `(‖A‖/η)²` in relative accuracy. `E₀` is formed in the
//! eigenbasis of `B0`, where it is diagonal.
//!
//! `η · (real trace) = Im(complex trace)` holds exactly.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inverse_with_condition, small_solve, symmetric_eigen, symmetric_eigenvalues};
use crate::structured_matrix::BdlrMatrix;

/// Largest dimension accepted by the dense reference path.
pub const DENSE_TRACE_LIMIT: usize = 4096;

/// Condition estimate above which the SMW core matrix is declared singular.
pub const CORE_CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    pub t: f64,
    pub eta: f64,
}

impl ShiftParams {
    pub fn new(t: f64, eta: f64) -> Result<Self> {
        let s = Self { t, eta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::InvalidParameter(format!("shift t = {} is not finite", self.t)));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "broadening eta must be positive and finite, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Complex shift `z = t − iη`.
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.t, -self.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMethod {
    Dense,
    SmwComplex,
    SmwReal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceResult {
    /// Complex trace, or the real trace stored in the real part for [`TraceMethod::SmwReal`].
    pub value: Complex64,
    pub flops_estimate: u64,
    pub method: TraceMethod,
}

/// `Σ_k ⟨u_k, v_k⟩ = 1ᵀ(U ⊙ V)1`, the trace of `U Vᵀ`.
pub fn hadamard_trace<T: ComplexField>(u: &DMatrix<T>, v: &DMatrix<T>) -> Result<T> {
    if u.shape() != v.shape() {
        return Err(Error::Dimension(format!(
            "hadamard trace needs equal shapes, got {:?} and {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let mut acc = T::zero();
    for (a, b) in u.iter().zip(v.iter()) {
        acc += a.clone() * b.clone();
    }
    Ok(acc)
}

/// Eigenvalues of the materialized matrix, ascending. Requires `P = Q`.
pub fn dense_eigenvalues(m: &BdlrMatrix) -> Result<Vec<f64>> {
    guard_dense(m)?;
    if !m.is_symmetric() {
        return Err(Error::InvalidParameter(
            "dense eigenvalues need a symmetric correction (P = Q)".into(),
        ));
    }
    symmetric_eigenvalues(&m.materialize_dense()?)
}

/// `Σ_j 1 / ((t − λ_j) − iη)`.
pub fn trace_from_eigenvalues(lams: &[f64], s: ShiftParams) -> Complex64 {
    let z = s.z();
    lams.iter().map(|&l| (z - l).inv()).sum()
}

/// `Σ_j 1 / ((t − λ_j)² + η²)`.
pub fn real_trace_from_eigenvalues(lams: &[f64], s: ShiftParams) -> f64 {
    let eta2 = s.eta * s.eta;
    lams.iter()
        .map(|&l| {
            let d = s.t - l;
            1.0 / (d * d + eta2)
        })
        .sum()
}

/// Reference trace through a dense eigendecomposition (or a dense complex
/// inverse when `P ≠ Q`).
pub fn trace_resolvent_dense(m: &BdlrMatrix, s: ShiftParams) -> Result<Complex64> {
    s.validate()?;
    guard_dense(m)?;
    if m.is_symmetric() {
        let lams = symmetric_eigenvalues(&m.materialize_dense()?)?;
        return Ok(trace_from_eigenvalues(&lams, s));
    }
    let a = m.materialize_dense()?;
    let n = m.n();
    let z = s.z();
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(-a[(i, j)], 0.0);
        if i == j {
            v + z
        } else {
            v
        }
    });
    let inv = shifted
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("shifted matrix is singular".into()))?;
    Ok(inv.trace())
}

fn guard_dense(m: &BdlrMatrix) -> Result<()> {
    if m.n() > DENSE_TRACE_LIMIT {
        return Err(Error::Size {
            what: "dense trace dimension",
            size: m.n(),
            limit: DENSE_TRACE_LIMIT,
        });
    }
    Ok(())
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Applies `E⁻¹` for a block-diagonal `E` given the LU of its dense block
/// and its diagonal tail.
fn block_solve<T: ComplexField + Copy>(
    lu: Option<&nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>>,
    diag: &[T],
    rhs: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let nb = rhs.nrows() - diag.len();
    let mut out = rhs.clone();
    if nb > 0 {
        let lu = lu.expect("dense block factorization");
        let head = lu
            .solve(&rhs.rows(0, nb).into_owned())
            .ok_or_else(|| Error::Numerical("shifted dense block is singular".into()))?;
        out.rows_mut(0, nb).copy_from(&head);
    }
    for (k, &d) in diag.iter().enumerate() {
        let mut row = out.row_mut(nb + k);
        row.iter_mut().for_each(|v| *v /= d);
    }
    Ok(out)
}

/// Complex SMW trace with the flop estimate attached.
pub fn trace_smw_detailed(m: &BdlrMatrix, s: ShiftParams) -> Result<TraceResult> {
    s.validate()?;
    let (n, nb, r) = (m.n(), m.n_b(), m.rank());
    let z = s.z();

    let lu = (nb > 0).then(|| {
        let e_b = DMatrix::from_fn(nb, nb, |i, j| {
            let v = Complex64::new(-m.b0()[(i, j)], 0.0);
            if i == j {
                v + z
            } else {
                v
            }
        });
        e_b.lu()
    });
    let diag: Vec<Complex64> = m.d0().iter().map(|&d| z - d).collect();

    let mut trace: Complex64 = diag.iter().map(|d| d.inv()).sum();
    if let Some(lu) = &lu {
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("shifted dense block is singular".into()))?;
        trace += inv.trace();
    }

    if r > 0 {
        let p = to_complex(m.p());
        let x = block_solve(lu.as_ref(), &diag, &p)?;
        let y = if m.is_symmetric() {
            x.clone()
        } else {
            // E is complex symmetric, so E⁻ᵀ = E⁻¹.
            block_solve(lu.as_ref(), &diag, &to_complex(m.q()))?
        };
        let q = to_complex(m.q());
        let k = DMatrix::<Complex64>::identity(r, r) - q.transpose() * &x;
        let (k_inv, cond) =
            inverse_with_condition(&k).ok_or(Error::NearSingularCore { cond: f64::INFINITY })?;
        if cond > CORE_CONDITION_LIMIT {
            return Err(Error::NearSingularCore { cond });
        }
        let u = &x * k_inv;
        trace += hadamard_trace(&u, &y)?;
    }

    let (n64, nb64, r64) = (n as u64, nb as u64, r as u64);
    Ok(TraceResult {
        value: trace,
        flops_estimate: 8 * (nb64.pow(3) + 2 * n64 * r64 * r64 + 2 * r64.pow(3) + nb64 * nb64 * r64),
        method: TraceMethod::SmwComplex,
    })
}

/// `trace[((t − iη)I − A)⁻¹]` by Sherman–Morrison–Woodbury.
pub fn trace_resolvent_smw(m: &BdlrMatrix, s: ShiftParams) -> Result<Complex64> {
    trace_smw_detailed(m, s).map(|r| r.value)
}

/// Real SMW trace with the flop estimate attached.
pub fn trace_smw_real_detailed(m: &BdlrMatrix, s: ShiftParams) -> Result<TraceResult> {
    s.validate()?;
    if !m.is_symmetric() {
        return Err(Error::InvalidParameter(
            "the real-valued trace needs a symmetric correction (P = Q)".into(),
        ));
    }
    let (n, nb, r) = (m.n(), m.n_b(), m.rank());
    let trace = PreparedTracer::new(m)?.real(s)?;

    let (n64, nb64, r64) = (n as u64, nb as u64, r as u64);
    Ok(TraceResult {
        value: Complex64::new(trace, 0.0),
        flops_estimate: 2 * (2 * nb64.pow(3) + 10 * n64 * r64 * r64 + 16 * r64.pow(3)),
        method: TraceMethod::SmwReal,
    })
}

/// `trace[((tI − A)² + η²I)⁻¹]` for symmetric `A = E + QQᵀ`.
pub fn trace_resolvent_smw_real(m: &BdlrMatrix, s: ShiftParams) -> Result<f64> {
    trace_smw_real_detailed(m, s).map(|r| r.value.re)
}

/// Shift-independent data for evaluating many traces of the same matrix.
///
/// The dense block is diagonalized once, `B0 = V Λ Vᵀ`; in that basis
/// `E` is diagonal with entries `μ`, and every shift costs one
/// `O(nR²)` product plus an `O(R³)` solve.
#[derive(Debug, Clone)]
pub struct PreparedTracer {
    mu: Vec<f64>,
    /// `Q̃ᵀ = (Wᵀ Q)ᵀ`, `R × n`, with `W = blockdiag(V, I)`.
    qt_t: DMatrix<f64>,
    /// `P̃ = Wᵀ P`, `n × R`.
    p_tilde: DMatrix<f64>,
    symmetric: bool,
    rank: usize,
}

impl PreparedTracer {
    pub fn new(m: &BdlrMatrix) -> Result<Self> {
        let nb = m.n_b();
        let r = m.rank();
        let (lam_b, v) = symmetric_eigen(m.b0())?;
        let mut mu: Vec<f64> = lam_b.iter().copied().collect();
        mu.extend(m.d0().iter().copied());

        let rotate = |x: &DMatrix<f64>| {
            let mut out = x.clone();
            if nb > 0 {
                let head = v.transpose() * x.rows(0, nb);
                out.rows_mut(0, nb).copy_from(&head);
            }
            out
        };
        let q_tilde = rotate(m.q());
        let p_tilde = if m.is_symmetric() { q_tilde.clone() } else { rotate(m.p()) };

        Ok(Self {
            mu,
            qt_t: q_tilde.transpose(),
            p_tilde,
            symmetric: m.is_symmetric(),
            rank: r,
        })
    }

    /// Eigenvalues of the block-diagonal part.
    pub fn block_eigenvalues(&self) -> &[f64] {
        &self.mu
    }

    /// Rotated correction factor `Wᵀ Q` (`n × R`).
    pub fn q_tilde(&self) -> DMatrix<f64> {
        self.qt_t.transpose()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric || self.rank == 0
    }

    /// Complex trace at one shift.
    pub fn complex(&self, s: ShiftParams) -> Result<Complex64> {
        s.validate()?;
        let z = s.z();
        let d: Vec<Complex64> = self.mu.iter().map(|&m| (z - m).inv()).collect();
        let mut trace: Complex64 = d.iter().sum();
        let r = self.rank;
        if r == 0 {
            return Ok(trace);
        }
        let n = self.mu.len();
        // Rows: Re d, Im d, Re d², Im d², each scaling the columns of Q̃ᵀ.
        let mut stacked = DMatrix::<f64>::zeros(4 * r, n);
        for i in 0..n {
            let di = d[i];
            let d2 = di * di;
            let src = self.qt_t.column(i);
            let mut dst = stacked.column_mut(i);
            for a in 0..r {
                let v = src[a];
                dst[a] = di.re * v;
                dst[r + a] = di.im * v;
                dst[2 * r + a] = d2.re * v;
                dst[3 * r + a] = d2.im * v;
            }
        }
        let prod = &stacked * &self.p_tilde;
        // Augmented [K | Z] with the real embedding [[Re K, −Im K], [Im K, Re K]]
        // of K = I − Q̃ᵀ diag(d) P̃.
        let r2 = 2 * r;
        let mut aug = vec![0.0; r2 * (r2 + r)];
        for (j, col) in aug.chunks_exact_mut(r2).enumerate() {
            let (top, bottom) = col.split_at_mut(r);
            if j < r {
                let p = prod.column(j);
                for i in 0..r {
                    top[i] = -p[i];
                    bottom[i] = -p[r + i];
                }
                top[j] += 1.0;
            } else if j < r2 {
                let p = prod.column(j - r);
                for i in 0..r {
                    top[i] = p[r + i];
                    bottom[i] = -p[i];
                }
                bottom[j - r] += 1.0;
            } else {
                col.copy_from_slice(&prod.as_slice()[(j - r2) * 2 * r2 + r2..(j - r2 + 1) * 2 * r2]);
            }
        }
        let (k, zmat) = aug.split_at(r2 * r2);
        let x = small_solve(k, zmat, r2).ok_or(Error::NearSingularCore { cond: f64::INFINITY })?;
        for j in 0..r {
            trace += Complex64::new(x[j * r2 + j], x[j * r2 + r + j]);
        }
        Ok(trace)
    }

    /// Real trace `trace[((tI − A)² + η²I)⁻¹]` at one shift; requires `P = Q`.
    ///
    /// With `wᵢ = 1/(mᵢ² + η²)`, `mᵢ = t − μᵢ`, and the moments
    /// `Cⱼ = Σᵢ cⱼ(i) q̃ᵢq̃ᵢᵀ`, the core satisfies
    /// `K [[I, 0], [G, I]] = D [[X, −Y], [Y, X]] D⁻¹` with `D = diag(I, ηI)`,
    /// `X = I − Σ wm q̃q̃ᵀ`, `Y = η Σ w q̃q̃ᵀ` and `G = Q̃ᵀQ̃`. Moving the same
    /// factors onto `Q̄ᵀE₀⁻²P̄` reduces `trace[K⁻¹ Q̄ᵀE₀⁻²P̄]` to the trace of the
    /// top block of the solution of
    ///
    /// ```text
    /// [[X, −Y], [Y, X]] [Vr; Vi] = [−2 Σ w²m q̃q̃ᵀ;  Σ w²(η² − m²)/η q̃q̃ᵀ]
    /// ```
    ///
    /// which has `R` right-hand sides instead of `2R`.
    pub fn real(&self, s: ShiftParams) -> Result<f64> {
        s.validate()?;
        let eta = s.eta;
        let eta2 = eta * eta;
        let shifted: Vec<f64> = self.mu.iter().map(|&m| s.t - m).collect();
        let w: Vec<f64> = shifted.iter().map(|&x| 1.0 / (x * x + eta2)).collect();
        let mut trace: f64 = w.iter().sum();
        let r = self.rank;
        if r == 0 {
            return Ok(trace);
        }
        if !self.symmetric {
            return Err(Error::InvalidParameter(
                "the real-valued trace needs a symmetric correction (P = Q)".into(),
            ));
        }
        let n = self.mu.len();
        let mut stacked = DMatrix::<f64>::zeros(4 * r, n);
        for i in 0..n {
            let (wi, mi) = (w[i], shifted[i]);
            let weights = [wi, wi * mi, wi * wi * mi, wi * wi * (eta2 - mi * mi) / eta];
            let src = self.qt_t.column(i);
            let mut dst = stacked.column_mut(i);
            for (k, &c) in weights.iter().enumerate() {
                for a in 0..r {
                    dst[k * r + a] = c * src[a];
                }
            }
        }
        let prod = &stacked * &self.p_tilde;
        let moment = |k: usize| prod.rows(k * r, r);
        let r2 = 2 * r;
        let mut aug = vec![0.0; r2 * (r2 + r)];
        for (j, col) in aug.chunks_exact_mut(r2).enumerate() {
            let (top, bottom) = col.split_at_mut(r);
            if j < r {
                // [X; Y] column j.
                let (m0, m1) = (moment(0), moment(1));
                for i in 0..r {
                    top[i] = -m1[(i, j)];
                    bottom[i] = eta * m0[(i, j)];
                }
                top[j] += 1.0;
            } else if j < r2 {
                // [−Y; X] column j − r.
                let (m0, m1) = (moment(0), moment(1));
                let c = j - r;
                for i in 0..r {
                    top[i] = -eta * m0[(i, c)];
                    bottom[i] = -m1[(i, c)];
                }
                bottom[c] += 1.0;
            } else {
                let (m2, m3) = (moment(2), moment(3));
                let c = j - r2;
                for i in 0..r {
                    top[i] = -2.0 * m2[(i, c)];
                    bottom[i] = m3[(i, c)];
                }
            }
        }
        let (k, rhs) = aug.split_at(r2 * r2);
        let x = small_solve(k, rhs, r2).ok_or(Error::NearSingularCore { cond: f64::INFINITY })?;
        trace -= (0..r).map(|j| x[j * r2 + j]).sum::<f64>();
        Ok(trace)
    }
}
