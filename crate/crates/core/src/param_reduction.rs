//! Fast multi-shift traces through a shift-separated expansion.
//!
//! Working in the eigenbasis of the block-diagonal part `E = W diag(μ) Wᵀ`
//! (with `P = Q` and `Q̃ = WᵀQ`), the shift dependence is separated twice:
//!
//! * `E(t)⁻¹ ≈ Σ_m p_m(t) E_m`, where `E_m = diag(w_m)` and
//!   `w_m(i) = 1/(t_m − iη − μ_i)` are skeleton rows picked by adaptive
//!   cross approximation of the Cauchy-type table `1/(t − iη − μ_i)`.
//!   The coefficients `p(t) = F[t, J] F[I, J]⁻¹` are explicit at any `t`.
//! * `K(t)⁻¹ ≈ Σ_k c_k(t) K_k` with `K(t) = I − Q̃ᵀ E(t)⁻¹ Q̃`, where the `K_k`
//!   are `K⁻¹` at skeleton shifts and `c(t)` interpolates selected entries.
//!
//! The correction trace then reads
//! `trace[E⁻¹Q K⁻¹ QᵀE⁻¹](t) ≈ Σ_{m,k,m′} p_m(t) c_k(t) p_{m′}(t) T_{mkm′}`
//! with the shift-independent `T_{mkm′} = Σ_i w_m(i) w_{m′}(i) (Q̃ K_k Q̃ᵀ)_ii`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dos::SpectralGrid;
use crate::error::{Error, Result};
use crate::linalg::{complex_matmul, complex_matmul_split, split_complex};
use crate::resolvent_trace::PreparedTracer;
use crate::structured_matrix::BdlrMatrix;

/// Ratio between the internal cross tolerance and `eps_sep`.
const INTERNAL_TOL_FACTOR: f64 = 0.1;
/// Target spacing of the coarse shift samples for the core family, in units of η.
const TAU_SPACING: f64 = 0.125;
const MAX_TAU_SAMPLES: usize = 4096;
const RANDOM_CHECKS: usize = 16;
const VALIDATION_POINTS: usize = 32;
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparatedOptions {
    pub eps_sep: f64,
    pub max_rank_e: usize,
    pub max_rank_k: usize,
    pub seed: u64,
}

impl Default for SeparatedOptions {
    fn default() -> Self {
        Self {
            eps_sep: 1e-6,
            max_rank_e: 1024,
            max_rank_k: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeparatedFamily {
    grid: SpectralGrid,
    eta: f64,
    eps_sep: f64,
    mu: Vec<f64>,
    rank: usize,
    /// Skeleton eigen-indices `J` of the resolvent family.
    e_cols: Vec<usize>,
    /// Skeleton shifts `t_m`.
    e_shifts: Vec<f64>,
    /// `F[I, J]⁻¹`, `R_E × R_E`.
    e_core_inv: DMatrix<C>,
    /// Columns `w_m`, `n × R_E`.
    w: DMatrix<C>,
    /// Packed upper triangles of `G_m = Q̃ᵀ diag(w_m) Q̃`, one column per `m`.
    g_packed: DMatrix<C>,
    /// Packed entries `(a, b)`, `a ≤ b`, selected for the core family.
    k_entries: Vec<(usize, usize)>,
    k_shifts: Vec<f64>,
    k_core_inv: DMatrix<C>,
    k_terms: Vec<DMatrix<C>>,
    /// `T[m, k·R_E + m′]`, split into real and imaginary parts.
    t_re: DMatrix<f64>,
    t_im: DMatrix<f64>,
    /// `p(t_j)` and `c(t_j)` on every grid point, one column per point.
    grid_p: DMatrix<C>,
    grid_c: DMatrix<C>,
}

/// Builds the separated family on the span of `grid`.
pub fn build_separated_family(
    m: &BdlrMatrix,
    grid: &SpectralGrid,
    eta: f64,
    eps_sep: f64,
) -> Result<SeparatedFamily> {
    let opts = SeparatedOptions {
        eps_sep,
        ..SeparatedOptions::default()
    };
    SeparatedFamily::build(m, grid, eta, &opts)
}

/// Correction trace `trace[E⁻¹Q K⁻¹ QᵀE⁻¹](t)` from the separated family.
pub fn trace_separated(f: &SeparatedFamily, t: f64) -> Result<C> {
    f.trace_correction(t)
}

fn packed_len(r: usize) -> usize {
    r * (r + 1) / 2
}

fn packed_index(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    b * (b + 1) / 2 + a
}

fn unpack_entry(idx: usize) -> (usize, usize) {
    let mut b = ((((8 * idx + 1) as f64).sqrt() - 1.0) / 2.0) as usize;
    while b * (b + 1) / 2 > idx {
        b -= 1;
    }
    while (b + 1) * (b + 2) / 2 <= idx {
        b += 1;
    }
    (idx - b * (b + 1) / 2, b)
}

impl SeparatedFamily {
    pub fn build(m: &BdlrMatrix, grid: &SpectralGrid, eta: f64, opts: &SeparatedOptions) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(opts.eps_sep > 0.0 && opts.eps_sep < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_sep must lie in (0, 1), got {}",
                opts.eps_sep
            )));
        }
        if !m.is_symmetric() {
            return Err(Error::InvalidParameter(
                "the separated family needs a symmetric correction (P = Q)".into(),
            ));
        }
        let tol = INTERNAL_TOL_FACTOR * opts.eps_sep;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let tracer = PreparedTracer::new(m)?;
        let mu = tracer.block_eigenvalues().to_vec();
        let q_tilde = tracer.q_tilde();
        let n = mu.len();
        let r = m.rank();
        let shifts = grid.points();

        // Resolvent family.
        let entry = |t: f64, i: usize| (C::new(t, -eta) - mu[i]).inv();
        let cross = aca_partial(
            shifts.len(),
            n,
            |k| (0..n).map(|i| entry(shifts[k], i)).collect(),
            |i| shifts.iter().map(|&t| entry(t, i)).collect(),
            tol,
            opts.max_rank_e,
            &mut rng,
        )?;
        let e_shifts: Vec<f64> = cross.rows.iter().map(|&k| shifts[k]).collect();
        let e_cols = cross.cols;
        let re = e_cols.len();
        let core = DMatrix::from_fn(re, re, |a, b| entry(e_shifts[a], e_cols[b]));
        let e_core_inv = core
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular skeleton in the resolvent family".into()))?;
        let w = DMatrix::from_fn(n, re, |i, a| entry(e_shifts[a], i));

        let mut family = Self {
            grid: *grid,
            eta,
            eps_sep: opts.eps_sep,
            mu,
            rank: r,
            e_cols,
            e_shifts,
            e_core_inv,
            w,
            g_packed: DMatrix::zeros(0, re),
            k_entries: Vec::new(),
            k_shifts: Vec::new(),
            k_core_inv: DMatrix::zeros(0, 0),
            k_terms: Vec::new(),
            t_re: DMatrix::zeros(re, 0),
            t_im: DMatrix::zeros(re, 0),
            grid_p: DMatrix::zeros(re, 0),
            grid_c: DMatrix::zeros(0, 0),
        };
        family.grid_p = family.coefficients_p(&shifts);
        if r == 0 {
            family.grid_c = DMatrix::zeros(0, shifts.len());
            return Ok(family);
        }

        // G_m in packed form: Gmat = Hᵀ W with H[i, (a, b)] = Q̃_ia Q̃_ib.
        let rp = packed_len(r);
        let mut h_t = DMatrix::<f64>::zeros(rp, n);
        for i in 0..n {
            let mut col = h_t.column_mut(i);
            for b in 0..r {
                for a in 0..=b {
                    col[packed_index(a, b)] = q_tilde[(i, a)] * q_tilde[(i, b)];
                }
            }
        }
        let (wr, wi) = split_complex(&family.w);
        family.g_packed = (&h_t * &wr).zip_map(&(&h_t * &wi), C::new);
        drop(h_t);

        // Core family on coarse shift samples, refined until held-out shifts are reproduced.
        let h = grid.h();
        let mut stride = ((TAU_SPACING * eta / h).floor() as usize).max(1);
        stride = stride.max(shifts.len().div_ceil(MAX_TAU_SAMPLES));
        let validation: Vec<usize> = (0..VALIDATION_POINTS).map(|_| rng.gen_range(0..shifts.len())).collect();
        loop {
            let tau: Vec<f64> = shifts.iter().copied().step_by(stride).collect();
            let samples = family.packed_core_inverses(&tau)?;
            let kc = aca_full(&samples, tol, opts.max_rank_k)?;
            family.k_entries = kc.rows.iter().map(|&i| unpack_entry(i)).collect();
            family.k_shifts = kc.cols.iter().map(|&j| tau[j]).collect();
            let rk = kc.rows.len();
            let kcore = DMatrix::from_fn(rk, rk, |a, b| samples[(kc.rows[a], kc.cols[b])]);
            family.k_core_inv = kcore
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular skeleton in the core family".into()))?;
            family.k_terms = kc
                .cols
                .iter()
                .map(|&j| unpack_full(&samples.column(j).into_owned(), r))
                .collect();

            let worst = family.core_family_error(&validation.iter().map(|&k| shifts[k]).collect::<Vec<_>>())?;
            if worst <= 10.0 * tol || stride == 1 || tau.len() >= MAX_TAU_SAMPLES {
                break;
            }
            stride = stride.div_ceil(2);
        }

        family.fill_trace_tensor(&q_tilde);
        family.grid_c = family.coefficients_c(&family.grid_p.clone())?;
        Ok(family)
    }

    pub fn rank_e(&self) -> usize {
        self.e_cols.len()
    }

    pub fn rank_k(&self) -> usize {
        self.k_entries.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn eps_sep(&self) -> f64 {
        self.eps_sep
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    /// Skeleton shifts of the resolvent and core families.
    pub fn skeleton_shifts(&self) -> (&[f64], &[f64]) {
        (&self.e_shifts, &self.k_shifts)
    }

    /// Number of stored scalars in `T` (`R_E² · R_K`).
    pub fn trace_tensor_len(&self) -> usize {
        self.t_re.len()
    }

    /// `T_{mkm′}`.
    pub fn trace_tensor(&self, m: usize, k: usize, mp: usize) -> C {
        let col = k * self.rank_e() + mp;
        C::new(self.t_re[(m, col)], self.t_im[(m, col)])
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if !self.grid.contains(t) {
            return Err(Error::Domain {
                t,
                lo: self.grid.a_lo,
                hi: self.grid.a_hi,
            });
        }
        Ok(())
    }

    /// `p(t)` for each shift, one column per shift.
    fn coefficients_p(&self, ts: &[f64]) -> DMatrix<C> {
        let re = self.rank_e();
        let rows = DMatrix::from_fn(re, ts.len(), |a, j| {
            (C::new(ts[j], -self.eta) - self.mu[self.e_cols[a]]).inv()
        });
        complex_matmul(&self.e_core_inv.transpose(), &rows)
    }

    /// Diagonal of the separated approximation of `E(t)⁻¹` (eigenbasis).
    pub fn resolvent_diagonal(&self, t: f64) -> Result<DVector<C>> {
        self.check_domain(t)?;
        let p = self.coefficients_p(&[t]);
        Ok(&self.w * p.column(0))
    }

    /// Exact diagonal `1/(t − iη − μ_i)` in the same basis.
    pub fn exact_resolvent_diagonal(&self, t: f64) -> DVector<C> {
        DVector::from_iterator(self.mu.len(), self.mu.iter().map(|&m| (C::new(t, -self.eta) - m).inv()))
    }

    /// Packed `K(t)` from the resolvent family, one column per shift.
    fn packed_cores(&self, p: &DMatrix<C>) -> DMatrix<C> {
        let mut k = complex_matmul(&self.g_packed, p);
        k.neg_mut();
        for b in 0..self.rank {
            k.row_mut(packed_index(b, b)).add_scalar_mut(C::new(1.0, 0.0));
        }
        k
    }

    fn packed_core_inverses(&self, ts: &[f64]) -> Result<DMatrix<C>> {
        let r = self.rank;
        let cores = self.packed_cores(&self.coefficients_p(ts));
        let cols: Vec<Result<DVector<C>>> = (0..ts.len())
            .into_par_iter()
            .map(|j| {
                let k = unpack_full(&cores.column(j).into_owned(), r);
                let inv = k
                    .lu()
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("singular core matrix".into()))?;
                Ok(DVector::from_fn(packed_len(r), |idx, _| {
                    let (a, b) = unpack_entry(idx);
                    inv[(a, b)]
                }))
            })
            .collect();
        let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// Largest relative error of `Σ c_k(t) K_k` against `K(t)⁻¹` over `ts`.
    fn core_family_error(&self, ts: &[f64]) -> Result<f64> {
        let exact = self.packed_core_inverses(ts)?;
        let c = self.coefficients_c(&self.coefficients_p(ts))?;
        let mut worst: f64 = 0.0;
        for j in 0..ts.len() {
            let mut approx = DMatrix::<C>::zeros(self.rank, self.rank);
            for (k, term) in self.k_terms.iter().enumerate() {
                approx += term * c[(k, j)];
            }
            let truth = unpack_full(&exact.column(j).into_owned(), self.rank);
            worst = worst.max((approx - &truth).norm() / truth.norm());
        }
        Ok(worst)
    }

    /// `c(t)` for each column of `p`, from selected entries of `K(t)⁻¹`.
    fn coefficients_c(&self, p: &DMatrix<C>) -> Result<DMatrix<C>> {
        let r = self.rank;
        let rk = self.rank_k();
        let mut needed: Vec<usize> = self.k_entries.iter().map(|&(_, b)| b).collect();
        needed.sort_unstable();
        needed.dedup();
        let slot: Vec<usize> = self
            .k_entries
            .iter()
            .map(|&(_, b)| needed.binary_search(&b).unwrap())
            .collect();
        let mut rhs = DMatrix::<C>::zeros(r, needed.len());
        for (s, &b) in needed.iter().enumerate() {
            rhs[(b, s)] = C::new(1.0, 0.0);
        }

        let npts = p.ncols();
        let starts: Vec<usize> = (0..npts).step_by(CHUNK).collect();
        let chunks: Vec<Result<DMatrix<C>>> = starts
            .par_iter()
            .map(|&s0| {
                let len = CHUNK.min(npts - s0);
                let cores = self.packed_cores(&p.columns(s0, len).into_owned());
                let mut vals = DMatrix::<C>::zeros(rk, len);
                for j in 0..len {
                    let k = unpack_full(&cores.column(j).into_owned(), r);
                    let sol = k
                        .lu()
                        .solve(&rhs)
                        .ok_or_else(|| Error::Numerical("singular core matrix".into()))?;
                    for (e, &(a, _)) in self.k_entries.iter().enumerate() {
                        vals[(e, j)] = sol[(a, slot[e])];
                    }
                }
                Ok(complex_matmul(&self.k_core_inv, &vals))
            })
            .collect();
        let mut out = DMatrix::<C>::zeros(rk, npts);
        for (s0, chunk) in starts.into_iter().zip(chunks) {
            let chunk = chunk?;
            out.columns_mut(s0, chunk.ncols()).copy_from(&chunk);
        }
        Ok(out)
    }

    fn fill_trace_tensor(&mut self, q_tilde: &DMatrix<f64>) {
        let re = self.rank_e();
        let rk = self.rank_k();
        let (wr, wi) = split_complex(&self.w);
        let (wr_t, wi_t) = (wr.transpose(), wi.transpose());
        let blocks: Vec<DMatrix<C>> = self
            .k_terms
            .par_iter()
            .map(|kk| {
                let (kr, ki) = split_complex(kk);
                let ar = q_tilde * kr;
                let ai = q_tilde * ki;
                let n = q_tilde.nrows();
                let mut xr = wr.clone();
                let mut xi = wi.clone();
                for i in 0..n {
                    let hr = ar.row(i).dot(&q_tilde.row(i));
                    let hi = ai.row(i).dot(&q_tilde.row(i));
                    for m in 0..re {
                        let (a, b) = (wr[(i, m)], wi[(i, m)]);
                        xr[(i, m)] = hr * a - hi * b;
                        xi[(i, m)] = hr * b + hi * a;
                    }
                }
                complex_matmul_split(&wr_t, &wi_t, &xr, &xi)
            })
            .collect();
        let mut t_re = DMatrix::zeros(re, rk * re);
        let mut t_im = DMatrix::zeros(re, rk * re);
        for (k, block) in blocks.iter().enumerate() {
            for mp in 0..re {
                for m in 0..re {
                    t_re[(m, k * re + mp)] = block[(m, mp)].re;
                    t_im[(m, k * re + mp)] = block[(m, mp)].im;
                }
            }
        }
        self.t_re = t_re;
        self.t_im = t_im;
    }

    /// Contracts `T` with `p` and `c` for a batch of shifts (one column each).
    fn contract(&self, p: &DMatrix<C>, c: &DMatrix<C>) -> Vec<C> {
        let re = self.rank_e();
        let rk = self.rank_k();
        let npts = p.ncols();
        if rk == 0 {
            return vec![C::new(0.0, 0.0); npts];
        }
        let (pr, pi) = split_complex(&p.transpose());
        let a = complex_matmul_split(&pr, &pi, &self.t_re, &self.t_im);
        (0..npts)
            .map(|j| {
                let mut total = C::new(0.0, 0.0);
                for k in 0..rk {
                    let mut inner = C::new(0.0, 0.0);
                    for mp in 0..re {
                        inner += a[(j, k * re + mp)] * p[(mp, j)];
                    }
                    total += inner * c[(k, j)];
                }
                total
            })
            .collect()
    }

    /// Separated correction trace at an arbitrary shift in the grid span.
    pub fn trace_correction(&self, t: f64) -> Result<C> {
        self.check_domain(t)?;
        if self.rank == 0 {
            return Ok(C::new(0.0, 0.0));
        }
        let p = self.coefficients_p(&[t]);
        let c = self.coefficients_c(&p)?;
        Ok(self.contract(&p, &c)[0])
    }

    /// Full resolvent trace `trace[((t − iη)I − A)⁻¹]` at an arbitrary shift.
    pub fn trace(&self, t: f64) -> Result<C> {
        Ok(self.block_trace(t) + self.trace_correction(t)?)
    }

    fn block_trace(&self, t: f64) -> C {
        let z = C::new(t, -self.eta);
        self.mu.iter().map(|&m| (z - m).inv()).sum()
    }

    /// Full resolvent traces on every grid point, using the coefficients
    /// precomputed during the build.
    pub fn grid_traces(&self) -> Vec<C> {
        let npts = self.grid.n_points;
        let starts: Vec<usize> = (0..npts).step_by(CHUNK).collect();
        let parts: Vec<Vec<C>> = starts
            .par_iter()
            .map(|&s0| {
                let len = CHUNK.min(npts - s0);
                let mut out = if self.rank == 0 {
                    vec![C::new(0.0, 0.0); len]
                } else {
                    self.contract(
                        &self.grid_p.columns(s0, len).into_owned(),
                        &self.grid_c.columns(s0, len).into_owned(),
                    )
                };
                for (j, v) in out.iter_mut().enumerate() {
                    *v += self.block_trace(self.grid.point(s0 + j));
                }
                out
            })
            .collect();
        parts.concat()
    }
}

fn unpack_full(packed: &DVector<C>, r: usize) -> DMatrix<C> {
    DMatrix::from_fn(r, r, |a, b| packed[packed_index(a, b)])
}

struct Cross {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn dot_h(x: &[C], y: &[C]) -> C {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn norm(x: &[C]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn argmax_abs(x: &[C], skip: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
    x.iter()
        .enumerate()
        .filter(|(i, _)| !skip(*i))
        .map(|(i, v)| (i, v.norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Adaptive cross approximation with partial pivoting on an implicit
/// `nr × nc` table, stopped when the update is below `tol` relative to the
/// approximant and random rows are reproduced to `tol`.
fn aca_partial(
    nr: usize,
    nc: usize,
    row: impl Fn(usize) -> Vec<C>,
    col: impl Fn(usize) -> Vec<C>,
    tol: f64,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Cross> {
    let mut us: Vec<Vec<C>> = Vec::new();
    let mut vs: Vec<Vec<C>> = Vec::new();
    let mut rows = Vec::new();
    let mut cols: Vec<usize> = Vec::new();
    let mut row_tried = vec![false; nr];
    let mut norm2 = 0.0f64;
    let mut next = nr / 2;
    let mut last_step = f64::INFINITY;

    let residual_row = |i: usize, us: &[Vec<C>], vs: &[Vec<C>]| {
        let mut r = row(i);
        for (u, v) in us.iter().zip(vs) {
            let a = u[i];
            if a != C::new(0.0, 0.0) {
                r.iter_mut().zip(v).for_each(|(x, y)| *x -= a * y);
            }
        }
        r
    };

    loop {
        row_tried[next] = true;
        let r = residual_row(next, &us, &vs);
        let pivot = argmax_abs(&r, |j| cols.contains(&j));
        let scale = norm2.sqrt().max(1e-300);
        let usable = matches!(pivot, Some((_, v)) if v > 1e-14 * scale && v > 0.0);
        if usable {
            if rows.len() == cap.min(nr).min(nc) {
                let achieved = last_step / scale;
                if rows.len() < nr.min(nc) {
                    return Err(Error::RankOverflow { cap, achieved });
                }
                break;
            }
            let (j, _) = pivot.unwrap();
            let pj = r[j];
            let v: Vec<C> = r.iter().map(|x| x / pj).collect();
            let mut u = col(j);
            for (uk, vk) in us.iter().zip(&vs) {
                let a = vk[j];
                u.iter_mut().zip(uk).for_each(|(x, y)| *x -= a * y);
            }
            let mut cross = 0.0;
            for (uk, vk) in us.iter().zip(&vs) {
                cross += 2.0 * (dot_h(uk, &u) * dot_h(vk, &v)).re;
            }
            let step = norm(&u) * norm(&v);
            norm2 = (norm2 + cross + step * step).max(0.0);
            last_step = step;
            rows.push(next);
            cols.push(j);
            us.push(u);
            vs.push(v);
            if step > tol * norm2.sqrt() {
                let u = us.last().unwrap();
                match argmax_abs(u, |i| row_tried[i]) {
                    Some((i, _)) => {
                        next = i;
                        continue;
                    }
                    None => break,
                }
            }
        }
        // Converged by the update estimate (or a row was already represented):
        // look for a badly reproduced random row.
        let mut worst = (0usize, 0.0f64);
        for _ in 0..RANDOM_CHECKS {
            let i = rng.gen_range(0..nr);
            let truth = norm(&row(i));
            let err = norm(&residual_row(i, &us, &vs));
            let rel = if truth > 0.0 { err / truth } else { 0.0 };
            if rel > worst.1 {
                worst = (i, rel);
            }
        }
        if worst.1 <= tol || row_tried[worst.0] && !usable {
            break;
        }
        next = worst.0;
    }
    Ok(Cross { rows, cols })
}

/// Cross approximation with full pivoting on a materialized table, stopped
/// when every column is reproduced to `tol` relative to its norm.
fn aca_full(m: &DMatrix<C>, tol: f64, cap: usize) -> Result<Cross> {
    let (nr, nc) = m.shape();
    let col_norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    let mut res = m.clone();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    loop {
        let worst = res
            .column_iter()
            .zip(&col_norms)
            .map(|(c, &n0)| if n0 > 0.0 { c.norm() / n0 } else { 0.0 })
            .fold(0.0, f64::max);
        if worst <= tol {
            break;
        }
        if rows.len() >= cap.min(nr).min(nc) {
            return Err(Error::RankOverflow { cap, achieved: worst });
        }
        let (mut bi, mut bj, mut bv) = (0, 0, -1.0);
        for j in 0..nc {
            for i in 0..nr {
                let v = res[(i, j)].norm();
                if v > bv {
                    (bi, bj, bv) = (i, j, v);
                }
            }
        }
        if bv <= 0.0 {
            break;
        }
        let pivot = res[(bi, bj)];
        let col = res.column(bj).into_owned();
        let row = res.row(bi).into_owned() / pivot;
        res -= &col * &row;
        rows.push(bi);
        cols.push(bj);
    }
    Ok(Cross { rows, cols })
}
