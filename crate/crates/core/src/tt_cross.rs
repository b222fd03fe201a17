//! Adaptive cross interpolation of QTT vectors from entry evaluators.
//!
//! The sweep is the two-site maxvol cross. Each bond `k` keeps a set of left
//! multi-indices `I_k` (digits `1..k`) and right multi-indices `J_k` (digits
//! `k+1..d′`). A bond is processed by sampling the superblock
//! `f(I_{k−1}, j_k, j_{k+1}, J_{k+1})`, truncating its SVD at a fraction of
//! the per-bond budget `eps/√(d′−1)`, and choosing the new index set with
//! maxvol on the kept singular vectors. Passes alternate direction.
//!
//! A fixed random probe set is evaluated once. After every pass the worst
//! probe joins the index sets used by the next pass while the probe error is
//! above `eps/2`, which keeps the sweep from settling on a partial pattern.
//! The result is recompressed at `eps`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dos::{auto_interval, SpectralGrid};
use crate::error::{Error, Result};
use crate::linalg::{maxvol_seeded, thin_svd, truncation_rank};
use crate::qtt::{average_rank, Core, QttVector};
use crate::resolvent_trace::{PreparedTracer, ShiftParams};
use crate::structured_matrix::BdlrMatrix;

const MAXVOL_TOL: f64 = 1.05;
const MAXVOL_ITERS: usize = 100;
/// Number of random indices seeding the right index sets.
const INITIAL_RANK: usize = 2;
/// Superblock truncation uses this fraction of the per-bond budget.
const CROSS_TOL_FACTOR: f64 = 0.5;
/// The final recompression uses this fraction of `eps`.
const FINAL_ROUND_FACTOR: f64 = 1.0;
/// Probe change between passes, as a fraction of `eps`, below which the
/// sweep may stop.
const STOP_FACTOR: f64 = 0.25;
/// Probe error, as a fraction of `eps`, below which the sweep may stop.
const PROBE_FACTOR: f64 = 0.5;
/// Worst probes injected into the index sets after an inaccurate pass.
const KICK: usize = 1;

/// Tuning knobs for [`cross_interpolate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossOptions {
    pub q: usize,
    pub eps: f64,
    pub max_rank: usize,
    /// Hard cap on evaluator calls (validation samples excluded).
    pub budget: Option<usize>,
    pub seed: u64,
    /// Maximum number of directional passes.
    pub max_sweeps: usize,
    /// Size of the persistent probe set for the stopping test.
    pub probes: usize,
    /// Size of the held-out validation sample.
    pub validation: usize,
}

impl Default for CrossOptions {
    fn default() -> Self {
        Self {
            q: 2,
            eps: 1e-6,
            max_rank: 64,
            budget: None,
            seed: 0,
            max_sweeps: 60,
            probes: 256,
            validation: 1000,
        }
    }
}

impl CrossOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }
}

/// Outcome of a cross interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    /// Distinct evaluator invocations made by the interpolation itself.
    pub calls: usize,
    pub ranks: Vec<usize>,
    pub average_rank: f64,
    /// Relative 2-norm error on the held-out validation sample.
    pub validation_error: f64,
    /// Evaluator invocations spent on validation, reported separately.
    pub validation_calls: usize,
    /// Directional passes performed.
    pub sweeps: usize,
}

/// Memoizing evaluator; counts each distinct index once.
struct Sampler<'a, F> {
    f: &'a F,
    cache: HashMap<usize, f64>,
    budget: Option<usize>,
}

impl<F: Fn(usize) -> f64 + Sync> Sampler<'_, F> {
    fn calls(&self) -> usize {
        self.cache.len()
    }

    /// Values at 0-based indices, or `None` if the budget would be exceeded.
    fn eval(&mut self, idx: &[usize]) -> Option<Vec<f64>> {
        let mut missing: Vec<usize> = idx.iter().copied().filter(|i| !self.cache.contains_key(i)).collect();
        missing.sort_unstable();
        missing.dedup();
        if let Some(b) = self.budget {
            if self.cache.len() + missing.len() > b {
                return None;
            }
        }
        let f = self.f;
        let values: Vec<f64> = missing.par_iter().map(|&i| f(i + 1)).collect();
        self.cache.extend(missing.into_iter().zip(values));
        Some(idx.iter().map(|i| self.cache[i]).collect())
    }
}

/// Builds a QTT approximation of the vector `i ↦ f(i)`, `i = 1..q^d′`.
///
/// The evaluator must be pure. The pass loop stops once the approximant
/// changes by less than `eps/4` on the probe set between consecutive passes
/// while its probe error is at most `eps/2`, or once two passes in a row need
/// no new evaluations. Probe evaluations count towards `calls`; validation
/// samples do not.
pub fn cross_interpolate<F>(f: &F, d_prime: usize, opts: &CrossOptions) -> Result<(QttVector<f64>, CrossReport)>
where
    F: Fn(usize) -> f64 + Sync,
{
    let q = opts.q;
    if q < 2 || d_prime == 0 {
        return Err(Error::InvalidParameter(format!("need q ≥ 2 and d′ ≥ 1, got q = {q}, d′ = {d_prime}")));
    }
    if !(opts.eps > 0.0) || opts.max_rank == 0 {
        return Err(Error::InvalidParameter("cross needs eps > 0 and max_rank ≥ 1".into()));
    }
    let n: usize = q
        .checked_pow(d_prime as u32)
        .ok_or_else(|| Error::InvalidParameter(format!("{q}^{d_prime} overflows the index range")))?;
    let d = d_prime;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pow: Vec<usize> = (0..=d).map(|k| q.pow(k as u32)).collect();
    let mut sampler = Sampler { f, cache: HashMap::new(), budget: opts.budget };
    let budget_error = |best: Option<QttVector<f64>>, calls: usize, sweeps: usize| {
        let best = best.map(|t| Box::new((t.clone(), partial_report(&t, calls, sweeps))));
        Error::BudgetExhausted { budget: opts.budget.unwrap_or(0), best }
    };

    let mut previous: Option<(QttVector<f64>, Vec<f64>)> = None;
    let mut sweeps = 0;
    let mut converged = false;
    let mut cap_hit = false;
    let mut last_change = f64::INFINITY;
    let mut calls_after = [usize::MAX; 3];

    if d == 1 {
        let Some(vals) = sampler.eval(&(0..q).collect::<Vec<_>>()) else {
            return Err(budget_error(None, sampler.calls(), 0));
        };
        let tt = QttVector::from_cores(q, vec![Core::new(1, q, 1, vals)?])?;
        previous = Some((tt, Vec::new()));
        sweeps = 1;
        converged = true;
    }

    // Right sets J_k (digits k+1..d′ as an integer) start nested from a few
    // random indices; J_d′ and I_0 are the empty multi-index.
    let starts: Vec<usize> = (0..INITIAL_RANK).map(|_| rng.gen_range(0..n)).collect();
    let mut right: Vec<Vec<usize>> = (0..=d)
        .map(|k| {
            let mut set: Vec<usize> = starts.iter().map(|&s| s / pow[k]).collect();
            set.sort_unstable();
            set.dedup();
            set
        })
        .collect();
    right[d] = vec![0];
    let mut left: Vec<Vec<usize>> = vec![vec![0]; d + 1];
    let delta = CROSS_TOL_FACTOR * opts.eps / ((d.max(2) - 1) as f64).sqrt();
    let probes: Vec<usize> = (0..opts.probes.min(n)).map(|_| rng.gen_range(0..n)).collect();
    let truth = if converged {
        Vec::new()
    } else {
        sampler.eval(&probes).ok_or_else(|| budget_error(None, sampler.calls(), 0))?
    };

    while !converged && sweeps < opts.max_sweeps {
        let forward = sweeps % 2 == 0;
        let mut cores: Vec<Option<Core<f64>>> = vec![None; d];
        let bonds: Vec<usize> = if forward { (1..d).collect() } else { (1..d).rev().collect() };
        for k in bonds {
            // Superblock over digits k and k+1 with row a·q + j_k and
            // column j_{k+1}·|J_{k+1}| + b.
            let rows = &left[k - 1];
            let cols = &right[k + 1];
            let (nr, nc) = (rows.len(), cols.len());
            let mut idx = Vec::with_capacity(nr * q * q * nc);
            for &a in rows {
                for j1 in 0..q {
                    for j2 in 0..q {
                        for &b in cols {
                            idx.push(a + j1 * pow[k - 1] + j2 * pow[k] + b * pow[k + 1]);
                        }
                    }
                }
            }
            let Some(vals) = sampler.eval(&idx) else {
                return Err(budget_error(previous.map(|p| p.0), sampler.calls(), sweeps));
            };
            let m = DMatrix::from_row_slice(nr * q, q * nc, &vals);
            let (u, s, vt) = thin_svd(&m)?;
            let wanted = truncation_rank(&s, delta * norm(&s));
            cap_hit |= wanted > opts.max_rank;
            let r = wanted.min(opts.max_rank);
            if forward {
                let u = u.columns(0, r).into_owned();
                // Prefer the rows already in I_k so the index sets settle.
                let preferred: Vec<usize> = (0..nr * q)
                    .filter(|&i| left[k].contains(&(rows[i / q] + (i % q) * pow[k - 1])))
                    .collect();
                let sel = maxvol_seeded(&u, &preferred, MAXVOL_TOL, MAXVOL_ITERS)?;
                cores[k - 1] = Some(Core::from_left_matrix(&(&u * square_inverse(&u, &sel)?), q));
                left[k] = sel.iter().map(|&i| rows[i / q] + (i % q) * pow[k - 1]).collect();
                if k == d - 1 {
                    cores[d - 1] = Some(Core::from_right_matrix(&m.select_rows(&sel), q));
                }
            } else {
                let v = vt.rows(0, r).transpose();
                let preferred: Vec<usize> = (0..q * nc).filter(|&c| right[k].contains(&(c / nc + q * cols[c % nc]))).collect();
                let sel = maxvol_seeded(&v, &preferred, MAXVOL_TOL, MAXVOL_ITERS)?;
                cores[k] = Some(Core::from_right_matrix(&(&v * square_inverse(&v, &sel)?).transpose(), q));
                right[k] = sel.iter().map(|&c| c / nc + q * cols[c % nc]).collect();
                if k == 1 {
                    cores[0] = Some(Core::from_left_matrix(&m.select_columns(&sel), q));
                }
            }
        }
        sweeps += 1;
        calls_after = [calls_after[1], calls_after[2], sampler.calls()];
        let tt = QttVector::from_cores(q, cores.into_iter().map(|c| c.expect("every core rebuilt")).collect())?;
        let values: Vec<f64> = probes.iter().map(|&i| tt.element(i + 1).expect("probe in range")).collect();
        let probe_error = relative_change(&values, &truth);
        if let Some((_, old)) = &previous {
            last_change = relative_change(&values, old);
            // Two passes without a new evaluation, kicks included, cannot
            // change the index sets any more.
            let stationary = calls_after[0] == calls_after[2];
            converged = stationary || (last_change < opts.eps * STOP_FACTOR && probe_error <= opts.eps * PROBE_FACTOR);
        }
        if probe_error > opts.eps * PROBE_FACTOR {
            // The worst probes join the index sets used by the next pass.
            let mut order: Vec<usize> = (0..probes.len()).collect();
            order.sort_by(|&x, &y| (values[y] - truth[y]).abs().total_cmp(&(values[x] - truth[x]).abs()));
            for &w in order.iter().take(KICK) {
                let p = probes[w];
                if sweeps % 2 == 0 {
                    for (k, set) in right.iter_mut().enumerate().take(d).skip(2) {
                        push_new(set, p / pow[k]);
                    }
                } else {
                    for (k, set) in left.iter_mut().enumerate().take(d - 1).skip(1) {
                        push_new(set, p % pow[k]);
                    }
                }
            }
        }
        previous = Some((tt, values));
    }

    let (tt, _) = previous.expect("at least one pass");
    let tt = tt.round(FINAL_ROUND_FACTOR * opts.eps)?;
    let calls = sampler.calls();
    if !converged && cap_hit {
        let report = partial_report(&tt, calls, sweeps);
        return Err(Error::RankCap { cap: opts.max_rank, achieved: last_change, best: Box::new((tt, report)) });
    }

    // Held-out validation, not counted in `calls`.
    let sample: Vec<usize> = (0..opts.validation.min(n)).map(|_| rng.gen_range(0..n)).collect();
    let exact: Vec<f64> = sample.par_iter().map(|&i| f(i + 1)).collect();
    let approx: Vec<f64> = sample.iter().map(|&i| tt.element(i + 1).expect("sample in range")).collect();
    let report = CrossReport {
        validation_error: relative_change(&approx, &exact),
        validation_calls: sample.len(),
        ..partial_report(&tt, calls, sweeps)
    };
    Ok((tt, report))
}

fn partial_report(tt: &QttVector<f64>, calls: usize, sweeps: usize) -> CrossReport {
    let ranks = tt.ranks();
    CrossReport {
        calls,
        average_rank: average_rank(&ranks),
        ranks,
        validation_error: f64::NAN,
        validation_calls: 0,
        sweeps,
    }
}

fn push_new(set: &mut Vec<usize>, v: usize) {
    if !set.contains(&v) {
        set.push(v);
    }
}

/// `A[sel, :]⁻¹` for a tall `A` with a square row selection.
fn square_inverse(a: &DMatrix<f64>, sel: &[usize]) -> Result<DMatrix<f64>> {
    a.select_rows(sel)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular maxvol submatrix".into()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = old.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// One row of [`log_scaling_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub d_prime: usize,
    pub n_points: usize,
    pub calls: usize,
    pub average_rank: f64,
    pub validation_error: f64,
}

/// Normalized Lorentzian DOS at grid point `m` (1-based) of `grid`.
pub fn dos_evaluator<'a>(tracer: &'a PreparedTracer, grid: SpectralGrid, eta: f64, n: usize) -> impl Fn(usize) -> f64 + Sync + 'a {
    let scale = eta / (std::f64::consts::PI * n as f64);
    move |m| {
        let t = grid.point(m - 1);
        let s = ShiftParams { t, eta };
        scale * tracer.real(s).expect("validated shift on a symmetric matrix")
    }
}

/// Cross-interpolates the DOS of `m` on grids of `2^d′` points over the
/// automatic interval and records the evaluator calls for each `d′`.
pub fn log_scaling_study(m: &BdlrMatrix, eta: f64, eps: f64, d_primes: &[usize], opts: &CrossOptions) -> Result<Vec<ScalingRow>> {
    ShiftParams::new(0.0, eta)?;
    if !m.is_symmetric() {
        return Err(Error::InvalidParameter("the DOS evaluator needs a symmetric matrix".into()));
    }
    if d_primes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("d′ values must be strictly ascending".into()));
    }
    let tracer = PreparedTracer::new(m)?;
    let (lo, hi) = auto_interval(m);
    let opts = CrossOptions { eps, ..*opts };
    d_primes
        .iter()
        .map(|&d| {
            let grid = SpectralGrid::new(lo, hi, 1 << d)?;
            let f = dos_evaluator(&tracer, grid, eta, m.n());
            let (_, report) = cross_interpolate(&f, d, &opts)?;
            Ok(ScalingRow {
                d_prime: d,
                n_points: 1 << d,
                calls: report.calls,
                average_rank: report.average_rank,
                validation_error: report.validation_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn constant_is_rank_one_and_cheap() {
        for d in [4usize, 8, 12] {
            let (tt, rep) = cross_interpolate(&|_| 2.5, d, &CrossOptions::with_eps(1e-10)).unwrap();
            assert!(tt.ranks().iter().all(|&r| r == 1));
            let probes = CrossOptions::default().probes.min(1 << d);
            assert!(rep.calls <= probes + 8 * d, "d = {d}: {} calls", rep.calls);
            assert!(rep.validation_error < 1e-12);
        }
    }

    #[test]
    fn exponential_recovered_at_rank_one() {
        let f = |i: usize| 1.01f64.powi(i as i32 - 1);
        let (tt, rep) = cross_interpolate(&f, 14, &CrossOptions::with_eps(1e-12)).unwrap();
        assert!(tt.ranks().iter().all(|&r| r == 1), "{:?}", tt.ranks());
        assert!(rep.validation_error <= 1e-10);
    }

    #[test]
    fn sine_recovered_at_rank_two() {
        let f = |i: usize| (0.37 * (i - 1) as f64).sin();
        let (tt, rep) = cross_interpolate(&f, 12, &CrossOptions::with_eps(1e-10)).unwrap();
        assert_eq!(tt.max_rank(), 2);
        assert!(rep.validation_error <= 1e-9);
    }

    #[test]
    fn call_count_is_exact() {
        let counter = AtomicUsize::new(0);
        let f = |i: usize| {
            counter.fetch_add(1, Ordering::Relaxed);
            1.0 / (1.0 + ((i as f64) - 300.0).powi(2) / 100.0)
        };
        let opts = CrossOptions { validation: 50, ..CrossOptions::with_eps(1e-4) };
        let (_, rep) = cross_interpolate(&f, 10, &opts).unwrap();
        assert_eq!(counter.load(Ordering::Relaxed), rep.calls + rep.validation_calls);
    }

    #[test]
    fn deterministic_under_seed() {
        let f = |i: usize| (i as f64 * 0.01).cos() + 1.0 / (1.0 + (i as f64 - 500.0).powi(2));
        let opts = CrossOptions::with_eps(1e-6);
        let (a, ra) = cross_interpolate(&f, 11, &opts).unwrap();
        let (b, rb) = cross_interpolate(&f, 11, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn budget_and_rank_cap_errors() {
        let f = |i: usize| ((i * 2654435761) % 1000) as f64;
        let opts = CrossOptions { budget: Some(30), ..CrossOptions::with_eps(1e-8) };
        assert!(matches!(cross_interpolate(&f, 10, &opts), Err(Error::BudgetExhausted { budget: 30, .. })));
        let opts = CrossOptions { max_rank: 3, max_sweeps: 8, ..CrossOptions::with_eps(1e-8) };
        match cross_interpolate(&f, 10, &opts) {
            Err(Error::RankCap { cap: 3, best, .. }) => assert!(best.0.max_rank() <= 3),
            other => panic!("expected a rank-cap error, got {other:?}"),
        }
    }
}
