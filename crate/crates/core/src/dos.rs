//! Spectral grids, broadening kernels and density-of-states curves.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_reduction::{SeparatedFamily, SeparatedOptions};
use crate::resolvent_trace::{dense_eigenvalues, trace_resolvent_dense, PreparedTracer, ShiftParams};
use crate::structured_matrix::BdlrMatrix;

/// Default number of grid points.
pub const DEFAULT_GRID_POINTS: usize = 1 << 14;

/// Uniform cell-centered grid `t_m = a_lo + (m + ½)h`, `m = 0..N`, `h = (a_hi − a_lo)/N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub a_lo: f64,
    pub a_hi: f64,
    pub n_points: usize,
}

impl SpectralGrid {
    pub fn new(a_lo: f64, a_hi: f64, n_points: usize) -> Result<Self> {
        if !(a_lo.is_finite() && a_hi.is_finite() && a_hi > a_lo) {
            return Err(Error::InvalidParameter(format!(
                "grid interval [{a_lo}, {a_hi}] must be finite with a_hi > a_lo"
            )));
        }
        if n_points == 0 {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        Ok(Self { a_lo, a_hi, n_points })
    }

    /// The interval `[−a, a]`.
    pub fn symmetric(a: f64, n_points: usize) -> Result<Self> {
        Self::new(-a, a, n_points)
    }

    pub fn h(&self) -> f64 {
        (self.a_hi - self.a_lo) / self.n_points as f64
    }

    /// Point `m` (0-based).
    pub fn point(&self, m: usize) -> f64 {
        self.a_lo + (m as f64 + 0.5) * self.h()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|m| self.point(m)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        (self.a_lo..=self.a_hi).contains(&t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
    Lorentzian,
}

impl Kernel {
    pub fn eval(self, x: f64, eta: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-(x * x) / (2.0 * eta * eta)).exp() / ((2.0 * PI).sqrt() * eta),
            Kernel::Lorentzian => eta / (PI * (x * x + eta * eta)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DosMethod {
    SmwComplex,
    SmwReal,
    Dense,
    Separated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DosCurve {
    pub grid: SpectralGrid,
    pub values: Vec<f64>,
    pub kernel: Kernel,
    pub eta: f64,
    /// Whether the `1/n` prefactor was applied.
    pub normalized: bool,
}

impl DosCurve {
    /// `h · Σ φ(t_m)`, the quadrature of the curve over the grid.
    pub fn mass(&self) -> f64 {
        self.grid.h() * self.values.iter().sum::<f64>()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "phi"])?;
        for (m, v) in self.values.iter().enumerate() {
            w.write_record([self.grid.point(m).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the `t,phi` columns of a DOS CSV file.
pub fn read_dos_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "phi" {
        return Err(Error::Format(format!("expected header `t,phi`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut ts = Vec::new();
    let mut phis = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| {
            rec[k].trim().parse::<f64>().map_err(|e| {
                Error::Format(format!("row {}: column {k}: {e}", row + 2))
            })
        };
        ts.push(parse(0)?);
        phis.push(parse(1)?);
    }
    Ok((ts, phis))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "broadening eta must be positive and finite, got {eta}"
        )));
    }
    Ok(())
}

/// `φ(t_m) = (1/n)^[normalized] Σ_j K_η(t_m − λ_j)`.
pub fn dos_from_eigenvalues(
    lams: &[f64],
    grid: &SpectralGrid,
    kernel: Kernel,
    eta: f64,
    normalized: bool,
) -> Result<DosCurve> {
    check_eta(eta)?;
    if lams.is_empty() {
        return Err(Error::InvalidParameter("eigenvalue list is empty".into()));
    }
    let scale = if normalized { 1.0 / lams.len() as f64 } else { 1.0 };
    let values = (0..grid.n_points)
        .into_par_iter()
        .map(|m| {
            let t = grid.point(m);
            scale * lams.iter().map(|&l| kernel.eval(t - l, eta)).sum::<f64>()
        })
        .collect();
    Ok(DosCurve {
        grid: *grid,
        values,
        kernel,
        eta,
        normalized,
    })
}

/// Lorentzian DOS `φ(t_m) = (1/π)(1/n)^[normalized] Im trace[(t_m − iη)I − A]⁻¹`.
pub fn dos_via_traces(
    m: &BdlrMatrix,
    grid: &SpectralGrid,
    eta: f64,
    method: DosMethod,
    normalized: bool,
) -> Result<DosCurve> {
    check_eta(eta)?;
    let scale = if normalized { 1.0 / (PI * m.n() as f64) } else { 1.0 / PI };
    let values = match method {
        DosMethod::SmwComplex => {
            let tracer = PreparedTracer::new(m)?;
            per_point(grid, |s| tracer.complex(s).map(|v| v.im), eta)?
        }
        DosMethod::SmwReal => {
            let tracer = PreparedTracer::new(m)?;
            per_point(grid, |s| tracer.real(s).map(|v| eta * v), eta)?
        }
        DosMethod::Dense if m.is_symmetric() => {
            let lams = dense_eigenvalues(m)?;
            per_point(
                grid,
                |s| Ok(crate::resolvent_trace::trace_from_eigenvalues(&lams, s).im),
                eta,
            )?
        }
        DosMethod::Dense => per_point(grid, |s| trace_resolvent_dense(m, s).map(|v| v.im), eta)?,
        DosMethod::Separated => {
            let family = SeparatedFamily::build(m, grid, eta, &SeparatedOptions::default())?;
            family.grid_traces().into_iter().map(|v| v.im).collect()
        }
    };
    Ok(DosCurve {
        grid: *grid,
        values: values.into_iter().map(|v| scale * v).collect(),
        kernel: Kernel::Lorentzian,
        eta,
        normalized,
    })
}

fn per_point<F>(grid: &SpectralGrid, f: F, eta: f64) -> Result<Vec<f64>>
where
    F: Fn(ShiftParams) -> Result<f64> + Sync,
{
    (0..grid.n_points)
        .into_par_iter()
        .map(|k| {
            let t = grid.point(k);
            f(ShiftParams { t, eta }).map_err(|e| e.at_grid_point(k, t))
        })
        .collect()
}

/// Default interval `[0, 1.1 λ_max]` with `λ_max` from power iteration.
pub fn auto_interval(m: &BdlrMatrix) -> (f64, f64) {
    let lmax = m.spectral_radius_estimate(100);
    let hi = if lmax > 0.0 { 1.1 * lmax } else { 1.0 };
    (0.0, hi)
}
