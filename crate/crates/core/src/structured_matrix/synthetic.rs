//! Seeded synthetic BDLR matrices with planted spectra.
//!
//! Eigenvalues are planted on the block-diagonal part `E = blockdiag(B0, diag(D0))`
//! and the correction is `Q Qᵀ` with `‖Q‖₂² = coupling`. Since `Q Qᵀ` is positive
//! semidefinite with norm `coupling`, every eigenvalue of `A = E + Q Qᵀ` lies in
//! `[λ_i(E), λ_i(E) + coupling]`, so planting outside the gaps widened by
//! `coupling` keeps the spectrum of `A` out of every gap.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::BdlrMatrix;
use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, standard_normal_matrix, thin_svd};

const MAX_RESAMPLES: usize = 10_000;
const HARTREE_EV: f64 = 27.211_386;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumProfile {
    /// Independent uniform draws on `[0, scale − coupling]`.
    Uniform,
    /// Excitation-like spectrum: differences between a ladder of virtual
    /// levels and a few occupied levels, one fifth of them deep core levels.
    /// The result has dense clusters separated by wide empty windows.
    ClusteredWithGaps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub n_b: usize,
    pub rank: usize,
    pub seed: u64,
    pub profile: SpectrumProfile,
    /// Open intervals `(lo, hi)` that must contain no eigenvalue.
    pub gaps: Vec<(f64, f64)>,
    /// Upper end `a` of the spectral window `[0, a]`.
    pub scale: f64,
    /// Squared spectral norm of the correction factor.
    pub coupling: f64,
    /// Number of occupied levels for [`SpectrumProfile::ClusteredWithGaps`].
    #[serde(default)]
    pub occupied: Option<usize>,
}

impl SyntheticSpec {
    /// Uniform spectrum on `[0, 100]` with coupling `2`.
    pub fn new(n: usize, n_b: usize, rank: usize, seed: u64) -> Self {
        Self {
            n,
            n_b,
            rank,
            seed,
            profile: SpectrumProfile::Uniform,
            gaps: Vec::new(),
            scale: 100.0,
            coupling: 2.0,
            occupied: None,
        }
    }

    pub fn with_profile(mut self, profile: SpectrumProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_gaps(mut self, gaps: Vec<(f64, f64)>) -> Self {
        self.gaps = gaps;
        self
    }

    pub fn with_scale(mut self, scale: f64, coupling: f64) -> Self {
        self.scale = scale;
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.n_b > self.n {
            return bad(format!("n_B = {} exceeds n = {}", self.n_b, self.n));
        }
        if self.rank > self.n {
            return bad(format!("R = {} exceeds n = {}", self.rank, self.n));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if !(self.coupling.is_finite() && self.coupling >= 0.0 && self.coupling < self.scale) {
            return bad(format!(
                "coupling must lie in [0, scale), got {}",
                self.coupling
            ));
        }
        if self.occupied == Some(0) {
            return bad("occupied level count must be positive".into());
        }
        let mut gaps = self.gaps.clone();
        gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(lo, hi) in &gaps {
            if !(lo < hi) || lo < 0.0 || hi > self.scale {
                return bad(format!(
                    "gap ({lo}, {hi}) must satisfy 0 <= lo < hi <= {}",
                    self.scale
                ));
            }
        }
        for w in gaps.windows(2) {
            if w[1].0 < w[0].1 {
                return bad(format!("gaps {:?} and {:?} overlap", w[0], w[1]));
            }
        }
        Ok(())
    }

    fn admissible(&self, v: f64) -> bool {
        let top = self.scale - self.coupling;
        (0.0..=top).contains(&v)
            && self
                .gaps
                .iter()
                .all(|&(lo, hi)| v + self.coupling <= lo || v >= hi)
    }

    fn occupied_levels(&self) -> usize {
        if let Some(o) = self.occupied {
            return o.min(self.n);
        }
        let target = (self.n as f64).sqrt() / 2.7;
        let best = (1..=self.n)
            .filter(|d| self.n % d == 0)
            .min_by(|&a, &b| (a as f64 - target).abs().total_cmp(&(b as f64 - target).abs()))
            .unwrap_or(1);
        if (best as f64 - target).abs() <= 0.5 * target {
            best
        } else {
            (target.round() as usize).max(1)
        }
    }
}

/// Builds the matrix described by `spec`. Identical seeds give identical matrices.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<BdlrMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = match spec.profile {
        SpectrumProfile::Uniform => uniform_values(spec, &mut rng)?,
        SpectrumProfile::ClusteredWithGaps => clustered_values(spec, &mut rng)?,
    };
    values.shuffle(&mut rng);

    let nb = spec.n_b;
    let u = random_orthogonal(nb, &mut rng);
    let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&values[..nb]));
    let b = &u * lam * u.transpose();
    let b0 = (&b + b.transpose()) * 0.5;
    let d0 = DVector::from_column_slice(&values[nb..]);

    let mut q = standard_normal_matrix(spec.n, spec.rank, &mut rng);
    if spec.rank > 0 {
        let (_, s, _) = thin_svd(&q)?;
        let top = s[0];
        if top > 0.0 {
            q *= spec.coupling.sqrt() / top;
        }
    }
    BdlrMatrix::symmetric(b0, d0, q)
}

fn uniform_values(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let top = spec.scale - spec.coupling;
    (0..spec.n)
        .map(|_| resample(spec, || rng.gen_range(0.0..=top)))
        .collect()
}

fn clustered_values(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n_occ = spec.occupied_levels();
    let n_virt = spec.n.div_ceil(n_occ);
    let n_core = (n_occ / 5).max(1).min(n_occ);

    let core_level = |rng: &mut ChaCha8Rng| {
        let g: f64 = rng.sample(StandardNormal);
        20.6 * (1.0 + 0.02 * g)
    };
    let valence_level = |rng: &mut ChaCha8Rng| rng.gen_range(0.45..1.4);
    let virtual_level = |rng: &mut ChaCha8Rng| {
        let e: f64 = rng.sample(Exp1);
        0.05 + 0.5 * e
    };

    let mut occ: Vec<f64> = (0..n_core).map(|_| core_level(rng)).collect();
    occ.extend((n_core..n_occ).map(|_| valence_level(rng)));
    let virt: Vec<f64> = (0..n_virt).map(|_| virtual_level(rng)).collect();
    let mut raw: Vec<f64> = occ
        .iter()
        .flat_map(|o| virt.iter().map(move |v| (o + v) * HARTREE_EV))
        .collect();
    raw.shuffle(rng);
    raw.truncate(spec.n);

    let max = raw.iter().copied().fold(0.0, f64::max);
    let factor = (spec.scale - spec.coupling) / max;
    let core_fraction = n_core as f64 / n_occ as f64;
    raw.into_iter()
        .map(|v| {
            let first = v * factor;
            if spec.admissible(first) {
                return Ok(first);
            }
            resample(spec, || {
                let o = if rng.gen_bool(core_fraction) {
                    core_level(rng)
                } else {
                    valence_level(rng)
                };
                (o + virtual_level(rng)) * HARTREE_EV * factor
            })
        })
        .collect()
}

fn resample(spec: &SyntheticSpec, mut draw: impl FnMut() -> f64) -> Result<f64> {
    for _ in 0..MAX_RESAMPLES {
        let v = draw();
        if spec.admissible(v) {
            return Ok(v);
        }
    }
    Err(Error::Generation(format!(
        "no admissible eigenvalue after {MAX_RESAMPLES} draws; gaps {:?} leave too little room in [0, {}]",
        spec.gaps, spec.scale
    )))
}

const PRESETS: &[(&str, usize, usize, usize)] = &[
    ("h2o-like", 180, 36, 5),
    ("nh3-like", 215, 30, 5),
    ("h2o2-like", 531, 68, 9),
    ("n2h4-like", 657, 54, 9),
    ("ethanol-like", 1430, 74, 13),
    ("glycine-like", 3000, 129, 20),
    ("alanine-like", 4488, 147, 24),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

/// Molecule-sized presets: sizes and ranks of small-molecule excitation problems.
pub fn preset(name: &str, seed: u64) -> Option<SyntheticSpec> {
    let &(_, n, rank, occupied) = PRESETS.iter().find(|p| p.0 == name)?;
    Some(SyntheticSpec {
        n,
        n_b: rank,
        rank,
        seed,
        profile: SpectrumProfile::ClusteredWithGaps,
        gaps: Vec::new(),
        scale: 700.0,
        coupling: 7.0,
        occupied: Some(occupied),
    })
}
