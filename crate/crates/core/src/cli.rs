//! Command-line front end of the `qttdos` binary.
//!
//! Every command writes its fully resolved configuration next to its main
//! output as `<out>.config.json`; `qttdos replay --config <file>` runs that
//! configuration again.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dos::{auto_interval, dos_from_eigenvalues, dos_via_traces, read_dos_csv, DosMethod, Kernel, SpectralGrid};
use crate::error::{Error, Result};
use crate::qtt::{compress, relative_error};
use crate::resolvent_trace::{dense_eigenvalues, PreparedTracer};
use crate::structured_matrix::{
    generate_laplacian1d, generate_synthetic, preset, preset_names, read_bdlr, write_bdlr, BdlrMatrix, SpectrumProfile,
    SyntheticSpec,
};
use crate::tt_cross::{cross_interpolate, dos_evaluator, log_scaling_study, CrossOptions};

/// Allowed range of the per-pair doubling ratio of `T/R²` in `bench-scaling`.
pub const SCALING_RATIO_RANGE: (f64, f64) = (1.6, 2.8);

#[derive(Debug, Clone, Parser, Serialize, Deserialize, PartialEq)]
#[command(name = "qttdos", version, about = "Density of states of block-diagonal-plus-low-rank matrices")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a matrix and write it in BDLR format.
    Gen(GenArgs),
    /// Compute a broadened density of states on a grid.
    Dos(DosArgs),
    /// Compress the value column of a DOS CSV into a QTT.
    QttCompress(CompressArgs),
    /// Build a QTT of the DOS by cross interpolation.
    QttCross(CrossArgs),
    /// Time the DOS evaluation over a range of synthetic sizes.
    BenchScaling(BenchArgs),
    /// Run a configuration sidecar again.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    Laplacian1d,
    Synthetic,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileArg {
    Uniform,
    Clustered,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: MatrixKind,
    #[arg(long)]
    pub n: Option<usize>,
    /// Size of the dense block.
    #[arg(long)]
    pub nb: Option<usize>,
    /// Rank of the low-rank correction.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Named molecule-sized preset (synthetic only).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Eigenvalue-free window `lo:hi`; may be repeated.
    #[arg(long = "gap")]
    pub gaps: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    /// Complex Sherman–Morrison–Woodbury trace.
    Smw,
    /// Real-arithmetic Sherman–Morrison–Woodbury trace.
    SmwReal,
    /// Dense eigenvalues.
    Dense,
    /// Separated multi-shift family.
    Separated,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    Lorentzian,
    Gaussian,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct DosArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "smw")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "lorentzian")]
    pub kernel: KernelArg,
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value_t = crate::dos::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Spectral window `lo:hi`; estimated from the matrix when absent.
    #[arg(long)]
    pub interval: Option<String>,
    /// Apply the `1/n` prefactor.
    #[arg(long)]
    pub normalized: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct CompressArgs {
    /// DOS CSV with columns `t,phi`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct CrossArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub eta: f64,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = crate::dos::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long)]
    pub interval: Option<String>,
    #[arg(long, default_value_t = CrossOptions::default().max_rank)]
    pub max_rank: usize,
    /// Cap on evaluator calls.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Also run the call-count study over `d′ = a..=b`, written as `<out>.sweep.csv`.
    #[arg(long)]
    pub sweep_dprime: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    /// Correction ranks, one per size or a single value for all.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub ranks: Vec<usize>,
    /// Dense-block sizes, one per size; defaults to `round(n^(1/3))`.
    #[arg(long, value_delimiter = ',')]
    pub nb: Vec<usize>,
    #[arg(long, default_value_t = 0.4)]
    pub eta: f64,
    #[arg(long, default_value_t = crate::dos::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Timed repetitions per size; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Report the doubling ratios without failing on them.
    #[arg(long)]
    pub no_check: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ReplayArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Version of the sidecar layout.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub threads: Option<usize>,
    pub command: Command,
}

/// Path of the configuration sidecar for an output file.
pub fn sidecar_path(out: &Path) -> PathBuf {
    with_suffix(out, ".config.json")
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs a parsed command line; returns the text to print on success.
pub fn run(cli: Cli) -> Result<String> {
    if let Command::Replay(args) = &cli.command {
        let config: RunConfig = serde_json::from_reader(std::fs::File::open(&args.config)?)?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Format(format!("unsupported config version {}", config.version)));
        }
        if matches!(config.command, Command::Replay(_)) {
            return Err(Error::Format("a config cannot replay another config".into()));
        }
        return run(Cli { seed: config.seed, threads: config.threads, command: config.command });
    }
    if cli.threads == Some(0) {
        return Err(Error::InvalidParameter("--threads must be positive".into()));
    }
    let config = RunConfig { version: CONFIG_VERSION, seed: cli.seed, threads: cli.threads, command: cli.command.clone() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed, &config),
        Command::Dos(a) => cmd_dos(a, &config),
        Command::QttCompress(a) => cmd_qtt_compress(a, &config),
        Command::QttCross(a) => cmd_qtt_cross(a, cli.seed, &config),
        Command::BenchScaling(a) => cmd_bench_scaling(a, cli.seed, &config),
        Command::Replay(_) => unreachable!("handled above"),
    })
}

fn write_sidecar(out: &Path, config: &RunConfig) -> Result<()> {
    let file = std::fs::File::create(sidecar_path(out))?;
    serde_json::to_writer_pretty(file, config)?;
    Ok(())
}

fn parse_pair<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T)> {
    let bad = || Error::InvalidParameter(format!("{what} must look like `a:b`, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn grid_for(m: &BdlrMatrix, interval: Option<&str>, n_points: usize) -> Result<SpectralGrid> {
    let (lo, hi) = match interval {
        Some(s) => parse_pair(s, "--interval")?,
        None => auto_interval(m),
    };
    SpectralGrid::new(lo, hi, n_points)
}

fn cmd_gen(a: &GenArgs, seed: u64, config: &RunConfig) -> Result<String> {
    let m = match a.kind {
        MatrixKind::Laplacian1d => {
            if a.preset.is_some() || a.nb.is_some() || a.rank.is_some() || a.profile.is_some() || !a.gaps.is_empty() {
                return Err(Error::InvalidParameter("laplacian1d only takes --n".into()));
            }
            generate_laplacian1d(a.n.ok_or_else(|| Error::InvalidParameter("laplacian1d needs --n".into()))?)?
        }
        MatrixKind::Synthetic => {
            let mut spec = match &a.preset {
                Some(name) => {
                    if a.n.is_some() || a.nb.is_some() || a.rank.is_some() {
                        return Err(Error::InvalidParameter("--preset fixes n, n_B and R".into()));
                    }
                    preset(name, seed).ok_or_else(|| {
                        Error::InvalidParameter(format!("unknown preset `{name}`; known: {}", preset_names().join(", ")))
                    })?
                }
                None => {
                    let need = |v: Option<usize>, flag: &str| {
                        v.ok_or_else(|| Error::InvalidParameter(format!("synthetic matrices need {flag} or --preset")))
                    };
                    let n = need(a.n, "--n")?;
                    let nb = a.nb.unwrap_or_else(|| ((n as f64).cbrt().round() as usize).clamp(1, n));
                    SyntheticSpec::new(n, nb, need(a.rank, "--rank")?, seed)
                }
            };
            if let Some(p) = a.profile {
                spec = spec.with_profile(match p {
                    ProfileArg::Uniform => SpectrumProfile::Uniform,
                    ProfileArg::Clustered => SpectrumProfile::ClusteredWithGaps,
                });
            }
            if !a.gaps.is_empty() {
                let gaps = a.gaps.iter().map(|g| parse_pair(g, "--gap")).collect::<Result<Vec<(f64, f64)>>>()?;
                spec = spec.with_gaps(gaps);
            }
            generate_synthetic(&spec)?
        }
    };
    write_bdlr(&m, &a.out)?;
    write_sidecar(&a.out, config)?;
    Ok(format!("wrote {} (n = {}, n_B = {}, R = {})", a.out.display(), m.n(), m.n_b(), m.rank()))
}

fn cmd_dos(a: &DosArgs, config: &RunConfig) -> Result<String> {
    let m = read_bdlr(&a.matrix)?;
    let grid = grid_for(&m, a.interval.as_deref(), a.grid_points)?;
    let curve = match (a.method, a.kernel) {
        (MethodArg::Dense, kernel) => {
            let kernel = match kernel {
                KernelArg::Lorentzian => Kernel::Lorentzian,
                KernelArg::Gaussian => Kernel::Gaussian,
            };
            dos_from_eigenvalues(&dense_eigenvalues(&m)?, &grid, kernel, a.eta, a.normalized)?
        }
        (_, KernelArg::Gaussian) => {
            return Err(Error::InvalidParameter("the Gaussian kernel needs --method dense".into()));
        }
        (method, KernelArg::Lorentzian) => {
            let method = match method {
                MethodArg::Smw => DosMethod::SmwComplex,
                MethodArg::SmwReal => DosMethod::SmwReal,
                MethodArg::Separated => DosMethod::Separated,
                MethodArg::Dense => unreachable!("matched above"),
            };
            dos_via_traces(&m, &grid, a.eta, method, a.normalized)?
        }
    };
    curve.write_csv(&a.out)?;
    write_sidecar(&a.out, config)?;
    Ok(format!("wrote {} ({} points on [{}, {}])", a.out.display(), grid.n_points, grid.a_lo, grid.a_hi))
}

/// Summary printed by `qtt-compress`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompressionReport {
    pub n_points: usize,
    pub ranks: Vec<usize>,
    pub average_rank: f64,
    pub param_count: usize,
    pub compression_ratio: f64,
    pub unfold_error: f64,
}

fn cmd_qtt_compress(a: &CompressArgs, config: &RunConfig) -> Result<String> {
    let (_, values) = read_dos_csv(&a.input)?;
    let tt = compress(&values, a.q, a.eps)?;
    let unfold_error = relative_error(&tt.unfold(), &values);
    if unfold_error > a.eps {
        return Err(Error::Numerical(format!("unfold error {unfold_error:.3e} exceeds eps = {}", a.eps)));
    }
    let report = CompressionReport {
        n_points: values.len(),
        ranks: tt.ranks(),
        average_rank: tt.average_rank(),
        param_count: tt.param_count(),
        compression_ratio: values.len() as f64 / tt.param_count() as f64,
        unfold_error,
    };
    tt.write_json(&a.out)?;
    write_sidecar(&a.out, config)?;
    Ok(serde_json::to_string_pretty(&report)?)
}

/// Path of the cross report written next to the QTT JSON.
pub fn report_path(out: &Path) -> PathBuf {
    with_suffix(out, ".report.json")
}

/// Path of the call-count study written next to the QTT JSON.
pub fn sweep_path(out: &Path) -> PathBuf {
    with_suffix(out, ".sweep.csv")
}

fn cmd_qtt_cross(a: &CrossArgs, seed: u64, config: &RunConfig) -> Result<String> {
    let m = read_bdlr(&a.matrix)?;
    let d_prime = crate::qtt::qtt_exponent(a.grid_points, 2)?;
    if 1usize << d_prime != a.grid_points {
        return Err(Error::Length { len: a.grid_points, q: 2 });
    }
    let sweep = a.sweep_dprime.as_deref().map(|s| parse_pair::<usize>(s, "--sweep-dprime")).transpose()?;
    if let Some((lo, hi)) = sweep {
        if lo == 0 || lo > hi {
            return Err(Error::InvalidParameter(format!("--sweep-dprime needs 1 ≤ a ≤ b, got {lo}:{hi}")));
        }
    }
    let grid = grid_for(&m, a.interval.as_deref(), a.grid_points)?;
    let tracer = PreparedTracer::new(&m)?;
    let opts = CrossOptions { max_rank: a.max_rank, budget: a.budget, seed, ..CrossOptions::with_eps(a.eps) };
    crate::resolvent_trace::ShiftParams::new(grid.point(0), a.eta)?;
    let f = dos_evaluator(&tracer, grid, a.eta, m.n());
    let (tt, report) = cross_interpolate(&f, d_prime, &opts)?;
    tt.write_json(&a.out)?;
    serde_json::to_writer_pretty(std::fs::File::create(report_path(&a.out))?, &report)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    if let Some((lo, hi)) = sweep {
        let d_primes: Vec<usize> = (lo..=hi).collect();
        let rows = log_scaling_study(&m, a.eta, a.eps, &d_primes, &opts)?;
        let mut w = csv::Writer::from_path(sweep_path(&a.out))?;
        w.write_record(["d_prime", "n_points", "calls", "average_rank", "validation_error", "call_budget"])?;
        for r in &rows {
            let budget = 10.0 * r.average_rank * r.average_rank * r.d_prime as f64;
            w.write_record([
                r.d_prime.to_string(),
                r.n_points.to_string(),
                r.calls.to_string(),
                r.average_rank.to_string(),
                r.validation_error.to_string(),
                budget.to_string(),
            ])?;
            text.push_str(&format!(
                "\nd′ = {:2}  N = {:6}  calls = {:6}  avg rank = {:.2}  budget = {:.0}",
                r.d_prime, r.n_points, r.calls, r.average_rank, budget
            ));
        }
        w.flush()?;
    }
    write_sidecar(&a.out, config)?;
    Ok(text)
}

/// One timed size of [`bench_scaling`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub n_b: usize,
    pub rank: usize,
    pub seconds: f64,
    pub seconds_per_rank2: f64,
}

/// Times the real-arithmetic DOS evaluation for each synthetic size, keeping
/// the fastest of `repeats` runs.
pub fn bench_scaling(
    sizes: &[usize],
    ranks: &[usize],
    nbs: &[usize],
    eta: f64,
    grid_points: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let per_size = |v: &[usize], what: &str| -> Result<Vec<Option<usize>>> {
        match v.len() {
            0 => Ok(vec![None; sizes.len()]),
            1 => Ok(vec![Some(v[0]); sizes.len()]),
            k if k == sizes.len() => Ok(v.iter().map(|&x| Some(x)).collect()),
            k => Err(Error::InvalidParameter(format!("{k} {what} given for {} sizes", sizes.len()))),
        }
    };
    if sizes.is_empty() || repeats == 0 {
        return Err(Error::InvalidParameter("need at least one size and one repeat".into()));
    }
    let ranks = per_size(ranks, "ranks")?;
    let nbs = per_size(nbs, "block sizes")?;
    sizes
        .iter()
        .zip(ranks.iter().zip(&nbs))
        .map(|(&n, (&rank, &nb))| {
            let rank = rank.ok_or_else(|| Error::InvalidParameter("need at least one rank".into()))?;
            let n_b = nb.unwrap_or_else(|| ((n as f64).cbrt().round() as usize).clamp(1, n));
            let m = generate_synthetic(&SyntheticSpec::new(n, n_b, rank, seed))?;
            let grid = grid_for(&m, None, grid_points)?;
            let mut best = Duration::MAX;
            for _ in 0..repeats {
                let t0 = Instant::now();
                std::hint::black_box(dos_via_traces(&m, &grid, eta, DosMethod::SmwReal, false)?);
                best = best.min(t0.elapsed());
            }
            let seconds = best.as_secs_f64();
            Ok(BenchRow { n, n_b, rank, seconds, seconds_per_rank2: seconds / (rank * rank) as f64 })
        })
        .collect()
}

/// Growth of `T/R²` between consecutive rows, rescaled to a doubling of `n`.
pub fn doubling_ratios(rows: &[BenchRow]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| {
            let growth = w[1].seconds_per_rank2 / w[0].seconds_per_rank2;
            growth.powf(std::f64::consts::LN_2 / (w[1].n as f64 / w[0].n as f64).ln())
        })
        .collect()
}

fn cmd_bench_scaling(a: &BenchArgs, seed: u64, config: &RunConfig) -> Result<String> {
    if a.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("--sizes must be strictly ascending".into()));
    }
    let rows = bench_scaling(&a.sizes, &a.ranks, &a.nb, a.eta, a.grid_points, a.repeats, seed)?;
    let ratios = doubling_ratios(&rows);
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["n", "n_b", "rank", "seconds", "seconds_per_rank2", "doubling_ratio"])?;
    for (i, r) in rows.iter().enumerate() {
        let ratio = if i == 0 { String::new() } else { ratios[i - 1].to_string() };
        w.write_record([
            r.n.to_string(),
            r.n_b.to_string(),
            r.rank.to_string(),
            r.seconds.to_string(),
            r.seconds_per_rank2.to_string(),
            ratio,
        ])?;
    }
    w.flush()?;
    write_sidecar(&a.out, config)?;
    let (lo, hi) = SCALING_RATIO_RANGE;
    if let Some(bad) = ratios.iter().find(|r| !(lo..=hi).contains(*r)) {
        if !a.no_check {
            return Err(Error::Numerical(format!("doubling ratio {bad:.3} of T/R² outside [{lo}, {hi}]")));
        }
    }
    Ok(format!("wrote {} ({} sizes; doubling ratios {:?})", a.out.display(), rows.len(), ratios))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_parse() {
        assert_eq!(parse_pair::<usize>("11:16", "x").unwrap(), (11, 16));
        assert_eq!(parse_pair::<f64>("-1.5: 2", "x").unwrap(), (-1.5, 2.0));
        assert!(parse_pair::<usize>("11-16", "x").is_err());
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar_path(Path::new("out/a.csv")), PathBuf::from("out/a.csv.config.json"));
    }

    #[test]
    fn config_round_trips() {
        let cli = Cli::try_parse_from(["qttdos", "--seed", "7", "dos", "--matrix", "m.bdlr", "--eta", "0.4", "--out", "d.csv"]).unwrap();
        let config = RunConfig { version: CONFIG_VERSION, seed: cli.seed, threads: cli.threads, command: cli.command };
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), config);
    }

    #[test]
    fn doubling_ratio_rescales() {
        let row = |n: usize, t: f64| BenchRow { n, n_b: 1, rank: 1, seconds: t, seconds_per_rank2: t };
        let r = doubling_ratios(&[row(100, 1.0), row(400, 4.0)]);
        assert!((r[0] - 2.0).abs() < 1e-12);
    }
}
