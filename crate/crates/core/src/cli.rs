//! The `kmono` command line: `fit`, `verify`, `invert`, `bounds` and
//! `simulate`.
//!
//! Exit status is 0 on success, 1 on usage or input errors and 2 on
//! numerical failure, which includes a non-converged fit under `--strict`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::analytic::{AnalyticDensity, Exponential};
use crate::error::{invalid, KmError, Result};
use crate::fitfile::FitFile;
use crate::minimax::{self, MinimaxConstants};
use crate::mixture::{invert_to_mixing, InversionInputs, Sample};
use crate::numeric::format_float as num;
use crate::sim::{self, Distribution, ErrorGrid, ExperimentPlan};
use crate::support::{FitMethod, FitOptions};
use crate::{lse, mle};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kmono", version, about = "Estimation of k-monotone densities and their mixing distributions")]
struct Cli {
    /// TOML file with default settings; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for simulate (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the MLE or LSE to a sample and write a fit-file.
    Fit(FitArgs),
    /// Re-check the optimality certificate of a fit-file on a sample.
    Verify(VerifyArgs),
    /// Evaluate the mixing distribution recovered from a density.
    Invert(InvertArgs),
    /// Tabulate the minimax lower-bound constants.
    Bounds(BoundsArgs),
    /// Run a seeded replication study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Mle,
    Lse,
}

impl From<Method> for FitMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Mle => FitMethod::Mle,
            Method::Lse => FitMethod::Lse,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    k: Option<u32>,
    /// Sample CSV, one observation per line with an optional "x" header.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    /// Cap on support-reduction iterations.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Exit with status 2 when the fit does not converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Uniform verification points (observations and atoms are added).
    #[arg(long)]
    grid: Option<usize>,
    /// Tolerance for the pass/fail field; defaults to the one in the fit-file.
    #[arg(long)]
    tol: Option<f64>,
    /// Report JSON path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 when the certificate fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct InvertArgs {
    /// Fit-file whose mixture is inverted.
    #[arg(long, conflicts_with = "dist")]
    fit: Option<PathBuf>,
    /// Analytic density to invert instead of a fit-file ("exp1").
    #[arg(long)]
    dist: Option<String>,
    /// Order of the representation; required with --dist.
    #[arg(long)]
    k: Option<u32>,
    /// Comma-separated evaluation points.
    #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
    t: Vec<f64>,
    /// Uniform grid "lo:hi:points".
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    x0: f64,
    /// `g(x0)`.
    #[arg(long)]
    g0: f64,
    /// `g^(k)(x0)`.
    #[arg(long, allow_hyphen_values = true)]
    gk: f64,
    /// Derivative orders to tabulate (default 0..k-1).
    #[arg(long, value_delimiter = ',')]
    j: Vec<u32>,
    #[arg(long, value_enum, default_value = "text")]
    format: TableFormat,
    /// Also write the table as CSV to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// "exp1" or a fit-file path holding a mixture with mass one.
    #[arg(long, default_value = "exp1")]
    dist: String,
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Study seed; falls back to $KMONO_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Error grid "lo:hi:points" (default 0.1:8:512).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long)]
    tol: Option<f64>,
    /// Skip the per-fit JSON files.
    #[arg(long)]
    no_fits: bool,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    method: Option<Method>,
    k: Option<u32>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    grid: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Method::from_str(&s, true).map_err(serde::de::Error::custom)
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| KmError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn parse_grid(text: &str) -> Result<ErrorGrid> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || invalid(format!("grid must look like lo:hi:points, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo = parts[0].trim().parse::<f64>().map_err(|_| bad())?;
    let hi = parts[1].trim().parse::<f64>().map_err(|_| bad())?;
    let points = parts[2].trim().parse::<usize>().map_err(|_| bad())?;
    ErrorGrid::new(lo, hi, points)
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var("KMONO_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| invalid(format!("KMONO_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| KmError::Io(format!("{}: {e}", path.display())))
}

fn exit_code(e: &KmError) -> i32 {
    match e {
        KmError::Numerical(_) | KmError::SupportDeficient { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

struct Ctx<'a> {
    config: ConfigFile,
    jobs: Option<usize>,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let jobs = cli.jobs.or(config.jobs);
    let mut ctx = Ctx { config, jobs, out, err };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&mut ctx, a),
        Command::Verify(a) => cmd_verify(&mut ctx, a),
        Command::Invert(a) => cmd_invert(&mut ctx, a),
        Command::Bounds(a) => cmd_bounds(&mut ctx, a),
        Command::Simulate(a) => cmd_simulate(&mut ctx, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_fit(ctx: &mut Ctx<'_>, a: FitArgs) -> Result<i32> {
    let method: FitMethod = a
        .method
        .or(ctx.config.method)
        .ok_or_else(|| invalid("--method is required (mle or lse)"))?
        .into();
    let k = a.k.or(ctx.config.k).ok_or_else(|| invalid("--k is required"))?;
    let mut opts = FitOptions::default();
    if let Some(tol) = a.tol.or(ctx.config.tol) {
        opts.tol = tol;
    }
    if let Some(m) = a.max_iter.or(ctx.config.max_iter) {
        opts.max_outer_iter = m;
    }
    let sample = Sample::read_csv(&a.input)?;
    let fit = match method {
        FitMethod::Mle => mle::fit_mle(&sample, k, &opts)?,
        _ => lse::fit_lse(&sample, k, &opts)?,
    };
    FitFile::from_fit(&fit, Some(opts.tol)).write(&a.out)?;
    let state = if fit.converged { "converged" } else { "not converged" };
    let _ = writeln!(
        ctx.out,
        "{state} max_gradient={} iterations={} atoms={} mass={} objective={}",
        fit.max_gradient,
        fit.iterations,
        fit.num_atoms(),
        fit.mass(),
        fit.objective
    );
    if !fit.converged && a.strict {
        let _ = writeln!(ctx.err, "error: the {method} fit did not converge within {} iterations", opts.max_outer_iter);
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

fn cmd_verify(ctx: &mut Ctx<'_>, a: VerifyArgs) -> Result<i32> {
    let file = FitFile::read(&a.fit)?;
    let sample = Sample::read_csv(&a.input)?;
    let grid = a.grid.or(ctx.config.grid).unwrap_or(2048);
    let tol = a.tol.or(file.diagnostics.tol).or(ctx.config.tol).unwrap_or(FitOptions::default().tol);
    let fit = file.to_fit_result()?;
    let (report, ok) = match file.method {
        FitMethod::Lse => {
            let r = lse::verify_lse(&fit, &sample, grid)?;
            let worst_knot = r.knot_residuals.iter().copied().fold(0.0, f64::max);
            let ok = -r.min_gap / r.scale <= tol;
            (
                json!({
                    "method": "lse",
                    "k": file.k,
                    "min_fenchel_gap": r.min_gap,
                    "max_violation": (-r.min_gap / r.scale).max(0.0),
                    "argmin": r.argmin,
                    "max_knot_residual": worst_knot,
                    "stationarity_residual": r.stationarity_residual,
                    "relative_stationarity": r.relative_stationarity,
                    "scale": r.scale,
                    "mass": r.mass,
                    "tol": tol,
                    "within_tol": ok,
                }),
                ok,
            )
        }
        _ => {
            let r = mle::verify_mle(&fit, &sample, grid)?;
            let worst_atom = r.atom_residuals.iter().copied().fold(0.0, f64::max);
            let ok = r.max_violation <= tol;
            (
                json!({
                    "method": file.method.as_str(),
                    "k": file.k,
                    "max_violation": r.max_violation,
                    "argmax": r.argmax,
                    "max_atom_residual": worst_atom,
                    "moment_residual": r.moment_residual,
                    "tail_value": r.tail_value,
                    "mass": r.mass,
                    "tol": tol,
                    "within_tol": ok,
                }),
                ok,
            )
        }
    };
    let text = serde_json::to_string_pretty(&report).expect("report serialization cannot fail") + "\n";
    match &a.out {
        Some(p) => {
            write_file(p, &text)?;
            let _ = writeln!(ctx.out, "{} max_violation={}", if ok { "certified" } else { "failed" }, report["max_violation"]);
        }
        None => {
            let _ = write!(ctx.out, "{text}");
        }
    }
    Ok(if !ok && a.strict { EXIT_NUMERICAL } else { EXIT_OK })
}

fn analytic_inputs(g: &dyn AnalyticDensity, k: u32, t: f64) -> InversionInputs {
    InversionInputs { cdf: g.cdf(t), derivatives: (0..k).map(|j| g.derivative(j, t)).collect() }
}

fn cmd_invert(ctx: &mut Ctx<'_>, a: InvertArgs) -> Result<i32> {
    let ts = match (&a.grid, a.t.is_empty()) {
        (Some(text), _) => parse_grid(text)?.abscissae(),
        (None, false) => a.t.clone(),
        (None, true) => return Err(invalid("give evaluation points with --t or --grid")),
    };
    if let Some(&bad) = ts.iter().find(|t| !(**t >= 0.0)) {
        return Err(invalid(format!("evaluation points must be nonnegative, got {bad}")));
    }
    let mut csv = String::from("t,F\n");
    match (&a.fit, &a.dist) {
        (Some(path), _) => {
            let g = FitFile::read(path)?.mixture()?;
            let k = a.k.unwrap_or(g.k());
            if k != g.k() {
                return Err(invalid(format!("--k {k} does not match the fit-file order {}", g.k())));
            }
            for &t in &ts {
                let _ = writeln!(csv, "{},{}", num(t), num(invert_to_mixing(&g.inversion_inputs(t)?, k, t)?));
            }
        }
        (None, Some(dist)) => {
            if dist != "exp1" {
                return Err(invalid(format!("unknown distribution {dist:?}; expected exp1")));
            }
            let k = a.k.or(ctx.config.k).ok_or_else(|| invalid("--k is required with --dist"))?;
            let g = Exponential::default();
            for &t in &ts {
                let _ = writeln!(csv, "{},{}", num(t), num(invert_to_mixing(&analytic_inputs(&g, k, t), k, t)?));
            }
        }
        (None, None) => return Err(invalid("give either --fit or --dist")),
    }
    match &a.out {
        Some(p) => write_file(p, &csv)?,
        None => {
            let _ = write!(ctx.out, "{csv}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_bounds(ctx: &mut Ctx<'_>, a: BoundsArgs) -> Result<i32> {
    let k = a.k.or(ctx.config.k).ok_or_else(|| invalid("--k is required"))?;
    let js: Vec<u32> = if a.j.is_empty() { (0..k.max(1)).collect() } else { a.j.clone() };
    if !minimax::sign_consistent(k, a.gk) {
        let _ = writeln!(ctx.err, "warning: (-1)^k g^(k)(x0) should be positive for a {k}-monotone density (got {})", a.gk);
    }
    let mixing = minimax::mixing_bound(k, a.x0, a.g0, a.gk)?;
    let mut rows = Vec::new();
    for &j in &js {
        let c = MinimaxConstants::new(k, j)?;
        let bound = minimax::minimax_bound(k, j, a.g0, a.gk)?;
        rows.push((c, bound));
    }
    let mut csv = String::from("j,c_kj,lambda1_kj,lambda2_k,d_kj,bound,mixing_bound\n");
    for (c, bound) in &rows {
        let mix = if c.j + 1 == k { num(mixing) } else { String::new() };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            c.j,
            c.c_kj,
            c.lambda1_kj,
            lambda2_f64(&c.lambda2_k),
            num(c.d_kj),
            num(*bound),
            mix
        );
    }
    if let Some(p) = &a.out {
        write_file(p, &csv)?;
    }
    match a.format {
        TableFormat::Csv => {
            let _ = write!(ctx.out, "{csv}");
        }
        TableFormat::Text => {
            let _ = writeln!(ctx.out, "k = {k}, x0 = {}, g(x0) = {}, g^(k)(x0) = {}", a.x0, a.g0, a.gk);
            let _ = writeln!(ctx.out, "{:>3}  {:>14}  {:>14}  {:>12}  {:>12}  {:>12}", "j", "C_kj", "lambda1", "lambda2", "d_kj", "bound");
            for (c, bound) in &rows {
                let _ = writeln!(
                    ctx.out,
                    "{:>3}  {:>14}  {:>14}  {:>12.6e}  {:>12.6e}  {:>12.6e}",
                    c.j,
                    c.c_kj.to_string(),
                    c.lambda1_kj.to_string(),
                    lambda2_f64(&c.lambda2_k).parse::<f64>().unwrap_or(f64::NAN),
                    c.d_kj,
                    bound
                );
            }
            let _ = writeln!(ctx.out, "mixing distribution bound F(x0): {mixing:.6e}");
        }
    }
    Ok(EXIT_OK)
}

/// Shortest round-trip decimal of the double nearest to `q`.
fn lambda2_f64(q: &num_rational::BigRational) -> String {
    num_traits::ToPrimitive::to_f64(q).map(num).unwrap_or_else(|| "nan".into())
}

fn cmd_simulate(ctx: &mut Ctx<'_>, a: SimulateArgs) -> Result<i32> {
    let distribution = if a.dist == "exp1" {
        Distribution::Exp1
    } else {
        Distribution::Mixture(FitFile::read(&a.dist)?.mixture()?)
    };
    let seed = resolve_seed(a.seed, ctx.config.seed)?;
    let mut plan = ExperimentPlan::new(distribution, a.k.clone(), a.n.clone(), a.reps, seed);
    if let Some(text) = &a.grid {
        plan.grid = parse_grid(text)?;
    }
    if !a.method.is_empty() {
        plan.methods = a.method.iter().map(|&m| m.into()).collect();
    }
    if let Some(tol) = a.tol.or(ctx.config.tol) {
        plan.options.tol = tol;
    }
    if let Some(m) = ctx.config.max_iter {
        plan.options.max_outer_iter = m;
    }
    plan.jobs = ctx.jobs;
    let report = sim::run_consistency_study(&plan)?;
    report.write(&a.out, !a.no_fits, plan.options.tol)?;
    let failures: usize = report.summary.iter().map(|s| s.failures).sum();
    let _ = writeln!(ctx.out, "{} fits, {failures} not converged or failed, seed {seed}", report.rows.len());
    let _ = writeln!(ctx.out, "{:<6} {:>3} {:>6} {:>14} {:>14} {:>7}", "method", "k", "n", "median direct", "median inverse", "atoms");
    for s in &report.summary {
        let _ = writeln!(
            ctx.out,
            "{:<6} {:>3} {:>6} {:>14.6e} {:>14.6e} {:>7}",
            s.method.as_str(),
            s.k,
            s.n,
            s.median_direct,
            s.median_inverse,
            s.median_atoms
        );
    }
    Ok(EXIT_OK)
}
