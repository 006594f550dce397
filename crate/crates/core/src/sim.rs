//! Seeded replication studies: simulate, fit both estimators, and measure
//! how far the fitted density and its mixing distribution land from the
//! truth.
//!
//! Every replication draws its sample from a seed derived from the study
//! seed, the sample size and the replication index, so results do not
//! depend on the number of worker threads. Rows come back in plan order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytic::gamma_integer_cdf;
use crate::error::{invalid, KmError, Result};
use crate::fitfile::FitFile;
use crate::mixture::{invert_to_mixing, sample_mixture, InversionInputs, KMonotoneMixture, Sample};
use crate::numeric::{format_float as num, median};
use crate::support::{FitMethod, FitOptions, FitResult};
use crate::{lse, mle};

/// Distribution function of Gamma(k+1, 1), the mixing distribution of the
/// standard exponential seen as a k-monotone density.
pub fn gamma_mixing_cdf(k: u32, t: f64) -> f64 {
    gamma_integer_cdf(k + 1, t)
}

/// Draws `n` standard exponential observations as `-ln(1 - U)`.
pub fn sample_exponential(n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let x = -(-u).ln_1p();
            if x > 0.0 { x } else { f64::MIN_POSITIVE }
        })
        .collect();
    Sample::new(values)
}

/// Data-generating density of a study.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    /// The standard exponential.
    Exp1,
    /// A fixed mixture, typically read from a fit-file.
    Mixture(KMonotoneMixture),
}

impl Distribution {
    pub fn tag(&self) -> &'static str {
        match self {
            Distribution::Exp1 => "exp1",
            Distribution::Mixture(_) => "mixture",
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Distribution::Exp1 => {
                if x < 0.0 { 0.0 } else { (-x).exp() }
            }
            Distribution::Mixture(g) => g.eval(x),
        }
    }

    /// Mixing distribution of the order-`k` representation at `t`.
    pub fn mixing_cdf(&self, k: u32, t: f64) -> Result<f64> {
        match self {
            Distribution::Exp1 => Ok(gamma_mixing_cdf(k, t)),
            Distribution::Mixture(g) => {
                if k > g.k() {
                    return Err(invalid(format!("a {}-monotone mixture is not {k}-monotone", g.k())));
                }
                if k == g.k() {
                    return Ok(g.mixing().cdf(t));
                }
                invert_to_mixing(&inputs(g, k, t)?, k, t)
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        match self {
            Distribution::Exp1 => sample_exponential(n, seed),
            Distribution::Mixture(g) => sample_mixture(g, n, seed),
        }
    }
}

/// `G(t)` and the first `k` derivatives of `g` at `t`.
fn inputs(g: &KMonotoneMixture, k: u32, t: f64) -> Result<InversionInputs> {
    let derivatives = (0..k).map(|j| g.derivative(j, t).map(|d| d.value)).collect::<Result<Vec<_>>>()?;
    Ok(InversionInputs { cdf: g.cdf(t), derivatives })
}

/// Equally spaced evaluation points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for ErrorGrid {
    fn default() -> Self {
        Self { lo: 0.1, hi: 8.0, points: 512 }
    }
}

impl ErrorGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let g = Self { lo, hi, points };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) {
            return Err(invalid(format!("error grid needs 0 < lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.points < 2 {
            return Err(invalid("error grid needs at least 2 points"));
        }
        Ok(())
    }

    pub fn abscissae(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub distribution: Distribution,
    pub ks: Vec<u32>,
    pub ns: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub grid: ErrorGrid,
    pub options: FitOptions,
    pub methods: Vec<FitMethod>,
    /// Worker threads; `None` uses the available parallelism.
    pub jobs: Option<usize>,
}

impl ExperimentPlan {
    pub fn new(distribution: Distribution, ks: Vec<u32>, ns: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            distribution,
            ks,
            ns,
            replications,
            seed,
            grid: ErrorGrid::default(),
            options: FitOptions::default(),
            methods: vec![FitMethod::Mle, FitMethod::Lse],
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ns.is_empty() {
            return Err(invalid("the plan needs at least one k and one n"));
        }
        if let Some(&k) = self.ks.iter().find(|&&k| k == 0) {
            return Err(invalid(format!("order k must be at least 1, got {k}")));
        }
        if self.ns.contains(&0) {
            return Err(invalid("sample sizes must be at least 1"));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if self.methods.is_empty() || self.methods.contains(&FitMethod::Manual) {
            return Err(invalid("methods must be a nonempty subset of {mle, lse}"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs must be at least 1"));
        }
        self.grid.validate()?;
        self.options.validate()
    }

    /// Seed of the sample used by replication `rep` at size `n`.
    pub fn replication_seed(&self, n: usize, rep: usize) -> u64 {
        let mut z = self.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (rep as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Outcome of one fit.
#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Converged,
    NotConverged,
    Failed(String),
}

impl RowStatus {
    pub fn label(&self) -> String {
        match self {
            RowStatus::Converged => "ok".into(),
            RowStatus::NotConverged => "not-converged".into(),
            RowStatus::Failed(msg) => format!("error: {}", msg.replace([',', '\n', '\r', '"'], " ")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationRow {
    pub method: FitMethod,
    pub k: u32,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub status: RowStatus,
    /// `sup |ĝ − g₀|` over the error grid.
    pub direct_error: f64,
    /// `sup |F̂ − F₀|` over the error grid.
    pub inverse_error: f64,
    pub atoms: usize,
    pub mass: f64,
    pub iterations: usize,
    pub seconds: f64,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: FitMethod,
    pub k: u32,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub median_direct: f64,
    pub median_inverse: f64,
    pub median_atoms: f64,
    pub median_iterations: f64,
    /// Least squares slope of `ln median_direct` on `ln n` across the plan's
    /// sample sizes. A diagnostic only.
    pub direct_slope: Option<f64>,
    pub inverse_slope: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<SummaryRow>,
}

impl StudyReport {
    pub fn summary_for(&self, method: FitMethod, k: u32, n: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.k == k && s.n == n)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("method,k,n,rep,seed,status,direct_error,inverse_error,atoms,mass,iterations\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.k,
                r.n,
                r.rep,
                r.seed,
                r.status.label(),
                num(r.direct_error),
                num(r.inverse_error),
                r.atoms,
                num(r.mass),
                r.iterations
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        let mut out = String::from(
            "method,k,n,replications,failures,median_direct_error,median_inverse_error,median_atoms,median_iterations,direct_slope,inverse_slope\n",
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.method,
                s.k,
                s.n,
                s.replications,
                s.failures,
                num(s.median_direct),
                num(s.median_inverse),
                num(s.median_atoms),
                num(s.median_iterations),
                opt(s.direct_slope),
                opt(s.inverse_slope)
            );
        }
        out
    }

    /// Wall-clock times, kept apart from the deterministic tables.
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("method,k,n,rep,seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{:.6}", r.method, r.k, r.n, r.rep, r.seconds);
        }
        out
    }

    /// Writes `rows.csv`, `summary.csv`, `timings.csv` and, when
    /// `with_fits`, one fit-file per successful fit under `fits/`.
    pub fn write(&self, dir: &Path, with_fits: bool, tol: f64) -> Result<Vec<PathBuf>> {
        let io = |p: &Path, e: std::io::Error| KmError::Io(format!("{}: {e}", p.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written = Vec::new();
        for (name, body) in [
            ("rows.csv", self.rows_csv()),
            ("summary.csv", self.summary_csv()),
            ("timings.csv", self.timings_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| io(&p, e))?;
            written.push(p);
        }
        if with_fits {
            let fits = dir.join("fits");
            std::fs::create_dir_all(&fits).map_err(|e| io(&fits, e))?;
            for r in &self.rows {
                if let Some(fit) = &r.fit {
                    let p = fits.join(format!("{}_k{}_n{}_rep{}.json", r.method, r.k, r.n, r.rep));
                    FitFile::from_fit(fit, Some(tol)).write(&p)?;
                    written.push(p);
                }
            }
        }
        Ok(written)
    }
}

fn fit_with(method: FitMethod, s: &Sample, k: u32, opts: &FitOptions) -> Result<FitResult> {
    match method {
        FitMethod::Mle => mle::fit_mle(s, k, opts),
        FitMethod::Lse => lse::fit_lse(s, k, opts),
        FitMethod::Manual => Err(invalid("manual fits cannot be simulated")),
    }
}

/// `(sup |ĝ − g₀|, sup |F̂ − F₀|)` over `ts`.
pub fn sup_errors(fit: &KMonotoneMixture, truth: &Distribution, ts: &[f64]) -> Result<(f64, f64)> {
    let k = fit.k();
    let mut direct = 0.0f64;
    let mut inverse = 0.0f64;
    for &t in ts {
        direct = direct.max((fit.eval(t) - truth.density(t)).abs());
        let f_hat = invert_to_mixing(&inputs(fit, k, t)?, k, t)?;
        inverse = inverse.max((f_hat - truth.mixing_cdf(k, t)?).abs());
    }
    Ok((direct, inverse))
}

fn run_task(plan: &ExperimentPlan, ts: &[f64], k: u32, n: usize, rep: usize) -> Vec<ReplicationRow> {
    let seed = plan.replication_seed(n, rep);
    let sample = plan.distribution.sample(n, seed);
    plan.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = sample
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|s| fit_with(method, s, k, &plan.options))
                .and_then(|fit| sup_errors(&fit.mixture, &plan.distribution, ts).map(|e| (fit, e)));
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok((fit, (direct_error, inverse_error))) => ReplicationRow {
                    method,
                    k,
                    n,
                    rep,
                    seed,
                    status: if fit.converged { RowStatus::Converged } else { RowStatus::NotConverged },
                    direct_error,
                    inverse_error,
                    atoms: fit.num_atoms(),
                    mass: fit.mass(),
                    iterations: fit.iterations,
                    seconds,
                    fit: Some(fit),
                },
                Err(e) => ReplicationRow {
                    method,
                    k,
                    n,
                    rep,
                    seed,
                    status: RowStatus::Failed(e.to_string()),
                    direct_error: f64::NAN,
                    inverse_error: f64::NAN,
                    atoms: 0,
                    mass: f64::NAN,
                    iterations: 0,
                    seconds,
                    fit: None,
                },
            }
        })
        .collect()
}

fn log_log_slope(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .map(|&(n, v)| ((n as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn summarize(plan: &ExperimentPlan, rows: &[ReplicationRow]) -> Vec<SummaryRow> {
    let mut summary = Vec::new();
    for &method in &plan.methods {
        for &k in &plan.ks {
            let start = summary.len();
            for &n in &plan.ns {
                let group: Vec<&ReplicationRow> =
                    rows.iter().filter(|r| r.method == method && r.k == k && r.n == n).collect();
                let pick = |f: fn(&ReplicationRow) -> f64| -> f64 {
                    median(&group.iter().filter(|r| r.fit.is_some()).map(|r| f(r)).collect::<Vec<_>>())
                };
                summary.push(SummaryRow {
                    method,
                    k,
                    n,
                    replications: group.len(),
                    failures: group.iter().filter(|r| r.status != RowStatus::Converged).count(),
                    median_direct: pick(|r| r.direct_error),
                    median_inverse: pick(|r| r.inverse_error),
                    median_atoms: pick(|r| r.atoms as f64),
                    median_iterations: pick(|r| r.iterations as f64),
                    direct_slope: None,
                    inverse_slope: None,
                });
            }
            let block = &mut summary[start..];
            let direct: Vec<(usize, f64)> = block.iter().map(|s| (s.n, s.median_direct)).collect();
            let inverse: Vec<(usize, f64)> = block.iter().map(|s| (s.n, s.median_inverse)).collect();
            let (ds, is) = (log_log_slope(&direct), log_log_slope(&inverse));
            for s in block {
                s.direct_slope = ds;
                s.inverse_slope = is;
            }
        }
    }
    summary
}

/// Runs every `(k, n, replication)` of `plan`. Individual fit failures are
/// recorded in their rows and do not stop the study.
pub fn run_consistency_study(plan: &ExperimentPlan) -> Result<StudyReport> {
    plan.validate()?;
    let ts = plan.grid.abscissae();
    let tasks: Vec<(u32, usize, usize)> = plan
        .ks
        .iter()
        .flat_map(|&k| plan.ns.iter().flat_map(move |&n| (0..plan.replications).map(move |rep| (k, n, rep))))
        .collect();
    let work = || -> Vec<ReplicationRow> {
        tasks.par_iter().flat_map_iter(|&(k, n, rep)| run_task(plan, &ts, k, n, rep)).collect()
    };
    let rows = match plan.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| KmError::Numerical(format!("cannot start worker pool: {e}")))?
            .install(work),
        None => work(),
    };
    let summary = summarize(plan, &rows);
    Ok(StudyReport { rows, summary })
}

/// Plot-ready curves: `t, g_fit, g0, F_fit, F0` on every grid point.
pub fn emit_fit_curves(fit: &KMonotoneMixture, truth: &Distribution, grid: &ErrorGrid) -> Result<String> {
    grid.validate()?;
    let k = fit.k();
    let mut out = String::from("t,g_fit,g0,F_fit,F0\n");
    for t in grid.abscissae() {
        let f_fit = invert_to_mixing(&inputs(fit, k, t)?, k, t)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            num(t),
            num(fit.eval(t)),
            num(truth.density(t)),
            num(f_fit),
            num(truth.mixing_cdf(k, t)?)
        );
    }
    Ok(out)
}
