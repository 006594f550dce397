//! Options, results and the support-reduction driver shared by both
//! estimators.

use serde::{Deserialize, Serialize};

use crate::mixture::{KMonotoneMixture, Sample};
use crate::numeric::brent_minimize;

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Mle,
    Lse,
    Manual,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Mle => "mle",
            FitMethod::Lse => "lse",
            FitMethod::Manual => "manual",
        }
    }
}

impl std::fmt::Display for FitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FitMethod {
    type Err = crate::KmError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mle" => Ok(FitMethod::Mle),
            "lse" => Ok(FitMethod::Lse),
            "manual" => Ok(FitMethod::Manual),
            other => Err(crate::error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Solver controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Tolerance on the optimality certificate.
    pub tol: f64,
    pub max_outer_iter: usize,
    pub max_inner_iter: usize,
    /// Atoms lighter than this are dropped after each re-optimization.
    pub prune_weight: f64,
    /// Candidate points per gap between consecutive order statistics.
    pub grid_density: usize,
    /// Search ceiling as a multiple of the sample maximum; `None` means `2k`.
    pub search_upper_factor: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_outer_iter: 500,
            max_inner_iter: 2000,
            prune_weight: 1e-10,
            grid_density: 8,
            search_upper_factor: None,
        }
    }
}

impl FitOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn upper_factor(&self, k: u32) -> f64 {
        self.search_upper_factor.unwrap_or(2.0 * k as f64)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |what: &str| Err(crate::error::invalid(what.to_string()));
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol must lie in (0, 1)");
        }
        if self.max_outer_iter == 0 || self.max_inner_iter == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.prune_weight > 0.0) {
            return bad("prune_weight must be positive");
        }
        if self.grid_density == 0 {
            return bad("grid_density must be positive");
        }
        if let Some(f) = self.search_upper_factor {
            if !(f > 1.0 && f.is_finite()) {
                return bad("search_upper_factor must exceed 1");
            }
        }
        Ok(())
    }
}

/// A fitted mixture plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub mixture: KMonotoneMixture,
    pub method: FitMethod,
    /// Mean log-likelihood for the MLE, least squares criterion for the LSE.
    pub objective: f64,
    /// MLE: `sup_t Ĥ(t)`. LSE: `max(0, -inf_t Δ̃(t)) / scale`, the largest
    /// normalized Fenchel violation.
    pub max_gradient: f64,
    /// Largest certificate residual at a support point.
    pub atom_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Upper end of the region searched for new atoms.
    pub ceiling: f64,
    /// Objective after each outer iteration.
    pub history: Vec<f64>,
    /// LSE only: `inf_t Δ̃(t)` over the search grid.
    pub min_fenchel_gap: Option<f64>,
    /// LSE only: `(1/n) Σ g̃(X_i) - ∫ g̃²`.
    pub stationarity_residual: Option<f64>,
    /// LSE only: `max(1, 𝕐(X_(n)))`.
    pub scale: Option<f64>,
}

impl FitResult {
    pub fn mass(&self) -> f64 {
        self.mixture.mass()
    }

    pub fn num_atoms(&self) -> usize {
        self.mixture.support().len()
    }
}

/// Problem-specific half of support reduction.
///
/// `violation` is positive where adding an atom improves the objective;
/// the certificate holds when it is at most `tol` everywhere.
pub(crate) trait Criterion {
    fn k(&self) -> u32;
    fn sample(&self) -> &Sample;
    /// Recompute caches that depend on the current mixture.
    fn prepare(&mut self, atoms: &[f64], weights: &[f64]);
    fn violation(&self, t: f64) -> f64;
    fn violation_grid(&self, ts: &[f64]) -> Vec<f64>;
    /// Certificate measure when it differs from the search direction.
    /// Must share its sign with `violation`.
    fn certificate(&self, t: f64) -> f64 {
        self.violation(t)
    }
    fn certificate_grid(&self, ts: &[f64]) -> Vec<f64> {
        self.violation_grid(ts)
    }
    fn separate_certificate(&self) -> bool {
        false
    }
    /// Re-optimize weights on a fixed support starting from `warm`.
    fn reoptimize(&mut self, atoms: &[f64], warm: &[f64], max_iter: usize) -> Vec<f64>;
    /// Quantity being minimized.
    fn loss(&self, atoms: &[f64], weights: &[f64]) -> f64;
    /// Residual of the per-atom equality at the prepared mixture.
    fn atom_residual(&self, atoms: &[f64]) -> f64;
    /// Joint refinement of weights and atoms.
    fn polish(&mut self, atoms: &[f64], weights: &[f64]) -> Option<(Vec<f64>, Vec<f64>)>;
    /// Normalization applied to the final weights.
    fn finalize(&self, weights: &mut [f64]);
}

pub(crate) struct Outcome {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
    pub atom_residual: f64,
    pub ceiling: f64,
    pub history: Vec<f64>,
}

/// Candidate abscissae in the search domain.
pub(crate) fn candidate_grid(sample: &Sample, k: u32, ceiling: f64, density: usize, atoms: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = sample.values().to_vec();
    distinct.dedup();
    let lo = distinct[0];
    let mut ts = Vec::with_capacity(distinct.len() * (density + 1) + 128);
    if k == 1 {
        ts.extend(distinct.iter().copied().filter(|&x| x <= ceiling));
    } else {
        for w in distinct.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ratio = (b / a).ln();
            let count = density.max((4.0 * density as f64 * ratio).ceil() as usize);
            for l in 1..=count {
                ts.push(a * (ratio * l as f64 / count as f64).exp());
            }
        }
        let top = *distinct.last().unwrap();
        let geo = (8 * density).max(64);
        let ratio = (ceiling / top).ln() / geo as f64;
        for l in 1..=geo {
            ts.push(top * (ratio * l as f64).exp());
        }
        if distinct.len() == 1 {
            // No gaps: also cover (X_(1), X_(1)·(1 + small)).
            ts.push(top);
        }
        ts.extend(sample.values().iter().map(|&x| k as f64 * x).filter(|&t| t <= ceiling));
        ts.extend(atoms.iter().copied().filter(|&a| a > lo && a <= ceiling));
        ts.retain(|&t| t > lo);
        ts.push(ceiling);
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Global maximizer of the violation over the candidate grid, polished by
/// Brent's method around the best local maxima. Ties within `tol` go to
/// the smallest abscissa.
pub(crate) fn locate_max(
    grid: impl Fn(&[f64]) -> Vec<f64>,
    point: impl Fn(f64) -> f64,
    ts: &[f64],
    tol: f64,
    polish: bool,
) -> (f64, f64) {
    let vals = grid(ts);
    let n = ts.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || vals[i] >= vals[i - 1];
            let right = i + 1 == n || vals[i] >= vals[i + 1];
            left && right
        })
        .collect();
    peaks.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
    peaks.truncate(6);
    let mut found: Vec<(f64, f64)> = peaks
        .iter()
        .map(|&i| {
            if !polish {
                return (ts[i], vals[i]);
            }
            let lo = if i == 0 { ts[0] } else { ts[i - 1] };
            let hi = if i + 1 == n { ts[i] } else { ts[i + 1] };
            let (x, fx) = brent_minimize(|t| -point(t), lo, hi, 1e-11);
            if -fx >= vals[i] { (x, -fx) } else { (ts[i], vals[i]) }
        })
        .collect();
    if found.is_empty() {
        return (ts[0], vals[0]);
    }
    let best = found.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.1));
    found.retain(|p| p.1 >= best - tol.min(1e-12_f64.max(best.abs() * 1e-12)));
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found[0]
}

fn insert_atom(atoms: &mut Vec<f64>, weights: &mut Vec<f64>, t: f64) -> usize {
    let pos = atoms.partition_point(|&a| a < t);
    atoms.insert(pos, t);
    weights.insert(pos, 0.0);
    pos
}

fn prune(atoms: &mut Vec<f64>, weights: &mut Vec<f64>, min_weight: f64) {
    let mut i = 0;
    while i < atoms.len() {
        if weights[i] < min_weight && atoms.len() > 1 {
            atoms.remove(i);
            weights.remove(i);
        } else {
            i += 1;
        }
    }
}

/// Merges neighbouring atoms closer than `rel` (relative) into their
/// weighted average.
fn coalesce(atoms: &mut Vec<f64>, weights: &mut Vec<f64>, rel: f64) -> bool {
    let mut merged = false;
    let mut i = 0;
    while i + 1 < atoms.len() {
        if atoms[i + 1] - atoms[i] <= rel * atoms[i + 1] {
            let w = weights[i] + weights[i + 1];
            if w > 0.0 {
                atoms[i] = (atoms[i] * weights[i] + atoms[i + 1] * weights[i + 1]) / w;
            }
            weights[i] = w;
            atoms.remove(i + 1);
            weights.remove(i + 1);
            merged = true;
        } else {
            i += 1;
        }
    }
    merged
}

/// Support reduction from an initial mixture.
pub(crate) fn support_reduction<C: Criterion>(
    c: &mut C,
    mut atoms: Vec<f64>,
    mut weights: Vec<f64>,
    opts: &FitOptions,
) -> Outcome {
    let k = c.k();
    let sample_max = c.sample().max();
    let mut ceiling = opts.upper_factor(k) * sample_max;
    let merge_gap = 1e-8 * sample_max;
    let smooth = k >= 2;

    weights = c.reoptimize(&atoms, &weights, opts.max_inner_iter);
    prune(&mut atoms, &mut weights, opts.prune_weight);
    let mut history = vec![c.loss(&atoms, &weights)];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_violation = f64::INFINITY;
    let mut extensions = 0;
    let mut polished_at: Option<(usize, u64)> = None;
    let mut stalls = 0;

    while iterations < opts.max_outer_iter {
        c.prepare(&atoms, &weights);
        let (mut t, mut v);
        loop {
            let ts = candidate_grid(c.sample(), k, ceiling, opts.grid_density, &atoms);
            let cc = &*c;
            (t, v) = locate_max(|x| cc.violation_grid(x), |x| cc.violation(x), &ts, opts.tol, smooth);
            if cc.separate_certificate() {
                v = locate_max(|x| cc.certificate_grid(x), |x| cc.certificate(x), &ts, opts.tol, smooth).1;
            }
            if smooth && extensions < 3 && t >= 0.99 * ceiling && v > opts.tol {
                ceiling *= 2.0;
                extensions += 1;
                continue;
            }
            break;
        }
        max_violation = v;

        // Try a joint Newton refinement once the support looks settled.
        let settled = v <= opts.tol || stalls > 0;
        let key = (atoms.len(), c.loss(&atoms, &weights).to_bits());
        if smooth && settled && polished_at != Some(key) {
            polished_at = Some(key);
            if let Some((pa, pw)) = c.polish(&atoms, &weights) {
                let before = c.loss(&atoms, &weights);
                let after = c.loss(&pa, &pw);
                if after <= before + 1e-15 * before.abs().max(1.0) {
                    atoms = pa;
                    weights = pw;
                    history.push(after);
                    continue;
                }
                c.prepare(&atoms, &weights);
            }
        }
        if v <= opts.tol {
            converged = true;
            break;
        }

        iterations += 1;
        let before = c.loss(&atoms, &weights);
        let near = atoms.iter().position(|&a| (a - t).abs() <= merge_gap);
        if near.is_none() {
            insert_atom(&mut atoms, &mut weights, t);
        }
        let mut next = c.reoptimize(&atoms, &weights, opts.max_inner_iter);
        let mut after = c.loss(&atoms, &next);
        if !(after < before - 1e-15 * before.abs().max(1.0)) && near.is_none() && atoms.len() > 1 {
            // The new kernel is numerically dependent on its neighbours:
            // move the nearest neighbour onto it instead.
            let pos = atoms.partition_point(|&a| a < t);
            let nb = if pos == 0 {
                1
            } else if pos + 1 == atoms.len() || t - atoms[pos - 1] <= atoms[pos + 1] - t {
                pos - 1
            } else {
                pos + 1
            };
            let mut moved_atoms = atoms.clone();
            let mut moved_w = weights.clone();
            moved_w[pos] = moved_w[nb];
            moved_atoms.remove(nb);
            moved_w.remove(nb);
            let w2 = c.reoptimize(&moved_atoms, &moved_w, opts.max_inner_iter);
            let l2 = c.loss(&moved_atoms, &w2);
            if l2 < after {
                atoms = moved_atoms;
                next = w2;
                after = l2;
            }
        }
        weights = next;
        prune(&mut atoms, &mut weights, opts.prune_weight);
        history.push(after);
        if !(after < before - 1e-15 * before.abs().max(1.0)) {
            stalls += 1;
            if stalls > 5 {
                break;
            }
        } else {
            stalls = 0;
        }
    }

    if coalesce(&mut atoms, &mut weights, 1e-8) {
        weights = c.reoptimize(&atoms, &weights, opts.max_inner_iter);
    }
    c.prepare(&atoms, &weights);
    let atom_residual = c.atom_residual(&atoms);
    c.finalize(&mut weights);
    Outcome {
        atoms,
        weights,
        iterations,
        converged,
        max_violation,
        atom_residual,
        ceiling,
        history,
    }
}
