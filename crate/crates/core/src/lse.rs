//! Least squares estimation over the cone of integrable k-monotone
//! functions.
//!
//! The criterion `Q_n(g) = ½∫g² − (1/n)Σ g(X_i)` is minimized without a
//! mass constraint. In kernel-weight coordinates `g = Σ w_i K_{a_i}` it is
//! the quadratic `½ wᵀRw − sᵀw` with `R_il = ∫K_{a_i}K_{a_l}` and
//! `s_i = (1/n)Σ_j K_{a_i}(X_j)`. Optimality is the Fenchel pair
//! `H̃ ≥ 𝕐` everywhere, with equality on the support, where
//! `H̃(t) = ∫_0^t (t−x)^{k−1}/(k−1)! g(x) dx` and
//! `𝕐(t) = (1/n)Σ (t−X_i)_+^{k−1}/(k−1)!`.

use crate::error::{invalid, Result};
use crate::mixture::{kernel, kernel_gram, GridFunction, KMonotoneMixture, MixingMeasure, Sample};
use crate::mle::{joint_newton, merge_closest, verification_grid};
use crate::numeric::{
    brent_minimize, factorial, median_of_sorted, pos_pow, power_product_integral, solve_dense, truncated_power_sums,
    GaussLegendre,
};
use crate::qp::nonneg_quadratic;
use crate::support::{support_reduction, Criterion, FitMethod, FitOptions, FitResult};

/// Gram kernel `r_k(s, t) = ∫_0^{s∧t} (s−x)^{k−1}(t−x)^{k−1} dx`.
pub fn rk_moment(k: u32, s: f64, t: f64) -> f64 {
    power_product_integral(k - 1, k - 1, s, t)
}

/// `s_{n,k}(t) = (1/n) Σ (t − X_i)_+^{k−1}`.
pub fn snk(s: &Sample, k: u32, t: f64) -> f64 {
    let end = s.values().partition_point(|&x| x <= t);
    s.values()[..end].iter().map(|&x| pos_pow(t - x, k - 1)).sum::<f64>() / s.len() as f64
}

/// `𝕐_{n,k}(t) = s_{n,k}(t)/(k−1)!`.
pub fn y_nk(s: &Sample, k: u32, t: f64) -> f64 {
    snk(s, k, t) / factorial(k - 1)
}

/// `∫_0^{t∧a} (t−x)^p (1 − x/a)^{k−1} dx / a`.
fn kernel_moment(k: u32, p: u32, t: f64, a: f64) -> f64 {
    let upper = t.min(a);
    if upper <= 0.0 {
        return 0.0;
    }
    let nodes = ((p + k - 1) as usize + 2) / 2;
    GaussLegendre::cached(nodes.max(1)).integrate(0.0, upper, |x| {
        pos_pow(t - x, p) * pos_pow(1.0 - x / a, k - 1)
    }) / a
}

fn h_tilde_raw(k: u32, atoms: &[f64], weights: &[f64], t: f64) -> f64 {
    let c = k as f64 / factorial(k - 1);
    c * atoms
        .iter()
        .zip(weights)
        .map(|(&a, &w)| w * kernel_moment(k, k - 1, t, a))
        .sum::<f64>()
}

fn h_tilde_slope(k: u32, atoms: &[f64], weights: &[f64], t: f64) -> f64 {
    if k == 1 {
        // H̃ = G, so H̃' = g.
        return atoms.iter().zip(weights).map(|(&a, &w)| w * kernel(1, a, t)).sum();
    }
    let c = k as f64 / factorial(k - 2);
    c * atoms
        .iter()
        .zip(weights)
        .map(|(&a, &w)| w * kernel_moment(k, k - 2, t, a))
        .sum::<f64>()
}

/// `H̃(t) = ∫_0^t (t−x)^{k−1}/(k−1)! g(x) dx`.
pub fn h_tilde(g: &KMonotoneMixture, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    h_tilde_raw(g.k(), g.support(), g.weights(), t)
}

/// Fenchel gap `Δ̃(t) = H̃(t) − 𝕐(t)`.
pub fn fenchel_gap(g: &KMonotoneMixture, s: &Sample, t: f64) -> f64 {
    h_tilde(g, t) - y_nk(s, g.k(), t)
}

/// Directional derivative of `Q_n` at `g` toward the kernel `K_t`,
/// computed from the Gram kernel: `∫ g K_t − (1/n) Σ K_t(X_i)`.
pub fn directional_derivative(g: &KMonotoneMixture, s: &Sample, t: f64) -> f64 {
    let k = g.k();
    let inner: f64 = g
        .support()
        .iter()
        .zip(g.weights())
        .map(|(&a, &w)| w * kernel_gram(k, a, t))
        .sum();
    let data: f64 = s.values().iter().map(|&x| kernel(k, t, x)).sum::<f64>() / s.len() as f64;
    inner - data
}

/// `Q_n(g) = ½ ∫ g² − (1/n) Σ g(X_i)`, with `∫ g²` in closed form.
pub fn lse_objective(g: &KMonotoneMixture, s: &Sample) -> f64 {
    let mean: f64 = s.values().iter().map(|&x| g.eval(x)).sum::<f64>() / s.len() as f64;
    0.5 * g.l2_norm_sq() - mean
}

/// `max(1, 𝕐(X_(n)))`, the normalization of the Fenchel tolerances.
pub fn fenchel_scale(s: &Sample, k: u32) -> f64 {
    y_nk(s, k, s.max()).max(1.0)
}

/// The fixed-support least squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LseWorkspace {
    pub support: Vec<f64>,
    /// `R_il = ∫ K_{a_i} K_{a_l}`, row-major.
    pub gram: Vec<f64>,
    /// `s_i = (1/n) Σ_j K_{a_i}(X_j)`.
    pub linear: Vec<f64>,
}

impl LseWorkspace {
    pub fn new(s: &Sample, k: u32, support: &[f64]) -> Result<Self> {
        if k < 1 {
            return Err(invalid("order k must be at least 1"));
        }
        if support.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(invalid("support points must be finite and positive"));
        }
        let m = support.len();
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for l in i..m {
                let v = kernel_gram(k, support[i], support[l]);
                gram[i * m + l] = v;
                gram[l * m + i] = v;
            }
        }
        let n = s.len() as f64;
        let linear = support
            .iter()
            .map(|&a| s.values().iter().map(|&x| kernel(k, a, x)).sum::<f64>() / n)
            .collect();
        Ok(Self { support: support.to_vec(), gram, linear })
    }

    pub fn objective(&self, weights: &[f64]) -> f64 {
        let m = self.support.len();
        let mut v = 0.0;
        for i in 0..m {
            let row: f64 = (0..m).map(|l| self.gram[i * m + l] * weights[l]).sum();
            v += weights[i] * (0.5 * row - self.linear[i]);
        }
        v
    }

    /// Nonnegative minimizer of the restricted criterion.
    pub fn solve(&self, warm: Option<&[f64]>, max_iter: usize) -> Vec<f64> {
        nonneg_quadratic(&self.gram, &self.linear, warm, max_iter).u
    }

    /// Whether the Gram matrix admits a Cholesky factorization.
    pub fn is_positive_definite(&self) -> bool {
        let m = self.support.len();
        let mut l = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..=r {
                let mut s = self.gram[r * m + c];
                for t in 0..c {
                    s -= l[r * m + t] * l[c * m + t];
                }
                if r == c {
                    if !(s > 0.0) {
                        return false;
                    }
                    l[r * m + r] = s.sqrt();
                } else {
                    l[r * m + c] = s / l[c * m + c];
                }
            }
        }
        true
    }
}

struct LseCriterion<'a> {
    k: u32,
    sample: &'a Sample,
    scale: f64,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl LseCriterion<'_> {
    fn kernel_factor(&self, t: f64) -> f64 {
        factorial(self.k) / t.powi(self.k as i32)
    }

    fn gap(&self, atoms: &[f64], weights: &[f64], t: f64) -> f64 {
        h_tilde_raw(self.k, atoms, weights, t) - y_nk(self.sample, self.k, t)
    }

    fn gap_slope(&self, atoms: &[f64], weights: &[f64], t: f64) -> f64 {
        let k = self.k;
        let y_slope = if k == 1 {
            0.0
        } else {
            snk(self.sample, k - 1, t) / factorial(k - 2)
        };
        h_tilde_slope(k, atoms, weights, t) - y_slope
    }

    /// `[D(a_i), a_i D'(a_i)]` with `D(t) = (k!/t^k) Δ̃(t)`, the directional
    /// derivative toward `K_t`.
    fn stationarity(&self, atoms: &[f64], weights: &[f64]) -> Option<Vec<f64>> {
        let k = self.k as f64;
        let gaps: Vec<f64> = atoms.iter().map(|&a| self.gap(atoms, weights, a)).collect();
        let mut r: Vec<f64> = atoms.iter().zip(&gaps).map(|(&a, &d)| self.kernel_factor(a) * d).collect();
        r.extend(atoms.iter().zip(&gaps).map(|(&a, &d)| {
            self.kernel_factor(a) * (a * self.gap_slope(atoms, weights, a) - k * d)
        }));
        Some(r)
    }
}

impl Criterion for LseCriterion<'_> {
    fn k(&self) -> u32 {
        self.k
    }

    fn sample(&self) -> &Sample {
        self.sample
    }

    fn prepare(&mut self, atoms: &[f64], weights: &[f64]) {
        self.atoms = atoms.to_vec();
        self.weights = weights.to_vec();
    }

    /// Steepest descent in kernel-weight coordinates:
    /// `−(k!/t^k) Δ̃(t)`, the negated directional derivative toward `K_t`.
    fn violation(&self, t: f64) -> f64 {
        -self.kernel_factor(t) * self.gap(&self.atoms, &self.weights, t)
    }

    fn violation_grid(&self, ts: &[f64]) -> Vec<f64> {
        self.certificate_grid(ts)
            .into_iter()
            .zip(ts)
            .map(|(v, &t)| v * self.scale * self.kernel_factor(t))
            .collect()
    }

    fn separate_certificate(&self) -> bool {
        true
    }

    fn certificate(&self, t: f64) -> f64 {
        -self.gap(&self.atoms, &self.weights, t) / self.scale
    }

    fn certificate_grid(&self, ts: &[f64]) -> Vec<f64> {
        let k = self.k;
        let xs = self.sample.values();
        let ones = vec![1.0 / (xs.len() as f64 * factorial(k - 1)); xs.len()];
        let y = truncated_power_sums(xs, &ones, k - 1, ts);
        ts.iter()
            .zip(y)
            .map(|(&t, yv)| -(h_tilde_raw(k, &self.atoms, &self.weights, t) - yv) / self.scale)
            .collect()
    }

    fn reoptimize(&mut self, atoms: &[f64], warm: &[f64], max_iter: usize) -> Vec<f64> {
        match LseWorkspace::new(self.sample, self.k, atoms) {
            Ok(ws) => ws.solve(Some(warm), max_iter.max(10 * atoms.len())),
            Err(_) => warm.to_vec(),
        }
    }

    fn loss(&self, atoms: &[f64], weights: &[f64]) -> f64 {
        LseWorkspace::new(self.sample, self.k, atoms)
            .map(|ws| ws.objective(weights))
            .unwrap_or(f64::INFINITY)
    }

    fn atom_residual(&self, atoms: &[f64]) -> f64 {
        atoms
            .iter()
            .map(|&a| self.certificate(a).abs())
            .fold(0.0, f64::max)
    }

    fn polish(&mut self, atoms: &[f64], weights: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let lower = self.sample.min();
        let mut atoms = atoms.to_vec();
        let mut weights = weights.to_vec();
        for _ in 0..4 {
            match joint_newton(|a, w| self.stationarity(a, w), &atoms, &weights, lower) {
                Some(pair) => return Some(pair),
                None if atoms.len() > 1 => {
                    if !merge_closest(&mut atoms, &mut weights) {
                        return None;
                    }
                    weights = self.reoptimize(&atoms, &weights, 200);
                    let keep: Vec<usize> = (0..atoms.len()).filter(|&i| weights[i] > 0.0).collect();
                    atoms = keep.iter().map(|&i| atoms[i]).collect();
                    weights = keep.iter().map(|&i| weights[i]).collect();
                    if atoms.is_empty() {
                        return None;
                    }
                }
                None => return None,
            }
        }
        None
    }

    fn finalize(&self, _weights: &mut [f64]) {}
}

/// Iterative refinement of `Δ̃(a_i) = 0`, which is linear in the weights.
/// The quadratic program enforces the same conditions in kernel units,
/// where far atoms carry a factor `k!/a^k` that hides their residual.
fn refine_knot_weights(c: &LseCriterion<'_>, atoms: &[f64], weights: &mut [f64]) {
    let cf = c.k as f64 / factorial(c.k - 1);
    let mut mat: Vec<f64> = atoms
        .iter()
        .flat_map(|&t| atoms.iter().map(move |&a| cf * kernel_moment(c.k, c.k - 1, t, a)))
        .collect();
    let m = atoms.len();
    let rows: Vec<f64> = mat.chunks(m).map(|r| r.iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect();
    if rows.iter().any(|&v| !(v > 0.0)) {
        return;
    }
    mat.iter_mut().enumerate().for_each(|(i, v)| *v /= rows[i / m]);
    let worst = |w: &[f64]| atoms.iter().map(|&a| c.gap(atoms, w, a).abs()).fold(0.0, f64::max);
    let mut best = worst(weights);
    let mut w = weights.to_vec();
    for _ in 0..3 {
        let r: Vec<f64> = atoms.iter().map(|&a| -c.gap(atoms, &w, a)).collect();
        let Some(dw) = solve_dense(mat.clone(), r.iter().zip(&rows).map(|(v, s)| v / s).collect()) else {
            return;
        };
        w.iter_mut().zip(&dw).for_each(|(wi, d)| *wi += d);
        if w.iter().any(|&v| !(v > 0.0)) {
            return;
        }
        let e = worst(&w);
        if !(e < best) {
            return;
        }
        best = e;
        weights.copy_from_slice(&w);
    }
}

/// Fits the least squares estimator by support reduction.
pub fn fit_lse(s: &Sample, k: u32, opts: &FitOptions) -> Result<FitResult> {
    if k < 1 {
        return Err(invalid("order k must be at least 1"));
    }
    if k > 60 {
        return Err(invalid(format!("order k = {k} is beyond the supported range (<= 60)")));
    }
    opts.validate()?;
    let kf = k as f64;
    let mut atoms = vec![kf * median_of_sorted(s.values())];
    let top = kf * s.max();
    if top > atoms[0] * (1.0 + 1e-9) {
        atoms.push(top);
    }
    let weights = vec![0.0; atoms.len()];
    let scale = fenchel_scale(s, k);
    let mut crit = LseCriterion { k, sample: s, scale, atoms: vec![], weights: vec![] };
    let out = support_reduction(&mut crit, atoms, weights, opts);

    let keep: Vec<usize> = (0..out.atoms.len()).filter(|&i| out.weights[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(crate::KmError::Numerical("least squares fit collapsed to the zero function".into()));
    }
    let atoms: Vec<f64> = keep.iter().map(|&i| out.atoms[i]).collect();
    let weights: Vec<f64> = keep.iter().map(|&i| out.weights[i]).collect();
    let measure = MixingMeasure::new(atoms, weights)?;
    let atoms = measure.support().to_vec();
    let mut weights = measure.weights().to_vec();
    refine_knot_weights(&crit, &atoms, &mut weights);
    crit.prepare(&atoms, &weights);
    let atom_residual = crit.atom_residual(&atoms);
    let mixture = KMonotoneMixture::new(k, MixingMeasure::new(atoms, weights)?)?;
    let objective = lse_objective(&mixture, s);
    let mean_fit: f64 = s.values().iter().map(|&x| mixture.eval(x)).sum::<f64>() / s.len() as f64;
    Ok(FitResult {
        objective,
        max_gradient: out.max_violation.max(0.0),
        atom_residual,
        iterations: out.iterations,
        converged: out.converged,
        ceiling: out.ceiling,
        history: out.history,
        min_fenchel_gap: Some(-out.max_violation * scale),
        stationarity_residual: Some(mean_fit - mixture.l2_norm_sq()),
        scale: Some(scale),
        method: FitMethod::Lse,
        mixture,
    })
}

/// Certificate check for a fitted least squares estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct LseReport {
    /// `Δ̃ = H̃ − 𝕐` on the verification grid.
    pub gap: GridFunction,
    /// Smallest `Δ̃` over the grid and polished local minima.
    pub min_gap: f64,
    pub argmin: f64,
    /// `|Δ̃(ã_i)|` per atom.
    pub knot_residuals: Vec<f64>,
    /// `(1/n) Σ g̃(X_i) − ∫ g̃²`.
    pub stationarity_residual: f64,
    /// `|stationarity_residual| / ∫ g̃²`.
    pub relative_stationarity: f64,
    pub scale: f64,
    pub mass: f64,
}

/// Evaluates `Δ̃` on a grid refined around knots and data and reports the
/// Fenchel residuals of `fit`.
pub fn verify_lse(fit: &FitResult, s: &Sample, grid_size: usize) -> Result<LseReport> {
    let g = &fit.mixture;
    let k = g.k();
    let atoms = g.support();
    let top = atoms[atoms.len() - 1];
    let ceiling = fit.ceiling.max(2.0 * k as f64 * s.max()).max(1.5 * top);
    let mut ts = verification_grid(s, atoms, ceiling, grid_size, true);
    // Refine around every knot, where Δ̃ touches zero.
    for &a in atoms {
        for f in [1e-6, 1e-4, 1e-2] {
            ts.push(a * (1.0 - f));
            ts.push(a * (1.0 + f));
        }
    }
    // Points left of the data, where 𝕐 vanishes.
    ts.extend((1..=8).map(|i| s.min() * i as f64 / 8.0));
    ts.retain(|&t| t > 0.0 && t <= ceiling);
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let scale = fenchel_scale(s, k);
    let crit = LseCriterion {
        k,
        sample: s,
        scale,
        atoms: atoms.to_vec(),
        weights: g.weights().to_vec(),
    };
    let values: Vec<f64> = crit.certificate_grid(&ts).into_iter().map(|v| -v * scale).collect();
    let mut best = (ts[0], values[0]);
    for (i, (&t, &v)) in ts.iter().zip(&values).enumerate() {
        if v < best.1 {
            best = (t, v);
        }
        let trough = (i == 0 || v <= values[i - 1]) && (i + 1 == ts.len() || v <= values[i + 1]);
        if k >= 2 && trough {
            let lo = if i == 0 { t } else { ts[i - 1] };
            let hi = if i + 1 == ts.len() { t } else { ts[i + 1] };
            let (x, fx) = brent_minimize(|u| fenchel_gap(g, s, u), lo, hi, 1e-12);
            if fx < best.1 {
                best = (x, fx);
            }
        }
    }
    let l2 = g.l2_norm_sq();
    let mean_fit: f64 = s.values().iter().map(|&x| g.eval(x)).sum::<f64>() / s.len() as f64;
    let stationarity = mean_fit - l2;
    Ok(LseReport {
        min_gap: best.1,
        argmin: best.0,
        knot_residuals: atoms.iter().map(|&a| fenchel_gap(g, s, a).abs()).collect(),
        stationarity_residual: stationarity,
        relative_stationarity: stationarity.abs() / l2.max(f64::MIN_POSITIVE),
        scale,
        mass: g.mass(),
        gap: GridFunction::new(ts, values)?,
    })
}
