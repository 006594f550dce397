//! Nonparametric maximum likelihood over k-monotone densities.
//!
//! The estimator maximizes the adjusted likelihood
//! `ψ_n(g) = (1/n) Σ log g(X_i) − ∫ g` over the cone of k-monotone
//! functions. Its maximizer is a density with finitely many atoms and is
//! characterized by the gradient function
//! `Ĥ(t) = (1/n) Σ K_t(X_i)/ĝ(X_i) ≤ 1`, with equality on the support.

use crate::error::{invalid, KmError, Result};
use crate::mixture::{kernel, GridFunction, KMonotoneMixture, MixingMeasure, Sample};
use crate::numeric::{brent_minimize, median_of_sorted, pos_pow, solve_dense, truncated_power_sums};
use crate::qp::nonneg_quadratic;
use crate::support::{support_reduction, Criterion, FitMethod, FitOptions, FitResult};

/// Mean log-likelihood `(1/n) Σ log g(X_i)`.
///
/// Fails with [`KmError::SupportDeficient`] when `g` vanishes at an
/// observation.
pub fn log_likelihood(g: &KMonotoneMixture, s: &Sample) -> Result<f64> {
    let mut total = 0.0;
    for &x in s.values() {
        let v = g.eval(x);
        if !(v > 0.0) {
            return Err(KmError::SupportDeficient { x });
        }
        total += v.ln();
    }
    Ok(total / s.len() as f64)
}

/// `ψ_n(g) = ℓ_n(g) − ∫ g`.
pub fn adjusted_likelihood(g: &KMonotoneMixture, s: &Sample) -> Result<f64> {
    Ok(log_likelihood(g, s)? - g.mass())
}

/// Gradient function `Ĥ(t) = (1/n) Σ K_t(X_i) / g(X_i)`.
pub fn mle_gradient(g: &KMonotoneMixture, s: &Sample, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("gradient abscissa must be positive, got {t}")));
    }
    let inv = inverse_fitted(g, s)?;
    Ok(gradient_at(g.k(), s.values(), &inv, t))
}

/// `1 / (n g(X_j))` for each observation.
fn inverse_fitted(g: &KMonotoneMixture, s: &Sample) -> Result<Vec<f64>> {
    let n = s.len() as f64;
    s.values()
        .iter()
        .map(|&x| {
            let v = g.eval(x);
            if v > 0.0 { Ok(1.0 / (n * v)) } else { Err(KmError::SupportDeficient { x }) }
        })
        .collect()
}

fn gradient_at(k: u32, xs: &[f64], inv: &[f64], t: f64) -> f64 {
    let end = xs.partition_point(|&x| x <= t);
    xs[..end]
        .iter()
        .zip(&inv[..end])
        .map(|(&x, &c)| c * kernel(k, t, x))
        .sum()
}

/// `t · Ĥ'(t)`.
fn scaled_gradient_slope(k: u32, xs: &[f64], inv: &[f64], t: f64) -> f64 {
    if k == 1 {
        return -gradient_at(k, xs, inv, t);
    }
    let kf = k as f64;
    let end = xs.partition_point(|&x| x <= t);
    let sum: f64 = xs[..end]
        .iter()
        .zip(&inv[..end])
        .map(|(&x, &c)| {
            let u = (t - x) / t;
            c * ((kf - 1.0) * pos_pow(u, k - 2) - kf * pos_pow(u, k - 1))
        })
        .sum();
    kf / t * sum
}

/// `Ĥ` on sorted abscissae through the stable power-sum sweep, computed in
/// units of the sample maximum.
fn gradient_sorted(k: u32, xs: &[f64], inv: &[f64], ts: &[f64]) -> Vec<f64> {
    let scale = xs[xs.len() - 1];
    let ys: Vec<f64> = xs.iter().map(|x| x / scale).collect();
    let us: Vec<f64> = ts.iter().map(|t| t / scale).collect();
    let sums = truncated_power_sums(&ys, inv, k - 1, &us);
    let kf = k as f64;
    us.iter()
        .zip(sums)
        .map(|(&u, s)| if u > 0.0 { kf * s / (u.powi(k as i32) * scale) } else { 0.0 })
        .collect()
}

struct MleCriterion<'a> {
    k: u32,
    sample: &'a Sample,
    inv: Vec<f64>,
}

impl<'a> MleCriterion<'a> {
    fn new(k: u32, sample: &'a Sample) -> Self {
        Self { k, sample, inv: vec![0.0; sample.len()] }
    }

    fn fitted(&self, atoms: &[f64], weights: &[f64]) -> Vec<f64> {
        let k = self.k;
        self.sample
            .values()
            .iter()
            .map(|&x| atoms.iter().zip(weights).map(|(&a, &w)| w * kernel(k, a, x)).sum())
            .collect()
    }

    fn psi_from_fitted(&self, fitted: &[f64], mass: f64) -> f64 {
        let n = fitted.len() as f64;
        let mut total = 0.0;
        for &v in fitted {
            if !(v > 0.0) {
                return f64::NEG_INFINITY;
            }
            total += v.ln();
        }
        total / n - mass
    }

    /// `[Ĥ(a_i) − 1, a_i Ĥ'(a_i)]` at an arbitrary mixture.
    fn stationarity(&self, atoms: &[f64], weights: &[f64]) -> Option<Vec<f64>> {
        let fitted = self.fitted(atoms, weights);
        if fitted.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let n = fitted.len() as f64;
        let inv: Vec<f64> = fitted.iter().map(|v| 1.0 / (n * v)).collect();
        let xs = self.sample.values();
        let mut r: Vec<f64> = atoms.iter().map(|&a| gradient_at(self.k, xs, &inv, a) - 1.0).collect();
        r.extend(atoms.iter().map(|&a| scaled_gradient_slope(self.k, xs, &inv, a)));
        Some(r)
    }
}

impl Criterion for MleCriterion<'_> {
    fn k(&self) -> u32 {
        self.k
    }

    fn sample(&self) -> &Sample {
        self.sample
    }

    fn prepare(&mut self, atoms: &[f64], weights: &[f64]) {
        let fitted = self.fitted(atoms, weights);
        let n = fitted.len() as f64;
        self.inv = fitted.iter().map(|&v| if v > 0.0 { 1.0 / (n * v) } else { f64::INFINITY }).collect();
    }

    fn violation(&self, t: f64) -> f64 {
        gradient_at(self.k, self.sample.values(), &self.inv, t) - 1.0
    }

    fn violation_grid(&self, ts: &[f64]) -> Vec<f64> {
        gradient_sorted(self.k, self.sample.values(), &self.inv, ts)
            .into_iter()
            .map(|h| h - 1.0)
            .collect()
    }

    fn reoptimize(&mut self, atoms: &[f64], warm: &[f64], max_iter: usize) -> Vec<f64> {
        let k = self.k;
        let xs = self.sample.values();
        let n = xs.len();
        let m = atoms.len();
        let kmat: Vec<f64> = atoms
            .iter()
            .flat_map(|&a| xs.iter().map(move |&x| kernel(k, a, x)))
            .collect();
        let fitted_of = |w: &[f64]| -> Vec<f64> {
            (0..n).map(|j| (0..m).map(|i| w[i] * kmat[i * n + j]).sum()).collect()
        };
        let mut w = warm.to_vec();
        let mut fitted = fitted_of(&w);
        let mut psi = self.psi_from_fitted(&fitted, w.iter().sum());
        if !psi.is_finite() {
            return w;
        }
        let nf = n as f64;
        for _ in 0..max_iter {
            // B_ji = K_ij / g_j; gradient Ĥ(a_i) − 1; model Hessian BᵀB/n.
            let b: Vec<f64> = (0..m)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| kmat[i * n + j] / fitted[j])
                .collect();
            let h: Vec<f64> = (0..m).map(|i| b[i * n..(i + 1) * n].iter().sum::<f64>() / nf).collect();
            let kkt = (0..m)
                .map(|i| if w[i] > 0.0 { (h[i] - 1.0).abs() } else { (h[i] - 1.0).max(0.0) })
                .fold(0.0f64, f64::max);
            if kkt <= 1e-14 {
                break;
            }
            let mut q = vec![0.0; m * m];
            for i in 0..m {
                for l in i..m {
                    let v: f64 = b[i * n..(i + 1) * n]
                        .iter()
                        .zip(&b[l * n..(l + 1) * n])
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                        / nf;
                    q[i * m + l] = v;
                    q[l * m + i] = v;
                }
            }
            let p: Vec<f64> = h.iter().map(|hi| 2.0 * hi - 1.0).collect();
            let u = nonneg_quadratic(&q, &p, Some(&w), 50 * m + 50).u;
            let dir: Vec<f64> = u.iter().zip(&w).map(|(ui, wi)| ui - wi).collect();
            let slope: f64 = dir.iter().zip(&h).map(|(d, hi)| d * (hi - 1.0)).sum();
            if !(slope > 0.0) {
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = w.iter().zip(&dir).map(|(wi, d)| (wi + step * d).max(0.0)).collect();
                let tf = fitted_of(&trial);
                let tp = self.psi_from_fitted(&tf, trial.iter().sum());
                if tp >= psi + 1e-4 * step * slope {
                    let gain = tp - psi;
                    w = trial;
                    fitted = tf;
                    psi = tp;
                    accepted = gain > 1e-17 * psi.abs().max(1.0);
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        w
    }

    fn loss(&self, atoms: &[f64], weights: &[f64]) -> f64 {
        -self.psi_from_fitted(&self.fitted(atoms, weights), weights.iter().sum())
    }

    fn atom_residual(&self, atoms: &[f64]) -> f64 {
        atoms
            .iter()
            .map(|&a| (self.violation(a)).abs())
            .fold(0.0, f64::max)
    }

    fn polish(&mut self, atoms: &[f64], weights: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let lower = self.sample.min();
        let mut atoms = atoms.to_vec();
        let mut weights = weights.to_vec();
        for _ in 0..4 {
            let res = joint_newton(
                |a, w| self.stationarity(a, w),
                &atoms,
                &weights,
                lower,
            );
            match res {
                Some(pair) => return Some(pair),
                None if atoms.len() > 1 => {
                    if !merge_closest(&mut atoms, &mut weights) {
                        return None;
                    }
                    weights = self.reoptimize(&atoms, &weights, 200);
                }
                None => return None,
            }
        }
        None
    }

    fn finalize(&self, weights: &mut [f64]) {
        let mass: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= mass);
    }
}

/// Replaces the two relatively closest atoms by their weighted average.
/// Returns `false` (and leaves the atoms alone) when no pair is within 10%.
pub(crate) fn merge_closest(atoms: &mut Vec<f64>, weights: &mut Vec<f64>) -> bool {
    let gap = |i: usize| (atoms[i + 1] - atoms[i]) / atoms[i + 1];
    let Some(i) = (0..atoms.len().saturating_sub(1)).min_by(|&i, &j| gap(i).total_cmp(&gap(j))) else {
        return false;
    };
    if gap(i) > 0.1 {
        return false;
    }
    let w = weights[i] + weights[i + 1];
    let a = if w > 0.0 {
        (atoms[i] * weights[i] + atoms[i + 1] * weights[i + 1]) / w
    } else {
        0.5 * (atoms[i] + atoms[i + 1])
    };
    atoms[i] = a;
    weights[i] = w;
    atoms.remove(i + 1);
    weights.remove(i + 1);
    true
}

/// Damped Newton on a square stationarity system in `(weights, atoms)`
/// with a central-difference Jacobian. Returns `None` when the iteration
/// leaves the feasible region or stops decreasing the residual before it
/// is negligible.
pub(crate) fn joint_newton(
    residual: impl Fn(&[f64], &[f64]) -> Option<Vec<f64>>,
    atoms: &[f64],
    weights: &[f64],
    lower: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let m = atoms.len();
    let mut w = weights.to_vec();
    let mut a = atoms.to_vec();
    if w.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let feasible = |a: &[f64], w: &[f64]| {
        w.iter().all(|&v| v > 0.0)
            && a[0] > lower
            && a.windows(2).all(|p| p[1] > p[0] * (1.0 + 1e-9))
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut r = residual(&a, &w)?;
    let mut rn = norm(&r);
    for _ in 0..40 {
        if rn <= 1e-14 {
            break;
        }
        let dim = 2 * m;
        let mut jac = vec![0.0; dim * dim];
        for col in 0..dim {
            let (mut wp, mut ap) = (w.clone(), a.clone());
            let (mut wm, mut am) = (w.clone(), a.clone());
            let h;
            if col < m {
                h = 1e-6 * w[col];
                wp[col] += h;
                wm[col] -= h;
            } else {
                h = 1e-7 * a[col - m];
                ap[col - m] += h;
                am[col - m] -= h;
            }
            let rp = residual(&ap, &wp)?;
            let rm = residual(&am, &wm)?;
            for row in 0..dim {
                jac[row * dim + col] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let delta = solve_dense(jac, r.iter().map(|v| -v).collect())?;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let wt: Vec<f64> = (0..m).map(|i| w[i] + step * delta[i]).collect();
            let at: Vec<f64> = (0..m).map(|i| a[i] + step * delta[m + i]).collect();
            if feasible(&at, &wt) {
                if let Some(rt) = residual(&at, &wt) {
                    let tn = norm(&rt);
                    if tn < (1.0 - 1e-4 * step) * rn {
                        w = wt;
                        a = at;
                        r = rt;
                        rn = tn;
                        improved = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (rn <= 1e-10).then_some((a, w))
}

fn validate_order(k: u32) -> Result<()> {
    if k < 1 {
        return Err(invalid("order k must be at least 1"));
    }
    if k > 60 {
        return Err(invalid(format!("order k = {k} is beyond the supported range (<= 60)")));
    }
    Ok(())
}

/// Fits the maximum likelihood estimator by support reduction.
pub fn fit_mle(s: &Sample, k: u32, opts: &FitOptions) -> Result<FitResult> {
    validate_order(k)?;
    opts.validate()?;
    let kf = k as f64;
    let med = median_of_sorted(s.values());
    let mut atoms = vec![kf * med];
    let top = kf * s.max();
    if top > atoms[0] * (1.0 + 1e-9) {
        atoms.push(top);
    }
    let weights = vec![1.0 / atoms.len() as f64; atoms.len()];

    let mut crit = MleCriterion::new(k, s);
    let out = support_reduction(&mut crit, atoms, weights, opts);
    let mixture = KMonotoneMixture::new(k, MixingMeasure::new(out.atoms, out.weights)?)?;
    let objective = log_likelihood(&mixture, s)?;
    let history: Vec<f64> = out.history.iter().map(|loss| 1.0 - loss).collect();
    Ok(FitResult {
        mixture,
        method: FitMethod::Mle,
        objective,
        max_gradient: 1.0 + out.max_violation,
        atom_residual: out.atom_residual,
        iterations: out.iterations,
        converged: out.converged,
        ceiling: out.ceiling,
        history,
        min_fenchel_gap: None,
        stationarity_residual: None,
        scale: None,
    })
}

/// Certificate check for a fitted maximum likelihood estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MleReport {
    /// `Ĥ` on the verification grid.
    pub gradient: GridFunction,
    /// `sup Ĥ − 1` over the grid and the polished local maxima.
    pub max_violation: f64,
    pub argmax: f64,
    /// `|Ĥ(â_i) − 1|` per atom.
    pub atom_residuals: Vec<f64>,
    /// `|Σ ŵ_i Ĥ(â_i) − 1|`.
    pub moment_residual: f64,
    /// `Ĥ` at the upper end of the grid.
    pub tail_value: f64,
    pub mass: f64,
}

/// Verification abscissae: a uniform grid on `(X_(1), ceiling]` merged with
/// the observations, gap midpoints and the atoms.
pub(crate) fn verification_grid(s: &Sample, atoms: &[f64], ceiling: f64, grid_size: usize, include_low: bool) -> Vec<f64> {
    let lo = s.min();
    let size = grid_size.max(2);
    let mut ts: Vec<f64> = (1..=size).map(|i| lo + (ceiling - lo) * i as f64 / size as f64).collect();
    ts.extend(s.values().iter().copied());
    ts.extend(s.values().windows(2).map(|w| 0.5 * (w[0] + w[1])));
    ts.extend(atoms.iter().copied());
    ts.retain(|&t| if include_low { t >= lo } else { t > lo } && t <= ceiling);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Evaluates `Ĥ` on a refined grid and reports the characterization
/// residuals of `fit`.
pub fn verify_mle(fit: &FitResult, s: &Sample, grid_size: usize) -> Result<MleReport> {
    let g = &fit.mixture;
    let k = g.k();
    let inv = inverse_fitted(g, s)?;
    let atoms = g.support();
    let top = atoms[atoms.len() - 1];
    let ceiling = fit.ceiling.max(2.0 * k as f64 * s.max()).max(1.5 * top);
    let ts = verification_grid(s, atoms, ceiling, grid_size, k == 1);
    let xs = s.values();
    let values = gradient_sorted(k, xs, &inv, &ts);
    let mut best = (ts[0], values[0]);
    for (i, (&t, &v)) in ts.iter().zip(&values).enumerate() {
        if v > best.1 {
            best = (t, v);
        }
        let peak = (i == 0 || v >= values[i - 1]) && (i + 1 == ts.len() || v >= values[i + 1]);
        if k >= 2 && peak {
            let lo = if i == 0 { t } else { ts[i - 1] };
            let hi = if i + 1 == ts.len() { t } else { ts[i + 1] };
            let (x, fx) = brent_minimize(|u| -gradient_at(k, xs, &inv, u), lo, hi, 1e-12);
            if -fx > best.1 {
                best = (x, -fx);
            }
        }
    }
    let at_atoms: Vec<f64> = atoms.iter().map(|&a| gradient_at(k, xs, &inv, a)).collect();
    let moment: f64 = at_atoms.iter().zip(g.weights()).map(|(h, w)| h * w).sum();
    Ok(MleReport {
        max_violation: best.1 - 1.0,
        argmax: best.0,
        atom_residuals: at_atoms.iter().map(|h| (h - 1.0).abs()).collect(),
        moment_residual: (moment - 1.0).abs(),
        tail_value: *values.last().unwrap(),
        mass: g.mass(),
        gradient: GridFunction::new(ts, values)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(k: u32, a: f64, w: f64) -> KMonotoneMixture {
        KMonotoneMixture::new(k, MixingMeasure::new(vec![a], vec![w]).unwrap()).unwrap()
    }

    #[test]
    fn likelihood_examples() {
        let one = Sample::new(vec![1.0]).unwrap();
        let l = log_likelihood(&atom(1, 2.0, 1.0), &one).unwrap();
        assert!((l - 0.5f64.ln()).abs() < 1e-15);
        let l2 = log_likelihood(&atom(2, 2.0, 1.0), &one).unwrap();
        assert!((l2 - 0.5f64.ln()).abs() < 1e-15);
        let far = Sample::new(vec![3.0]).unwrap();
        assert!(matches!(log_likelihood(&atom(2, 2.0, 1.0), &far), Err(KmError::SupportDeficient { .. })));
        let psi = adjusted_likelihood(&atom(1, 2.0, 2.0), &one).unwrap();
        assert!((psi + 2.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let one = Sample::new(vec![1.0]).unwrap();
        let g = atom(2, 2.0, 1.0);
        assert!((mle_gradient(&g, &one, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((mle_gradient(&g, &one, 4.0).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(mle_gradient(&g, &one, 0.5).unwrap(), 0.0);
        assert_eq!(mle_gradient(&g, &one, 1.0).unwrap(), 0.0);
        assert!(mle_gradient(&g, &one, 0.0).is_err());
    }

    #[test]
    fn sweep_gradient_matches_direct() {
        let s = Sample::new(vec![0.2, 0.5, 0.5, 0.9, 1.7, 2.4]).unwrap();
        let g = KMonotoneMixture::new(
            4,
            MixingMeasure::new(vec![1.0, 3.0, 9.0], vec![0.3, 0.5, 0.2]).unwrap(),
        )
        .unwrap();
        let inv = inverse_fitted(&g, &s).unwrap();
        let ts: Vec<f64> = (1..200).map(|i| i as f64 * 0.05).collect();
        let fast = gradient_sorted(4, s.values(), &inv, &ts);
        for (t, f) in ts.iter().zip(fast) {
            let d = gradient_at(4, s.values(), &inv, *t);
            assert!((f - d).abs() <= 1e-13 * d.max(1.0));
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let s = Sample::new(vec![0.2, 0.5, 0.9, 1.7]).unwrap();
        let g = KMonotoneMixture::new(3, MixingMeasure::new(vec![1.0, 4.0], vec![0.4, 0.6]).unwrap()).unwrap();
        let inv = inverse_fitted(&g, &s).unwrap();
        for t in [0.7, 1.3, 2.5, 5.0] {
            let h = 1e-6 * t;
            let fd = (gradient_at(3, s.values(), &inv, t + h) - gradient_at(3, s.values(), &inv, t - h)) / (2.0 * h);
            let got = scaled_gradient_slope(3, s.values(), &inv, t);
            assert!((got - t * fd).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn moment_identity_at_own_measure() {
        let s = Sample::new(vec![0.3, 0.8, 1.1, 2.0]).unwrap();
        let g = KMonotoneMixture::new(3, MixingMeasure::new(vec![2.5, 4.0, 7.0], vec![0.2, 0.5, 0.3]).unwrap()).unwrap();
        let total: f64 = g
            .support()
            .iter()
            .zip(g.weights())
            .map(|(&a, &w)| w * mle_gradient(&g, &s, a).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn single_observation() {
        for k in 1..=8u32 {
            let s = Sample::new(vec![1.0]).unwrap();
            let fit = fit_mle(&s, k, &FitOptions::default()).unwrap();
            assert!(fit.converged);
            assert_eq!(fit.num_atoms(), 1);
            assert!((fit.mixture.support()[0] - k as f64).abs() < 1e-6 * k as f64);
        }
    }

    #[test]
    fn two_point_grenander() {
        let s = Sample::new(vec![1.0, 2.0]).unwrap();
        let fit = fit_mle(&s, 1, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.mixture.support(), &[2.0]);
        assert!((fit.mixture.weights()[0] - 1.0).abs() < 1e-12);
    }
}
