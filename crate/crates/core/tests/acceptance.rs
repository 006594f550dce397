//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

mod common;

use std::time::Instant;

use common::{gamma_cdf_series, grenander_at_data, simpson};
use kmono::lse::{self, lse_objective, rk_moment, LseWorkspace};
use kmono::minimax::{self, build_perturbation};
use kmono::mle::{self, log_likelihood};
use kmono::sim::{run_consistency_study, sample_exponential, Distribution, ErrorGrid, ExperimentPlan};
use kmono::{
    density_bound, invert_to_mixing, AnalyticDensity, Exponential, FitMethod, FitOptions, InversionInputs, Sample,
};
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn tight() -> FitOptions {
    FitOptions::default().with_tol(1e-9)
}

fn mle_characterization() -> Outcome {
    let mut slowest: f64 = 0.0;
    let mut worst_atom: f64 = 0.0;
    for k in [2u32, 3, 6] {
        for seed in 1..=5u64 {
            let s = sample_exponential(100, seed).map_err(|e| e.to_string())?;
            let start = Instant::now();
            let fit = mle::fit_mle(&s, k, &tight()).map_err(|e| e.to_string())?;
            let secs = start.elapsed().as_secs_f64();
            slowest = slowest.max(secs);
            let tag = format!("k={k} seed={seed}");
            ensure(fit.converged, || format!("{tag}: not converged"))?;
            let r = mle::verify_mle(&fit, &s, 4096).map_err(|e| e.to_string())?;
            ensure(r.max_violation <= 1e-6, || format!("{tag}: sup H - 1 = {:e}", r.max_violation))?;
            let atom = r.atom_residuals.iter().copied().fold(0.0, f64::max);
            worst_atom = worst_atom.max(atom);
            ensure(atom <= 1e-6, || format!("{tag}: atom residual {atom:e}"))?;
            ensure((fit.mass() - 1.0).abs() <= 1e-10, || format!("{tag}: mass {}", fit.mass()))?;
            let truth = -s.values().iter().sum::<f64>() / s.len() as f64;
            let ll = log_likelihood(&fit.mixture, &s).map_err(|e| e.to_string())?;
            ensure(ll >= truth, || format!("{tag}: log-likelihood {ll} below Exp(1) value {truth}"))?;
            ensure(secs < 30.0, || format!("{tag}: {secs:.1} s"))?;
        }
    }
    Ok(format!("15 fits, worst atom residual {worst_atom:.1e}, slowest {slowest:.2} s"))
}

fn lse_characterization() -> Outcome {
    let mut slowest: f64 = 0.0;
    let mut worst_knot: f64 = 0.0;
    for k in [2u32, 3, 6] {
        for seed in 1..=5u64 {
            let s = sample_exponential(100, seed).map_err(|e| e.to_string())?;
            let start = Instant::now();
            let fit = lse::fit_lse(&s, k, &tight()).map_err(|e| e.to_string())?;
            let secs = start.elapsed().as_secs_f64();
            slowest = slowest.max(secs);
            let tag = format!("k={k} seed={seed}");
            let r = lse::verify_lse(&fit, &s, 4096).map_err(|e| e.to_string())?;
            ensure(r.min_gap >= -1e-8 * r.scale, || format!("{tag}: min gap {:e} (scale {})", r.min_gap, r.scale))?;
            let knot = r.knot_residuals.iter().copied().fold(0.0, f64::max) / r.scale;
            worst_knot = worst_knot.max(knot);
            ensure(knot <= 1e-8, || format!("{tag}: knot residual {knot:e} of scale"))?;
            ensure(r.relative_stationarity <= 1e-8, || format!("{tag}: stationarity {:e}", r.relative_stationarity))?;
            // Q_n(Exp(1)) = 1/4 - mean exp(-X).
            let truth = 0.25 - s.values().iter().map(|x| (-x).exp()).sum::<f64>() / s.len() as f64;
            let q = lse_objective(&fit.mixture, &s);
            ensure(q <= truth, || format!("{tag}: Q_n {q} above Exp(1) value {truth}"))?;
            ensure(fit.mixture.support()[0] > s.min(), || format!("{tag}: atom at or below X(1)"))?;
            ensure(secs < 60.0, || format!("{tag}: {secs:.1} s"))?;
        }
    }
    Ok(format!("15 fits, worst knot residual {worst_knot:.1e} of scale, slowest {slowest:.2} s"))
}

fn small_instances() -> Outcome {
    for k in 1..=8u32 {
        for x in [0.05, 1.0, 3.3, 250.0] {
            let s = Sample::new(vec![x]).map_err(|e| e.to_string())?;
            let fit = mle::fit_mle(&s, k, &tight()).map_err(|e| e.to_string())?;
            let support = fit.mixture.support();
            let want = k as f64 * x;
            ensure(support.len() == 1 && (support[0] - want).abs() <= 1e-6 * want, || {
                format!("n=1 k={k} x={x}: support {support:?}, expected {want}")
            })?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..60 {
        let n = rng.random_range(1..=20usize);
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                // Occasional ties exercise the empirical CDF jumps.
                let v: f64 = -(1.0 - rng.random::<f64>()).ln() * 3.0;
                if case % 4 == 0 { (v * 4.0).ceil() / 4.0 } else { v }
            })
            .collect();
        let s = Sample::new(xs).map_err(|e| e.to_string())?;
        let oracle = grenander_at_data(s.values());
        let fits = [
            mle::fit_mle(&s, 1, &tight()).map_err(|e| e.to_string())?,
            lse::fit_lse(&s, 1, &tight()).map_err(|e| e.to_string())?,
        ];
        for fit in fits {
            for (x, want) in s.values().iter().zip(&oracle) {
                let err = (fit.mixture.eval(*x) - want).abs();
                worst = worst.max(err);
                ensure(err <= 1e-8, || format!("k=1 {} case {case}: x={x} error {err:e}", fit.method))?;
            }
        }
    }
    Ok(format!("n=1 for k=1..8 exact; k=1 vs concave majorant on 60 samples, worst {worst:.1e}"))
}

fn inversion_identity() -> Outcome {
    let e = Exponential::default();
    let mut worst: f64 = 0.0;
    for k in 2..=8u32 {
        for i in 0..=2000 {
            let t = 10.0 * i as f64 / 2000.0;
            let inputs = InversionInputs { cdf: e.cdf(t), derivatives: (0..k).map(|j| e.derivative(j, t)).collect() };
            let f = invert_to_mixing(&inputs, k, t).map_err(|e| e.to_string())?;
            let err = (f - gamma_cdf_series(k + 1, t)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("k={k} t={t}: error {err:e}"))?;
        }
    }
    Ok(format!("k=2..8 on 2001 points of [0, 10], sup error {worst:.1e}"))
}

/// `k! [x^k] (1 - x^2)^{k+1} (1 + x)` by repeated polynomial multiplication.
fn ckk_by_expansion(k: u32) -> i128 {
    let mut poly: Vec<i128> = vec![1, 1];
    for _ in 0..=k {
        let mut next = vec![0i128; poly.len() + 2];
        for (d, c) in poly.iter().enumerate() {
            next[d] += c;
            next[d + 2] -= c;
        }
        poly = next;
    }
    (1..=k as i128).product::<i128>() * poly[k as usize]
}

fn as_i128(q: &num_rational::BigRational) -> Option<i128> {
    q.is_integer().then(|| q.to_integer().to_i128()).flatten()
}

fn minimax_constants() -> Outcome {
    for k in 2..=10u32 {
        let sym = minimax::c_kj(k, k).map_err(|e| e.to_string())?;
        let closed = minimax::formula_ck(k).map_err(|e| e.to_string())?;
        let oracle = ckk_by_expansion(k);
        ensure(sym == closed && as_i128(&sym) == Some(oracle), || {
            format!("k={k}: expansion {sym}, closed form {closed}, oracle {oracle}")
        })?;
    }
    let mut worst_l2: f64 = 0.0;
    for k in 2..=10u32 {
        let l2 = minimax::lambda2(k).map_err(|e| e.to_string())?.to_f64().unwrap();
        let c = ckk_by_expansion(k) as f64;
        let q = simpson(&|z| (1.0 - z * z).powi(2 * k as i32 + 2) * (1.0 + z).powi(2), -1.0, 1.0, 1e-14) / (c * c);
        let rel = (l2 - q).abs() / q;
        worst_l2 = worst_l2.max(rel);
        ensure(rel <= 1e-10, || format!("lambda2 k={k}: closed {l2:e}, quadrature {q:e}"))?;
    }
    let mut worst_i: f64 = 0.0;
    for n in 0..=10u32 {
        for p in 0..=10u32 {
            let closed = minimax::i_n2p(n, p).to_f64().unwrap();
            let q = simpson(&|x| (1.0 - x * x).powi(n as i32) * x.powi(2 * p as i32), 0.0, 1.0, 1e-14);
            let rel = (closed - q).abs() / q;
            worst_i = worst_i.max(rel);
            ensure(rel <= 1e-10, || format!("I n={n} 2p={}: closed {closed:e}, quadrature {q:e}", 2 * p))?;
        }
    }
    let l32 = minimax::lambda2(3).map_err(|e| e.to_string())?.to_f64().unwrap();
    ensure((l32 - 1.0948e-3).abs() < 5e-8, || format!("lambda_(3,2) = {l32:e}"))?;
    Ok(format!(
        "C_kk exact for k=2..10; lambda2 rel err {worst_l2:.1e}; I rel err {worst_i:.1e}; lambda_(3,2) = {l32:.5e}"
    ))
}

fn perturbation_expansion() -> Outcome {
    let e = Exponential::default();
    let mut notes = Vec::new();
    for k in [2u32, 3] {
        let mus = [0.1, 0.05, 0.025];
        let mut masses = Vec::new();
        let mut ratios = Vec::new();
        for &mu in &mus {
            let p = build_perturbation(&e, 1.0, k, mu).map_err(|e| e.to_string())?;
            let mass = p.chi_square_mass();
            // Independent quadrature of the same integral.
            let oracle = simpson(&|x| p.displacement(0, x).powi(2) / e.density(x), 1.0 - mu, 1.0 + mu, 1e-13);
            ensure((mass - oracle).abs() <= 1e-9 * oracle, || format!("k={k} mu={mu}: {mass:e} vs quadrature {oracle:e}"))?;
            masses.push(mass);
            ratios.push(mass / p.leading_chi_square());
        }
        ensure((0.95..=1.05).contains(&ratios[1]), || format!("k={k}: ratio {} at mu=0.05", ratios[1]))?;
        ensure((ratios[2] - 1.0).abs() < (ratios[1] - 1.0).abs(), || {
            format!("k={k}: ratio {} at mu=0.025 is not closer to 1 than {}", ratios[2], ratios[1])
        })?;
        let xs: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
        let ys: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
        let slope = least_squares_slope(&xs, &ys);
        let target = (2 * k + 1) as f64;
        ensure((slope - target).abs() <= 0.1, || format!("k={k}: slope {slope}, expected {target}"))?;
        notes.push(format!("k={k} ratios {:.4}/{:.4}/{:.4} slope {slope:.4}", ratios[0], ratios[1], ratios[2]));
    }
    Ok(notes.join("; "))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn consistency_trend() -> Outcome {
    let start = Instant::now();
    let mut plan = ExperimentPlan::new(Distribution::Exp1, vec![3], vec![100, 400, 1600], 20, 2024);
    plan.grid = ErrorGrid::new(0.5, 5.0, 256).map_err(|e| e.to_string())?;
    let report = run_consistency_study(&plan).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for method in [FitMethod::Mle, FitMethod::Lse] {
        let rows: Vec<_> = [100, 400, 1600]
            .iter()
            .map(|&n| report.summary_for(method, 3, n).cloned().ok_or(format!("missing {method} n={n}")))
            .collect::<Result<_, _>>()?;
        for r in &rows {
            ensure(r.failures == 0, || format!("{method} n={}: {} failed fits", r.n, r.failures))?;
            ensure(r.median_inverse > r.median_direct, || {
                format!("{method} n={}: inverse {} not above direct {}", r.n, r.median_inverse, r.median_direct)
            })?;
        }
        ensure(rows.windows(2).all(|w| w[1].median_direct < w[0].median_direct), || {
            format!("{method}: direct medians {:?} not decreasing", rows.iter().map(|r| r.median_direct).collect::<Vec<_>>())
        })?;
        notes.push(format!(
            "{method} direct {}, inverse {}",
            rows.iter().map(|r| format!("{:.4}", r.median_direct)).collect::<Vec<_>>().join("/"),
            rows.iter().map(|r| format!("{:.4}", r.median_inverse)).collect::<Vec<_>>().join("/")
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1200.0, || format!("study took {secs:.0} s"))?;
    Ok(notes.join("; "))
}

fn envelope_and_gram() -> Outcome {
    const CHECKS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // Envelope on normalized fits.
    let mut fits = Vec::new();
    for (i, k) in [2u32, 3, 4, 6].into_iter().enumerate() {
        let s = sample_exponential(80, 100 + i as u64).map_err(|e| e.to_string())?;
        fits.push(mle::fit_mle(&s, k, &tight()).map_err(|e| e.to_string())?.mixture);
        let l = lse::fit_lse(&s, k, &tight()).map_err(|e| e.to_string())?.mixture;
        fits.push(l.scaled_weights(1.0 / l.mass()).map_err(|e| e.to_string())?);
    }
    for i in 0..CHECKS {
        let g = &fits[i % fits.len()];
        let x = 10f64.powf(rng.random_range(-4.0..1.5));
        let bound = density_bound(g.k(), x).map_err(|e| e.to_string())?;
        let v = g.eval(x);
        ensure(v <= bound + 1e-12 * bound, || format!("envelope: k={} x={x} g={v} bound={bound}", g.k()))?;
    }

    // Lower bound on r_k for s, t >= t0.
    let c = 1.0 - (-1.59f64).exp();
    for _ in 0..CHECKS {
        let k = rng.random_range(1..=8u32);
        let t0 = 10f64.powf(rng.random_range(-2.0..1.0));
        let s = t0 * 10f64.powf(rng.random_range(0.0..2.0));
        let t = t0 * 10f64.powf(rng.random_range(0.0..2.0));
        let lhs = rk_moment(k, s, t);
        let rhs = c * t0 / (2 * k) as f64 * s.powi(k as i32 - 1) * t.powi(k as i32 - 1);
        ensure(lhs >= rhs * (1.0 - 1e-12), || format!("r_k bound: k={k} s={s} t={t} t0={t0}: {lhs:e} < {rhs:e}"))?;
    }

    // Gram matrices of distinct supports.
    let one = Sample::new(vec![1.0]).map_err(|e| e.to_string())?;
    for _ in 0..CHECKS {
        let k = rng.random_range(1..=8u32);
        let m = rng.random_range(1..=8usize);
        let mut support: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
        support.sort_by(f64::total_cmp);
        support.dedup_by(|a, b| (*a - *b).abs() < 1e-2 * *b);
        let ws = LseWorkspace::new(&one, k, &support).map_err(|e| e.to_string())?;
        ensure(ws.is_positive_definite(), || format!("Gram: k={k} support {support:?} not positive definite"))?;
    }
    Ok(format!("{CHECKS} envelope, {CHECKS} r_k and {CHECKS} Gram checks, zero violations"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("MLE characterization", mle_characterization),
        ("LSE characterization", lse_characterization),
        ("small-instance oracles", small_instances),
        ("inversion identity", inversion_identity),
        ("minimax constants", minimax_constants),
        ("perturbation expansion", perturbation_expansion),
        ("consistency trend", consistency_trend),
        ("envelope and Gram properties", envelope_and_gram),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{label}: PASS ({detail}) [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("{label}: FAIL ({why}) [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
