//! Reference computations written independently of the library code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to relative accuracy
/// `rel`, measured against a coarse estimate of `∫ |f|`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    let scale: f64 = (0..PANELS)
        .map(|i| {
            let lo = a + h * i as f64;
            h / 6.0 * (f(lo).abs() + 4.0 * f(lo + 0.5 * h).abs() + f(lo + h).abs())
        })
        .sum();
    if scale == 0.0 {
        return 0.0;
    }
    let eps = rel * scale / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == PANELS { b } else { lo + h };
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            rec(f, lo, hi, fa, fm, fb, (hi - lo) / 6.0 * (fa + 4.0 * fm + fb), eps, 30)
        })
        .sum()
}

/// Beta(1, k) kernel straight from its definition.
pub fn kernel_ref(k: u32, a: f64, x: f64) -> f64 {
    if x > a {
        return 0.0;
    }
    if k == 1 {
        return 1.0 / a;
    }
    k as f64 * (a - x).powi(k as i32 - 1) / a.powi(k as i32)
}

pub fn mixture_ref(k: u32, atoms: &[f64], weights: &[f64], x: f64) -> f64 {
    atoms.iter().zip(weights).map(|(&a, &w)| w * kernel_ref(k, a, x)).sum()
}

/// Grenander estimator: left derivative of the least concave majorant of
/// the empirical CDF, evaluated at each observation (input sorted).
pub fn grenander_at_data(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    // Distinct abscissae with cumulative counts.
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for (i, &x) in xs.iter().enumerate() {
        let y = (i + 1) as f64 / n;
        match pts.last_mut() {
            Some(last) if last.0 == x => last.1 = y,
            _ => pts.push((x, y)),
        }
    }
    // Upper hull from the left.
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (x1, y1) = hull[hull.len() - 2];
            let (x2, y2) = hull[hull.len() - 1];
            // Drop the middle point when it lies on or below the chord.
            if (y2 - y1) * (p.0 - x1) <= (p.1 - y1) * (x2 - x1) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    xs.iter()
        .map(|&x| {
            let j = hull.iter().position(|h| h.0 >= x).unwrap();
            let (x0, y0) = hull[j - 1];
            let (x1, y1) = hull[j];
            (y1 - y0) / (x1 - x0)
        })
        .collect()
}

/// Gamma(shape, 1) CDF by summing the Poisson series for integer shape,
/// computed from the upper tail for large arguments.
pub fn gamma_cdf_series(shape: u32, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    // P(shape, t) = 1 - e^{-t} Σ_{j<shape} t^j/j! = e^{-t} Σ_{j>=shape} t^j/j!.
    if t < shape as f64 + 1.0 {
        let mut term = (-t).exp();
        for j in 1..=shape {
            term *= t / j as f64;
        }
        let mut sum = 0.0;
        let mut j = shape;
        while term > 1e-300 && term > sum * 1e-18 {
            sum += term;
            j += 1;
            term *= t / j as f64;
        }
        sum
    } else {
        let mut term = (-t).exp();
        let mut tail = term;
        for j in 1..shape {
            term *= t / j as f64;
            tail += term;
        }
        1.0 - tail
    }
}

/// Exp(1) draws by inversion with an independent generator stream.
pub fn exp1_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect()
}

pub fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}
