//! Nonnegatively constrained convex quadratic programs.
//!
//! Solves `min ½ uᵀQu − pᵀu` subject to `u >= 0` for a symmetric positive
//! semidefinite `Q` with the Lawson-Hanson active-set method written in Gram
//! form. Both estimators reduce their fixed-support subproblems to this
//! shape: the least squares criterion exactly, the likelihood through its
//! second-order model.

/// Outcome of [`nonneg_quadratic`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration cap was hit before the KKT test passed.
    pub converged: bool,
}

/// Lower-triangular Cholesky factor of the principal submatrix `idx`.
fn cholesky(q: &[f64], m: usize, idx: &[usize]) -> Option<Vec<f64>> {
    let n = idx.len();
    let mut l = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..=r {
            let mut s = q[idx[r] * m + idx[c]];
            for t in 0..c {
                s -= l[r * n + t] * l[c * n + t];
            }
            if r == c {
                if !(s > 1e-13 * q[idx[r] * m + idx[r]].max(1e-300)) {
                    return None;
                }
                l[r * n + r] = s.sqrt();
            } else {
                l[r * n + c] = s / l[c * n + c];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for r in 0..n {
        for t in 0..r {
            y[r] -= l[r * n + t] * y[t];
        }
        y[r] /= l[r * n + r];
    }
    for r in (0..n).rev() {
        for t in r + 1..n {
            y[r] -= l[t * n + r] * y[t];
        }
        y[r] /= l[r * n + r];
    }
    y
}

/// Active-set solver. `q` is row-major `m × m`; `warm` is an optional
/// nonnegative starting point whose positive entries seed the free set.
pub fn nonneg_quadratic(q: &[f64], p: &[f64], warm: Option<&[f64]>, max_iter: usize) -> QpSolution {
    let m = p.len();
    assert_eq!(q.len(), m * m, "matrix/vector dimension mismatch");
    if m == 0 {
        return QpSolution { u: vec![], iterations: 0, converged: true };
    }

    // Jacobi scaling: Q̃ = DQD, p̃ = Dp, u = Dũ.
    let d: Vec<f64> = (0..m)
        .map(|i| {
            let qi = q[i * m + i];
            if qi > 0.0 { 1.0 / qi.sqrt() } else { 1.0 }
        })
        .collect();
    let qs: Vec<f64> = (0..m * m).map(|ix| q[ix] * d[ix / m] * d[ix % m]).collect();
    let ps: Vec<f64> = p.iter().zip(&d).map(|(pi, di)| pi * di).collect();
    let pscale = ps.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let kkt_tol = 1e-13 * pscale.max(1.0);

    let mut u: Vec<f64> = match warm {
        Some(w) if w.len() == m => w.iter().zip(&d).map(|(wi, di)| (wi / di).max(0.0)).collect(),
        _ => vec![0.0; m],
    };
    let mut passive: Vec<bool> = u.iter().map(|&v| v > 0.0).collect();
    let mut blocked = vec![false; m];

    let neg_grad = |u: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| ps[i] - (0..m).map(|j| qs[i * m + j] * u[j]).sum::<f64>())
            .collect()
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut fresh: Option<usize> = None;
    // A warm start goes straight to the inner feasibility loop.
    let mut need_inner = passive.iter().any(|&b| b);

    while iterations < max_iter {
        if !need_inner {
            let w = neg_grad(&u);
            let pick = (0..m)
                .filter(|&i| !passive[i] && !blocked[i] && w[i] > kkt_tol)
                .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
            match pick {
                None => {
                    converged = true;
                    break;
                }
                Some(j) => {
                    passive[j] = true;
                    fresh = Some(j);
                }
            }
        }
        need_inner = false;

        loop {
            iterations += 1;
            let idx: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            if idx.is_empty() {
                break;
            }
            let Some(l) = cholesky(&qs, m, &idx) else {
                // Singular free set: retreat from the latest addition, or
                // from the last free index when warm-started.
                let drop = fresh.take().unwrap_or(idx[idx.len() - 1]);
                passive[drop] = false;
                blocked[drop] = true;
                u[drop] = 0.0;
                continue;
            };
            let rhs: Vec<f64> = idx.iter().map(|&i| ps[i]).collect();
            let z = cholesky_solve(&l, &rhs);
            if let Some(f) = fresh {
                let pos = idx.iter().position(|&i| i == f).unwrap();
                if z[pos] <= 0.0 {
                    // The new direction is not improving numerically.
                    passive[f] = false;
                    blocked[f] = true;
                    fresh = None;
                    continue;
                }
            }
            fresh = None;
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in idx.iter().zip(&z) {
                    u[i] = v;
                }
                // Any progress unblocks previously stalled directions.
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut hit = None;
            for (&i, &v) in idx.iter().zip(&z) {
                if v <= 0.0 {
                    let denom = u[i] - v;
                    let a = if denom > 0.0 { u[i] / denom } else { 0.0 };
                    if a < alpha {
                        alpha = a;
                        hit = Some(i);
                    }
                }
            }
            let alpha = alpha.min(1.0);
            for (&i, &v) in idx.iter().zip(&z) {
                u[i] += alpha * (v - u[i]);
                if Some(i) == hit || u[i] <= 1e-15 * pscale {
                    u[i] = 0.0;
                    passive[i] = false;
                }
            }
            if iterations >= max_iter {
                break;
            }
        }
    }

    QpSolution {
        u: u.iter().zip(&d).map(|(ui, di)| ui * di).collect(),
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(q: &[f64], p: &[f64], u: &[f64]) -> f64 {
        let m = p.len();
        let mut v = 0.0;
        for i in 0..m {
            for j in 0..m {
                v += 0.5 * u[i] * q[i * m + j] * u[j];
            }
            v -= p[i] * u[i];
        }
        v
    }

    #[test]
    fn unconstrained_interior_solution() {
        let q = [2.0, 0.5, 0.5, 1.0];
        let p = [1.0, 1.0];
        let s = nonneg_quadratic(&q, &p, None, 100);
        assert!(s.converged);
        // Q u = p
        let r0 = 2.0 * s.u[0] + 0.5 * s.u[1] - 1.0;
        let r1 = 0.5 * s.u[0] + s.u[1] - 1.0;
        assert!(r0.abs() < 1e-14 && r1.abs() < 1e-14);
    }

    #[test]
    fn active_bound() {
        let q = [1.0, 0.0, 0.0, 1.0];
        let p = [1.0, -2.0];
        let s = nonneg_quadratic(&q, &p, None, 100);
        assert!(s.converged);
        assert!((s.u[0] - 1.0).abs() < 1e-15 && s.u[1] == 0.0);
    }

    #[test]
    fn kkt_on_random_least_squares() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let rows = 12;
            let m = 7;
            let a: Vec<f64> = (0..rows * m).map(|_| rng.random::<f64>() - 0.3).collect();
            let b: Vec<f64> = (0..rows).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut q = vec![0.0; m * m];
            let mut p = vec![0.0; m];
            for i in 0..m {
                for j in 0..m {
                    q[i * m + j] = (0..rows).map(|r| a[r * m + i] * a[r * m + j]).sum();
                }
                p[i] = (0..rows).map(|r| a[r * m + i] * b[r]).sum();
            }
            let s = nonneg_quadratic(&q, &p, None, 1000);
            assert!(s.converged);
            for i in 0..m {
                let g: f64 = (0..m).map(|j| q[i * m + j] * s.u[j]).sum::<f64>() - p[i];
                assert!(s.u[i] >= 0.0);
                if s.u[i] > 0.0 {
                    assert!(g.abs() < 1e-10);
                } else {
                    assert!(g > -1e-10);
                }
            }
            let warm = nonneg_quadratic(&q, &p, Some(&vec![0.5; m]), 1000);
            assert!((objective(&q, &p, &warm.u) - objective(&q, &p, &s.u)).abs() < 1e-12);
        }
    }
}
