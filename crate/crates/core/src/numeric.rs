//! Small numerical building blocks shared by the estimators.

use std::sync::OnceLock;

/// Truncated power `u_+^p`.
///
/// The zero-th power is closed on the right: `0_+^0 = 1`, so the uniform
/// kernel `1{x <= a}` and the empirical CDF `1{X <= t}` share one convention.
/// Negative rounding residue is clamped before exponentiation.
#[inline]
pub fn pos_pow(u: f64, p: u32) -> f64 {
    if u < 0.0 {
        0.0
    } else if p == 0 {
        1.0
    } else {
        u.powi(p as i32)
    }
}

/// Falling factorial `n (n-1) ... (n-j+1)` in floating point.
pub fn falling_factorial(n: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (n - i) as f64)
}

pub fn factorial(n: u32) -> f64 {
    falling_factorial(n, n)
}

/// Row `n` of Pascal's triangle as floats.
pub fn binomial_row(n: u32) -> Vec<f64> {
    let mut row = vec![1.0; n as usize + 1];
    for i in 1..n as usize {
        row[i] = row[i - 1] * (n as usize + 1 - i) as f64 / i as f64;
    }
    row
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

const MAX_CACHED_RULE: usize = 96;

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Cached rule with `n` nodes.
    pub fn cached(n: usize) -> &'static GaussLegendre {
        static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
        let rules = RULES.get_or_init(|| (1..=MAX_CACHED_RULE).map(GaussLegendre::new).collect());
        assert!(
            (1..=MAX_CACHED_RULE).contains(&n),
            "no cached Gauss-Legendre rule with {n} nodes"
        );
        &rules[n - 1]
    }

    /// Integrate `f` over `[lo, hi]`.
    pub fn integrate(&self, lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `∫_0^{s∧t} (s-x)^p (t-x)^q dx`, exact up to rounding (the integrand is a
/// polynomial of degree `p+q`).
pub fn power_product_integral(p: u32, q: u32, s: f64, t: f64) -> f64 {
    let upper = s.min(t);
    if upper <= 0.0 {
        return 0.0;
    }
    let nodes = ((p + q) as usize + 2) / 2;
    GaussLegendre::cached(nodes.max(1)).integrate(0.0, upper, |x| {
        pos_pow(s - x, p) * pos_pow(t - x, q)
    })
}

/// Evaluates `S(t) = Σ_j c_j (t - x_j)_+^p` at every `t` in `ts`.
///
/// Both `knots` and `ts` must be sorted ascending. The sweep carries the
/// shifted moments `M_l(t) = Σ_{x_j <= t} c_j (t - x_j)^l`, whose updates
/// only add nonnegative terms when the coefficients are nonnegative, so the
/// result keeps full relative accuracy even where `t` sits next to a knot.
pub fn truncated_power_sums(knots: &[f64], coefs: &[f64], p: u32, ts: &[f64]) -> Vec<f64> {
    debug_assert_eq!(knots.len(), coefs.len());
    debug_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    let p = p as usize;
    let binom: Vec<Vec<f64>> = (0..=p as u32).map(binomial_row).collect();
    let mut moments = vec![0.0; p + 1];
    let mut powers = vec![1.0; p + 1];
    let mut cur = f64::NEG_INFINITY;
    let mut next = 0;
    let mut out = Vec::with_capacity(ts.len());

    let shift = |moments: &mut [f64], powers: &mut [f64], h: f64| {
        if h <= 0.0 || moments.iter().all(|&m| m == 0.0) {
            return;
        }
        for i in 1..=p {
            powers[i] = powers[i - 1] * h;
        }
        for l in (1..=p).rev() {
            let mut acc = moments[l];
            for i in 0..l {
                acc += binom[l][i] * powers[l - i] * moments[i];
            }
            moments[l] = acc;
        }
    };

    for &t in ts {
        while next < knots.len() && knots[next] <= t {
            let x = knots[next];
            if cur.is_finite() {
                shift(&mut moments, &mut powers, x - cur);
            }
            cur = x;
            moments[0] += coefs[next];
            next += 1;
        }
        if cur.is_finite() {
            shift(&mut moments, &mut powers, t - cur);
            cur = t;
            out.push(moments[p]);
        } else {
            out.push(0.0);
        }
    }
    out
}

/// Brent's derivative-free minimization of `f` on `[a, b]`.
///
/// Returns `(x, f(x))`. The bracket end points are also compared so that a
/// monotone function on the bracket returns its best end point.
pub fn brent_minimize(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> (f64, f64) {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let fa_end = f(a);
    let fb_end = f(b);
    let (lo_end, hi_end) = (a, b);
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = rel_tol * x.abs() + 1e-300;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + if d > 0.0 { tol1 } else { -tol1 }
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    let mut best = (x, fx);
    if fa_end < best.1 {
        best = (lo_end, fa_end);
    }
    if fb_end < best.1 {
        best = (hi_end, fb_end);
    }
    best
}

/// Solves the dense square system `a x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major. Returns `None` when singular.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() <= 1e-15 * scale {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r * n + c] * x[c];
        }
        x[r] = acc / a[r * n + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn median_of_sorted(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Shortest round-trip decimal text for `x`, in exponent form outside
/// `[1e-5, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Median of an unsorted slice, ignoring NaN entries.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    median_of_sorted(&v)
}
