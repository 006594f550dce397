//! Densities known in closed form, with exact derivatives.

/// A density on `(0, ∞)` whose derivatives of any order can be evaluated.
pub trait AnalyticDensity: Send + Sync {
    /// `g^{(j)}(x)`; `j = 0` is the density itself.
    fn derivative(&self, j: u32, x: f64) -> f64;

    fn density(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// `G(x) = ∫_0^x g`.
    fn cdf(&self, x: f64) -> f64;

    /// Mixing distribution of the order-`k` scale-mixture representation,
    /// when it is known in closed form.
    fn mixing_cdf(&self, _k: u32, _t: f64) -> Option<f64> {
        None
    }

    fn name(&self) -> &str;
}

/// Exponential density `rate · e^{-rate·x}`, k-monotone for every k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential {
    pub rate: f64,
}

impl Default for Exponential {
    fn default() -> Self {
        Self { rate: 1.0 }
    }
}

impl Exponential {
    pub fn new(rate: f64) -> Self {
        Self { rate }
    }
}

impl AnalyticDensity for Exponential {
    fn derivative(&self, j: u32, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sign * self.rate.powi(j as i32 + 1) * (-self.rate * x).exp()
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-self.rate * x).exp_m1()
        }
    }

    /// Gamma(k+1, rate) distribution function.
    fn mixing_cdf(&self, k: u32, t: f64) -> Option<f64> {
        Some(gamma_integer_cdf(k + 1, self.rate * t))
    }

    fn name(&self) -> &str {
        "exp"
    }
}

/// CDF of the Gamma(`shape`, 1) law for integer `shape >= 1`.
///
/// Uses the Poisson-sum form `1 - e^{-t} Σ_{j<shape} t^j/j!` when that is
/// well conditioned and the lower series `e^{-t} Σ_{j>=shape} t^j/j!` for
/// small `t`, where the subtraction would cancel.
pub fn gamma_integer_cdf(shape: u32, t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t <= 0.0 {
        return 0.0;
    }
    if t.is_infinite() {
        return 1.0;
    }
    if t < shape as f64 {
        let mut term = (-t).exp();
        for j in 1..=shape {
            term *= t / j as f64;
        }
        let mut sum = 0.0;
        let mut j = shape;
        while term > sum * 1e-18 && j < shape + 2000 {
            sum += term;
            j += 1;
            term *= t / j as f64;
        }
        sum.min(1.0)
    } else {
        let mut term = (-t).exp();
        let mut sum = 0.0;
        for j in 0..shape {
            sum += term;
            term *= t / (j + 1) as f64;
        }
        (1.0 - sum).clamp(0.0, 1.0)
    }
}
