//! Local asymptotic minimax lower bounds for estimating `g^{(j)}(x_0)` and
//! the mixing distribution `F(x_0)`.
//!
//! The bound is built from the bump `r(x) = (1 - x^2)^{k+1} (1 + x)` on
//! `[-1, 1]`. Its derivative values `C_{k,j} = r^{(j)}(0)`, the ratios
//! `λ^{(j)}_{k,1} = |C_{k,j} / C_{k,k}|` and the chi-square constant
//! `λ_{k,2} = ∫ (1 - z^2)^{2(k+1)} (1 + z)^2 dz / C_{k,k}^2` are kept as exact
//! big rationals. Only [`d_kj`] and the bound values are floating point.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::analytic::AnalyticDensity;
use crate::error::{invalid, KmError, Result};
use crate::numeric::GaussLegendre;

fn factorial_big(n: u32) -> BigInt {
    (2..=n).fold(BigInt::one(), |acc, i| acc * i)
}

fn binomial_big(n: u32, k: u32) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    // Each partial product is itself a binomial coefficient, so the
    // division is exact.
    (0..k).fold(BigInt::one(), |acc, i| acc * (n - i) / (i + 1))
}

fn int(v: BigInt) -> BigRational {
    BigRational::from_integer(v)
}

fn pow2(e: u32) -> BigInt {
    BigInt::one() << e as usize
}

fn check_order(k: u32) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("the minimax bounds need k >= 2, got {k}")));
    }
    Ok(())
}

/// Integer coefficients of `r(x) = (1 - x^2)^{k+1} (1 + x)`, lowest degree
/// first. The polynomial has degree `2k + 3`.
pub fn bump_coefficients(k: u32) -> Vec<BigInt> {
    let mut c = vec![BigInt::zero(); 2 * k as usize + 4];
    for i in 0..=k + 1 {
        let mut a = binomial_big(k + 1, i);
        if i % 2 == 1 {
            a = -a;
        }
        c[2 * i as usize] += &a;
        c[2 * i as usize + 1] += a;
    }
    c
}

/// `C_{k,j} = r^{(j)}(0)`, read off the exact expansion of `r`.
pub fn c_kj(k: u32, j: u32) -> Result<BigRational> {
    check_order(k)?;
    if j > k {
        return Err(invalid(format!("derivative order j = {j} must lie in 0..={k}")));
    }
    Ok(int(factorial_big(j) * &bump_coefficients(k)[j as usize]))
}

/// Compact closed form of `C_{k,k}`:
/// `2 (-1)^{k/2} (k+1) (k-1)! binom(k, k/2 - 1)` for even `k` and
/// `(-1)^{(k-1)/2} k! binom(k+1, (k-1)/2)` for odd `k`.
pub fn formula_ck(k: u32) -> Result<BigRational> {
    check_order(k)?;
    let v = if k % 2 == 0 {
        let m = k / 2;
        let mag = BigInt::from(2u32) * (k + 1) * factorial_big(k - 1) * binomial_big(k, m - 1);
        if m % 2 == 1 { -mag } else { mag }
    } else {
        let m = (k - 1) / 2;
        let mag = factorial_big(k) * binomial_big(k + 1, m);
        if m % 2 == 1 { -mag } else { mag }
    };
    Ok(int(v))
}

/// `λ^{(j)}_{k,1} = |C_{k,j} / C_{k,k}|` for `0 <= j <= k - 1`.
pub fn lambda1(k: u32, j: u32) -> Result<BigRational> {
    check_order(k)?;
    if j >= k {
        return Err(invalid(format!("j = {j} must lie in 0..{k}")));
    }
    Ok((c_kj(k, j)? / c_kj(k, k)?).abs())
}

/// `I_{n,2p} = ∫_0^1 (1 - x^2)^n x^{2p} dx` in closed form,
/// `2^{2n+1} n! (n+1)! / (2n+2)! · binom(n+p, n+1) / binom(2(n+p)+1, 2(n+1))`,
/// with both binomials read as 1 when `p = 0`.
pub fn i_n2p(n: u32, p: u32) -> BigRational {
    let head = BigRational::new(
        pow2(2 * n + 1) * factorial_big(n) * factorial_big(n + 1),
        factorial_big(2 * n + 2),
    );
    if p == 0 {
        return head;
    }
    head * BigRational::new(binomial_big(n + p, n + 1), binomial_big(2 * (n + p) + 1, 2 * (n + 1)))
}

/// `∫_{-1}^{1} (1 - z^2)^{2(k+1)} (1 + z)^2 dz = 2^{4(k+2)} (2k+3)(k+2) ((2k+2)!)^2 / (4k+7)!`.
pub fn bump_square_integral(k: u32) -> BigRational {
    let f = factorial_big(2 * k + 2);
    BigRational::new(pow2(4 * (k + 2)) * (2 * k + 3) * (k + 2) * &f * &f, factorial_big(4 * k + 7))
}

/// `λ_{k,2}` from the parity-split closed forms:
/// `2^{4k+6} (2k+3)(k+2) ((2k+2)!)^2 / ((k+1)^2 (4k+7)! ((k-1)!)^2 binom(k, k/2-1)^2)`
/// for even `k` and
/// `2^{4(k+2)} (2k+3)(k+2) ((2k+2)!)^2 / ((4k+7)! (k!)^2 binom(k+1, (k-1)/2)^2)`
/// for odd `k`.
pub fn lambda2(k: u32) -> Result<BigRational> {
    check_order(k)?;
    let f = factorial_big(2 * k + 2);
    let top = &f * &f;
    let q = if k % 2 == 0 {
        let b = binomial_big(k, k / 2 - 1);
        let fk = factorial_big(k - 1);
        BigRational::new(
            pow2(4 * k + 6) * (2 * k + 3) * (k + 2) * top,
            BigInt::from((k + 1) * (k + 1)) * factorial_big(4 * k + 7) * &fk * &fk * &b * &b,
        )
    } else {
        let b = binomial_big(k + 1, (k - 1) / 2);
        let fk = factorial_big(k);
        BigRational::new(
            pow2(4 * (k + 2)) * (2 * k + 3) * (k + 2) * top,
            factorial_big(4 * k + 7) * &fk * &fk * &b * &b,
        )
    };
    Ok(q)
}

/// `λ_{k,2} = 2 (I_{2(k+1),2} + I_{2(k+1),0}) / C_{k,k}^2`.
pub fn lambda2_from_moments(k: u32) -> Result<BigRational> {
    let c = c_kj(k, k)?;
    let n = 2 * (k + 1);
    Ok(int(BigInt::from(2u32)) * (i_n2p(n, 1) + i_n2p(n, 0)) / (&c * &c))
}

fn ln_big(v: &BigInt) -> f64 {
    let bits = v.bits();
    if bits <= 1000 {
        return v.to_f64().unwrap_or(f64::NAN).abs().ln();
    }
    let shift = bits - 64;
    let top: BigInt = v.abs() >> shift as usize;
    top.to_f64().unwrap_or(f64::NAN).ln() + shift as f64 * std::f64::consts::LN_2
}

/// Natural logarithm of `|q|`, accurate even when `q` under- or overflows
/// `f64`.
pub fn ln_rational(q: &BigRational) -> f64 {
    ln_big(q.numer()) - ln_big(q.denom())
}

fn rate(k: u32, j: u32) -> f64 {
    (k - j) as f64 / (2 * k + 1) as f64
}

/// `d_{k,j} = ¼ (4 r / e)^r λ^{(j)}_{k,1} / λ_{k,2}^r` with `r = (k-j)/(2k+1)`.
pub fn d_kj(k: u32, j: u32) -> Result<f64> {
    let l1 = lambda1(k, j)?;
    let l2 = lambda2(k)?;
    let r = rate(k, j);
    let ln_d = (0.25f64).ln() + r * (4.0 * r).ln() - r + ln_rational(&l1) - r * ln_rational(&l2);
    Ok(ln_d.exp())
}

/// Every constant entering the bound for one `(k, j)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxConstants {
    pub k: u32,
    pub j: u32,
    pub c_kj: BigRational,
    pub c_kk: BigRational,
    pub lambda1_kj: BigRational,
    pub lambda2_k: BigRational,
    pub d_kj: f64,
}

impl MinimaxConstants {
    pub fn new(k: u32, j: u32) -> Result<Self> {
        Ok(Self {
            k,
            j,
            c_kj: c_kj(k, j)?,
            c_kk: c_kj(k, k)?,
            lambda1_kj: lambda1(k, j)?,
            lambda2_k: lambda2(k)?,
            d_kj: d_kj(k, j)?,
        })
    }

    /// All pairs `j = 0..k-1` for one `k`.
    pub fn table(k: u32) -> Result<Vec<Self>> {
        (0..k).map(|j| Self::new(k, j)).collect()
    }
}

fn check_point(g0_x0: f64, gk_x0: f64) -> Result<()> {
    if !(g0_x0 > 0.0 && g0_x0.is_finite()) {
        return Err(invalid(format!("g(x0) must be positive and finite, got {g0_x0}")));
    }
    if gk_x0 == 0.0 || !gk_x0.is_finite() {
        return Err(invalid(format!("g^(k)(x0) must be nonzero and finite, got {gk_x0}")));
    }
    Ok(())
}

/// True when `(-1)^k g^{(k)}(x_0) > 0`, the sign every k-monotone density
/// with a nondegenerate k-th derivative has.
pub fn sign_consistent(k: u32, gk_x0: f64) -> bool {
    if k % 2 == 0 { gk_x0 > 0.0 } else { gk_x0 < 0.0 }
}

/// Coefficient of `n^{-(k-j)/(2k+1)}` in the local minimax lower bound for
/// estimating `g^{(j)}(x_0)`:
/// `{|g^{(k)}(x_0)|^{2j+1} g(x_0)^{k-j}}^{1/(2k+1)} d_{k,j}`.
pub fn minimax_bound(k: u32, j: u32, g0_x0: f64, gk_x0: f64) -> Result<f64> {
    check_point(g0_x0, gk_x0)?;
    let d = d_kj(k, j)?;
    let e = (2 * k + 1) as f64;
    let ln = ((2 * j + 1) as f64 * gk_x0.abs().ln() + (k - j) as f64 * g0_x0.ln()) / e;
    Ok(ln.exp() * d)
}

/// The same bound assembled through the modulus of continuity: with
/// `b_k = λ_{k,2} g^{(k)}(x_0)^2 / g(x_0)` and
/// `ρ = (λ^{(j)}_{k,1} |g^{(k)}(x_0)|)^{1/r} / b_k`, the bound is
/// `¼ (4 r / e)^r ρ^r`.
pub fn minimax_bound_via_modulus(k: u32, j: u32, g0_x0: f64, gk_x0: f64) -> Result<f64> {
    check_point(g0_x0, gk_x0)?;
    let r = rate(k, j);
    let ln_l1 = ln_rational(&lambda1(k, j)?);
    let ln_bk = ln_rational(&lambda2(k)?) + 2.0 * gk_x0.abs().ln() - g0_x0.ln();
    let ln_rho = (ln_l1 + gk_x0.abs().ln()) / r - ln_bk;
    Ok(0.25 * (4.0 * r / std::f64::consts::E).powf(r) * (r * ln_rho).exp())
}

/// Lower-bound coefficient for estimating the mixing distribution
/// `F(x_0)`: `{|g^{(k)}(x_0)|^{2k-1} g(x_0)}^{1/(2k+1)} (x_0^k / k!) d_{k,k-1}`.
pub fn mixing_bound(k: u32, x0: f64, g0_x0: f64, gk_x0: f64) -> Result<f64> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(invalid(format!("x0 must be positive and finite, got {x0}")));
    }
    let b = minimax_bound(k, k - 1, g0_x0, gk_x0)?;
    let kfact: f64 = (1..=k).map(f64::from).product();
    Ok(b * x0.powi(k as i32) / kfact)
}

/// The perturbed density `g_μ = g_0 + s(μ) (x_0 + μ - x)^{k+1} (x - x_0 + μ)^{k+2}`
/// on `[x_0 - μ, x_0 + μ]`, with `s(μ) = g_0^{(k)}(x_0) / (C_{k,k} μ^{k+3})`.
pub struct Perturbation<'a> {
    base: &'a dyn AnalyticDensity,
    k: u32,
    x0: f64,
    mu: f64,
    scale: f64,
    /// `r` coefficients as floats, lowest degree first.
    bump: Vec<f64>,
    lambda2: f64,
    order_k_violation: Option<f64>,
}

impl std::fmt::Debug for Perturbation<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perturbation")
            .field("base", &self.base.name())
            .field("k", &self.k)
            .field("x0", &self.x0)
            .field("mu", &self.mu)
            .field("scale", &self.scale)
            .field("order_k_violation", &self.order_k_violation)
            .finish()
    }
}

/// Points per window on which the perturbation is checked.
const CHECK_POINTS: usize = 801;

/// Builds `g_μ` and checks it on a grid over the window: `g_μ >= 0` and
/// `(-1)^j g_μ^{(j)} >= 0` for `j < k` are required; a sign change of
/// `(-1)^k g_μ^{(k)}` is recorded in [`Perturbation::order_k_violation`].
pub fn build_perturbation<'a>(base: &'a dyn AnalyticDensity, x0: f64, k: u32, mu: f64) -> Result<Perturbation<'a>> {
    check_order(k)?;
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(invalid(format!("x0 must be positive and finite, got {x0}")));
    }
    if !(mu > 0.0 && mu < x0) {
        return Err(invalid(format!("mu must lie in (0, x0) = (0, {x0}), got {mu}")));
    }
    let gk = base.derivative(k, x0);
    if !sign_consistent(k, gk) {
        return Err(invalid(format!("(-1)^k g^(k)(x0) must be positive, got g^({k})({x0}) = {gk}")));
    }
    let ckk = c_kj(k, k)?.to_f64().unwrap_or(f64::NAN);
    let scale = gk / (ckk * mu.powi(k as i32 + 3));
    let bump = bump_coefficients(k).iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect();
    let mut p = Perturbation {
        base,
        k,
        x0,
        mu,
        scale,
        bump,
        lambda2: lambda2(k)?.to_f64().unwrap_or(f64::NAN),
        order_k_violation: None,
    };
    for i in 0..CHECK_POINTS {
        let x = x0 - mu + 2.0 * mu * i as f64 / (CHECK_POINTS - 1) as f64;
        for j in 0..=k {
            let v = p.derivative(j, x);
            let signed = if j % 2 == 0 { v } else { -v };
            if signed >= 0.0 {
                continue;
            }
            if j == k {
                p.order_k_violation.get_or_insert(x);
            } else if j == 0 {
                return Err(KmError::InvalidPerturbation { x, reason: format!("density is negative ({v})") });
            } else {
                return Err(KmError::InvalidPerturbation {
                    x,
                    reason: format!("(-1)^{j} g^({j}) is negative ({v})"),
                });
            }
        }
    }
    Ok(p)
}

/// `p^{(j)}(z)` for a polynomial with coefficients `c`, lowest degree first.
fn poly_derivative(c: &[f64], j: u32, z: f64) -> f64 {
    let j = j as usize;
    if j >= c.len() {
        return 0.0;
    }
    let mut acc = 0.0;
    for d in (j..c.len()).rev() {
        let falling: f64 = (0..j).map(|i| (d - i) as f64).product();
        acc = acc * z + c[d] * falling;
    }
    acc
}

impl Perturbation<'_> {
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `s(μ)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// First grid point where `(-1)^k g_μ^{(k)} < 0`, if any.
    pub fn order_k_violation(&self) -> Option<f64> {
        self.order_k_violation
    }

    /// `j`-th derivative of `g_μ - g_0`.
    pub fn displacement(&self, j: u32, x: f64) -> f64 {
        let z = (x - self.x0) / self.mu;
        if !(-1.0..=1.0).contains(&z) {
            return 0.0;
        }
        let e = 2 * self.k as i32 + 3 - j as i32;
        self.scale * self.mu.powi(e) * poly_derivative(&self.bump, j, z)
    }

    /// `∫ (g_μ - g_0)^2 / g_0`.
    pub fn chi_square_mass(&self) -> f64 {
        let gl = GaussLegendre::cached(32);
        let panels = 16;
        let mut total = 0.0;
        for i in 0..panels {
            let lo = -1.0 + 2.0 * i as f64 / panels as f64;
            let hi = lo + 2.0 / panels as f64;
            total += gl.integrate(lo, hi, |z| {
                let x = self.x0 + self.mu * z;
                let d = self.displacement(0, x);
                d * d / self.base.density(x)
            });
        }
        total * self.mu
    }

    /// Leading term `λ_{k,2} g_0^{(k)}(x_0)^2 / g_0(x_0) · μ^{2k+1}` of the
    /// chi-square mass.
    pub fn leading_chi_square(&self) -> f64 {
        let gk = self.base.derivative(self.k, self.x0);
        self.lambda2 * gk * gk / self.base.density(self.x0) * self.mu.powi(2 * self.k as i32 + 1)
    }

    /// `∫ (g_μ - g_0)`; the bump is not mass preserving.
    pub fn mass_change(&self) -> f64 {
        self.scale * self.mu.powi(2 * self.k as i32 + 4) * self.bump_integral(1.0)
    }

    /// `∫_{-1}^{z} r`, from the antiderivative of the expansion.
    fn bump_integral(&self, z: f64) -> f64 {
        let anti = |z: f64| {
            self.bump
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (d, c)| acc * z + c / (d + 1) as f64)
                * z
        };
        anti(z.clamp(-1.0, 1.0)) - anti(-1.0)
    }
}

impl AnalyticDensity for Perturbation<'_> {
    fn derivative(&self, j: u32, x: f64) -> f64 {
        self.base.derivative(j, x) + self.displacement(j, x)
    }

    fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.x0) / self.mu;
        let extra = if z <= -1.0 {
            0.0
        } else {
            self.scale * self.mu.powi(2 * self.k as i32 + 4) * self.bump_integral(z)
        };
        self.base.cdf(x) + extra
    }

    fn name(&self) -> &str {
        "perturbed"
    }
}
