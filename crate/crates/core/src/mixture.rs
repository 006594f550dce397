//! Scale mixtures of Beta(1, k) kernels and the objects they act on.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KmError, Result};
use crate::numeric::{falling_factorial, pos_pow};

/// Relative distance below which two support points are treated as one.
pub const COALESCE_REL: f64 = 1e-10;

/// Sorted positive observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("sample must contain at least one observation"));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("observations must be finite and positive, got {bad}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Empirical distribution function `𝔾_n(t)` (right-continuous).
    pub fn ecdf(&self, t: f64) -> f64 {
        self.values.partition_point(|&x| x <= t) as f64 / self.len() as f64
    }

    /// Left limit `𝔾_n(t-)`.
    pub fn ecdf_left(&self, t: f64) -> f64 {
        self.values.partition_point(|&x| x < t) as f64 / self.len() as f64
    }

    /// Copy of the sample with every observation multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|x| x * c).collect())
    }

    /// Parses one observation per line. Blank lines are skipped and the
    /// first non-blank line may be the header `x`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut seen_row = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let first = !seen_row;
            seen_row = true;
            if first && line.trim_matches('"') == "x" {
                continue;
            }
            let field = line.trim_end_matches(',').trim();
            let v: f64 = field.parse().map_err(|_| KmError::Parse {
                line: idx + 1,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(KmError::Parse {
                    line: idx + 1,
                    msg: format!("observation {v} is not a finite positive number"),
                });
            }
            values.push(v);
        }
        Self::new(values)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| KmError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x\n");
        for v in &self.values {
            let _ = writeln!(out, "{v:?}");
        }
        out
    }
}

/// Finite atomic mixing measure `F = Σ w_i δ_{a_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMeasure {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl MixingMeasure {
    /// Builds a measure from unsorted atoms, merging atoms closer than
    /// `1e-10 · max(a)` (positions averaged by weight, weights summed).
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(invalid(format!(
                "support has {} points but {} weights were given",
                support.len(),
                weights.len()
            )));
        }
        if support.is_empty() {
            return Err(invalid("mixing measure needs at least one atom"));
        }
        if let Some(a) = support.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(invalid(format!("support points must be finite and positive, got {a}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(invalid(format!("weights must be finite and positive, got {w}")));
        }
        let mut atoms: Vec<(f64, f64)> = support.into_iter().zip(weights).collect();
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let top = atoms[atoms.len() - 1].0;
        let gap = COALESCE_REL * top;
        let mut support = Vec::with_capacity(atoms.len());
        let mut weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (a, w) in atoms {
            match (support.last_mut(), weights.last_mut()) {
                (Some(prev), Some(pw)) if a - *prev <= gap => {
                    *prev = (*prev * *pw + a * w) / (*pw + w);
                    *pw += w;
                }
                _ => {
                    support.push(a);
                    weights.push(w);
                }
            }
        }
        Ok(Self { support, weights })
    }

    pub fn point_mass(a: f64) -> Result<Self> {
        Self::new(vec![a], vec![1.0])
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `F(t) = Σ_{a_i <= t} w_i`.
    pub fn cdf(&self, t: f64) -> f64 {
        let idx = self.support.partition_point(|&a| a <= t);
        self.weights[..idx].iter().sum()
    }

    pub fn normalized(&self) -> Self {
        let m = self.mass();
        Self {
            support: self.support.clone(),
            weights: self.weights.iter().map(|w| w / m).collect(),
        }
    }
}

/// Result of a derivative evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeValue {
    pub value: f64,
    /// Set when the order-(k-1) derivative was requested exactly at an
    /// atom; `value` is then the limit from the left.
    pub at_knot: bool,
}

/// `g(x) = Σ w_i K_{a_i}(x)` with `K_a(x) = k (a-x)_+^{k-1} / a^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMonotoneMixture {
    k: u32,
    mixing: MixingMeasure,
}

#[inline]
pub(crate) fn kernel(k: u32, a: f64, x: f64) -> f64 {
    let u = (a - x) / a;
    k as f64 / a * pos_pow(u, k - 1)
}

/// Beta(1, k) scale kernel `k (a-x)_+^{k-1} / a^k`.
///
/// The truncated power is closed at the atom, so for `k = 1` the kernel is
/// the left-continuous uniform density `1{x <= a}/a`; for `k >= 2` it
/// vanishes at and beyond `a`.
pub fn eval_kernel(k: u32, a: f64, x: f64) -> Result<f64> {
    if k < 1 {
        return Err(invalid("kernel order k must be at least 1"));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid(format!("kernel scale must be positive, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(invalid(format!("kernel argument must be nonnegative, got {x}")));
    }
    Ok(kernel(k, a, x))
}

/// Pointwise envelope `(1/x)(1 - 1/k)^{k-1}` of k-monotone densities.
pub fn density_bound(k: u32, x: f64) -> Result<f64> {
    if k < 2 {
        return Err(invalid("the density envelope needs k >= 2"));
    }
    if !(x > 0.0) {
        return Err(invalid(format!("the density envelope needs x > 0, got {x}")));
    }
    Ok((1.0 - 1.0 / k as f64).powi(k as i32 - 1) / x)
}

impl KMonotoneMixture {
    pub fn new(k: u32, mixing: MixingMeasure) -> Result<Self> {
        if k < 1 {
            return Err(invalid("order k must be at least 1"));
        }
        Ok(Self { k, mixing })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn mixing(&self) -> &MixingMeasure {
        &self.mixing
    }

    pub fn support(&self) -> &[f64] {
        self.mixing.support()
    }

    pub fn weights(&self) -> &[f64] {
        self.mixing.weights()
    }

    pub fn mass(&self) -> f64 {
        self.mixing.mass()
    }

    /// `g(x)`; zero for `x < 0`.
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let k = self.k;
        let start = self.support().partition_point(|&a| a < x);
        self.support()[start..]
            .iter()
            .zip(&self.weights()[start..])
            .map(|(&a, &w)| w * kernel(k, a, x))
            .sum()
    }

    /// `g^{(j)}(x)` for `0 <= j <= k-1`.
    pub fn derivative(&self, j: u32, x: f64) -> Result<DerivativeValue> {
        if j >= self.k {
            return Err(invalid(format!(
                "derivative order {j} outside [0, {}]",
                self.k - 1
            )));
        }
        if !(x >= 0.0) {
            return Err(invalid(format!("derivative argument must be nonnegative, got {x}")));
        }
        let k = self.k;
        let p = k - 1 - j;
        let coef = k as f64 * falling_factorial(k - 1, j) * if j % 2 == 0 { 1.0 } else { -1.0 };
        let start = self.support().partition_point(|&a| a < x);
        let value = self.support()[start..]
            .iter()
            .zip(&self.weights()[start..])
            .map(|(&a, &w)| w * coef * pos_pow((a - x) / a, p) / a.powi(j as i32 + 1))
            .sum();
        let at_knot = p == 0 && self.support().get(start).is_some_and(|&a| a == x);
        Ok(DerivativeValue { value, at_knot })
    }

    /// `G(t) = ∫_0^t g`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = self.k as i32;
        self.support()
            .iter()
            .zip(self.weights())
            .map(|(&a, &w)| {
                if t >= a {
                    w
                } else {
                    -w * ((k as f64) * (-t / a).ln_1p()).exp_m1()
                }
            })
            .sum()
    }

    /// Inputs for the inversion formula at `t`, taken from the mixture
    /// itself.
    pub fn inversion_inputs(&self, t: f64) -> Result<InversionInputs> {
        let derivatives = (0..self.k)
            .map(|j| self.derivative(j, t).map(|d| d.value))
            .collect::<Result<Vec<_>>>()?;
        Ok(InversionInputs {
            cdf: self.cdf(t),
            derivatives,
        })
    }

    /// Mixture with every weight multiplied by `c`.
    pub fn scaled_weights(&self, c: f64) -> Result<Self> {
        let m = &self.mixing;
        Self::new(
            self.k,
            MixingMeasure::new(
                m.support().to_vec(),
                m.weights().iter().map(|w| w * c).collect(),
            )?,
        )
    }

    /// `∫ g^2`, in closed form through the Gram kernel.
    pub fn l2_norm_sq(&self) -> f64 {
        let k = self.k;
        let a = self.support();
        let w = self.weights();
        let mut total = 0.0;
        for i in 0..a.len() {
            for l in 0..a.len() {
                total += w[i] * w[l] * kernel_gram(k, a[i], a[l]);
            }
        }
        total
    }
}

/// `∫ K_a K_b`.
pub(crate) fn kernel_gram(k: u32, a: f64, b: f64) -> f64 {
    let lo = a.min(b);
    let hi = a.max(b);
    // With x = lo·u the integral becomes (k^2/hi)·∫_0^1 (1-u)^{k-1}(1-ρu)^{k-1} du, ρ = lo/hi.
    let rho = lo / hi;
    let integral = crate::numeric::GaussLegendre::cached(k as usize).integrate(0.0, 1.0, |u| {
        pos_pow(1.0 - u, k - 1) * pos_pow(1.0 - rho * u, k - 1)
    });
    (k * k) as f64 * integral / hi
}

/// Values consumed by [`invert_to_mixing`]: `G(t)` and
/// `g(t), g'(t), …, g^{(k-1)}(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionInputs {
    pub cdf: f64,
    pub derivatives: Vec<f64>,
}

/// Recovers the mixing distribution from a density:
/// `F(t) = G(t) + Σ_{j=1}^{k} (-1)^j/j! · t^j · g^{(j-1)}(t)`.
pub fn invert_to_mixing(inputs: &InversionInputs, k: u32, t: f64) -> Result<f64> {
    if k < 1 {
        return Err(invalid("order k must be at least 1"));
    }
    if inputs.derivatives.len() < k as usize {
        return Err(invalid(format!(
            "inversion at order {k} needs {k} derivative values, got {}",
            inputs.derivatives.len()
        )));
    }
    if t.is_nan() || inputs.cdf.is_nan() || inputs.derivatives.iter().any(|d| d.is_nan()) {
        return Err(KmError::Numerical("NaN passed to the inversion formula".into()));
    }
    let mut f = inputs.cdf;
    let mut coef = 1.0;
    for j in 1..=k {
        coef *= -t / j as f64;
        f += coef * inputs.derivatives[j as usize - 1];
    }
    Ok(f)
}

/// Draws `n` observations from `g`, which must have mass one.
pub fn sample_mixture(g: &KMonotoneMixture, n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mass = g.mass();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("sampling needs a density (mass 1), got mass {mass}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cum: Vec<f64> = g
        .weights()
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let inv_k = 1.0 / g.k() as f64;
    let values = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * mass;
            let idx = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
            let v: f64 = rng.random();
            let a = g.support()[idx];
            let x = a * (1.0 - v.powf(inv_k));
            if x > 0.0 { x } else { f64::MIN_POSITIVE.max(a * f64::EPSILON) }
        })
        .collect();
    Sample::new(values)
}

/// Tabulated function on strictly increasing abscissae.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub abscissae: Vec<f64>,
    pub ordinates: Vec<f64>,
}

impl GridFunction {
    pub fn new(abscissae: Vec<f64>, ordinates: Vec<f64>) -> Result<Self> {
        if abscissae.len() != ordinates.len() {
            return Err(invalid("grid abscissae and ordinates differ in length"));
        }
        if abscissae.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("grid abscissae must be strictly increasing"));
        }
        Ok(Self { abscissae, ordinates })
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    /// Largest ordinate and its abscissa (first one on ties).
    pub fn max(&self) -> Option<(f64, f64)> {
        self.abscissae
            .iter()
            .zip(&self.ordinates)
            .fold(None, |best, (&x, &y)| match best {
                Some((_, by)) if by >= y => best,
                _ => Some((x, y)),
            })
    }

    /// Smallest ordinate and its abscissa (first one on ties).
    pub fn min(&self) -> Option<(f64, f64)> {
        self.abscissae
            .iter()
            .zip(&self.ordinates)
            .fold(None, |best, (&x, &y)| match best {
                Some((_, by)) if by <= y => best,
                _ => Some((x, y)),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(k: u32, a: f64) -> KMonotoneMixture {
        KMonotoneMixture::new(k, MixingMeasure::point_mass(a).unwrap()).unwrap()
    }

    #[test]
    fn kernel_examples() {
        assert!((eval_kernel(3, 2.0, 1.0).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(eval_kernel(5, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(eval_kernel(5, 1.0, 1.5).unwrap(), 0.0);
        assert!((eval_kernel(1, 4.0, 2.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(eval_kernel(1, 4.0, 4.0).unwrap(), 0.25);
        assert!(eval_kernel(0, 1.0, 0.5).is_err());
        assert!(eval_kernel(2, 0.0, 0.5).is_err());
        assert!(eval_kernel(2, -1.0, 0.5).is_err());
    }

    #[test]
    fn mixture_examples() {
        assert!((atom(2, 2.0).eval(1.0) - 0.5).abs() < 1e-15);
        let two = KMonotoneMixture::new(
            1,
            MixingMeasure::new(vec![2.0, 1.0], vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        assert!((two.eval(0.5) - 0.75).abs() < 1e-15);
        assert_eq!(two.eval(2.5), 0.0);
        assert_eq!(atom(4, 3.0).eval(3.0), 0.0);
    }

    #[test]
    fn derivative_examples() {
        let d = atom(2, 2.0).derivative(1, 1.0).unwrap();
        assert!((d.value + 0.5).abs() < 1e-15 && !d.at_knot);
        let g = atom(3, 3.0);
        let d2 = g.derivative(2, 1.0).unwrap().value;
        assert!((d2 - 2.0 / 9.0).abs() < 1e-15);
        let h = 1e-5;
        let fd = (g.eval(1.0 + h) - 2.0 * g.eval(1.0) + g.eval(1.0 - h)) / (h * h);
        assert!((fd - d2).abs() <= 1e-6 * d2.abs().max(1.0) * 10.0);
        assert_eq!(g.derivative(0, 1.3).unwrap().value, g.eval(1.3));
        assert!(g.derivative(3, 1.0).is_err());
        let knot = g.derivative(2, 3.0).unwrap();
        assert!(knot.at_knot);
        assert!((knot.value - 6.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn cdf_examples() {
        assert!((atom(1, 2.0).cdf(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(atom(3, 2.0).cdf(0.0), 0.0);
        assert!((atom(3, 2.0).cdf(1.0) - 0.875).abs() < 1e-15);
        assert_eq!(atom(3, 2.0).cdf(7.0), 1.0);
    }

    #[test]
    fn envelope_examples() {
        assert!((density_bound(2, 3.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((density_bound(3, 2.0).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in [2u32, 5, 20, 200, 2000] {
            let v = density_bound(k, 1.0).unwrap();
            assert!(v > (-1.0f64).exp() && v < prev);
            prev = v;
        }
        assert!(density_bound(3, 0.0).is_err());
        assert!(density_bound(1, 1.0).is_err());
    }

    #[test]
    fn single_atom_inversion_is_a_step() {
        let g = KMonotoneMixture::new(4, MixingMeasure::new(vec![2.5], vec![0.7]).unwrap()).unwrap();
        for t in [0.3, 1.0, 2.4] {
            let f = invert_to_mixing(&g.inversion_inputs(t).unwrap(), 4, t).unwrap();
            assert!(f.abs() < 1e-13, "t={t}: {f}");
        }
        for t in [2.6, 4.0, 50.0] {
            let f = invert_to_mixing(&g.inversion_inputs(t).unwrap(), 4, t).unwrap();
            assert!((f - 0.7).abs() < 1e-13);
        }
        let bad = InversionInputs { cdf: f64::NAN, derivatives: vec![0.0; 4] };
        assert!(invert_to_mixing(&bad, 4, 1.0).is_err());
    }

    #[test]
    fn measure_coalesces_close_atoms() {
        let m = MixingMeasure::new(vec![1.0, 3.0, 1.0 + 1e-12], vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m.weights()[0] - 0.5).abs() < 1e-15);
        assert!((m.mass() - 1.0).abs() < 1e-15);
        assert!(MixingMeasure::new(vec![1.0], vec![0.0]).is_err());
        assert!(MixingMeasure::new(vec![], vec![]).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_matches_kernel_cdf() {
        let g = atom(3, 1.0);
        let s = sample_mixture(&g, 100_000, 42).unwrap();
        let again = sample_mixture(&g, 100_000, 42).unwrap();
        assert_eq!(s, again);
        let n = s.len() as f64;
        let mut ks: f64 = 0.0;
        for (i, &x) in s.values().iter().enumerate() {
            let f = 1.0 - (1.0 - x).powi(3);
            ks = ks.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
        let not_density = KMonotoneMixture::new(2, MixingMeasure::new(vec![1.0], vec![0.5]).unwrap()).unwrap();
        assert!(sample_mixture(&not_density, 10, 1).is_err());
    }

    #[test]
    fn uniform_sampling_for_k1() {
        let s = sample_mixture(&atom(1, 4.0), 5000, 9).unwrap();
        assert!(s.max() < 4.0);
        let mean = s.values().iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 2.0).abs() < 0.1);
    }

    #[test]
    fn gram_matches_quadrature() {
        for k in 1..7u32 {
            let (a, b) = (1.3, 2.9);
            let want = crate::numeric::GaussLegendre::new(40)
                .integrate(0.0, a, |x| kernel(k, a, x) * kernel(k, b, x));
            assert!((kernel_gram(k, a, b) - want).abs() < 1e-13, "k={k}");
            assert_eq!(kernel_gram(k, a, b), kernel_gram(k, b, a));
        }
    }

    #[test]
    fn csv_parsing() {
        let s = Sample::from_csv_str("x\n2.5\n\n1.0\n").unwrap();
        assert_eq!(s.values(), &[1.0, 2.5]);
        match Sample::from_csv_str("1.0\nabc\n") {
            Err(KmError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Sample::from_csv_str("1.0\n-2\n").is_err());
        assert!(Sample::from_csv_str("x\n").is_err());
        let round = Sample::from_csv_str(&s.to_csv_string()).unwrap();
        assert_eq!(round, s);
        assert!((s.ecdf(1.0) - 0.5).abs() < 1e-15 && s.ecdf_left(1.0) == 0.0);
    }
}
