mod common;

use common::{gamma_cdf_series, kernel_ref, mixture_ref, simpson};
use kmono::{
    density_bound, eval_kernel, invert_to_mixing, sample_mixture, AnalyticDensity, Exponential, InversionInputs,
    KMonotoneMixture, MixingMeasure,
};
use proptest::prelude::*;

fn mixture(k: u32, atoms: &[f64], weights: &[f64]) -> KMonotoneMixture {
    KMonotoneMixture::new(k, MixingMeasure::new(atoms.to_vec(), weights.to_vec()).unwrap()).unwrap()
}

/// Random mixing measure with mass 1 and well separated atoms.
fn measure() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.2f64..8.0, 0.05f64..1.0), 1..6).prop_map(|mut pairs| {
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
        pairs.dedup_by(|p, q| (p.0 - q.0).abs() < 1e-3 * q.0);
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        pairs.into_iter().map(|(a, w)| (a, w / total)).unzip()
    })
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

#[test]
fn derivative_example_matches_finite_difference() {
    let g = mixture(3, &[3.0], &[1.0]);
    let h = 1e-5;
    let fd = (g.eval(1.0 + h) - 2.0 * g.eval(1.0) + g.eval(1.0 - h)) / (h * h);
    let exact = g.derivative(2, 1.0).unwrap().value;
    assert!((exact - fd).abs() <= 1e-6 * fd.abs(), "{exact} vs {fd}");
    assert!((exact - 2.0 / 9.0).abs() < 1e-15);
}

#[test]
fn exponential_inversion_matches_gamma_series() {
    let e = Exponential::default();
    for k in 1..=8u32 {
        for t in [0.1, 0.5, 1.0, 2.5, 7.0, 15.0] {
            let inputs = InversionInputs {
                cdf: e.cdf(t),
                derivatives: (0..k).map(|j| e.derivative(j, t)).collect(),
            };
            let f = invert_to_mixing(&inputs, k, t).unwrap();
            let oracle = gamma_cdf_series(k + 1, t);
            assert!((f - oracle).abs() < 1e-12, "k={k} t={t}: {f} vs {oracle}");
        }
    }
    let three = InversionInputs { cdf: e.cdf(1.0), derivatives: (0..3).map(|j| e.derivative(j, 1.0)).collect() };
    assert!((invert_to_mixing(&three, 3, 1.0).unwrap() - 0.018988).abs() < 1e-6);
}

#[test]
fn sampled_cdf_is_close_to_kernel_cdf() {
    let g = mixture(3, &[1.0], &[1.0]);
    let s = sample_mixture(&g, 100_000, 99).unwrap();
    let n = s.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, &x) in s.values().iter().enumerate() {
        let truth = 1.0 - (1.0 - x).powi(3);
        worst = worst.max((truth - (i + 1) as f64 / n).abs()).max((truth - i as f64 / n).abs());
    }
    assert!(worst < 0.01, "{worst}");
}

#[test]
fn envelope_examples() {
    for x in [0.3, 1.0, 7.0] {
        assert!((density_bound(2, x).unwrap() - 0.5 / x).abs() < 1e-15);
    }
    assert!((density_bound(3, 2.0).unwrap() - 2.0 / 9.0).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for k in [2, 5, 20, 200, 2000] {
        let b = density_bound(k, 1.0).unwrap();
        assert!(b > (-1.0f64).exp() && b < prev);
        prev = b;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernel_integrates_to_one(k in 1u32..=10, a in 0.05f64..50.0) {
        let total = simpson(&|x| eval_kernel(k, a, x).unwrap(), 0.0, a, 1e-14);
        prop_assert!((total - 1.0).abs() <= 1e-12, "k={} a={} total={}", k, a, total);
    }

    #[test]
    fn kernel_matches_definition(k in 1u32..=10, a in 0.05f64..50.0, u in 0.0f64..1.5) {
        let x = a * u;
        let v = eval_kernel(k, a, x).unwrap();
        let r = kernel_ref(k, a, x);
        prop_assert!((v - r).abs() <= 1e-13 * r.abs().max(1.0 / a));
        if x > a || (k >= 2 && x == a) {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn mixture_matches_definition(k in 1u32..=8, (atoms, weights) in measure(), x in 0.0f64..9.0) {
        let g = mixture(k, &atoms, &weights);
        let r = mixture_ref(k, &atoms, &weights, x);
        prop_assert!((g.eval(x) - r).abs() <= 1e-13 * r.max(1.0));
    }

    #[test]
    fn monotonicity_ladder(k in 2u32..=8, (atoms, weights) in measure()) {
        let g = mixture(k, &atoms, &weights);
        let top = *atoms.last().unwrap();
        let xs: Vec<f64> = (1..200).map(|i| top * 1.1 * i as f64 / 200.0).collect();
        for j in 0..=(k - 2) {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let vals: Vec<f64> = xs.iter().map(|&x| sign * g.derivative(j, x).unwrap().value).collect();
            for (i, v) in vals.iter().enumerate() {
                prop_assert!(*v >= -1e-12, "j={} x={} value={}", j, xs[i], v);
                if i > 0 {
                    prop_assert!(*v <= vals[i - 1] * (1.0 + 1e-12) + 1e-12, "j={} not nonincreasing at {}", j, xs[i]);
                }
            }
        }
    }

    #[test]
    fn inversion_round_trip(k in 1u32..=6, (atoms, weights) in measure(), u in 0.02f64..1.3) {
        let g = mixture(k, &atoms, &weights);
        let top = *atoms.last().unwrap();
        let t = top * u;
        // Stay away from atoms, where F jumps.
        prop_assume!(atoms.iter().all(|&a| (a - t).abs() > 1e-3 * a));
        let f = invert_to_mixing(&g.inversion_inputs(t).unwrap(), k, t).unwrap();
        let truth: f64 = atoms.iter().zip(&weights).filter(|(a, _)| **a < t).map(|(_, w)| w).sum();
        prop_assert!((f - truth).abs() <= 1e-9 * truth.max(1.0), "k={} t={} F={} truth={}", k, t, f, truth);
    }

    #[test]
    fn envelope_holds_for_densities(k in 2u32..=8, (atoms, weights) in measure()) {
        let g = mixture(k, &atoms, &weights);
        for x in log_grid(1e-3, 10.0, 300) {
            let bound = density_bound(k, x).unwrap();
            prop_assert!(g.eval(x) <= bound * (1.0 + 1e-12), "x={} g={} bound={}", x, g.eval(x), bound);
        }
    }

    #[test]
    fn cdf_differentiates_to_density(k in 1u32..=8, (atoms, weights) in measure(), u in 0.01f64..1.2) {
        let g = mixture(k, &atoms, &weights);
        let x = *atoms.last().unwrap() * u;
        let h = 1e-6 * x;
        prop_assume!(atoms.iter().all(|&a| (a - x).abs() > 10.0 * h));
        let fd = (g.cdf(x + h) - g.cdf(x - h)) / (2.0 * h);
        prop_assert!((fd - g.eval(x)).abs() <= 1e-6 * g.eval(x).max(1.0), "{} vs {}", fd, g.eval(x));
    }

    #[test]
    fn cdf_matches_quadrature(k in 1u32..=6, (atoms, weights) in measure(), u in 0.0f64..1.2) {
        let g = mixture(k, &atoms, &weights);
        let t = *atoms.last().unwrap() * u;
        // Integrate piecewise between atoms so Simpson sees smooth pieces.
        let mut cuts: Vec<f64> = atoms.iter().copied().filter(|&a| a < t).collect();
        cuts.insert(0, 0.0);
        cuts.push(t);
        let q: f64 = cuts.windows(2).map(|w| simpson(&|x| mixture_ref(k, &atoms, &weights, x), w[0], w[1], 1e-13)).sum();
        prop_assert!((g.cdf(t) - q).abs() <= 1e-10);
    }

    #[test]
    fn sampling_is_deterministic((atoms, weights) in measure(), seed in any::<u64>()) {
        let g = mixture(3, &atoms, &weights);
        let a = sample_mixture(&g, 50, seed).unwrap();
        let b = sample_mixture(&g, 50, seed).unwrap();
        prop_assert_eq!(a.values(), b.values());
        let top = *atoms.last().unwrap();
        prop_assert!(a.values().iter().all(|&x| x > 0.0 && x <= top));
    }
}
