use mmgen_core::seeded;
use mmgen_vizdec::*;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn pair(n: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    let v = prop::collection::vec(-1e3f32..1e3, n);
    (v.clone(), v)
}

proptest! {
    #[test]
    fn guidance_endpoints_are_exact((cond, uncond) in (1usize..64).prop_flat_map(pair)) {
        prop_assert_eq!(cfg_combine(&cond, &uncond, 1.0).unwrap(), cond.clone());
        prop_assert_eq!(cfg_combine(&cond, &uncond, 0.0).unwrap(), uncond);
    }

    #[test]
    fn equal_predictions_ignore_the_scale(cond in prop::collection::vec(-1e3f32..1e3, 1..64), s in -10.0f32..10.0) {
        prop_assert_eq!(cfg_combine(&cond, &cond, s).unwrap(), cond);
    }

    #[test]
    fn add_noise_interpolates_with_the_cumulative_alpha(
        t in 1usize..=1000,
        (x0, eps) in (1usize..32).prop_flat_map(pair),
    ) {
        let s = DiffusionSchedule::standard();
        let ab = s.alpha_bar(t).unwrap();
        let xt = s.add_noise(&x0, t, &eps).unwrap();
        for ((x, e), y) in x0.iter().zip(&eps).zip(&xt) {
            let want = ab.sqrt() * *x as f64 + (1.0 - ab).sqrt() * *e as f64;
            prop_assert!((*y as f64 - want).abs() <= 1e-4 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn noised_variance_follows_one_minus_alpha_bar() {
    let s = DiffusionSchedule::standard();
    let mut rng = seeded(5);
    let n = 20_000;
    for t in [1, 250, 500, 1000] {
        let ab = s.alpha_bar(t).unwrap();
        let x0 = vec![0.7f32; n];
        let eps: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xt = s.add_noise(&x0, t, &eps).unwrap();
        let mean = xt.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = xt.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // standard errors are about 0.007 and 0.01 at n = 20000
        assert!((mean - 0.7 * ab.sqrt()).abs() < 0.03, "t={t} mean {mean}");
        assert!((var - (1.0 - ab)).abs() < 0.04 * (1.0 - ab).max(0.05), "t={t} var {var}");
    }
}
