mod common;

use common::*;
use mmgen_core::gradcheck::check;
use mmgen_core::{seeded, ParamSet, Tensor};
use mmgen_vizdec::*;
use rand::Rng;

fn f64_decoder(seed: u64) -> Decoder<f64> {
    let mut rng = seeded(seed);
    let mut dec = Decoder::<f64>::new(tiny_net(), &mut rng).unwrap();
    // the output conv starts at zero, which would hide every upstream gradient
    let w = &mut dec.net.conv_out.w;
    *w = Tensor::randn(w.shape(), 0.3, &mut rng);
    dec
}

fn random_vec(n: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| std * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

#[test]
fn denoiser_gradients_match_finite_differences() {
    let cfg = tiny_net();
    let dec = f64_decoder(3);
    let x = random_vec(cfg.pixels(), 1.0, 4);
    let noise = random_vec(cfg.pixels(), 1.0, 5);
    let cond = random_vec(cfg.slots * cfg.cond_dim, 1.0, 6);
    for dropped in [false, true] {
        let c = (!dropped).then_some(cond.as_slice());
        let mut grad = dec.zeros_like();
        dec.denoising_loss(&x, 137, c, &noise, 1.0, Some(&mut grad));
        let report = check(
            &dec,
            &grad,
            |p| p.denoising_loss(&x, 137, c, &noise, 1.0, None),
            1e-6,
            // differencing noise is ~1e-10 absolute at this step size
            1e-5,
            |_| true,
        );
        let worst = report.worst().unwrap();
        assert!(
            report.max_rel_error() < 1e-4,
            "dropped={dropped}: {} off by {:e}",
            worst.name,
            worst.max_rel_error
        );
        let null_grad = grad.null_cond.data.iter().any(|&g| g != 0.0);
        assert_eq!(null_grad, dropped, "null condition trains only when used");
    }
}

#[test]
fn output_shape_matches_input_and_starts_at_zero() {
    let cfg = tiny_net();
    let dec = Decoder::<f32>::new(cfg, &mut seeded(1)).unwrap();
    let x = vec![0.5f32; cfg.pixels()];
    let eps = dec.predict(&x, 10, None);
    assert_eq!(eps.len(), cfg.pixels());
    assert!(eps.iter().all(|&e| e == 0.0));
}

#[test]
fn config_rejects_mismatched_slot_count() {
    let cfg = UNetConfig {
        slots: 5,
        ..tiny_net()
    };
    assert!(matches!(
        Decoder::<f32>::new(cfg, &mut seeded(0)),
        Err(DecError::Config(_))
    ));
}

#[test]
fn parameter_names_are_unique_and_scoped() {
    let dec = Decoder::<f32>::new(tiny_net(), &mut seeded(0)).unwrap();
    let names: Vec<String> = dec.tensors().into_iter().map(|(n, _)| n).collect();
    let unique: std::collections::HashSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    assert!(names.iter().any(|n| n == "null_cond"));
    assert!(names.iter().any(|n| n.starts_with("unet/cond_proj")));
}

#[test]
fn cfg_combine_identities_are_exact() {
    let mut rng = seeded(9);
    let cond: Vec<f32> = (0..97).map(|_| rng.random_range(-3.0..3.0)).collect();
    let uncond: Vec<f32> = (0..97).map(|_| rng.random_range(-3.0..3.0)).collect();
    assert_eq!(cfg_combine(&cond, &uncond, 1.0).unwrap(), cond);
    assert_eq!(cfg_combine(&cond, &uncond, 0.0).unwrap(), uncond);
    for s in [0.0, 0.5, 3.0, 7.5] {
        assert_eq!(cfg_combine(&cond, &cond, s).unwrap(), cond);
    }
    assert!(matches!(cfg_combine(&cond, &uncond[1..], 2.0), Err(DecError::Shape(_))));
}

#[test]
fn condition_drop_rate_matches_probability() {
    let cfg = tiny_net();
    let schedule = DiffusionSchedule::standard();
    let mut rng = seeded(2024);
    let draws = 10_000;
    let dropped = (0..draws)
        .filter(|_| NoiseDraw::sample(&mut rng, &schedule, &cfg, CONDITION_DROP, 0.1).drop_condition)
        .count();
    let rate = dropped as f64 / draws as f64;
    assert!((rate - 0.10).abs() <= 0.01, "drop rate {rate}");
}

#[test]
fn noise_offset_is_constant_per_channel() {
    let cfg = tiny_net();
    let schedule = DiffusionSchedule::standard();
    let hw = cfg.image_size * cfg.image_size;
    // with unit-free offsets the per-channel mean tracks the shared constant
    let mut spread = 0.0;
    for seed in 0..200 {
        let draw = NoiseDraw::sample(&mut seeded(seed), &schedule, &cfg, 0.1, 10.0);
        let means: Vec<f32> = draw.noise.chunks(hw).map(|c| c.iter().sum::<f32>() / hw as f32).collect();
        spread += means.iter().map(|m| m.abs() as f64).sum::<f64>() / 3.0;
    }
    assert!(spread / 200.0 > 4.0, "offsets should dominate channel means");
    let plain = NoiseDraw::sample(&mut seeded(1), &schedule, &cfg, 0.1, 0.0);
    let mean = plain.noise.iter().sum::<f32>() / plain.noise.len() as f32;
    assert!(mean.abs() < 0.5);
}

#[test]
fn sampling_is_seeded_shaped_and_clamped() {
    let cfg = tiny_net();
    let mut dec = Decoder::<f32>::new(cfg, &mut seeded(1)).unwrap();
    dec.net.conv_out.w = Tensor::randn(dec.net.conv_out.w.shape(), 0.5, &mut seeded(2));
    let schedule = DiffusionSchedule::standard();
    let cond = vec![0.3f32; cfg.slots * cfg.cond_dim];
    for kind in [SamplerKind::Ancestral, SamplerKind::Deterministic] {
        let sampler = SamplerConfig {
            steps: 10,
            kind,
            seed: 7,
            ..SamplerConfig::default()
        };
        let a = dec.sample(&cond, &schedule, &sampler).unwrap();
        let b = dec.sample(&cond, &schedule, &sampler).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.height, a.width, a.channels), (8, 8, 3));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let other = dec
            .sample(&cond, &schedule, &SamplerConfig { seed: 8, ..sampler })
            .unwrap();
        assert_ne!(a, other);
    }
}

#[test]
fn unguided_sampling_ignores_the_condition() {
    let cfg = tiny_net();
    let mut dec = Decoder::<f32>::new(cfg, &mut seeded(1)).unwrap();
    dec.net.conv_out.w = Tensor::randn(dec.net.conv_out.w.shape(), 0.5, &mut seeded(2));
    let schedule = DiffusionSchedule::standard();
    let sampler = SamplerConfig {
        steps: 8,
        guidance: 0.0,
        ..SamplerConfig::default()
    };
    let n = cfg.slots * cfg.cond_dim;
    let a = dec.sample(&vec![1.0; n], &schedule, &sampler).unwrap();
    let b = dec.sample(&vec![-2.0; n], &schedule, &sampler).unwrap();
    assert_eq!(a, b);
    let guided = SamplerConfig { guidance: 3.0, ..sampler };
    let c = dec.sample(&vec![1.0; n], &schedule, &guided).unwrap();
    let d = dec.sample(&vec![-2.0; n], &schedule, &guided).unwrap();
    assert_ne!(c, d);
}

#[test]
fn sampling_rejects_wrong_condition_size() {
    let dec = Decoder::<f32>::new(tiny_net(), &mut seeded(1)).unwrap();
    let err = dec.sample(&[0.0; 3], &DiffusionSchedule::standard(), &SamplerConfig::default());
    assert!(matches!(err, Err(DecError::Shape(_))));
}
