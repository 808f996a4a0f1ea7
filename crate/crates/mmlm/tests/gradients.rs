mod common;

use common::*;
use mmgen_core::gradcheck::check;
use mmgen_core::ParamSet;
use mmgen_mmlm::*;

fn loss_of(model: &Model<f64>, s: &mmgen_mmtok::SequenceSample, tg: &[f64], cfg: LossConfig) -> f64 {
    let f = model.features(&s.images).unwrap();
    let ex = Example { sample: s, features: &f, targets: tg, pad: 0 };
    model.batch_loss(&[ex], cfg, None).unwrap().total
}

fn analytic(model: &Model<f64>, s: &mmgen_mmtok::SequenceSample, tg: &[f64], cfg: LossConfig) -> Model<f64> {
    let f = model.features(&s.images).unwrap();
    let ex = Example { sample: s, features: &f, targets: tg, pad: 0 };
    let mut g = model.zeros_like();
    model.batch_loss(&[ex], cfg, Some(&mut g)).unwrap();
    g
}

#[test]
fn combined_loss_gradients_match_finite_differences() {
    let model = tiny_model::<f64>(1);
    let s = mixed_sample();
    let tg = targets(2, 4);
    for kind in [RegressionKind::Mse, RegressionKind::Cosine] {
        let cfg = LossConfig { lambda: 1.0, kind };
        let g = analytic(&model, &s, &tg, cfg);
        let report = check(&model, &g, |m| loss_of(m, &s, &tg, cfg), 1e-4, 1e-6, |_| true);
        assert_eq!(report.arrays.len(), model.tensors().len());
        let worst = report.worst().unwrap();
        assert!(worst.max_rel_error < 1e-4, "{kind:?}: {worst:?}");
    }
}

#[test]
fn frozen_encoder_receives_projection_gradient_only() {
    let mut model = tiny_model::<f64>(3);
    model.encoder.freeze(true);
    let s = mixed_sample();
    let tg = targets(4, 4);
    let cfg = LossConfig::default();
    let g = analytic(&model, &s, &tg, cfg);
    for (name, t) in g.tensors() {
        let zero = t.data.iter().all(|&v| v == 0.0);
        let frozen = name.starts_with("viztok/") && !name.starts_with("viztok/proj");
        assert_eq!(zero, frozen, "{name}");
    }
    let report = check(&model, &g, |m| loss_of(m, &s, &tg, cfg), 1e-4, 1e-6, |n| {
        !n.starts_with("viztok/") || n.starts_with("viztok/proj")
    });
    assert!(report.max_rel_error() < 1e-4);
}

#[test]
fn regression_gradient_scales_linearly_with_lambda() {
    let model = tiny_model::<f64>(5);
    let mut s = mixed_sample();
    s.text_mask.iter_mut().for_each(|m| *m = false);
    let tg = targets(6, 4);
    let g1 = analytic(&model, &s, &tg, LossConfig { lambda: 1.0, ..Default::default() });
    let g3 = analytic(&model, &s, &tg, LossConfig { lambda: 3.0, ..Default::default() });
    for ((_, a), (_, b)) in g1.tensors().iter().zip(g3.tensors()) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((3.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}
