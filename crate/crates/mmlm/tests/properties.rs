mod common;

use common::*;
use mmgen_core::{ParamSet, Tensor};
use mmgen_mmlm::*;
use mmgen_mmtok::{Element, SequenceSample, Template, TokenId};
use proptest::prelude::*;

fn loss(model: &Model<f64>, s: &SequenceSample, tg: &[f64], cfg: LossConfig) -> LossValue {
    let f = model.features(&s.images).unwrap();
    model
        .batch_loss(&[Example { sample: s, features: &f, targets: tg, pad: 0 }], cfg, None)
        .unwrap()
}

fn outputs(model: &Model<f64>, s: &SequenceSample) -> Outputs<f64> {
    let f = model.features(&s.images).unwrap();
    let vis = model.visual_inputs(&f);
    model
        .lm
        .forward(&s.elements, VisualInputs { data: &vis, slots: model.slots() })
        .unwrap()
        .0
}

#[test]
fn single_token_gives_one_row_of_logits() {
    let model = tiny_model::<f64>(1);
    let out = model.lm.forward(&[Element::Token(TokenId(3))], VisualInputs::none()).unwrap().0;
    assert_eq!(out.logits.shape(), &[1, VOCAB]);
    assert_eq!(out.visual.shape(), &[1, DIM]);
}

#[test]
fn zero_parameters_give_a_uniform_softmax() {
    let mut model = tiny_model::<f64>(2);
    for (_, t) in model.tensors_mut() {
        t.fill(0.0);
    }
    let s = mixed_sample();
    let out = outputs(&model, &s);
    assert!(out.logits.data.iter().all(|&v| v == 0.0));
    let mut text_only = s.clone();
    text_only.visual_mask.iter_mut().for_each(|m| *m = false);
    let l = loss(&model, &text_only, &[], LossConfig::default());
    assert!((l.ce - (VOCAB as f64).ln()).abs() < 1e-12);
}

#[test]
fn too_long_and_out_of_vocabulary_inputs_are_rejected() {
    let model = tiny_model::<f64>(3);
    let long = vec![Element::Token(TokenId(1)); 33];
    assert!(matches!(model.lm.forward(&long, VisualInputs::none()), Err(LmError::TooLong { .. })));
    let oov = [Element::Token(TokenId(16))];
    assert!(matches!(model.lm.forward(&oov, VisualInputs::none()), Err(LmError::TokenRange { .. })));
}

#[test]
fn text_only_sample_loss_is_pure_cross_entropy() {
    let model = tiny_model::<f64>(4);
    let mut s = mixed_sample();
    s.visual_mask.iter_mut().for_each(|m| *m = false);
    let l = loss(&model, &s, &[], LossConfig { lambda: 7.0, ..Default::default() });
    assert_eq!(l.reg, 0.0);
    assert_eq!(l.total, l.ce);
}

#[test]
fn exact_predictions_give_zero_regression() {
    let model = tiny_model::<f64>(5);
    let s = mixed_sample();
    let out = outputs(&model, &s);
    // the predictions for slots 0..4 come from positions 3..7
    let tg: Vec<f64> = (3..7).flat_map(|r| out.visual.row(r).to_vec()).collect();
    assert_eq!(loss(&model, &s, &tg, LossConfig::default()).reg, 0.0);
}

#[test]
fn cosine_regression_of_a_scaled_prediction_is_zero() {
    let model = tiny_model::<f64>(5);
    let s = mixed_sample();
    let out = outputs(&model, &s);
    let tg: Vec<f64> = (3..7).flat_map(|r| out.visual.row(r).iter().map(|v| 2.5 * v).collect::<Vec<_>>()).collect();
    let l = loss(&model, &s, &tg, LossConfig { lambda: 1.0, kind: RegressionKind::Cosine });
    assert!(l.reg.abs() < 1e-12);
}

fn causal_outputs_unchanged(model: &Model<f64>, s: &SequenceSample, j: usize, replacement: u32) {
    let base = outputs(model, s);
    let mut t = s.clone();
    t.elements[j] = Element::Token(TokenId(replacement));
    let changed = outputs(model, &t);
    for i in 0..j {
        assert_eq!(base.logits.row(i), changed.logits.row(i), "row {i} changed by position {j}");
        assert_eq!(base.visual.row(i), changed.visual.row(i));
    }
    assert_ne!(base.logits.row(j), changed.logits.row(j));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn earlier_outputs_ignore_later_elements(j in 1usize..12, r in 8u32..16, seed in 0u64..1000) {
        let model = tiny_model::<f64>(seed);
        causal_outputs_unchanged(&model, &mixed_sample(), j, r);
    }

    #[test]
    fn loss_is_additive_in_lambda(lambda in 0.0f64..10.0, seed in 0u64..1000) {
        let model = tiny_model::<f64>(seed);
        let s = mixed_sample();
        let tg = targets(seed ^ 9, 4);
        let at = |l| loss(&model, &s, &tg, LossConfig { lambda: l, ..Default::default() }).total;
        let (ce, reg) = (at(0.0), at(1.0) - at(0.0));
        prop_assert!((at(lambda) - (ce + lambda * reg)).abs() < 1e-12 * (1.0 + at(lambda).abs()));
    }

    #[test]
    fn unsupervised_tokens_do_not_move_the_loss(seed in 0u64..1000, r in 0u32..16) {
        let model = tiny_model::<f64>(seed);
        let s = mixed_sample();
        let tg = targets(seed ^ 3, 4);
        let out = outputs(&model, &s);
        let t = VisualInputs { data: &tg, slots: model.slots() };
        let base = mmgen_mmlm::loss(&out, &s, t, LossConfig::default());
        for i in (0..s.len()).filter(|&i| !s.text_mask[i] && !s.elements[i].is_visual()) {
            let mut flipped = s.clone();
            flipped.elements[i] = Element::Token(TokenId(r));
            prop_assert_eq!(mmgen_mmlm::loss(&out, &flipped, t, LossConfig::default()), base);
        }
    }

    #[test]
    fn padding_changes_neither_loss_nor_gradients(pad in 1usize..20, seed in 0u64..1000) {
        let model = tiny_model::<f64>(seed);
        let s = mixed_sample();
        let tg = targets(seed ^ 5, 4);
        let f = model.features(&s.images).unwrap();
        let run = |pad| {
            let mut g = model.zeros_like();
            let l = model
                .batch_loss(&[Example { sample: &s, features: &f, targets: &tg, pad }], LossConfig::default(), Some(&mut g))
                .unwrap();
            (l, g)
        };
        let (l0, g0) = run(0);
        let (l1, g1) = run(pad);
        prop_assert_eq!(l0, l1);
        for ((n, a), (_, b)) in g0.tensors().iter().zip(g1.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() <= 1e-13 * (1.0 + x.abs()), "{}", n);
            }
        }
    }
}

#[test]
fn stage_checks_reject_mismatched_templates() {
    let mut s = mixed_sample();
    assert!(matches!(check_stage(Stage::One, &[s.clone()]), Err(LmError::StageMismatch { .. })));
    s.visual_mask.iter_mut().for_each(|m| *m = false);
    check_stage(Stage::One, &[s.clone()]).unwrap();
    assert!(check_stage(Stage::Chat, &[s.clone()]).is_err());
    s.meta.template = Template::Chat;
    check_stage(Stage::Chat, &[s]).unwrap();
    assert!(matches!(check_stage(Stage::Two, &[]), Err(LmError::EmptyCorpus)));
}

#[test]
fn visual_targets_must_cover_the_mask() {
    let model = tiny_model::<f64>(13);
    let s = mixed_sample();
    let f = model.features(&s.images).unwrap();
    let r = model.batch_loss(&[Example { sample: &s, features: &f, targets: &[], pad: 0 }], LossConfig::default(), None);
    assert!(matches!(r, Err(LmError::MissingVisual { .. })));
}

#[test]
fn image_generation_takes_one_step_per_slot() {
    let model = tiny_model::<f64>(14);
    let mut s = mixed_sample();
    s.elements.truncate(4);
    s.text_mask.truncate(4);
    s.visual_mask.truncate(4);
    s.images.clear();
    let emb: Tensor<f64> = model.generate_image_embeddings(&s, TokenId(1)).unwrap();
    assert_eq!(emb.shape(), &[4, DIM]);
    assert!(matches!(model.generate_image_embeddings(&s, TokenId(2)), Err(LmError::OpenImageExpected)));
}

#[test]
fn beam_of_one_is_greedy_and_decoding_is_deterministic() {
    for seed in 0..10 {
        let model = tiny_model::<f64>(seed);
        let mut s = mixed_sample();
        s.elements.truncate(10);
        s.text_mask.truncate(10);
        s.visual_mask.truncate(10);
        let greedy = model.generate_text(&s, 8, Decoding::Greedy, TokenId(7)).unwrap();
        assert_eq!(greedy, model.generate_text(&s, 8, Decoding::Beam(1), TokenId(7)).unwrap());
        assert_eq!(greedy, model.generate_text(&s, 8, Decoding::Greedy, TokenId(7)).unwrap());
        let beam = model.generate_text(&s, 8, Decoding::Beam(5), TokenId(7)).unwrap();
        assert_eq!(beam, model.generate_text(&s, 8, Decoding::Beam(5), TokenId(7)).unwrap());
        assert!(!beam.is_empty() && beam.len() <= 8);
    }
}
