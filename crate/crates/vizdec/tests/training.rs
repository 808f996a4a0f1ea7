mod common;

use common::*;
use mmgen_core::{seeded, ImageTensor, ParamSet};
use mmgen_vizdec::*;

fn bits(set: &impl ParamSet<f32>) -> Vec<(String, Vec<u32>)> {
    set.tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn trained(steps: u64, data: &[DecoderExample]) -> (DecoderTrainer, Vec<DecoderStep>) {
    let dec = Decoder::<f32>::new(tiny_net(), &mut seeded(4)).unwrap();
    let cfg = DecoderTrainConfig { steps, batch_size: 8, peak_lr: 3e-3, ..DecoderTrainConfig::default() };
    let mut trainer = DecoderTrainer::new(dec, cfg).unwrap();
    let mut log = Vec::new();
    trainer.run(data, |m| log.push(*m)).unwrap();
    (trainer, log)
}

#[test]
fn similarity_is_a_symmetric_cosine() {
    let enc = tiny_encoder(1);
    let (a, b) = (rect_image(8, 1), rect_image(8, 2));
    assert!((similarity(&a, &a, &enc).unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(similarity(&a, &b, &enc).unwrap(), similarity(&b, &a, &enc).unwrap());
    assert!(similarity(&a, &b, &enc).unwrap() <= 1.0 + 1e-12);
    let small = ImageTensor::black(4, 4, 3);
    assert!(matches!(similarity(&a, &small, &enc), Err(DecError::Shape(_))));
}

#[test]
fn training_lowers_the_denoising_loss_and_leaves_the_encoder_alone() {
    let enc = tiny_encoder(2);
    let before = bits(&enc);
    let data: Vec<DecoderExample> =
        (0..16).map(|s| DecoderExample::new(&rect_image(8, s), &enc).unwrap()).collect();
    let (_, log) = trained(300, &data);
    let mean = |w: &[DecoderStep]| w.iter().map(|m| m.loss).sum::<f64>() / w.len() as f64;
    let (head, tail) = (mean(&log[..30]), mean(&log[log.len() - 30..]));
    assert!(tail < 0.7 * head, "loss {head} -> {tail}");
    assert!(log.iter().all(|m| m.loss.is_finite() && m.grad_norm.is_finite()));
    assert_eq!(bits(&enc), before);
}

#[test]
fn training_and_reconstruction_are_reproducible() {
    let enc = tiny_encoder(3);
    let data: Vec<DecoderExample> =
        (0..8).map(|s| DecoderExample::new(&rect_image(8, s), &enc).unwrap()).collect();
    let ((a, la), (b, lb)) = (trained(20, &data), trained(20, &data));
    assert_eq!(la, lb);
    assert_eq!(bits(&a.decoder), bits(&b.decoder));
    let schedule = DiffusionSchedule::standard();
    let sampler = SamplerConfig { steps: 10, seed: 7, ..SamplerConfig::default() };
    let img = rect_image(8, 9);
    let r1 = a.decoder.reconstruct(&img, &enc, &schedule, &sampler).unwrap();
    let r2 = b.decoder.reconstruct(&img, &enc, &schedule, &sampler).unwrap();
    assert_eq!(r1, r2);
    assert!(r1.same_shape(&img));
}
