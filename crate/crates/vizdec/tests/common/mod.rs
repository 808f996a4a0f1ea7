#![allow(dead_code)]

use mmgen_core::{seeded, ImageTensor};
use mmgen_vizdec::UNetConfig;
use mmgen_viztok::{Encoder, VizConfig};
use rand::Rng;

/// 8-pixel images, 2×2 bottleneck, four condition slots.
pub fn tiny_net() -> UNetConfig {
    UNetConfig {
        image_size: 8,
        channels: 3,
        base: 4,
        mid: 4,
        cond_channels: 2,
        cond_dim: 4,
        slots: 4,
        time_dim: 4,
        heads: 2,
    }
}

pub fn tiny_encoder(seed: u64) -> Encoder<f32> {
    let cfg = VizConfig {
        image_size: 8,
        channels: 3,
        patch: 2,
        enc_dim: 8,
        grid: 2,
        model_dim: 4,
        blocks: 1,
        heads: 2,
    };
    Encoder::new(cfg, &mut seeded(seed)).unwrap().set_frozen(true)
}

/// A filled rectangle of random colour on black.
pub fn rect_image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = seeded(seed);
    let mut img = ImageTensor::black(size, size, 3);
    let rgb: Vec<f32> = (0..3).map(|_| rng.random_range(0.3..1.0)).collect();
    let (x0, y0) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
    let (w, h) = (rng.random_range(2..=size / 2), rng.random_range(2..=size / 2));
    for y in y0..(y0 + h).min(size) {
        for x in x0..(x0 + w).min(size) {
            img.set_pixel(y, x, &rgb);
        }
    }
    img
}

pub fn noise_image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = seeded(seed);
    let n = size * size * 3;
    ImageTensor::from_vec(size, size, 3, (0..n).map(|_| rng.random::<f32>()).collect())
}
