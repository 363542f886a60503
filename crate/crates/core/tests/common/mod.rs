#![allow(dead_code)]

pub mod full_loss;
pub mod grads;
pub mod ssim_oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regfactor::image::{batch_tensor, Image};
use regfactor::model::ModelConfig;
use regfactor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values with |v| in [0.05, 1]: keeps relu-style kinks out of reach of a
/// 1e-6 finite-difference probe.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Stacks images into an `[n, 1, h, w]` batch.
pub fn image_tensor(images: &[Image]) -> Tensor {
    batch_tensor(&images.iter().collect::<Vec<_>>()).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::new(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// Smooth random image: a few random sinusoids, values in [0, 1].
pub fn smooth_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.0..6.28),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = waves
                .iter()
                .map(|(a, b, p)| (a * x as f64 + b * y as f64 + p).sin())
                .sum();
            data.push(0.5 + 0.12 * v);
        }
    }
    Image::new(w, h, data).unwrap()
}

/// A small but complete architecture for fast tests.
pub fn tiny_config(size: usize) -> ModelConfig {
    ModelConfig {
        image_size: size,
        encoder_channels: vec![4, 8],
        scene_channels: 8,
        appearance_dim: 4,
        appearance_hidden: 8,
        gpe_dim: 8,
        gpe_hidden: 8,
        heads: 2,
        max_frames: 8,
        decoder_channels: vec![4],
        ..ModelConfig::default()
    }
}
