use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// One isotropic Gaussian bump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Everything needed to render one scene deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub blobs: Vec<Blob>,
    /// Peak magnitude of the value-noise field (uniform in `±amplitude`).
    pub noise_amplitude: f64,
    /// Coarse noise lattice is `ceil(H/cell) × ceil(W/cell)`.
    pub noise_cell: usize,
    pub noise_seed: u64,
}

pub const SIGMA_RANGE: (f64, f64) = (4.0, 24.0);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.3, 1.0);
pub const BLOB_COUNT: (usize, usize) = (6, 14);
pub const NOISE_AMPLITUDE: f64 = 0.15;
pub const NOISE_CELL: usize = 8;

impl SceneSpec {
    pub fn sample<R: Rng>(rng: &mut R, width: usize, height: usize) -> Self {
        let count = rng.gen_range(BLOB_COUNT.0..=BLOB_COUNT.1);
        let blobs = (0..count)
            .map(|_| Blob {
                cx: rng.gen_range(0.0..width as f64),
                cy: rng.gen_range(0.0..height as f64),
                sigma: rng.gen_range(SIGMA_RANGE.0..=SIGMA_RANGE.1),
                amplitude: rng.gen_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
            })
            .collect();
        SceneSpec {
            width,
            height,
            blobs,
            noise_amplitude: NOISE_AMPLITUDE,
            noise_cell: NOISE_CELL,
            noise_seed: rng.gen(),
        }
    }
}

/// White noise on a coarse lattice, upsampled with half-pixel bilinear
/// interpolation (edge-clamped).
fn value_noise(spec: &SceneSpec) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let mut out = vec![0.0; w * h];
    if spec.noise_amplitude == 0.0 {
        return out;
    }
    let cell = spec.noise_cell.max(1);
    let (cw, ch) = (w.div_ceil(cell), h.div_ceil(cell));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let a = spec.noise_amplitude;
    let lattice: Vec<f64> = (0..cw * ch).map(|_| rng.gen_range(-a..=a)).collect();
    let taps = |o: usize, len: usize| {
        let src = ((o as f64 + 0.5) / cell as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    for y in 0..h {
        let (y0, y1, fy) = taps(y, ch);
        for x in 0..w {
            let (x0, x1, fx) = taps(x, cw);
            let top = lattice[y0 * cw + x0] * (1.0 - fx) + lattice[y0 * cw + x1] * fx;
            let bot = lattice[y1 * cw + x0] * (1.0 - fx) + lattice[y1 * cw + x1] * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Sum of blobs plus value noise, min-max normalized to `[0, 1]`. A flat
/// field renders as all zeros.
pub fn render_scene(spec: &SceneSpec) -> Image {
    let (w, h) = (spec.width, spec.height);
    let mut data = value_noise(spec);
    for b in &spec.blobs {
        let inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for y in 0..h {
            let dy = y as f64 - b.cy;
            for x in 0..w {
                let dx = x as f64 - b.cx;
                data[y * w + x] += b.amplitude * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        data.fill(0.0);
    } else {
        let r = 1.0 / (hi - lo);
        data.iter_mut().for_each(|v| *v = (*v - lo) * r);
    }
    Image {
        width: w,
        height: h,
        data,
    }
}
