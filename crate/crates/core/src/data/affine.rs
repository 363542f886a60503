use rand::Rng;

use crate::image::Image;

/// Misalignment applied to the moving image. Angles in degrees,
/// translations in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
    pub sx: f64,
    pub sy: f64,
    pub shear: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        theta: 0.0,
        tx: 0.0,
        ty: 0.0,
        sx: 1.0,
        sy: 1.0,
        shear: 0.0,
    };

    /// Linear part `S · Sh · R`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.to_radians().sin_cos();
        let k = self.shear.to_radians().tan();
        // Sh · R, then scale rows.
        let shr = [[c + k * s, -s + k * c], [s, c]];
        [
            [self.sx * shr[0][0], self.sx * shr[0][1]],
            [self.sy * shr[1][0], self.sy * shr[1][1]],
        ]
    }

    /// Component-wise linear interpolation, `w` in `[0, 1]`.
    pub fn lerp(&self, other: &AffineParams, w: f64) -> AffineParams {
        let l = |a: f64, b: f64| a + (b - a) * w;
        AffineParams {
            theta: l(self.theta, other.theta),
            tx: l(self.tx, other.tx),
            ty: l(self.ty, other.ty),
            sx: l(self.sx, other.sx),
            sy: l(self.sy, other.sy),
            shear: l(self.shear, other.shear),
        }
    }

    /// Whether every field lies inside the sampling ranges for `size`.
    pub fn in_ranges(&self, size: usize) -> bool {
        let r = AffineRanges::for_size(size);
        self.theta.abs() <= r.theta
            && self.tx.abs() <= r.translation
            && self.ty.abs() <= r.translation
            && (r.scale.0..=r.scale.1).contains(&self.sx)
            && (r.scale.0..=r.scale.1).contains(&self.sy)
            && self.shear.abs() <= r.shear
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineRanges {
    pub theta: f64,
    pub translation: f64,
    pub scale: (f64, f64),
    pub shear: f64,
}

impl AffineRanges {
    /// Translation scales with the image side relative to 256.
    pub fn for_size(size: usize) -> Self {
        AffineRanges {
            theta: 15.0,
            translation: 20.0 * size as f64 / 256.0,
            scale: (0.85, 1.15),
            shear: 10.0,
        }
    }
}

/// Global intensity remapping `clamp(gain · x^gamma + bias, 0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppearanceParams {
    pub gamma: f64,
    pub gain: f64,
    pub bias: f64,
}

impl AppearanceParams {
    pub const IDENTITY: AppearanceParams = AppearanceParams {
        gamma: 1.0,
        gain: 1.0,
        bias: 0.0,
    };
    pub const GAMMA: (f64, f64) = (0.7, 1.4);
    pub const GAIN: (f64, f64) = (0.7, 1.3);
    pub const BIAS: (f64, f64) = (-0.15, 0.15);
}

fn span(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u * (hi - lo)
}

/// Maps unit draws onto the affine ranges; `u ≡ 0.5` gives the midpoint
/// (identity) transform.
pub fn affine_from_unit(mut u: impl FnMut() -> f64, size: usize) -> AffineParams {
    let r = AffineRanges::for_size(size);
    AffineParams {
        theta: span(u(), -r.theta, r.theta),
        tx: span(u(), -r.translation, r.translation),
        ty: span(u(), -r.translation, r.translation),
        sx: span(u(), r.scale.0, r.scale.1),
        sy: span(u(), r.scale.0, r.scale.1),
        shear: span(u(), -r.shear, r.shear),
    }
}

pub fn appearance_from_unit(mut u: impl FnMut() -> f64) -> AppearanceParams {
    let (g, k, b) = (
        AppearanceParams::GAMMA,
        AppearanceParams::GAIN,
        AppearanceParams::BIAS,
    );
    AppearanceParams {
        gamma: span(u(), g.0, g.1),
        gain: span(u(), k.0, k.1),
        bias: span(u(), b.0, b.1),
    }
}

pub fn sample_affine<R: Rng>(rng: &mut R, size: usize) -> AffineParams {
    affine_from_unit(|| rng.gen::<f64>(), size)
}

pub fn sample_appearance<R: Rng>(rng: &mut R) -> AppearanceParams {
    appearance_from_unit(|| rng.gen::<f64>())
}

/// Bilinear read with zeros outside the image.
fn sample_zero(image: &Image, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |xi: i64, yi: i64| {
        if xi < 0 || yi < 0 || xi >= image.width as i64 || yi >= image.height as i64 {
            0.0
        } else {
            image.data[yi as usize * image.width + xi as usize]
        }
    };
    let top = at(x0, y0) + fx * (at(x0 + 1, y0) - at(x0, y0));
    let bot = at(x0, y0 + 1) + fx * (at(x0 + 1, y0 + 1) - at(x0, y0 + 1));
    top + fy * (bot - top)
}

/// Warps with the forward map `p' = M (p − c) + c + t` about the pixel-grid
/// center `c`, by inverse mapping each output pixel.
pub fn warp_matrix(image: &Image, m: [[f64; 2]; 2], t: [f64; 2]) -> Image {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let (cx, cy) = (
        (image.width as f64 - 1.0) / 2.0,
        (image.height as f64 - 1.0) / 2.0,
    );
    let mut out = Image::zeros(image.width, image.height);
    for y in 0..image.height {
        let dy = y as f64 - cy - t[1];
        for x in 0..image.width {
            let dx = x as f64 - cx - t[0];
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            out.data[y * image.width + x] = sample_zero(image, sx, sy);
        }
    }
    out
}

pub fn warp_affine(image: &Image, p: &AffineParams) -> Image {
    warp_matrix(image, p.matrix(), [p.tx, p.ty])
}

pub fn appearance_shift(image: &Image, q: &AppearanceParams) -> Image {
    image.map(|v| (q.gain * v.powf(q.gamma) + q.bias).clamp(0.0, 1.0))
}
