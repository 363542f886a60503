//! Raw numeric kernels behind the differentiable ops.
//!
//! Everything here works on flat row-major slices. Batch items are processed
//! independently and partial weight gradients are reduced in item order, so
//! results do not depend on the worker count.

use std::cell::RefCell;

use rayon::prelude::*;

pub(crate) use super::gemm::gemm;

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Runs `f` with two per-thread scratch buffers of at least `len` values.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64], &mut [f64]) -> R) -> R {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let (a, b) = &mut *s;
        if a.len() < len {
            a.resize(len, 0.0);
            b.resize(len, 0.0);
        }
        f(&mut a[..len], &mut b[..len])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `[lo, hi)` whose input column `ox·stride + kx − pad`
/// falls inside `[0, w)`.
fn valid_range(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let hi = if g.w + g.pad <= kx {
        0
    } else {
        ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.ow)
    };
    (lo.min(hi), hi)
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(g, kx);
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let first = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (o, s) in out[lo..hi]
                            .iter_mut()
                            .zip(src[first..].iter().step_by(g.stride))
                        {
                            *o = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the (zeroed) input.
fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(g, kx);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(s) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Direct cross-correlation with zero padding, as im2col + GEMM per item.
pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
) -> Vec<f64> {
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * g.positions();
    let mut y = vec![0.0; g.n * out_item];
    y.par_chunks_mut(out_item).enumerate().for_each(|(n, out)| {
        with_scratch(g.patch() * g.positions(), |cols, _| {
            im2col(&x[n * in_item..(n + 1) * in_item], g, cols);
            if let Some(b) = bias {
                for (co, row) in out.chunks_mut(g.positions()).enumerate() {
                    row.iter_mut().for_each(|v| *v = b[co]);
                }
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            gemm(
                g.cout,
                g.patch(),
                g.positions(),
                weight,
                g.patch(),
                1,
                cols,
                g.positions(),
                1,
                beta,
                out,
            );
        })
    });
    y
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads {
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * g.positions();
    let k = g.patch();
    let p = g.positions();

    let partials: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            with_scratch(k * p, |cols, dcols| {
                let dy_n = &dy[n * out_item..(n + 1) * out_item];
                im2col(&x[n * in_item..(n + 1) * in_item], g, cols);
                let mut dw = vec![0.0; g.cout * k];
                // dW = dY · colsᵀ
                gemm(g.cout, p, k, dy_n, p, 1, cols, 1, p, 0.0, &mut dw);
                let dx = need_dx.then(|| {
                    // dcols = Wᵀ · dY
                    gemm(k, g.cout, p, weight, 1, k, dy_n, p, 1, 0.0, dcols);
                    let mut dx = vec![0.0; in_item];
                    col2im(dcols, g, &mut dx);
                    dx
                });
                (dw, dx)
            })
        })
        .collect();

    let mut dw = vec![0.0; g.cout * k];
    let mut dx = need_dx.then(|| Vec::with_capacity(g.n * in_item));
    for (pdw, pdx) in partials {
        dw.iter_mut().zip(&pdw).for_each(|(a, b)| *a += b);
        if let (Some(dx), Some(pdx)) = (dx.as_mut(), pdx) {
            dx.extend_from_slice(&pdx);
        }
    }
    let mut db = vec![0.0; g.cout];
    for n in 0..g.n {
        for (co, d) in db.iter_mut().enumerate() {
            let start = n * out_item + co * p;
            *d += dy[start..start + p].iter().sum::<f64>();
        }
    }
    ConvGrads { dx, dw, db }
}

/// Source taps for one axis of half-pixel bilinear resampling.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

pub(crate) fn upsample_taps(len: usize, factor: usize) -> Vec<Tap> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let l = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - l,
                w1: l,
            }
        })
        .collect()
}

pub(crate) fn upsample_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<f64> {
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut y = vec![0.0; planes * oh * ow];
    for (src, dst) in x.chunks(h * w).zip(y.chunks_mut(oh * ow)) {
        for (oy, t) in ty.iter().enumerate() {
            let r0 = &src[t.i0 * w..(t.i0 + 1) * w];
            let r1 = &src[t.i1 * w..(t.i1 + 1) * w];
            for (ox, s) in tx.iter().enumerate() {
                let top = s.w0 * r0[s.i0] + s.w1 * r0[s.i1];
                let bottom = s.w0 * r1[s.i0] + s.w1 * r1[s.i1];
                dst[oy * ow + ox] = t.w0 * top + t.w1 * bottom;
            }
        }
    }
    y
}

pub(crate) fn upsample_backward(
    dy: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<f64> {
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = vec![0.0; planes * h * w];
    for (src, dst) in dy.chunks(oh * ow).zip(dx.chunks_mut(h * w)) {
        for (oy, t) in ty.iter().enumerate() {
            for (ox, s) in tx.iter().enumerate() {
                let g = src[oy * ow + ox];
                dst[t.i0 * w + s.i0] += t.w0 * s.w0 * g;
                dst[t.i0 * w + s.i1] += t.w0 * s.w1 * g;
                dst[t.i1 * w + s.i0] += t.w1 * s.w0 * g;
                dst[t.i1 * w + s.i1] += t.w1 * s.w1 * g;
            }
        }
    }
    dx
}

/// Per-plane standardization with population variance. Returns the output
/// and the per-plane `1/sqrt(var + eps)`.
pub(crate) fn instance_norm_forward(x: &[f64], plane: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / plane);
    for (src, dst) in x.chunks(plane).zip(y.chunks_mut(plane)) {
        let mean = src.iter().sum::<f64>() / plane as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let r = 1.0 / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * r;
        }
        inv_std.push(r);
    }
    (y, inv_std)
}

pub(crate) fn instance_norm_backward(
    y: &[f64],
    dy: &[f64],
    inv_std: &[f64],
    plane: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for (((yp, dyp), dxp), &r) in y
        .chunks(plane)
        .zip(dy.chunks(plane))
        .zip(dx.chunks_mut(plane))
        .zip(inv_std)
    {
        let mean_dy = dyp.iter().sum::<f64>() / plane as f64;
        let mean_dyy = dyp.iter().zip(yp).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
        for ((d, &g), &yv) in dxp.iter_mut().zip(dyp).zip(yp) {
            *d = r * (g - mean_dy - yv * mean_dyy);
        }
    }
    dx
}
