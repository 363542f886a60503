//! Registration quality metrics and visual artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::image::{batch_tensor, tensor_images, write_pgm, write_ppm, Image, RgbImage};
use crate::model::{Frame, FrameCache, RegistrationModel};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Normalized cross-correlation; 0 when either image is (nearly) constant.
pub fn ncc(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let (ma, mb) = (mean(&a.data), mean(&b.data));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data.iter().zip(&b.data) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let n = a.data.len() as f64;
    if saa / n < 1e-12 || sbb / n < 1e-12 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a `w × h` plane.
fn filter_valid(x: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..k).map(|i| taps[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..k).map(|i| taps[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region with an 11×11 Gaussian window (σ 1.5),
/// dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(&a.data, w, h, &taps);
    let mu_b = filter_valid(&b.data, w, h, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
    let map: Vec<f64> = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .collect();
    Ok(mean(&map))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `10·log10(1/MSE)` in dB, capped at 99.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

/// `|a − b|` clamped to `[0, 1]`.
pub fn diff_map(a: &Image, b: &Image) -> Result<Image> {
    a.same_size(b)?;
    Ok(Image {
        width: a.width,
        height: a.height,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs().clamp(0.0, 1.0))
            .collect(),
    })
}

/// Red = fixed, green = moving, blue = 0.
pub fn rg_overlay(fixed: &Image, moving: &Image) -> Result<RgbImage> {
    fixed.same_size(moving)?;
    Ok(RgbImage {
        width: fixed.width,
        height: fixed.height,
        data: fixed
            .data
            .iter()
            .zip(&moving.data)
            .map(|(&r, &g)| [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), 0.0])
            .collect(),
    })
}

/// Anything that maps each frame of a sequence to a registered image.
pub trait Registrar: Sync {
    /// Frames are processed in order with a cache private to the call.
    fn register_sequence(&self, seq: &Sequence) -> Result<Vec<Image>>;
}

impl Registrar for RegistrationModel {
    fn register_sequence(&self, seq: &Sequence) -> Result<Vec<Image>> {
        let moving: Vec<&Image> = seq.frames.iter().map(|f| &f.moving).collect();
        let fixed: Vec<&Image> = seq.frames.iter().map(|f| &f.fixed).collect();
        let frames: Vec<Frame> = seq
            .frames
            .iter()
            .map(|f| Frame {
                cache: 0,
                seq_id: seq.seq_id,
                t: f.t,
            })
            .collect();
        let mut caches = [FrameCache::new(self.config.window)];
        let out = self.register(
            &batch_tensor(&moving)?,
            &batch_tensor(&fixed)?,
            &frames,
            &mut caches,
        )?;
        tensor_images(&out)
    }
}

/// Control that returns the moving image unchanged.
pub struct IdentityRegistrar;

impl Registrar for IdentityRegistrar {
    fn register_sequence(&self, seq: &Sequence) -> Result<Vec<Image>> {
        Ok(seq.frames.iter().map(|f| f.moving.clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub seq_id: u64,
    pub frame_idx: usize,
    pub ncc: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub ncc_unreg: f64,
    pub ssim_unreg: f64,
    pub psnr_unreg: f64,
}

impl SampleMetrics {
    pub fn compute(
        seq_id: u64,
        frame_idx: usize,
        registered: &Image,
        moving: &Image,
        fixed: &Image,
    ) -> Result<Self> {
        Ok(SampleMetrics {
            seq_id,
            frame_idx,
            ncc: ncc(registered, fixed)?,
            ssim: ssim(registered, fixed)?,
            psnr: psnr(registered, fixed)?,
            ncc_unreg: ncc(moving, fixed)?,
            ssim_unreg: ssim(moving, fixed)?,
            psnr_unreg: psnr(moving, fixed)?,
        })
    }
}

/// Per-sample rows of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub split: String,
    pub rows: Vec<SampleMetrics>,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

impl MetricsReport {
    pub fn column(&self, f: impl Fn(&SampleMetrics) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    /// `(name, mean, std)` for the six metric columns.
    pub fn summary(&self) -> Vec<(&'static str, f64, f64)> {
        let cols: [(&'static str, fn(&SampleMetrics) -> f64); 6] = [
            ("ncc", |r| r.ncc),
            ("ssim", |r| r.ssim),
            ("psnr", |r| r.psnr),
            ("ncc_unreg", |r| r.ncc_unreg),
            ("ssim_unreg", |r| r.ssim_unreg),
            ("psnr_unreg", |r| r.psnr_unreg),
        ];
        cols.iter()
            .map(|(name, f)| {
                let (m, s) = mean_std(&self.column(f));
                (*name, m, s)
            })
            .collect()
    }

    pub fn mean_of(&self, f: impl Fn(&SampleMetrics) -> f64) -> f64 {
        mean(&self.column(f))
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("split,seq_id,frame_idx,ncc,ssim,psnr,ncc_unreg,ssim_unreg,psnr_unreg\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                self.split,
                r.seq_id,
                r.frame_idx,
                r.ncc,
                r.ssim,
                r.psnr,
                r.ncc_unreg,
                r.ssim_unreg,
                r.psnr_unreg
            );
        }
        s
    }

    /// One `split metric mean±std` line per metric.
    pub fn summary_lines(&self) -> Vec<String> {
        self.summary()
            .into_iter()
            .map(|(name, m, s)| format!("{} {name} {m:.4}±{s:.4}", self.split))
            .collect()
    }
}

/// Registered outputs of a split, in sequence/frame order.
pub struct Evaluation {
    pub report: MetricsReport,
    pub outputs: Vec<Vec<Image>>,
}

/// Registers every sequence (in parallel across sequences, in order within
/// each) and scores the outputs against the fixed images, alongside the
/// unregistered baseline.
pub fn evaluate_split(
    registrar: &dyn Registrar,
    split: &str,
    seqs: &[Sequence],
) -> Result<Evaluation> {
    if seqs.is_empty() || seqs.iter().all(|s| s.frames.is_empty()) {
        return Err(Error::Data(format!("split {split:?} is empty")));
    }
    let per_seq: Vec<(Vec<SampleMetrics>, Vec<Image>)> = seqs
        .par_iter()
        .map(|seq| {
            let out = registrar.register_sequence(seq)?;
            let rows = seq
                .frames
                .iter()
                .zip(&out)
                .map(|(f, r)| SampleMetrics::compute(seq.seq_id, f.t, r, &f.moving, &f.fixed))
                .collect::<Result<Vec<_>>>()?;
            Ok((rows, out))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for (r, o) in per_seq {
        rows.extend(r);
        outputs.push(o);
    }
    Ok(Evaluation {
        report: MetricsReport {
            split: split.to_string(),
            rows,
        },
        outputs,
    })
}

/// Writes `metrics.csv` plus, per sample, the registered image, its
/// difference map and red-green overlays before and after registration.
pub fn write_evaluation(dir: &Path, seqs: &[Sequence], eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("metrics.csv");
    fs::write(&csv, eval.report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    for (seq, outs) in seqs.iter().zip(&eval.outputs) {
        for (f, r) in seq.frames.iter().zip(outs) {
            let stem = format!("{}_{}", seq.seq_id, f.t);
            write_pgm(r, dir.join(format!("{stem}_registered.pgm")))?;
            write_pgm(&diff_map(r, &f.fixed)?, dir.join(format!("{stem}_diff.pgm")))?;
            write_ppm(
                &rg_overlay(&f.fixed, r)?,
                dir.join(format!("{stem}_overlay.ppm")),
            )?;
            write_ppm(
                &rg_overlay(&f.fixed, &f.moving)?,
                dir.join(format!("{stem}_overlay_unreg.ppm")),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap()
    }

    #[test]
    fn ncc_examples() {
        let a = ramp(6, 5);
        assert!((ncc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = a.map(|v| 1.0 - v);
        assert!((ncc(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ncc(&Image::filled(6, 5, 0.3), &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        let a = ramp(4, 4);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(
            psnr(&Image::zeros(3, 3), &Image::filled(3, 3, 1.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn ssim_constant_images() {
        let (a, b) = (Image::filled(16, 16, 0.25), Image::filled(16, 16, 0.75));
        let want = (2.0 * 0.25 * 0.75 + C1) / (0.25f64.powi(2) + 0.75f64.powi(2) + C1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
        let r = ramp(16, 12);
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Image::zeros(10, 20), &Image::zeros(10, 20)).is_err());
    }

    #[test]
    fn diff_and_overlay() {
        let a = ramp(4, 3);
        assert!(diff_map(&a, &a).unwrap().data.iter().all(|&v| v == 0.0));
        let o = rg_overlay(&Image::filled(2, 2, 1.0), &Image::zeros(2, 2)).unwrap();
        assert!(o.data.iter().all(|p| *p == [1.0, 0.0, 0.0]));
        let y = rg_overlay(&a, &a).unwrap();
        assert!(y.data.iter().all(|p| p[0] == p[1] && p[2] == 0.0));
    }
}
