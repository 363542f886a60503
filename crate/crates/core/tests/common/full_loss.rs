//! Central-difference check of the complete training objective with respect
//! to sampled model parameters.

use rand::Rng;
use regfactor::autodiff::gradcheck::relative_error;
use regfactor::image::batch_tensor;
use regfactor::model::{Frame, FrameCache, RegistrationModel};
use regfactor::objective::total_loss;
use regfactor::{Result, Tensor};

use super::{rng, smooth_image, tiny_config};

/// Largest and smallest finite-difference steps tried per coordinate.
pub const MAX_STEP: f64 = 1e-3;
pub const MIN_STEP: f64 = 1e-7;

pub struct Setup {
    pub model: RegistrationModel,
    moving: Tensor,
    fixed: Tensor,
    frames: Vec<Frame>,
    caches: Vec<FrameCache>,
    lambda: f64,
}

struct Eval {
    loss: f64,
    kinks: Vec<bool>,
    grads: Vec<(String, Vec<f64>)>,
}

/// Outcome of [`Setup::check`].
#[derive(Debug)]
pub struct Report {
    pub worst: f64,
    pub coordinates: usize,
    /// Coordinates whose step had to shrink below [`MAX_STEP`] to stay on
    /// one smooth piece.
    pub shrunk: usize,
    /// Draws discarded because even [`MIN_STEP`] straddled a kink.
    pub redrawn: usize,
}

impl Setup {
    /// An 8×8 model, two items from different sequences, each with one
    /// earlier frame already cached so attention sees a real key.
    pub fn new(seed: u64) -> Setup {
        let cfg = tiny_config(8);
        let model = RegistrationModel::new(cfg.clone(), seed).unwrap();
        let mut r = rng(seed + 1);
        let m: Vec<_> = (0..2).map(|_| smooth_image(&mut r, 8, 8)).collect();
        let f: Vec<_> = (0..2).map(|_| smooth_image(&mut r, 8, 8)).collect();
        let mut caches = Vec::new();
        for s in 0..2u64 {
            let mut c = FrameCache::new(cfg.window);
            let summary = (0..cfg.gpe_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            c.push(s, summary).unwrap();
            caches.push(c);
        }
        Setup {
            model,
            moving: batch_tensor(&[&m[0], &m[1]]).unwrap(),
            fixed: batch_tensor(&[&f[0], &f[1]]).unwrap(),
            frames: vec![
                Frame { cache: 0, seq_id: 0, t: 1 },
                Frame { cache: 1, seq_id: 1, t: 2 },
            ],
            caches,
            lambda: 10.0,
        }
    }

    fn eval(&self, model: &RegistrationModel, backward: bool) -> Result<Eval> {
        let mut s = model.session()?;
        let mut caches = self.caches.clone();
        let fw = s.register(&self.moving, &self.fixed, &self.frames, &mut caches)?;
        let fixed_scene = s.scene_encode(&self.fixed)?;
        let target = s.graph.constant(self.fixed.clone())?;
        let l = total_loss(&mut s.graph, fw.output, target, fw.scene, fixed_scene, self.lambda)?;
        let loss = s.graph.value(l.total).item()?;
        let kinks = s.graph.kink_pattern();
        let grads = if backward {
            s.graph.backward(l.total)?;
            s.gradients().into_iter().collect()
        } else {
            Vec::new()
        };
        Ok(Eval { loss, kinks, grads })
    }

    /// Fourth-order central difference along one coordinate, with the step
    /// shrunk tenfold until all probes share the base point's smooth piece.
    /// Returns the derivative and the step used, or `None` if even
    /// [`MIN_STEP`] straddles a kink.
    fn numeric(&self, name: &str, i: usize, base: &[bool]) -> Result<Option<(f64, f64)>> {
        let mut h = MAX_STEP;
        while h >= MIN_STEP {
            let mut same = true;
            let mut f = [0.0; 4];
            for (slot, k) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                let mut m = self.model.clone();
                m.params.get_mut(name).expect("known parameter").data_mut()[i] += k * h;
                let e = self.eval(&m, false)?;
                same &= e.kinks == base;
                f[slot] = e.loss;
            }
            if same {
                return Ok(Some(((8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * h), h)));
            }
            h /= 10.0;
        }
        Ok(None)
    }

    /// Worst relative error over `count` parameter coordinates, cycling
    /// through every parameter tensor.
    pub fn check(&self, count: usize) -> Result<Report> {
        let base = self.eval(&self.model, true)?;
        let mut r = rng(99);
        let mut report = Report { worst: 0.0, coordinates: count, shrunk: 0, redrawn: 0 };
        for k in 0..count {
            let (name, g) = &base.grads[k % base.grads.len()];
            let (i, numeric, h) = loop {
                let i = r.gen_range(0..g.len());
                match self.numeric(name, i, &base.kinks)? {
                    Some((n, h)) => break (i, n, h),
                    None => report.redrawn += 1,
                }
            };
            report.shrunk += usize::from(h < MAX_STEP);
            let err = relative_error(g[i], numeric);
            if std::env::var_os("GRADCHECK_VERBOSE").is_some() {
                eprintln!("{name}[{i}] analytic {:e} numeric {numeric:e} step {h:e} rel {err:e}", g[i]);
            }
            report.worst = report.worst.max(err);
        }
        Ok(report)
    }
}
