//! Optimization: Adam with decoupled weight decay, cosine learning-rate
//! annealing, global-norm clipping, checkpoints and the epoch driver.

mod checkpoint;
mod config;
mod desk;
mod optim;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use config::{RunConfig, TrainConfig};
pub use desk::{desk_setup, run_desk, DeskOutcome};
pub use optim::{
    adam_step, clip_grad_norm, cosine_lr, global_norm, AdamState, ADAM_EPS, BETA1, BETA2,
};

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{RegistrationSample, Sequence};
use crate::error::{Error, Result};
use crate::image::{batch_tensor, Image};
use crate::metrics::evaluate_split;
use crate::model::{Frame, FrameCache, RegistrationModel};
use crate::objective::{total_loss, LossReport};

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: RegistrationModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Next epoch to run.
    pub epoch: usize,
    /// Optimizer steps taken (including aborted ones).
    pub step: u64,
    /// Best mean validation SSIM so far (`-inf` before any validation).
    pub best_ssim: f64,
    /// Drives the per-epoch sequence shuffle.
    pub rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = RegistrationModel::new(cfg.model, cfg.train.seed)?;
        Ok(Trainer {
            model,
            adam: AdamState::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5348_5546_464c_4531),
            config: cfg.train,
            epoch: 0,
            step: 0,
            best_ssim: f64::NEG_INFINITY,
        })
    }

    /// One optimizer step on `batch`. Frames of a sequence must appear in
    /// order; each sequence's cache is taken from (and returned to) `caches`.
    pub fn train_step(
        &mut self,
        batch: &[&RegistrationSample],
        caches: &mut HashMap<u64, FrameCache>,
        lr: f64,
    ) -> Result<LossReport> {
        let window = self.model.config.window;
        let mut ids: Vec<u64> = Vec::new();
        let frames: Vec<Frame> = batch
            .iter()
            .map(|s| {
                let cache = ids.iter().position(|&i| i == s.seq_id).unwrap_or_else(|| {
                    ids.push(s.seq_id);
                    ids.len() - 1
                });
                Frame {
                    cache,
                    seq_id: s.seq_id,
                    t: s.t,
                }
            })
            .collect();
        let mut local: Vec<FrameCache> = ids
            .iter()
            .map(|id| caches.remove(id).unwrap_or_else(|| FrameCache::new(window)))
            .collect();
        let result = self.step_with(batch, &frames, &mut local, lr);
        for (id, c) in ids.into_iter().zip(local) {
            caches.insert(id, c);
        }
        self.step += 1;
        result
    }

    fn step_with(
        &mut self,
        batch: &[&RegistrationSample],
        frames: &[Frame],
        caches: &mut [FrameCache],
        lr: f64,
    ) -> Result<LossReport> {
        let moving: Vec<&Image> = batch.iter().map(|s| &s.moving).collect();
        let fixed: Vec<&Image> = batch.iter().map(|s| &s.fixed).collect();
        let (moving, fixed) = (batch_tensor(&moving)?, batch_tensor(&fixed)?);
        let lambda = self.config.lambda;
        let mut grads = {
            let mut s = self.model.session()?;
            let fw = s.register(&moving, &fixed, frames, caches)?;
            let fixed_scene = s.scene_encode(&fixed)?;
            let target = s.graph.constant(fixed)?;
            let loss = total_loss(
                &mut s.graph,
                fw.output,
                target,
                fw.scene,
                fixed_scene,
                lambda,
            )?;
            let report = loss.report(&s.graph, lambda)?;
            s.graph.backward(loss.total)?;
            (s.gradients(), report)
        };
        clip_grad_norm(&mut grads.0, self.config.clip_norm)?;
        adam_step(
            &mut self.model.params,
            &grads.0,
            &mut self.adam,
            lr,
            self.config.weight_decay,
        )?;
        Ok(grads.1)
    }

    /// Runs one epoch over shuffled sequences (frames stay in order).
    /// Steps that hit a numeric abort are skipped and reported as `None`.
    pub fn train_epoch(&mut self, seqs: &[Sequence]) -> Result<Vec<(u64, f64, Option<LossReport>)>> {
        let lr = cosine_lr(self.epoch, self.config.epochs, self.config.lr0);
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut self.rng);
        let flat: Vec<&RegistrationSample> =
            order.iter().flat_map(|&i| seqs[i].frames.iter()).collect();
        let mut caches = HashMap::new();
        let mut rows = Vec::new();
        for batch in flat.chunks(self.config.batch) {
            let step = self.step;
            match self.train_step(batch, &mut caches, lr) {
                Ok(r) => rows.push((step, lr, Some(r))),
                Err(e @ (Error::NonFinite(_) | Error::Numeric(_))) => {
                    eprintln!("step {step}: aborted ({e}); skipped");
                    rows.push((step, lr, None));
                }
                Err(e) => return Err(e),
            }
        }
        self.epoch += 1;
        Ok(rows)
    }
}

const LOG_HEADER: &str = "epoch,step,lr,recon,scene,total\n";

fn append(path: &Path, header: &str, text: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let body = if fresh {
        format!("{header}{text}")
    } else {
        text.to_string()
    };
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Outcome of one epoch of [`fit_epoch`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the completed steps.
    pub mean_loss: f64,
    /// Mean validation SSIM (NaN without a validation split).
    pub val_ssim: f64,
    pub aborted_steps: usize,
}

/// Runs the next epoch and its validation. With `out` set, appends to
/// `train_log.csv` / `val_log.csv`, writes `last.gper`, and `best.gper`
/// whenever validation SSIM improves.
pub fn fit_epoch(
    trainer: &mut Trainer,
    train: &[Sequence],
    val: &[Sequence],
    out: Option<&Path>,
) -> Result<EpochRecord> {
    if train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let epoch = trainer.epoch;
    let rows = trainer.train_epoch(train)?;
    let done: Vec<f64> = rows.iter().filter_map(|r| r.2.map(|l| l.total)).collect();
    if done.is_empty() {
        return Err(Error::Numeric(format!("every step of epoch {epoch} aborted")));
    }
    let mean_loss = done.iter().sum::<f64>() / done.len() as f64;
    let val_ssim = if val.is_empty() {
        f64::NAN
    } else {
        evaluate_split(&trainer.model, "val", val)?
            .report
            .mean_of(|r| r.ssim)
    };
    let improved = val_ssim > trainer.best_ssim || trainer.best_ssim == f64::NEG_INFINITY;
    if improved && !val_ssim.is_nan() {
        trainer.best_ssim = val_ssim;
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut log = String::new();
        for (step, lr, r) in &rows {
            if let Some(r) = r {
                log.push_str(&format!(
                    "{epoch},{step},{lr},{},{},{}\n",
                    r.recon, r.scene, r.total
                ));
            }
        }
        append(&dir.join("train_log.csv"), LOG_HEADER, &log)?;
        append(
            &dir.join("val_log.csv"),
            "epoch,mean_loss,val_ssim\n",
            &format!("{epoch},{mean_loss},{val_ssim}\n"),
        )?;
        if improved {
            save_checkpoint(&dir.join("best.gper"), trainer)?;
        }
        save_checkpoint(&dir.join("last.gper"), trainer)?;
    }
    Ok(EpochRecord {
        epoch,
        mean_loss,
        val_ssim,
        aborted_steps: rows.len() - done.len(),
    })
}

/// Trains from `trainer.epoch` until `trainer.config.epochs`. With zero
/// epochs configured, only writes the untrained checkpoints.
pub fn fit(
    trainer: &mut Trainer,
    train: &[Sequence],
    val: &[Sequence],
    out: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    if let (Some(dir), 0) = (out, trainer.config.epochs) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&dir.join("best.gper"), trainer)?;
        save_checkpoint(&dir.join("last.gper"), trainer)?;
    }
    let mut records = Vec::new();
    while trainer.epoch < trainer.config.epochs {
        records.push(fit_epoch(trainer, train, val, out)?);
    }
    Ok(records)
}
