//! The desk-scale experiment: a fixed synthetic dataset, resumable
//! training, and a test-split score.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::data::{dataset_checksum, generate, load_split, GenConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_split, MetricsReport};
use crate::model::ModelConfig;

use super::{append, fit_epoch, load_checkpoint, EpochRecord, RunConfig, TrainConfig, Trainer};

/// Dataset and run settings for `seed`: 512/64/64 pairs at 64², sequences of
/// 4, 20 epochs of batch 8 at lr 1e-4 with λ = 10.
pub fn desk_setup(seed: u64) -> (GenConfig, RunConfig) {
    let gen = GenConfig {
        seed,
        ..GenConfig::default()
    };
    let run = RunConfig {
        model: ModelConfig::desk(),
        train: TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    };
    (gen, run)
}

#[derive(Clone, Debug)]
pub struct DeskOutcome {
    pub checksum: String,
    /// Mean total loss per epoch, from the run's `val_log.csv`.
    pub epoch_losses: Vec<f64>,
    pub test: MetricsReport,
    /// Training wall time summed over epochs, when every epoch was timed.
    pub train_secs: Option<f64>,
}

/// Last value per epoch of a two-column-or-more `epoch,value,...` log.
fn per_epoch(path: &Path, col: usize, epochs: usize) -> Result<Option<Vec<f64>>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = vec![None; epochs];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("{}: bad row {line:?}", path.display()));
        let e: usize = f.first().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let v: f64 = f.get(col).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if e < epochs {
            out[e] = Some(v);
        }
    }
    Ok(out.into_iter().collect())
}

/// Runs (or resumes, or just re-scores) the desk experiment under `work`:
/// `work/data` holds the dataset, `work/run` the logs and checkpoints.
pub fn run_desk(
    work: &Path,
    gen: &GenConfig,
    cfg: &RunConfig,
    mut progress: impl FnMut(&EpochRecord, f64),
) -> Result<DeskOutcome> {
    let data = work.join("data");
    let run = work.join("run");
    let checksum = if data.join("checksum.txt").exists() {
        let p = data.join("dataset.txt");
        let settings = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        if settings != gen.to_text() {
            return Err(Error::Data(format!(
                "{} was generated with different settings",
                data.display()
            )));
        }
        let p = data.join("checksum.txt");
        let recorded = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let sum = dataset_checksum(&data)?;
        if recorded.trim() != sum {
            return Err(Error::Data(format!("{} does not match its checksum", data.display())));
        }
        sum
    } else {
        generate(&data, gen, true)?
    };
    let train = load_split(&data, "train")?;
    let val = load_split(&data, "val")?;
    let test = load_split(&data, "test")?;

    let last = run.join("last.gper");
    let mut trainer = if last.exists() {
        let t = load_checkpoint(&last)?;
        if t.model.config != cfg.model || t.config != cfg.train {
            return Err(Error::Config(format!(
                "{} belongs to a different configuration",
                last.display()
            )));
        }
        t
    } else {
        Trainer::new(cfg.clone())?
    };
    let epochs = cfg.train.epochs;
    while trainer.epoch < epochs {
        let t0 = Instant::now();
        let r = fit_epoch(&mut trainer, &train, &val, Some(&run))?;
        let secs = t0.elapsed().as_secs_f64();
        append(
            &run.join("timing.csv"),
            "epoch,seconds\n",
            &format!("{},{secs}\n", r.epoch),
        )?;
        progress(&r, secs);
    }
    let epoch_losses = per_epoch(&run.join("val_log.csv"), 1, epochs)?
        .ok_or_else(|| Error::Data(format!("{} lacks a complete val_log.csv", run.display())))?;
    let train_secs = per_epoch(&run.join("timing.csv"), 1, epochs)?.map(|v| v.iter().sum());
    let test = evaluate_split(&trainer.model, "test", &test)?.report;
    Ok(DeskOutcome {
        checksum,
        epoch_losses,
        test,
        train_secs,
    })
}
