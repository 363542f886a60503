//! Command-line front end: `gen`, `train`, `eval`, `infer`, `bench`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::data::{generate, load_split, GenConfig};
use crate::error::{Error, Result};
use crate::image::{batch_tensor, read_pgm, tensor_images, write_pgm};
use crate::metrics::{diff_map, evaluate_split, ssim, write_evaluation, IdentityRegistrar, Registrar};
use crate::model::{Frame, FrameCache, ModelConfig, RegistrationModel};
use crate::train::{fit, load_checkpoint, RunConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "regfactor", version, about = "Deformation-free cross-domain image registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (train/val/test splits).
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint on one split and write metrics and figures.
    Eval(EvalArgs),
    /// Register a single moving/fixed PGM pair.
    Infer(InferArgs),
    /// Time forward passes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training pairs.
    #[arg(long, default_value_t = 512)]
    pub pairs: usize,
    /// Validation pairs (default: pairs/8, at least one sequence).
    #[arg(long)]
    pub val_pairs: Option<usize>,
    /// Test pairs (default: pairs/8, at least one sequence).
    #[arg(long)]
    pub test_pairs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "identity")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Control run: the registered image is the moving image.
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub t: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Without a checkpoint, a freshly initialized default model is timed.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
}

/// Caps the global worker pool from `REGFACTOR_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("REGFACTOR_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("REGFACTOR_THREADS={v:?} is not a positive integer")))?;
        // A pool may already exist (e.g. in tests); that is not an error.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    if a.seq_len == 0 {
        return Err(Error::Config("--seq-len must be >= 1".into()));
    }
    let held_out = (a.pairs / 8).max(a.seq_len);
    let cfg = GenConfig {
        train_pairs: a.pairs,
        val_pairs: a.val_pairs.unwrap_or(held_out),
        test_pairs: a.test_pairs.unwrap_or(held_out),
        size: a.size,
        seq_len: a.seq_len,
        seed: a.seed,
        max_frames: ModelConfig::default().max_frames,
    };
    let sum = generate(&a.out, &cfg, a.force)?;
    println!(
        "generated {}/{}/{} pairs at {}x{} in {}",
        cfg.train_pairs,
        cfg.val_pairs,
        cfg.test_pairs,
        cfg.size,
        cfg.size,
        a.out.display()
    );
    println!("checksum {sum}");
    Ok(())
}

/// Desk defaults, then the config file, then flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        model: ModelConfig::desk(),
        ..RunConfig::default()
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg = cfg.apply_text(&text)?;
    }
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.lr {
        t.lr0 = v;
    }
    if let Some(v) = a.batch {
        t.batch = v;
    }
    if let Some(v) = a.lambda {
        t.lambda = v;
    }
    if let Some(v) = &a.data {
        t.data = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(a)?;
    let data = cfg
        .train
        .data
        .clone()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set data= in the config".into()))?;
    let text = cfg.to_text();
    eprintln!("resolved config:\n{text}");
    write_text(&a.out.join("config.txt"), &text)?;

    let train = load_split(&data, "train")?;
    let val = if data.join("val").join("meta.csv").exists() {
        load_split(&data, "val")?
    } else {
        Vec::new()
    };
    let side = train[0].frames[0].moving.width;
    if side != cfg.model.image_size || train[0].frames[0].moving.height != side {
        return Err(Error::Config(format!(
            "dataset images are {side}px but image_size={}",
            cfg.model.image_size
        )));
    }

    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = load_checkpoint(path)?;
            if t.model.config != cfg.model {
                return Err(Error::Config("resumed checkpoint has a different model config".into()));
            }
            t.config = cfg.train.clone();
            t
        }
        None => Trainer::new(cfg.clone())?,
    };
    eprintln!(
        "model: {} parameters\n{}",
        trainer.model.param_count(),
        trainer.model.params.breakdown_table()
    );
    let start = Instant::now();
    let records = fit(&mut trainer, &train, &val, Some(&a.out))?;
    for r in &records {
        println!(
            "epoch {} loss {:.5} val_ssim {:.4}{}",
            r.epoch,
            r.mean_loss,
            r.val_ssim,
            if r.aborted_steps > 0 {
                format!(" ({} aborted steps)", r.aborted_steps)
            } else {
                String::new()
            }
        );
    }
    println!(
        "trained {} epochs in {:.1}s; checkpoints in {}",
        records.len(),
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let seqs = load_split(&a.data, &a.split)?;
    let model;
    let registrar: &dyn Registrar = if a.identity {
        &IdentityRegistrar
    } else {
        let path = a.ckpt.as_ref().expect("clap requires --ckpt without --identity");
        model = load_checkpoint(path)?.model;
        &model
    };
    let eval = evaluate_split(registrar, &a.split, &seqs)?;
    write_evaluation(&a.out, &seqs, &eval)?;
    for line in eval.report.summary_lines() {
        println!("{line}");
    }
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?.model;
    let moving = read_pgm(&a.moving)?;
    let fixed = read_pgm(&a.fixed)?;
    moving.same_size(&fixed)?;
    if a.t >= model.config.max_frames {
        return Err(Error::Range {
            what: "frame index vs embedding table rows",
            index: a.t,
            bound: model.config.max_frames,
        });
    }
    let mut caches = [FrameCache::new(model.config.window)];
    let out = model.register(
        &batch_tensor(&[&moving])?,
        &batch_tensor(&[&fixed])?,
        &[Frame {
            cache: 0,
            seq_id: 0,
            t: a.t,
        }],
        &mut caches,
    )?;
    let registered = tensor_images(&out)?.remove(0);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_pgm(&registered, a.out.join("registered.pgm"))?;
    write_pgm(&diff_map(&registered, &fixed)?, a.out.join("diff.pgm"))?;
    println!("ssim(registered, fixed) {:.4}", ssim(&registered, &fixed)?);
    println!("ssim(moving, fixed) {:.4}", ssim(&moving, &fixed)?);
    Ok(())
}

/// Latency statistics in milliseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
    pub params: usize,
}

pub fn bench(model: &RegistrationModel, size: usize, iters: usize, warmup: usize) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::Config("--iters must be >= 1".into()));
    }
    let img = crate::image::Image::new(
        size,
        size,
        (0..size * size).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
    )?;
    let x = batch_tensor(&[&img])?;
    let frame = [Frame {
        cache: 0,
        seq_id: 0,
        t: 0,
    }];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut samples = Vec::with_capacity(iters);
    pool.install(|| -> Result<()> {
        for i in 0..warmup + iters {
            let mut caches = [FrameCache::new(model.config.window)];
            let t0 = Instant::now();
            model.register(&x, &x, &frame, &mut caches)?;
            if i >= warmup {
                samples.push(t0.elapsed().as_secs_f64() * 1e3);
            }
        }
        Ok(())
    })?;
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let p95 = sorted[((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
    Ok(BenchReport {
        samples_ms: samples,
        mean_ms: mean,
        median_ms: median,
        p95_ms: p95,
        fps: 1e3 / mean,
        params: model.param_count(),
    })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let model = match &a.ckpt {
        Some(p) => load_checkpoint(p)?.model,
        None => RegistrationModel::new(ModelConfig::default().with_image_size(a.size), 0)?,
    };
    let r = bench(&model, a.size, a.iters, a.warmup)?;
    println!("size {0}x{0}, batch 1, 1 thread, {1} iters after {2} warmup", a.size, a.iters, a.warmup);
    println!("mean {:.2} ms  median {:.2} ms  p95 {:.2} ms  fps {:.2}", r.mean_ms, r.median_ms, r.p95_ms, r.fps);
    println!("params {}", r.params);
    Ok(())
}
