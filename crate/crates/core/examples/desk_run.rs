//! Desk-scale experiment: generate, train, evaluate, print a summary.
//!
//! `cargo run --release --example desk_run -- <workdir> [seed]`
//!
//! Safe to interrupt: a rerun resumes from `<workdir>/run/last.gper`.

use std::path::PathBuf;

use regfactor::train::{desk_setup, run_desk};

fn main() -> regfactor::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let work = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("desk_run"));
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (gen, cfg) = desk_setup(seed);
    let out = run_desk(&work, &gen, &cfg, |r, secs| {
        println!(
            "epoch {} loss {:.5} val_ssim {:.4} ({secs:.0}s)",
            r.epoch, r.mean_loss, r.val_ssim
        );
    })?;
    println!("checksum {}", out.checksum);
    println!(
        "loss first {:.5} final {:.5}",
        out.epoch_losses[0],
        out.epoch_losses[out.epoch_losses.len() - 1]
    );
    for line in out.test.summary_lines() {
        println!("{line}");
    }
    if let Some(s) = out.train_secs {
        println!("training time {:.1} min", s / 60.0);
    }
    Ok(())
}
