use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use regfactor::image::{write_pgm, Image};
use regfactor::train::load_checkpoint;

const TINY: &str = "\
# small model for fast runs
size=16
encoder_channels=4,8
scene_channels=8
appearance_dim=4
appearance_hidden=8
gpe_dim=8
gpe_hidden=8
heads=2
max_frames=8
decoder_channels=4
batch=4
";

fn regfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regfactor"))
        .args(args)
        .env("REGFACTOR_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}\n{}", o.status.code(), stdout(&o), stderr(&o));
    o
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn checksum(o: &Output) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("checksum ").map(str::to_string))
        .expect("checksum line")
}

fn gen_small(dir: &Path) -> String {
    checksum(&ok(regfactor(&[
        "gen", "--out", path(dir), "--pairs", "8", "--size", "16", "--seq-len", "4", "--seed", "3",
    ])))
}

/// Trains the small model for `epochs` and returns the output directory.
fn train_small(root: &Path, data: &Path, epochs: &str) -> std::path::PathBuf {
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let out = root.join(format!("run{epochs}"));
    ok(regfactor(&[
        "train", "--config", path(&cfg), "--data", path(data), "--out", path(&out), "--epochs", epochs,
    ]));
    out
}

#[test]
fn gen_counts_and_checksums() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let sum = gen_small(&a);
    let meta = fs::read_to_string(a.join("train").join("meta.csv")).unwrap();
    assert_eq!(meta.lines().count(), 1 + 8);
    let seqs = fs::read_dir(a.join("train")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(seqs, 2);
    assert_eq!(fs::read_to_string(a.join("checksum.txt")).unwrap().trim(), sum);

    assert_eq!(gen_small(&root.path().join("b")), sum);

    let again = regfactor(&["gen", "--out", path(&a), "--pairs", "8", "--size", "16", "--seq-len", "4", "--seed", "3"]);
    assert!(!again.status.success());
    let forced = ok(regfactor(&[
        "gen", "--out", path(&a), "--pairs", "8", "--size", "16", "--seq-len", "4", "--seed", "3", "--force",
    ]));
    assert_eq!(checksum(&forced), sum);

    let zero = regfactor(&["gen", "--out", path(&root.path().join("c")), "--seq-len", "0"]);
    assert_eq!(zero.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(regfactor(&[]).status.code(), Some(1));
    assert_eq!(regfactor(&["gen"]).status.code(), Some(1));
    assert_eq!(regfactor(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(regfactor(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_config_reports_its_line() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.cfg");
    fs::write(&cfg, "epochs=1\n# fine\nthis line has no equals sign\n").unwrap();
    let o = regfactor(&["train", "--config", path(&cfg), "--data", "nowhere", "--out", path(&root.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&cfg, "epochs=1\nlearning_rate=3\n").unwrap();
    let o = regfactor(&["train", "--config", path(&cfg), "--data", "nowhere", "--out", path(&root.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2") && stderr(&o).contains("learning_rate"));

    let o = regfactor(&["train", "--out", path(&root.path().join("o")), "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(1), "no dataset");
}

#[test]
fn zero_epochs_writes_an_untrained_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_small(&data);
    let out = train_small(root.path(), &data, "0");
    let t = load_checkpoint(&out.join("best.gper")).unwrap();
    assert_eq!((t.epoch, t.step), (0, 0));
    assert!(out.join("last.gper").exists());
    let resolved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(resolved.contains("epochs=0") && resolved.contains("image_size=16"), "{resolved}");
}

#[test]
fn train_eval_infer_bench_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_small(&data);
    let out = train_small(root.path(), &data, "1");
    let ckpt = out.join("best.gper");
    assert!(fs::read_to_string(out.join("train_log.csv")).unwrap().starts_with("epoch,step,lr,recon,scene,total"));
    let model = load_checkpoint(&ckpt).unwrap().model;

    // Evaluation with the trained model and with the identity control.
    let ev = root.path().join("eval");
    let o = ok(regfactor(&["eval", "--ckpt", path(&ckpt), "--data", path(&data), "--out", path(&ev)]));
    assert!(stdout(&o).lines().any(|l| l.starts_with("test ssim ")), "{}", stdout(&o));
    assert!(ev.join("metrics.csv").exists());

    let id = root.path().join("identity");
    let o = ok(regfactor(&["eval", "--identity", "--data", path(&data), "--split", "val", "--out", path(&id)]));
    let csv = fs::read_to_string(id.join("metrics.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(&f[3..6], &f[6..9], "{row}");
    }
    let line = |name: &str| {
        stdout(&o).lines().find(|l| l.starts_with(&format!("val {name} "))).unwrap().split(' ').nth(2).unwrap().to_string()
    };
    assert_eq!(line("ssim"), line("ssim_unreg"));

    let empty = root.path().join("empty");
    fs::create_dir_all(empty.join("test")).unwrap();
    let o = regfactor(&["eval", "--identity", "--data", path(&empty), "--out", path(&root.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    fs::copy(data.join("test").join("meta.csv"), empty.join("test").join("meta.csv")).unwrap();
    let header = fs::read_to_string(empty.join("test").join("meta.csv")).unwrap().lines().next().unwrap().to_string();
    fs::write(empty.join("test").join("meta.csv"), format!("{header}\n")).unwrap();
    let o = regfactor(&["eval", "--identity", "--data", path(&empty), "--out", path(&root.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    // Single-pair inference.
    let img = Image::new(16, 16, (0..256).map(|i| (i % 16) as f64 / 15.0).collect()).unwrap();
    let (m, small) = (root.path().join("m.pgm"), root.path().join("s.pgm"));
    write_pgm(&img, &m).unwrap();
    write_pgm(&Image::filled(8, 8, 0.5), &small).unwrap();
    let inf = root.path().join("infer");
    let o = ok(regfactor(&["infer", "--ckpt", path(&ckpt), "--moving", path(&m), "--fixed", path(&m), "--out", path(&inf)]));
    assert!(stdout(&o).contains("ssim(registered, fixed)"));
    assert!(inf.join("registered.pgm").exists() && inf.join("diff.pgm").exists());
    let o = regfactor(&["infer", "--ckpt", path(&ckpt), "--moving", path(&m), "--fixed", path(&small), "--out", path(&inf)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shape"), "{}", stderr(&o));
    let o = regfactor(&["infer", "--ckpt", path(&ckpt), "--moving", path(&m), "--fixed", path(&m), "--t", "8", "--out", path(&inf)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("embedding"), "{}", stderr(&o));

    // Benchmark reports the checkpoint's parameter count.
    let o = ok(regfactor(&["bench", "--ckpt", path(&ckpt), "--size", "16", "--iters", "10", "--warmup", "1"]));
    let text = stdout(&o);
    assert!(text.contains("10 iters"), "{text}");
    assert!(text.contains(&format!("params {}", model.param_count())), "{text}");
    assert!(text.contains("median") && text.contains("p95") && text.contains("fps"));
}
