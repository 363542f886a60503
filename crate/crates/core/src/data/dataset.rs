//! On-disk layout: `<root>/<split>/<seq_id>/<frame>_{m,f}.pgm`, one
//! `meta.csv` per split, plus `dataset.txt` (generation settings) and
//! `checksum.txt` at the root.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{make_sequence, AffineParams, AppearanceParams, RegistrationSample};
use crate::error::{Error, Result};
use crate::image::{read_pgm, write_pgm};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

const META_HEADER: &str = "seq_id,frame_idx,theta,tx,ty,sx,sy,shear,gamma,gain,bias,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub size: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub max_frames: usize,
}

impl Default for GenConfig {
    /// Desk scale: 512/64/64 pairs at 64², sequences of 4.
    fn default() -> Self {
        GenConfig {
            train_pairs: 512,
            val_pairs: 64,
            test_pairs: 64,
            size: 64,
            seq_len: 4,
            seed: 0,
            max_frames: 64,
        }
    }
}

impl GenConfig {
    pub fn pairs(&self, split: usize) -> usize {
        [self.train_pairs, self.val_pairs, self.test_pairs][split]
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be >= 1".into()));
        }
        if self.size < 8 {
            return Err(Error::Config(format!("size {} too small", self.size)));
        }
        if self.seq_len > self.max_frames {
            return Err(Error::Range {
                what: "sequence length vs embedding table rows",
                index: self.seq_len,
                bound: self.max_frames,
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "train_pairs={}\nval_pairs={}\ntest_pairs={}\nsize={}\nseq_len={}\nseed={}\nmax_frames={}\n",
            self.train_pairs,
            self.val_pairs,
            self.test_pairs,
            self.size,
            self.seq_len,
            self.seed,
            self.max_frames
        )
    }
}

/// Per-sequence seed, a SplitMix64 mix of (master seed, split, sequence).
pub fn sequence_seed(master: u64, split: usize, seq: u64) -> u64 {
    let mut z = master
        ^ (split as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ seq.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Frames of one sequence, in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub seq_id: u64,
    pub seed: u64,
    pub frames: Vec<RegistrationSample>,
}

fn frame_path(root: &Path, split: &str, seq: u64, t: usize, kind: char) -> PathBuf {
    root.join(split).join(seq.to_string()).join(format!("{t}_{kind}.pgm"))
}

fn meta_row(seed: u64, s: &RegistrationSample) -> String {
    let (a, q) = (&s.affine, &s.appearance);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        s.seq_id, s.t, a.theta, a.tx, a.ty, a.sx, a.sy, a.shear, q.gamma, q.gain, q.bias, seed
    )
}

/// Builds the in-memory sequences of one split.
pub fn build_split(cfg: &GenConfig, split: usize) -> Result<Vec<Sequence>> {
    let pairs = cfg.pairs(split);
    let count = pairs.div_ceil(cfg.seq_len);
    (0..count as u64)
        .into_par_iter()
        .map(|seq| {
            let len = cfg.seq_len.min(pairs - seq as usize * cfg.seq_len);
            let seed = sequence_seed(cfg.seed, split, seq);
            let frames = make_sequence(seed, seq, len, cfg.size, cfg.size, cfg.max_frames)?;
            Ok(Sequence {
                seq_id: seq,
                seed,
                frames,
            })
        })
        .collect()
}

/// Writes all three splits under `root` and returns the dataset checksum.
/// Refuses a non-empty `root` unless `force` is set.
pub fn generate(root: &Path, cfg: &GenConfig, force: bool) -> Result<String> {
    cfg.validate()?;
    if root.exists() {
        let non_empty = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "{} exists and is not empty (use --force)",
                root.display()
            )));
        }
        if non_empty {
            for split in SPLITS {
                let dir = root.join(split);
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
            }
        }
    }
    for (si, split) in SPLITS.iter().enumerate() {
        let seqs = build_split(cfg, si)?;
        let mut meta = format!("{META_HEADER}\n");
        for s in &seqs {
            let dir = root.join(split).join(s.seq_id.to_string());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for f in &s.frames {
                meta.push_str(&meta_row(s.seed, f));
            }
        }
        seqs.par_iter()
            .flat_map(|s| s.frames.par_iter())
            .try_for_each(|f| {
                write_pgm(&f.moving, frame_path(root, split, f.seq_id, f.t, 'm'))?;
                write_pgm(&f.fixed, frame_path(root, split, f.seq_id, f.t, 'f'))
            })?;
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let p = dir.join("meta.csv");
        fs::write(&p, meta).map_err(|e| Error::io(&p, e))?;
    }
    let p = root.join("dataset.txt");
    fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
    let sum = dataset_checksum(root)?;
    let p = root.join("checksum.txt");
    fs::write(&p, format!("{sum}\n")).map_err(|e| Error::io(&p, e))?;
    Ok(sum)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// SHA-256 over every split file and `dataset.txt`, in sorted relative-path
/// order, each hashed as `path NUL length bytes`.
pub fn dataset_checksum(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    for split in SPLITS {
        let dir = root.join(split);
        if dir.exists() {
            collect_files(&dir, &mut files)?;
        }
    }
    files.push(root.join("dataset.txt"));
    let mut rel: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let r = p
                .strip_prefix(root)
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/");
            (r, p)
        })
        .collect();
    rel.sort();
    let mut h = Sha256::new();
    for (name, path) in rel {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(name.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn parse_field<T: std::str::FromStr>(v: &str, line: usize, path: &Path) -> Result<T> {
    v.trim().parse().map_err(|_| {
        Error::Data(format!(
            "{}:{line}: cannot parse {v:?}",
            path.display()
        ))
    })
}

/// Loads one split, grouping frames by sequence in `meta.csv` order.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<Sequence>> {
    let meta = root.join(split).join("meta.csv");
    if !meta.exists() {
        return Err(Error::Data(format!("missing split {split:?} under {}", root.display())));
    }
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(META_HEADER) {
        return Err(Error::Data(format!("{}: unexpected header", meta.display())));
    }
    let mut seqs: Vec<Sequence> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Data(format!(
                "{}:{lno}: expected 12 columns, got {}",
                meta.display(),
                f.len()
            )));
        }
        let num = |k: usize| parse_field::<f64>(f[k], lno, &meta);
        let seq_id: u64 = parse_field(f[0], lno, &meta)?;
        let t: usize = parse_field(f[1], lno, &meta)?;
        let seed: u64 = parse_field(f[11], lno, &meta)?;
        let sample = RegistrationSample {
            moving: read_pgm(frame_path(root, split, seq_id, t, 'm'))?,
            fixed: read_pgm(frame_path(root, split, seq_id, t, 'f'))?,
            t,
            seq_id,
            affine: AffineParams {
                theta: num(2)?,
                tx: num(3)?,
                ty: num(4)?,
                sx: num(5)?,
                sy: num(6)?,
                shear: num(7)?,
            },
            appearance: AppearanceParams {
                gamma: num(8)?,
                gain: num(9)?,
                bias: num(10)?,
            },
        };
        match seqs.last_mut() {
            Some(s) if s.seq_id == seq_id => {
                if t != s.frames.len() {
                    return Err(Error::Data(format!(
                        "{}:{lno}: frame {t} out of order",
                        meta.display()
                    )));
                }
                s.frames.push(sample);
            }
            _ => {
                if t != 0 {
                    return Err(Error::Data(format!(
                        "{}:{lno}: sequence {seq_id} does not start at frame 0",
                        meta.display()
                    )));
                }
                seqs.push(Sequence {
                    seq_id,
                    seed,
                    frames: vec![sample],
                });
            }
        }
    }
    if seqs.is_empty() {
        return Err(Error::Data(format!("split {split:?} is empty")));
    }
    Ok(seqs)
}
