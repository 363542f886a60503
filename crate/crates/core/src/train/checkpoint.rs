//! Binary checkpoint layout (little-endian throughout):
//!
//! ```text
//! "GPER" | u32 version | u64 len, config text
//! u64 tensor count | per tensor: u32 name len, name, u32 rank, u64 dims…, f64 values…
//! u64 adam step | per tensor (same order): f64 m…, f64 v…
//! u64 epoch | u64 global step | f64 best val ssim
//! rng: [u8; 32] seed, u64 stream, u128 word position
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::{AdamState, RunConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{ModelParams, RegistrationModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GPER";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflow".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid utf-8 in checkpoint".into()))
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(t: &Trainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = RunConfig {
        model: t.model.config.clone(),
        train: t.config.clone(),
    }
    .to_text();
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());

    out.extend_from_slice(&(t.model.params.len() as u64).to_le_bytes());
    for (name, tensor) in t.model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f64s(&mut out, tensor.data());
    }

    out.extend_from_slice(&t.adam.step.to_le_bytes());
    for (name, tensor) in t.model.params.iter() {
        let zeros = vec![0.0; tensor.numel()];
        put_f64s(&mut out, t.adam.m.get(name).unwrap_or(&zeros));
        put_f64s(&mut out, t.adam.v.get(name).unwrap_or(&zeros));
    }

    out.extend_from_slice(&(t.epoch as u64).to_le_bytes());
    out.extend_from_slice(&t.step.to_le_bytes());
    out.extend_from_slice(&t.best_ssim.to_le_bytes());
    out.extend_from_slice(&t.rng.get_seed());
    out.extend_from_slice(&t.rng.get_stream().to_le_bytes());
    out.extend_from_slice(&t.rng.get_word_pos().to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("not a checkpoint".into()))? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let n = r.usize()?;
    let cfg = RunConfig::from_text(&r.string(n)?)?;

    let count = r.usize()?;
    let mut params = ModelParams::new();
    let mut order = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = r.string(n)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("shape overflow".into()))?;
        let data = r.f64s(numel)?;
        params.insert(name.clone(), Tensor::new(shape, data)?)?;
        order.push((name, numel));
    }
    let model = RegistrationModel::from_parts(cfg.model, params)?;

    let mut adam = AdamState {
        step: r.u64()?,
        ..AdamState::default()
    };
    for (name, numel) in order {
        adam.m.insert(name.clone(), r.f64s(numel)?);
        adam.v.insert(name, r.f64s(numel)?);
    }

    let epoch = r.usize()?;
    let step = r.u64()?;
    let best_ssim = f64::from_le_bytes(r.array()?);
    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes in checkpoint",
            bytes.len() - r.pos
        )));
    }
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(Trainer {
        model,
        adam,
        config: cfg.train,
        epoch,
        step,
        best_ssim,
        rng,
    })
}

pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
