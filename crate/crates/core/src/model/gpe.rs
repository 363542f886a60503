//! Temporal position encoding: learned frame embedding, fixed sinusoidal
//! code and cross-frame attention over a causal cache of past frames, added
//! to the scene features as one per-channel offset.

use std::collections::VecDeque;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Frame, Session};

/// `p[2i] = sin(t / 10000^(2i/d))`, `p[2i+1] = cos(t / 10000^(2i/d))`.
pub fn sinusoidal_encoding(t: usize, d: usize) -> Vec<f64> {
    assert!(d % 2 == 0, "sinusoidal_encoding needs even d, got {d}");
    let mut p = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = t as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
        p[2 * i] = angle.sin();
        p[2 * i + 1] = angle.cos();
    }
    p
}

/// Causal FIFO of up to `capacity` spatially averaged scene summaries from
/// earlier frames of a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCache {
    capacity: usize,
    seq_id: Option<u64>,
    entries: VecDeque<Vec<f64>>,
}

impl FrameCache {
    pub fn new(capacity: usize) -> Self {
        FrameCache {
            capacity,
            seq_id: None,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seq_id(&self) -> Option<u64> {
        self.seq_id
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    /// Empties the ring and unbinds the sequence id.
    pub fn reset(&mut self) {
        self.entries.clear();
        self.seq_id = None;
    }

    /// Fails if the cache is bound to a different sequence.
    pub fn check_sequence(&self, seq_id: u64) -> Result<()> {
        match self.seq_id {
            Some(s) if s != seq_id => Err(Error::Contract(format!(
                "frame cache holds sequence {s}, got a frame of sequence {seq_id}"
            ))),
            _ => Ok(()),
        }
    }

    /// Appends a summary, evicting the oldest beyond capacity.
    pub fn push(&mut self, seq_id: u64, summary: Vec<f64>) -> Result<()> {
        self.check_sequence(seq_id)?;
        self.seq_id = Some(seq_id);
        self.entries.push_back(summary);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }
}

impl Session<'_> {
    /// Multi-head scaled dot-product attention of the current summary
    /// (`[1, d]`) over the cached summaries plus the current one.
    pub fn cross_frame_attention(&mut self, summary: Var, cache: &FrameCache) -> Result<Var> {
        let d = self.config().gpe_dim;
        let heads = self.config().heads;
        let hd = self.config().head_dim();
        if self.graph.shape(summary) != [1, d] {
            return Err(Error::Shape(format!(
                "attention query must be [1, {d}], got {:?}",
                self.graph.shape(summary)
            )));
        }
        let mut rows = Vec::with_capacity(cache.len() + 1);
        for entry in cache.entries() {
            rows.push(
                self.graph
                    .constant(Tensor::new(vec![1, d], entry.to_vec())?)?,
            );
        }
        rows.push(summary);
        let keys = if rows.len() == 1 {
            summary
        } else {
            self.graph.concat(&rows, 0)?
        };

        let (wq, wk, wv, wo) = (
            self.var("gpe.q")?,
            self.var("gpe.k")?,
            self.var("gpe.v")?,
            self.var("gpe.o")?,
        );
        let q = self.graph.linear(summary, wq, None)?;
        let k = self.graph.linear(keys, wk, None)?;
        let v = self.graph.linear(keys, wv, None)?;

        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.graph.slice(q, 1, h * hd, hd)?;
            let kh = self.graph.slice(k, 1, h * hd, hd)?;
            let vh = self.graph.slice(v, 1, h * hd, hd)?;
            let scores = self.graph.matmul(qh, kh, true)?;
            let scores = self.graph.scale(scores, scale)?;
            let weights = self.graph.softmax(scores)?;
            outs.push(self.graph.matmul(weights, vh, false)?);
        }
        let merged = self.graph.concat(&outs, 1)?;
        self.graph.linear(merged, wo, None)
    }

    /// Fused position code `g_t = MLP([E[t], p_t])`, shape `[1, d]`.
    pub fn position_code(&mut self, t: usize) -> Result<Var> {
        let d = self.config().gpe_dim;
        let n = self.config().max_frames;
        if t >= n {
            return Err(Error::Range {
                what: "frame index vs embedding table rows",
                index: t,
                bound: n,
            });
        }
        let table = self.var("gpe.embed")?;
        let e = self.graph.slice(table, 0, t, 1)?;
        let p = self
            .graph
            .constant(Tensor::new(vec![1, d], sinusoidal_encoding(t, d))?)?;
        let ep = self.graph.concat(&[e, p], 1)?;
        let h = self.dense(ep, "gpe.mlp1")?;
        let h = self.graph.relu(h)?;
        self.dense(h, "gpe.mlp2")
    }

    /// `s̃ = s + alpha · W_proj (g_t + c_t)`, broadcast over space, for every
    /// batch item in order. Each item's pre-encoding summary is pushed onto
    /// its cache afterwards.
    pub fn gpe_forward(
        &mut self,
        scene: Var,
        frames: &[Frame],
        caches: &mut [FrameCache],
    ) -> Result<Var> {
        let (n, c, _, _) = self.graph.value(scene).dims4()?;
        if frames.len() != n {
            return Err(Error::Shape(format!(
                "{} frames for a batch of {n}",
                frames.len()
            )));
        }
        if c != self.config().gpe_dim {
            return Err(Error::Shape(format!(
                "scene has {c} channels, expected {}",
                self.config().gpe_dim
            )));
        }
        for f in frames {
            if f.cache >= caches.len() {
                return Err(Error::Range {
                    what: "frame cache",
                    index: f.cache,
                    bound: caches.len(),
                });
            }
            if f.t >= self.config().max_frames {
                return Err(Error::Range {
                    what: "frame index vs embedding table rows",
                    index: f.t,
                    bound: self.config().max_frames,
                });
            }
        }
        let alpha = self.config().alpha;
        let summaries = self.graph.global_avg_pool(scene)?;
        let proj = self.var("gpe.proj")?;

        let mut offsets = Vec::with_capacity(n);
        for (i, f) in frames.iter().enumerate() {
            caches[f.cache].check_sequence(f.seq_id)?;
            let summary = self.graph.slice(summaries, 0, i, 1)?;
            if alpha != 0.0 {
                let context = self.cross_frame_attention(summary, &caches[f.cache])?;
                let position = self.position_code(f.t)?;
                let fused = self.graph.add(position, context)?;
                offsets.push(self.graph.linear(fused, proj, None)?);
            }
            let value = self.graph.value(summary).data().to_vec();
            caches[f.cache].push(f.seq_id, value)?;
        }
        if alpha == 0.0 {
            return Ok(scene);
        }
        let offsets = if offsets.len() == 1 {
            offsets[0]
        } else {
            self.graph.concat(&offsets, 0)?
        };
        let offsets = self.graph.scale(offsets, alpha)?;
        self.graph.channel_add(scene, offsets)
    }
}
