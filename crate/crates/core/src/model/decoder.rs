use crate::autodiff::Var;
use crate::error::{Error, Result};

use super::Session;

impl Session<'_> {
    /// `gamma ⊙ IN(s) + beta` with per-(item, channel) `gamma`, `beta` of
    /// shape `[N, C]`.
    pub fn adain_with(&mut self, s: Var, gamma: Var, beta: Var) -> Result<Var> {
        let eps = self.config().eps;
        let normed = self.graph.instance_norm(s, eps)?;
        self.graph.channel_affine(normed, gamma, beta)
    }

    /// Style parameters `(gamma, beta)` that decoder block `block` derives
    /// from the appearance code.
    pub fn style_params(&mut self, appearance: Var, block: usize) -> Result<(Var, Var)> {
        let style = self.dense(appearance, &format!("decoder.block{block}.style"))?;
        let c = self.graph.shape(style)[1] / 2;
        let gamma = self.graph.slice(style, 1, 0, c)?;
        let beta = self.graph.slice(style, 1, c, c)?;
        Ok((gamma, beta))
    }

    /// Adaptive instance normalization of `s` with the affine parameters that
    /// block `block` generates from `appearance`.
    pub fn adain(&mut self, s: Var, appearance: Var, block: usize) -> Result<Var> {
        if block >= self.config().decoder_channels.len() {
            return Err(Error::Range {
                what: "decoder block",
                index: block,
                bound: self.config().decoder_channels.len(),
            });
        }
        let (gamma, beta) = self.style_params(appearance, block)?;
        self.adain_with(s, gamma, beta)
    }

    /// AdaIN-conv blocks then a 1-channel sigmoid head. Purely convolutional:
    /// no resampling of any kind.
    pub fn decode(&mut self, scene: Var, appearance: Var) -> Result<Var> {
        let mut h = scene;
        for i in 0..self.config().decoder_channels.len() {
            h = self.adain(h, appearance, i)?;
            h = self.conv(h, &format!("decoder.block{i}.conv"), 1)?;
            h = self.graph.relu(h)?;
        }
        let out = self.conv(h, "decoder.head", 1)?;
        self.graph
            .activation(out, crate::autodiff::Activation::Sigmoid)
    }
}
