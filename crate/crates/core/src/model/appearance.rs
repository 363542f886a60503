use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Session;

impl Session<'_> {
    /// Global appearance code `[N, d_a]`: stride-2 convs with relu and no
    /// normalization, global average pooling, then two dense layers.
    pub fn appearance_encode(&mut self, image: &Tensor) -> Result<Var> {
        let (_, c, h, w) = image.dims4()?;
        let m = self.config().spatial_multiple();
        if c != self.config().in_channels {
            return Err(Error::Shape(format!(
                "appearance_encode expects 1 channel, got {c}"
            )));
        }
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "appearance_encode needs H, W divisible by {m}, got {h}x{w}"
            )));
        }
        let mut x = self.graph.constant(image.clone())?;
        for i in 0..self.config().encoder_channels.len() {
            x = self.conv(x, &format!("appearance.conv{i}"), 2)?;
            x = self.graph.relu(x)?;
        }
        let pooled = self.graph.global_avg_pool(x)?;
        let hidden = self.dense(pooled, "appearance.fc1")?;
        let hidden = self.graph.relu(hidden)?;
        self.dense(hidden, "appearance.fc2")
    }
}
