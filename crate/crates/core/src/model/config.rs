use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults describe the full 256² network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub scene_channels: usize,
    pub appearance_dim: usize,
    pub appearance_hidden: usize,
    pub gpe_dim: usize,
    pub gpe_hidden: usize,
    pub heads: usize,
    /// Number of past frames kept in the attention cache.
    pub window: usize,
    pub alpha: f64,
    /// Rows of the learned frame-embedding table; frame indices must be below this.
    pub max_frames: usize,
    pub decoder_channels: Vec<usize>,
    pub eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 256,
            in_channels: 1,
            encoder_channels: vec![32, 64, 128, 256],
            scene_channels: 64,
            appearance_dim: 32,
            appearance_hidden: 128,
            gpe_dim: 64,
            gpe_hidden: 128,
            heads: 4,
            window: 2,
            alpha: 0.1,
            max_frames: 64,
            decoder_channels: vec![64, 32, 16],
            eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// The 64² configuration used for desk-scale training.
    pub fn desk() -> Self {
        ModelConfig {
            image_size: 64,
            ..ModelConfig::default()
        }
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self
    }

    /// Spatial divisor imposed by the scene encoder's stride-2 stages.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.encoder_channels.len() - 1)
    }

    pub fn head_dim(&self) -> usize {
        self.gpe_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels != 1 {
            return bad(format!("in_channels must be 1, got {}", self.in_channels));
        }
        if self.encoder_channels.len() < 2 || self.encoder_channels.contains(&0) {
            return bad(format!(
                "encoder_channels {:?} needs >= 2 positive widths",
                self.encoder_channels
            ));
        }
        if self.decoder_channels.is_empty() || self.decoder_channels.contains(&0) {
            return bad(format!(
                "decoder_channels {:?} must be non-empty and positive",
                self.decoder_channels
            ));
        }
        if self.heads == 0 || self.gpe_dim % self.heads != 0 {
            return bad(format!(
                "gpe_dim {} not divisible by heads {}",
                self.gpe_dim, self.heads
            ));
        }
        if self.gpe_dim % 2 != 0 {
            return bad(format!(
                "gpe_dim {} must be even for the sinusoidal code",
                self.gpe_dim
            ));
        }
        if self.scene_channels != self.gpe_dim {
            return bad(format!(
                "scene_channels {} must equal gpe_dim {}",
                self.scene_channels, self.gpe_dim
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be finite and >= 0", self.alpha));
        }
        if self.max_frames == 0 {
            return bad("max_frames must be >= 1".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps {} must be > 0", self.eps));
        }
        if self.appearance_dim == 0 || self.appearance_hidden == 0 || self.gpe_hidden == 0 {
            return bad("appearance_dim, appearance_hidden and gpe_hidden must be >= 1".into());
        }
        if self.image_size == 0 || self.image_size % self.spatial_multiple() != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of {}",
                self.image_size,
                self.spatial_multiple()
            ));
        }
        Ok(())
    }

    /// `key=value` lines; the inverse of [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        format!(
            "image_size={}\nin_channels={}\nencoder_channels={}\nscene_channels={}\nappearance_dim={}\n\
             appearance_hidden={}\ngpe_dim={}\ngpe_hidden={}\nheads={}\nwindow={}\nalpha={:?}\n\
             max_frames={}\ndecoder_channels={}\neps={:?}\n",
            self.image_size,
            self.in_channels,
            list(&self.encoder_channels),
            self.scene_channels,
            self.appearance_dim,
            self.appearance_hidden,
            self.gpe_dim,
            self.gpe_hidden,
            self.heads,
            self.window,
            self.alpha,
            self.max_frames,
            list(&self.decoder_channels),
            self.eps,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|msg| Error::ConfigLine { line: i + 1, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one textual setting. Returns `Ok(false)` for keys that are not
    /// model settings.
    pub fn try_set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        fn list(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
            v.split(',').map(|p| num(key, p.trim())).collect()
        }
        match key {
            "image_size" | "size" => self.image_size = num(key, value)?,
            "in_channels" => self.in_channels = num(key, value)?,
            "encoder_channels" => self.encoder_channels = list(key, value)?,
            "scene_channels" => self.scene_channels = num(key, value)?,
            "appearance_dim" => self.appearance_dim = num(key, value)?,
            "appearance_hidden" => self.appearance_hidden = num(key, value)?,
            "gpe_dim" => self.gpe_dim = num(key, value)?,
            "gpe_hidden" => self.gpe_hidden = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "max_frames" => self.max_frames = num(key, value)?,
            "decoder_channels" => self.decoder_channels = list(key, value)?,
            "eps" => self.eps = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match self.try_set(key, value)? {
            true => Ok(()),
            false => Err(format!("unknown model key {key:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        assert_eq!(ModelConfig::default().head_dim(), 16);
    }

    #[test]
    fn text_round_trip() {
        let cfg = ModelConfig {
            alpha: 0.25,
            window: 3,
            ..ModelConfig::desk()
        };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_key_names_line() {
        let err = ModelConfig::from_text("image_size=64\nbogus=1\n").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 2, .. }), "{err}");
    }
}
