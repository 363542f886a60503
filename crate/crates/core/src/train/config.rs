use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::DEFAULT_LAMBDA;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Dataset root; usually given on the command line.
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            weight_decay: 1e-5,
            epochs: 20,
            batch: 8,
            clip_norm: 1.0,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            data: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !pos(self.lr0) || !nonneg(self.weight_decay) || !pos(self.clip_norm) {
            return Err(Error::Config(format!(
                "lr {} and clip_norm {} must be > 0, weight_decay {} >= 0",
                self.lr0, self.clip_norm, self.weight_decay
            )));
        }
        if !nonneg(self.lambda) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "lr={:?}\nweight_decay={:?}\nepochs={}\nbatch={}\nclip_norm={:?}\nlambda={:?}\nseed={}\n",
            self.lr0, self.weight_decay, self.epochs, self.batch, self.clip_norm, self.lambda, self.seed
        );
        if let Some(d) = &self.data {
            s.push_str(&format!("data={}\n", d.display()));
        }
        s
    }

    /// Applies one setting; `Ok(false)` for keys this struct does not own.
    pub fn try_set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "lr" | "lr0" => self.lr0 = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Model and training settings resolved from one `key=value` text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Starts from `base` and applies every line of `text`. `#` starts a
    /// comment; unknown keys are errors carrying their line number.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::ConfigLine { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key=value, got {line:?}")))?;
            self.set(key.trim(), value.trim()).map_err(at)?;
        }
        Ok(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = RunConfig::default().apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        if self.model.try_set(key, value)? || self.train.try_set(key, value)? {
            Ok(())
        } else {
            Err(format!("unknown key {key:?}"))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        format!("{}{}", self.model.to_text(), self.train.to_text())
    }
}
