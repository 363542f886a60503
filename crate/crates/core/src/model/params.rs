use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ModelConfig;

/// Named parameter tensors, ordered by name.
///
/// Names are dotted paths whose first segment is the owning sub-network:
/// `scene`, `appearance`, `gpe` or `decoder`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Shape of every parameter a configuration needs, in construction order.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let conv = |out: &mut Vec<_>, name: &str, cin: usize, cout: usize| {
        out.push((format!("{name}.w"), vec![cout, cin, 3, 3]));
        out.push((format!("{name}.b"), vec![cout]));
    };
    // Every scene conv feeds an instance norm, which cancels a bias exactly.
    let unbiased = |out: &mut Vec<_>, name: &str, cin: usize, cout: usize| {
        out.push((format!("{name}.w"), vec![cout, cin, 3, 3]));
    };
    let ch = &cfg.encoder_channels;
    let levels = ch.len();

    unbiased(&mut out, "scene.stem", cfg.in_channels, ch[0]);
    for i in 1..levels {
        unbiased(&mut out, &format!("scene.down{i}"), ch[i - 1], ch[i]);
        unbiased(&mut out, &format!("scene.down{i}.res1"), ch[i], ch[i]);
        unbiased(&mut out, &format!("scene.down{i}.res2"), ch[i], ch[i]);
    }
    for i in (0..levels - 1).rev() {
        unbiased(&mut out, &format!("scene.up{i}"), ch[i + 1] + ch[i], ch[i]);
    }
    unbiased(&mut out, "scene.head", ch[0], cfg.scene_channels);

    let mut cin = cfg.in_channels;
    for (i, &c) in ch.iter().enumerate() {
        conv(&mut out, &format!("appearance.conv{i}"), cin, c);
        cin = c;
    }
    let last = *ch.last().expect("validated non-empty");
    out.push(("appearance.fc1.w".into(), vec![cfg.appearance_hidden, last]));
    out.push(("appearance.fc1.b".into(), vec![cfg.appearance_hidden]));
    out.push((
        "appearance.fc2.w".into(),
        vec![cfg.appearance_dim, cfg.appearance_hidden],
    ));
    out.push(("appearance.fc2.b".into(), vec![cfg.appearance_dim]));

    let d = cfg.gpe_dim;
    out.push(("gpe.embed".into(), vec![cfg.max_frames, d]));
    for m in ["q", "k", "v", "o"] {
        out.push((format!("gpe.{m}"), vec![d, d]));
    }
    out.push(("gpe.mlp1.w".into(), vec![cfg.gpe_hidden, 2 * d]));
    out.push(("gpe.mlp1.b".into(), vec![cfg.gpe_hidden]));
    out.push(("gpe.mlp2.w".into(), vec![d, cfg.gpe_hidden]));
    out.push(("gpe.mlp2.b".into(), vec![d]));
    out.push(("gpe.proj".into(), vec![cfg.scene_channels, d]));

    let mut cin = cfg.scene_channels;
    for (i, &c) in cfg.decoder_channels.iter().enumerate() {
        out.push((
            format!("decoder.block{i}.style.w"),
            vec![2 * cin, cfg.appearance_dim],
        ));
        out.push((format!("decoder.block{i}.style.b"), vec![2 * cin]));
        conv(&mut out, &format!("decoder.block{i}.conv"), cin, c);
        cin = c;
    }
    conv(&mut out, "decoder.head", cin, 1);
    out
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    /// Seeded initialization: weights uniform in `±sqrt(1/fan_in)`, biases
    /// zero, embedding table `N(0, 0.02²)`. AdaIN style generators start at
    /// `gamma = 1`, `beta = 0` through their bias.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Normal::new(0.0, 0.02).expect("valid normal");
        let mut params = ModelParams::new();
        for (name, shape) in layout(cfg) {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name == "gpe.embed" {
                (0..numel).map(|_| embed.sample(&mut rng)).collect()
            } else if name.ends_with(".b") {
                let mut b = vec![0.0; numel];
                if name.contains(".style.") {
                    b[..numel / 2].iter_mut().for_each(|v| *v = 1.0);
                }
                b
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (1.0 / fan_in as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect()
            };
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(params)
    }

    /// Adds a tensor; duplicate names are rejected.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Contract(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Parameter counts grouped by sub-network, in first-seen order of the
    /// name prefixes.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
        for (name, t) in &self.tensors {
            let prefix = name.split('.').next().unwrap_or(name);
            *groups.entry(prefix).or_default() += t.numel();
        }
        let order = ["scene", "appearance", "gpe", "decoder"];
        let mut out: Vec<(String, usize)> = order
            .iter()
            .filter_map(|k| groups.remove(k).map(|n| (k.to_string(), n)))
            .collect();
        out.extend(groups.into_iter().map(|(k, n)| (k.to_string(), n)));
        out
    }

    /// Human-readable breakdown table.
    pub fn breakdown_table(&self) -> String {
        let mut s = String::from("module        params\n");
        for (module, n) in self.breakdown() {
            s.push_str(&format!("{module:<12} {n:>9}\n"));
        }
        s.push_str(&format!("{:<12} {:>9}\n", "total", self.param_count()));
        s
    }

    /// Checks that names and shapes match what `cfg` requires.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = layout(cfg);
        if expected.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Format(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Format(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }
}
