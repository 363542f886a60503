//! The registration network: scene encoder, appearance encoder, temporal
//! position encoding and AdaIN decoder, composed into a deformation-free
//! map `(moving, fixed) -> registered`.
//!
//! Forward passes run inside a [`Session`], which binds every parameter as a
//! leaf of a fresh [`Graph`] so a loss built from the outputs can be
//! differentiated with respect to the whole model.

mod appearance;
mod config;
mod decoder;
mod gpe;
mod params;
mod scene;

use std::collections::BTreeMap;

pub use config::ModelConfig;
pub use gpe::{sinusoidal_encoding, FrameCache};
pub use params::ModelParams;
pub use scene::standardize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Position of one batch item in its sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    /// Index into `caches` passed alongside the batch.
    pub cache: usize,
    pub seq_id: u64,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl RegistrationModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(RegistrationModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(RegistrationModel { config, params })
    }

    pub fn session(&self) -> Result<Session<'_>> {
        Session::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Registers a batch and returns the output values. Frames of one sequence
    /// must appear in order; `caches` are updated in place.
    pub fn register(
        &self,
        moving: &Tensor,
        fixed: &Tensor,
        frames: &[Frame],
        caches: &mut [FrameCache],
    ) -> Result<Tensor> {
        let mut s = self.session()?;
        let out = s.register(moving, fixed, frames, caches)?;
        Ok(s.graph.value(out.output).clone())
    }
}

/// Intermediate handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub scene: Var,
    pub enhanced: Var,
    pub appearance: Var,
    pub output: Var,
}

/// A parameter-bound graph for one forward/backward pass.
pub struct Session<'m> {
    pub model: &'m RegistrationModel,
    pub graph: Graph,
    vars: BTreeMap<String, Var>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m RegistrationModel) -> Result<Self> {
        let mut graph = Graph::new();
        let mut vars = BTreeMap::new();
        for (name, t) in model.params.iter() {
            vars.insert(name.to_string(), graph.param(t.clone())?);
        }
        Ok(Session { model, graph, vars })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Leaf handle of a named parameter.
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradient of every parameter after a backward pass; zeros where the
    /// loss did not depend on a parameter.
    pub fn gradients(&self) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = match self.graph.grad(v) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; self.graph.value(v).numel()],
                };
                (name.clone(), g)
            })
            .collect()
    }

    /// 3×3 convolution with "same" padding and the named weight/bias pair.
    pub(crate) fn conv(&mut self, x: Var, name: &str, stride: usize) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        self.graph.conv2d(x, w, Some(b), stride, 1)
    }

    /// 3×3 "same" convolution without bias, for convs that feed a norm.
    pub(crate) fn conv_unbiased(&mut self, x: Var, name: &str, stride: usize) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        self.graph.conv2d(x, w, None, stride, 1)
    }

    pub(crate) fn dense(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        self.graph.linear(x, w, Some(b))
    }

    fn check_images(&self, moving: &Tensor, fixed: &Tensor) -> Result<()> {
        if moving.shape() != fixed.shape() {
            return Err(Error::Shape(format!(
                "moving {:?} and fixed {:?} differ",
                moving.shape(),
                fixed.shape()
            )));
        }
        Ok(())
    }

    /// Full composition: decode(gpe(scene(moving)), appearance(fixed)).
    pub fn register(
        &mut self,
        moving: &Tensor,
        fixed: &Tensor,
        frames: &[Frame],
        caches: &mut [FrameCache],
    ) -> Result<Forward> {
        self.check_images(moving, fixed)?;
        let scene = self.scene_encode(moving)?;
        let appearance = self.appearance_encode(fixed)?;
        let enhanced = self.gpe_forward(scene, frames, caches)?;
        let output = self.decode(enhanced, appearance)?;
        Ok(Forward {
            scene,
            enhanced,
            appearance,
            output,
        })
    }
}
