//! Training objective: mean-L1 reconstruction plus a weighted
//! scene-consistency term.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::Session;
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub recon: f64,
    pub scene: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossReport {
    pub fn new(recon: f64, scene: f64, lambda: f64) -> Self {
        LossReport {
            recon,
            scene,
            total: recon + lambda * scene,
            lambda,
        }
    }
}

/// Mean absolute error between the registered output and the fixed image.
pub fn recon_loss(g: &mut Graph, registered: Var, fixed: Var) -> Result<Var> {
    let diff = g.sub(registered, fixed)?;
    g.mean_abs(diff)
}

/// Mean squared difference of two scene feature maps.
pub fn scene_loss_from_features(g: &mut Graph, moving_scene: Var, fixed_scene: Var) -> Result<Var> {
    let diff = g.sub(moving_scene, fixed_scene)?;
    g.mean_sq(diff)
}

/// Scene-consistency loss; gradients reach the scene encoder through both
/// branches.
pub fn scene_consistency_loss(
    session: &mut Session<'_>,
    moving: &Tensor,
    fixed: &Tensor,
) -> Result<Var> {
    if moving.shape() != fixed.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            moving.shape(),
            fixed.shape()
        )));
    }
    let sm = session.scene_encode(moving)?;
    let sf = session.scene_encode(fixed)?;
    scene_loss_from_features(&mut session.graph, sm, sf)
}

/// Handles to the three loss scalars on the graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub recon: Var,
    pub scene: Var,
    pub total: Var,
}

impl LossVars {
    pub fn report(&self, g: &Graph, lambda: f64) -> Result<LossReport> {
        Ok(LossReport {
            recon: g.value(self.recon).item()?,
            scene: g.value(self.scene).item()?,
            total: g.value(self.total).item()?,
            lambda,
        })
    }
}

/// `recon + lambda · scene` given the registered output, the fixed image and
/// both scene maps.
pub fn total_loss(
    g: &mut Graph,
    registered: Var,
    fixed: Var,
    moving_scene: Var,
    fixed_scene: Var,
    lambda: f64,
) -> Result<LossVars> {
    let recon = recon_loss(g, registered, fixed)?;
    let scene = scene_loss_from_features(g, moving_scene, fixed_scene)?;
    let weighted = g.scale(scene, lambda)?;
    let total = g.add(recon, weighted)?;
    Ok(LossVars {
        recon,
        scene,
        total,
    })
}
