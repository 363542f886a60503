use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr0 · ½(1 + cos(π e / E))`, floored at 0.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let e = epoch.min(total) as f64;
    (lr0 * 0.5 * (1.0 + (PI * e / total as f64).cos())).max(0.0)
}

pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> Result<f64> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm"));
    }
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    grads
        .values_mut()
        .flat_map(|g| g.iter_mut())
        .for_each(|v| *v *= scale);
    Ok(scale)
}

/// First and second moments per parameter, plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// Decoupled weight decay, then a bias-corrected Adam update. Nothing is
/// modified if any updated value would be non-finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let t = state.step + 1;
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    let mut staged = Vec::with_capacity(grads.len());
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name:?}")))?;
        if p.numel() != g.len() {
            return Err(Error::Shape(format!(
                "gradient of {name} has {} values, parameter {}",
                g.len(),
                p.numel()
            )));
        }
        let zeros = || vec![0.0; g.len()];
        let mut m = state.m.get(name).cloned().unwrap_or_else(zeros);
        let mut v = state.v.get(name).cloned().unwrap_or_else(zeros);
        let mut out = p.data().to_vec();
        for i in 0..g.len() {
            out[i] -= lr * weight_decay * out[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            out[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("adam update"));
        }
        staged.push((name.clone(), out, m, v));
    }
    for (name, out, m, v) in staged {
        params
            .get_mut(&name)
            .expect("checked above")
            .data_mut()
            .copy_from_slice(&out);
        state.m.insert(name.clone(), m);
        state.v.insert(name, v);
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(name: &str, v: f64) -> ModelParams {
        let mut p = ModelParams::default();
        p.insert(name, Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        p
    }

    fn grads(name: &str, g: &[f64]) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([(name.to_string(), g.to_vec())])
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 20, 1e-4), 1e-4);
        assert!(cosine_lr(20, 20, 1e-4).abs() < 1e-20);
        assert!((cosine_lr(10, 20, 1e-4) - 5e-5).abs() < 1e-18);
        for e in 0..20 {
            assert!(cosine_lr(e + 1, 20, 1e-4) <= cosine_lr(e, 20, 1e-4));
        }
    }

    #[test]
    fn clipping_examples() {
        let mut g = grads("a", &[0.3, 0.4]);
        assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 1.0);
        assert_eq!(g["a"], vec![0.3, 0.4]);
        let mut g = grads("a", &[3.0, 4.0]);
        assert!((clip_grad_norm(&mut g, 1.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((g["a"][0] - 0.6).abs() < 1e-12 && (g["a"][1] - 0.8).abs() < 1e-12);
        let mut g = grads("a", &[f64::NAN]);
        assert!(clip_grad_norm(&mut g, 1.0).is_err());
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut p = one("w", 0.7);
        let mut s = AdamState::new();
        adam_step(&mut p, &grads("w", &[0.0]), &mut s, 1e-3, 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.5, -7.0] {
            let mut p = one("w", 0.0);
            let mut s = AdamState::new();
            adam_step(&mut p, &grads("w", &[g]), &mut s, 1e-4, 0.0).unwrap();
            let d = p.get("w").unwrap().data()[0];
            assert!((d.abs() - 1e-4).abs() < 1e-9, "{g}: {d}");
            assert_eq!(d.signum(), -g.signum());
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let (lr, wd) = (1e-2, 0.1);
        let mut p = one("w", 0.5);
        let mut s = AdamState::new();
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            adam_step(&mut p, &grads("w", &[1.0]), &mut s, lr, wd).unwrap();
            x -= lr * wd * x;
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((p.get("w").unwrap().data()[0] - x).abs() < 1e-12);
        }
        assert_eq!(s.step, 3);
    }
}
