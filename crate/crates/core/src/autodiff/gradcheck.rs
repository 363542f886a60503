//! Central-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Graph, Var};

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps` for each
/// coordinate in `coords`, compared against `analytic[i]`. Returns the
/// largest relative error.
pub fn check_coordinates(
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    eps: f64,
) -> Result<f64> {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in coords {
        probe[i] = x[i] + eps;
        let up = eval(&probe)?;
        probe[i] = x[i] - eps;
        let down = eval(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Checks a scalar-valued tensor function at `x` over every coordinate.
pub fn finite_diff_check(
    f: impl Fn(&mut Graph, Var) -> Result<Var>,
    x: &Tensor,
    eps: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.param(x.clone())?;
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |data: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let t = Tensor::new(x.shape().to_vec(), data.to_vec())?;
        let v = g.constant(t)?;
        let out = f(&mut g, v)?;
        g.value(out).item()
    };
    if g.value(loss).numel() != 1 {
        return Err(Error::Contract(
            "finite_diff_check needs a scalar function".into(),
        ));
    }
    check_coordinates(eval, x.data(), &analytic, 0..x.numel(), eps)
}
