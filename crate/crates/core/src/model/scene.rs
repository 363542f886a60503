use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Session;

/// Per-plane zero-mean, unit-variance standardization of an NCHW image batch,
/// with no epsilon: planes with (numerically) zero variance map to zeros.
///
/// This makes the scene pathway exactly invariant to `a·I + b` for `a > 0`,
/// which neither zero-padded convolution nor epsilon-guarded normalization
/// would give on their own.
pub fn standardize(images: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = images.dims4()?;
    let plane = h * w;
    let mut out = images.clone();
    for p in out.data_mut().chunks_mut(plane) {
        let mean = p.iter().sum::<f64>() / plane as f64;
        let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let scale = mean.abs().max(1.0);
        if var.sqrt() <= 1e-12 * scale {
            p.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let r = 1.0 / var.sqrt();
            p.iter_mut().for_each(|v| *v = (*v - mean) * r);
        }
    }
    Ok(out)
}

impl Session<'_> {
    fn conv_norm_relu(&mut self, x: Var, name: &str, stride: usize) -> Result<Var> {
        let eps = self.config().eps;
        let y = self.conv_unbiased(x, name, stride)?;
        let y = self.graph.instance_norm(y, eps)?;
        self.graph.relu(y)
    }

    /// `relu([conv → IN → relu → conv → IN](x) + x)`.
    fn residual(&mut self, x: Var, name: &str) -> Result<Var> {
        let eps = self.config().eps;
        let h = self.conv_norm_relu(x, &format!("{name}.res1"), 1)?;
        let h = self.conv_unbiased(h, &format!("{name}.res2"), 1)?;
        let h = self.graph.instance_norm(h, eps)?;
        let h = self.graph.add(h, x)?;
        self.graph.relu(h)
    }

    /// U-Net scene encoder: `[N,1,H,W] -> [N,C_s,H,W]`, intensity-affine invariant.
    pub fn scene_encode(&mut self, image: &Tensor) -> Result<Var> {
        let (_, c, h, w) = image.dims4()?;
        let m = self.config().spatial_multiple();
        if c != self.config().in_channels {
            return Err(Error::Shape(format!(
                "scene_encode expects 1 channel, got {c}"
            )));
        }
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "scene_encode needs H, W divisible by {m}, got {h}x{w}"
            )));
        }
        let levels = self.config().encoder_channels.len();
        let x = self.graph.constant(standardize(image)?)?;

        let mut h = self.conv_norm_relu(x, "scene.stem", 1)?;
        let mut skips = vec![h];
        for i in 1..levels {
            h = self.conv_norm_relu(h, &format!("scene.down{i}"), 2)?;
            h = self.residual(h, &format!("scene.down{i}"))?;
            skips.push(h);
        }
        for i in (0..levels - 1).rev() {
            h = self.graph.bilinear_upsample(h, 2)?;
            h = self.graph.concat(&[h, skips[i]], 1)?;
            h = self.conv_norm_relu(h, &format!("scene.up{i}"), 1)?;
        }
        let eps = self.config().eps;
        let h = self.conv_unbiased(h, "scene.head", 1)?;
        self.graph.instance_norm(h, eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_constant_is_zero() {
        let t = Tensor::full(&[1, 1, 4, 4], 7.0);
        assert!(standardize(&t).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_removes_affine() {
        let data: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
        let a = Tensor::new(vec![1, 1, 4, 4], data.clone()).unwrap();
        let b = Tensor::new(
            vec![1, 1, 4, 4],
            data.iter().map(|v| 2.0 * v - 0.3).collect(),
        )
        .unwrap();
        let diff = standardize(&a)
            .unwrap()
            .max_abs_diff(&standardize(&b).unwrap());
        assert!(diff < 1e-14, "{diff}");
    }
}
