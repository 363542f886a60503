use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{self, ConvGeom};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Leaky ReLU with negative slope 0.2.
    LeakyRelu,
    Sigmoid,
}

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Softmax {
        x: Var,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        x: Var,
        c: f64,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    ChannelAdd {
        x: Var,
        v: Var,
    },
    Sum {
        x: Var,
    },
    MeanAbs {
        x: Var,
    },
    MeanSq {
        x: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Upsample { .. } => "bilinear_upsample",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::Softmax { .. } => "softmax",
            Op::Act { .. } => "activation",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale { .. } => "scale",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::ChannelAdd { .. } => "channel_add",
            Op::Sum { .. } => "sum",
            Op::MeanAbs { .. } => "mean_abs",
            Op::MeanSq { .. } => "mean_sq",
        }
    }

    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => [Some(*input), Some(*weight), *bias]
                .into_iter()
                .flatten()
                .collect(),
            Op::Linear { x, weight, bias } => [Some(*x), Some(*weight), *bias]
                .into_iter()
                .flatten()
                .collect(),
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::ChannelAffine { x, gamma, beta } => vec![*x, *gamma, *beta],
            Op::ChannelAdd { x, v } => vec![*x, *v],
            Op::InstanceNorm { x, .. }
            | Op::Upsample { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::Softmax { x }
            | Op::Act { x, .. }
            | Op::Slice { x, .. }
            | Op::Scale { x, .. }
            | Op::Sum { x }
            | Op::MeanAbs { x }
            | Op::MeanSq { x } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Accumulated gradient; kept for leaves only.
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Define-by-run tape. Nodes are appended in execution order, so operands
/// always precede their results and a reverse sweep is a valid backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err<T>(op: &str, detail: impl std::fmt::Display) -> Result<T> {
    Err(Error::Shape(format!("{op}: {detail}")))
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` accumulate gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Names of the recorded ops, oldest first.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Sign of every input to a piecewise-linear op (relu, leaky relu,
    /// `mean_abs`), oldest first. Two evaluations with equal patterns lie on
    /// the same smooth piece, so finite differences between them are valid.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            let x = match n.op {
                Op::Act {
                    x,
                    kind: Activation::Relu | Activation::LeakyRelu,
                } => x,
                Op::MeanAbs { x } => x,
                _ => continue,
            };
            out.extend(self.data(x).iter().map(|&v| v > 0.0));
        }
        out
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        let requires_grad = op.operands().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Tensor::from_parts(shape, data), requires_grad, op)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, wcin, kh, kw) = self.value(weight).dims4()?;
        if wcin != cin {
            return shape_err(
                "conv2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            );
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return shape_err("conv2d", format!("kernel {kh}x{kw} is not odd"));
        }
        if !(1..=2).contains(&stride) {
            return shape_err("conv2d", format!("stride {stride} not in {{1, 2}}"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return shape_err(
                    "conv2d",
                    format!("bias shape {:?} != [{cout}]", self.shape(b)),
                );
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded {h}x{w}"),
            );
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let y = kernels::conv2d_forward(
            self.data(input),
            self.data(weight),
            bias.map(|b| self.data(b)),
            &geom,
        );
        self.record(
            vec![n, cout, oh, ow],
            y,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract(format!(
                "instance_norm eps {eps} must be > 0"
            )));
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        let (y, inv_std) = kernels::instance_norm_forward(self.data(x), h * w, eps);
        self.record(vec![n, c, h, w], y, Op::InstanceNorm { x, inv_std })
    }

    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 2 {
            return shape_err("bilinear_upsample", format!("factor {factor} < 2"));
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        let y = kernels::upsample_forward(self.data(x), n * c, h, w, factor);
        self.record(
            vec![n, c, h * factor, w * factor],
            y,
            Op::Upsample { x, factor },
        )
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = (h * w) as f64;
        let y = self
            .data(x)
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / plane)
            .collect();
        self.record(vec![n, c], y, Op::GlobalAvgPool { x })
    }

    /// `x · Wᵀ + b` for `x: [N, Din]`, `W: [Dout, Din]`, `b: [Dout]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, din) = self.value(x).dims2()?;
        let (dout, wdin) = self.value(weight).dims2()?;
        if wdin != din {
            return shape_err(
                "linear",
                format!("input width {din}, weight expects {wdin}"),
            );
        }
        let mut y = vec![0.0; n * dout];
        let beta = match bias {
            Some(b) => {
                let bd = self.data(b);
                if bd.len() != dout || self.value(b).rank() != 1 {
                    return shape_err(
                        "linear",
                        format!("bias shape {:?} != [{dout}]", self.shape(b)),
                    );
                }
                for row in y.chunks_mut(dout) {
                    row.copy_from_slice(bd);
                }
                1.0
            }
            None => 0.0,
        };
        kernels::gemm(
            n,
            din,
            dout,
            self.data(x),
            din,
            1,
            self.data(weight),
            1,
            din,
            beta,
            &mut y,
        );
        self.record(vec![n, dout], y, Op::Linear { x, weight, bias })
    }

    /// `a · b` (or `a · bᵀ`) for 2-D operands.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (bk, n, rsb, csb) = if transpose_b {
            (bc, br, 1, bc)
        } else {
            (br, bc, bc, 1)
        };
        if bk != k {
            return shape_err("matmul", format!("inner dims {k} vs {bk}"));
        }
        let mut y = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.data(a),
            k,
            1,
            self.data(b),
            rsb,
            csb,
            0.0,
            &mut y,
        );
        self.record(vec![m, n], y, Op::MatMul { a, b, transpose_b })
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("tensor rank >= 1");
        let mut y = self.data(x).to_vec();
        for row in y.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.record(shape, y, Op::Softmax { x })
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let y = self
            .data(x)
            .iter()
            .map(|&v| match kind {
                Activation::Relu => v.max(0.0),
                Activation::LeakyRelu => {
                    if v > 0.0 {
                        v
                    } else {
                        LEAKY_SLOPE * v
                    }
                }
                Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            })
            .collect();
        self.record(shape, y, Op::Act { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return shape_err("concat", "empty input list"),
        };
        if axis >= first.len() {
            return shape_err("concat", format!("axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err(
                    "concat",
                    format!("{s:?} incompatible with {first:?} on axis {axis}"),
                );
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, inner) = outer_inner(&first, axis);
        let mut y = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let block = self.shape(v)[axis] * inner;
                y.extend_from_slice(&self.data(v)[o * block..(o + 1) * block]);
            }
        }
        self.record(
            shape,
            y,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if axis >= src.len() || len == 0 || start + len > src[axis] {
            return shape_err(
                "slice",
                format!("[{start}, {}) on axis {axis} of {src:?}", start + len),
            );
        }
        let (outer, inner) = outer_inner(&src, axis);
        let mut y = Vec::with_capacity(outer * len * inner);
        let data = self.data(x);
        for o in 0..outer {
            let base = (o * src[axis] + start) * inner;
            y.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut shape = src;
        shape[axis] = len;
        self.record(shape, y, Op::Slice { x, axis, start })
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(self.shape(a).to_vec())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let shape = self.same_shape(op.name(), a, b)?;
        let y = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.record(shape, y, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let y = self.data(x).iter().map(|v| v * c).collect();
        self.record(shape, y, Op::Scale { x, c })
    }

    fn check_per_channel(&self, op: &str, x: Var, v: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(v) != [n, c] {
            return shape_err(
                op,
                format!("per-channel operand {:?} != [{n}, {c}]", self.shape(v)),
            );
        }
        Ok((n, c, h * w))
    }

    /// `gamma[n,c] · x[n,c,:,:] + beta[n,c]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.check_per_channel("channel_affine", x, gamma)?;
        self.check_per_channel("channel_affine", x, beta)?;
        let shape = self.shape(x).to_vec();
        let plane = shape[2] * shape[3];
        let (g, b) = (self.data(gamma), self.data(beta));
        let y = self
            .data(x)
            .chunks(plane)
            .enumerate()
            .flat_map(|(i, p)| p.iter().map(move |v| g[i] * v + b[i]))
            .collect();
        self.record(shape, y, Op::ChannelAffine { x, gamma, beta })
    }

    /// Adds `v[n,c]` at every spatial location of plane `(n, c)`.
    pub fn channel_add(&mut self, x: Var, v: Var) -> Result<Var> {
        self.check_per_channel("channel_add", x, v)?;
        let shape = self.shape(x).to_vec();
        let plane = shape[2] * shape[3];
        let vd = self.data(v);
        let y = self
            .data(x)
            .chunks(plane)
            .enumerate()
            .flat_map(|(i, p)| p.iter().map(move |s| s + vd[i]))
            .collect();
        self.record(shape, y, Op::ChannelAdd { x, v })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.record(vec![1], vec![s], Op::Sum { x })
    }

    pub fn mean_abs(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let m = d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64;
        self.record(vec![1], vec![m], Op::MeanAbs { x })
    }

    pub fn mean_sq(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let m = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
        self.record(vec![1], vec![m], Op::MeanSq { x })
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    /// Calling it twice without [`Graph::zero_grad`] doubles the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = self.nodes[idx]
                    .grad
                    .get_or_insert_with(|| vec![0.0; dy.len()]);
                g.iter_mut().zip(&dy).for_each(|(a, b)| *a += b);
                continue;
            }
            for (operand, contribution) in self.vjp(idx, &dy) {
                if !self.nodes[operand.0].requires_grad {
                    continue;
                }
                match &mut grads[operand.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for each of its operands.
    fn vjp(&self, idx: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let g = kernels::conv2d_backward(
                    self.data(*input),
                    self.data(*weight),
                    dy,
                    geom,
                    rg(*input),
                );
                let mut out = vec![(*weight, g.dw)];
                if let Some(dx) = g.dx {
                    out.push((*input, dx));
                }
                if let Some(b) = bias {
                    out.push((*b, g.db));
                }
                out
            }
            Op::InstanceNorm { x, inv_std } => {
                let shape = node.value.shape();
                let plane = shape[2] * shape[3];
                vec![(*x, kernels::instance_norm_backward(y, dy, inv_std, plane))]
            }
            Op::Upsample { x, factor } => {
                let s = self.shape(*x);
                let dx = kernels::upsample_backward(dy, s[0] * s[1], s[2], s[3], *factor);
                vec![(*x, dx)]
            }
            Op::GlobalAvgPool { x } => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let dx = dy
                    .iter()
                    .flat_map(|g| std::iter::repeat(g / plane as f64).take(plane))
                    .collect();
                vec![(*x, dx)]
            }
            Op::Linear { x, weight, bias } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*weight)[0];
                let mut out = Vec::new();
                if rg(*x) {
                    let mut dx = vec![0.0; n * din];
                    kernels::gemm(
                        n,
                        dout,
                        din,
                        dy,
                        dout,
                        1,
                        self.data(*weight),
                        din,
                        1,
                        0.0,
                        &mut dx,
                    );
                    out.push((*x, dx));
                }
                if rg(*weight) {
                    let mut dw = vec![0.0; dout * din];
                    kernels::gemm(
                        dout,
                        n,
                        din,
                        dy,
                        1,
                        dout,
                        self.data(*x),
                        din,
                        1,
                        0.0,
                        &mut dw,
                    );
                    out.push((*weight, dw));
                }
                if let Some(b) = bias {
                    let mut db = vec![0.0; dout];
                    for row in dy.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                    out.push((*b, db));
                }
                out
            }
            Op::MatMul { a, b, transpose_b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = y.len() / m;
                let bd = self.data(*b);
                let mut out = Vec::new();
                if rg(*a) {
                    // dA = dY · Bᵀ  (or dY · B when B was transposed)
                    let mut da = vec![0.0; m * k];
                    let (rs, cs) = if *transpose_b { (k, 1) } else { (1, n) };
                    kernels::gemm(m, n, k, dy, n, 1, bd, rs, cs, 0.0, &mut da);
                    out.push((*a, da));
                }
                if rg(*b) {
                    let ad = self.data(*a);
                    let mut db = vec![0.0; k * n];
                    if *transpose_b {
                        // dB[n,k] = dYᵀ · A
                        kernels::gemm(n, m, k, dy, 1, n, ad, k, 1, 0.0, &mut db);
                    } else {
                        // dB[k,n] = Aᵀ · dY
                        kernels::gemm(k, m, n, ad, 1, k, dy, n, 1, 0.0, &mut db);
                    }
                    out.push((*b, db));
                }
                out
            }
            Op::Softmax { x } => {
                let d = *node.value.shape().last().expect("rank >= 1");
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![(*x, dx)]
            }
            Op::Act { x, kind } => {
                let xd = self.data(*x);
                let dx = xd
                    .iter()
                    .zip(y)
                    .zip(dy)
                    .map(|((&xv, &yv), &g)| match kind {
                        Activation::Relu => {
                            if xv > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                        Activation::LeakyRelu => {
                            if xv > 0.0 {
                                g
                            } else {
                                LEAKY_SLOPE * g
                            }
                        }
                        Activation::Sigmoid => g * yv * (1.0 - yv),
                    })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Concat { xs, axis } => {
                let (outer, inner) = outer_inner(node.value.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|v| Vec::with_capacity(self.value(*v).numel()))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (v, part) in xs.iter().zip(parts.iter_mut()) {
                        let block = self.shape(*v)[*axis] * inner;
                        part.extend_from_slice(&dy[offset..offset + block]);
                        offset += block;
                    }
                }
                xs.iter().copied().zip(parts).collect()
            }
            Op::Slice { x, axis, start } => {
                let src = self.shape(*x);
                let len = node.value.shape()[*axis];
                let (outer, inner) = outer_inner(src, *axis);
                let mut dx = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let base = (o * src[*axis] + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&dy[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
            Op::Sub(a, b) => vec![(*a, dy.to_vec()), (*b, dy.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                vec![
                    (*a, dy.iter().zip(bd).map(|(g, v)| g * v).collect()),
                    (*b, dy.iter().zip(ad).map(|(g, v)| g * v).collect()),
                ]
            }
            Op::Scale { x, c } => vec![(*x, dy.iter().map(|g| g * c).collect())],
            Op::ChannelAffine { x, gamma, beta } => {
                let s = node.value.shape();
                let plane = s[2] * s[3];
                let (xd, gd) = (self.data(*x), self.data(*gamma));
                let mut dx = vec![0.0; xd.len()];
                let mut dgamma = vec![0.0; gd.len()];
                let mut dbeta = vec![0.0; gd.len()];
                for i in 0..gd.len() {
                    let r = i * plane..(i + 1) * plane;
                    for ((d, &g), &xv) in dx[r.clone()]
                        .iter_mut()
                        .zip(&dy[r.clone()])
                        .zip(&xd[r.clone()])
                    {
                        *d = gd[i] * g;
                        dgamma[i] += g * xv;
                        dbeta[i] += g;
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::ChannelAdd { x, v } => {
                let s = node.value.shape();
                let plane = s[2] * s[3];
                let dv = dy.chunks(plane).map(|p| p.iter().sum()).collect();
                vec![(*x, dy.to_vec()), (*v, dv)]
            }
            Op::Sum { x } => vec![(*x, vec![dy[0]; self.value(*x).numel()])],
            Op::MeanAbs { x } => {
                let xd = self.data(*x);
                let k = dy[0] / xd.len() as f64;
                vec![(*x, xd.iter().map(|v| k * sign(*v)).collect())]
            }
            Op::MeanSq { x } => {
                let xd = self.data(*x);
                let k = 2.0 * dy[0] / xd.len() as f64;
                vec![(*x, xd.iter().map(|v| k * v).collect())]
            }
        }
    }
}

/// Sign with subgradient 0 at 0.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
