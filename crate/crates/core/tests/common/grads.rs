//! Central-difference checks of every differentiable graph op.

use regfactor::autodiff::gradcheck::finite_diff_check;
use regfactor::autodiff::{Activation, Graph, Var};
use regfactor::{Result, Tensor};

use super::{away_from_zero, rng, uniform};

pub const EPS: f64 = 1e-6;
pub const INSTANCES: u64 = 3;

/// `Σ r ⊙ y` with a fixed random `r`, so every output element matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = g.constant(uniform(&mut rng(seed ^ 0xabcd), &shape, -1.0, 1.0))?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

type Case = Box<dyn Fn(u64) -> Result<f64>>;

fn check(x: Tensor, seed: u64, op: impl Fn(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
    finite_diff_check(
        |g, v| {
            let y = op(g, v)?;
            project(g, y, seed)
        },
        &x,
        EPS,
    )
}

fn cases() -> Vec<(&'static str, Case)> {
    let mut v: Vec<(&'static str, Case)> = Vec::new();
    let conv_geoms = [(1usize, 1usize), (2, 1), (1, 0)];
    v.push((
        "conv2d/input",
        Box::new(move |s| {
            let (stride, pad) = conv_geoms[s as usize % 3];
            let mut r = rng(s);
            let w = uniform(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
            let b = uniform(&mut r, &[3], -0.5, 0.5);
            check(uniform(&mut r, &[2, 2, 5, 6], -1.0, 1.0), s, move |g, x| {
                let (w, b) = (g.constant(w.clone())?, g.constant(b.clone())?);
                g.conv2d(x, w, Some(b), stride, pad)
            })
        }),
    ));
    v.push((
        "conv2d/weight",
        Box::new(move |s| {
            let (stride, pad) = conv_geoms[s as usize % 3];
            let mut r = rng(s + 10);
            let x = uniform(&mut r, &[2, 2, 6, 5], -1.0, 1.0);
            check(uniform(&mut r, &[3, 2, 3, 3], -0.5, 0.5), s, move |g, w| {
                let x = g.constant(x.clone())?;
                g.conv2d(x, w, None, stride, pad)
            })
        }),
    ));
    v.push((
        "conv2d/bias",
        Box::new(|s| {
            let mut r = rng(s + 20);
            let x = uniform(&mut r, &[2, 2, 4, 4], -1.0, 1.0);
            let w = uniform(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
            check(uniform(&mut r, &[3], -0.5, 0.5), s, move |g, b| {
                let (x, w) = (g.constant(x.clone())?, g.constant(w.clone())?);
                g.conv2d(x, w, Some(b), 1, 1)
            })
        }),
    ));
    v.push((
        "instance_norm",
        Box::new(|s| {
            let mut r = rng(s + 30);
            check(uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0), s, |g, x| {
                g.instance_norm(x, 1e-5)
            })
        }),
    ));
    v.push((
        "bilinear_upsample",
        Box::new(|s| {
            let mut r = rng(s + 40);
            let factor = 2 + s as usize % 2;
            check(uniform(&mut r, &[1, 2, 3, 4], -1.0, 1.0), s, move |g, x| {
                g.bilinear_upsample(x, factor)
            })
        }),
    ));
    v.push((
        "global_avg_pool",
        Box::new(|s| {
            let mut r = rng(s + 50);
            check(uniform(&mut r, &[2, 3, 4, 3], -1.0, 1.0), s, |g, x| {
                g.global_avg_pool(x)
            })
        }),
    ));
    v.push((
        "linear/input",
        Box::new(|s| {
            let mut r = rng(s + 60);
            let w = uniform(&mut r, &[4, 5], -1.0, 1.0);
            let b = uniform(&mut r, &[4], -1.0, 1.0);
            check(uniform(&mut r, &[3, 5], -1.0, 1.0), s, move |g, x| {
                let (w, b) = (g.constant(w.clone())?, g.constant(b.clone())?);
                g.linear(x, w, Some(b))
            })
        }),
    ));
    v.push((
        "linear/weight",
        Box::new(|s| {
            let mut r = rng(s + 70);
            let x = uniform(&mut r, &[3, 5], -1.0, 1.0);
            check(uniform(&mut r, &[4, 5], -1.0, 1.0), s, move |g, w| {
                let x = g.constant(x.clone())?;
                g.linear(x, w, None)
            })
        }),
    ));
    v.push((
        "linear/bias",
        Box::new(|s| {
            let mut r = rng(s + 80);
            let x = uniform(&mut r, &[3, 5], -1.0, 1.0);
            let w = uniform(&mut r, &[4, 5], -1.0, 1.0);
            check(uniform(&mut r, &[4], -1.0, 1.0), s, move |g, b| {
                let (x, w) = (g.constant(x.clone())?, g.constant(w.clone())?);
                g.linear(x, w, Some(b))
            })
        }),
    ));
    v.push((
        "matmul/lhs",
        Box::new(|s| {
            let mut r = rng(s + 90);
            let t = s % 2 == 0;
            let b = uniform(&mut r, if t { &[2, 4] } else { &[4, 2] }, -1.0, 1.0);
            check(uniform(&mut r, &[3, 4], -1.0, 1.0), s, move |g, a| {
                let b = g.constant(b.clone())?;
                g.matmul(a, b, t)
            })
        }),
    ));
    v.push((
        "matmul/rhs",
        Box::new(|s| {
            let mut r = rng(s + 100);
            let t = s % 2 == 1;
            let a = uniform(&mut r, &[3, 4], -1.0, 1.0);
            let shape: &[usize] = if t { &[2, 4] } else { &[4, 2] };
            check(uniform(&mut r, shape, -1.0, 1.0), s, move |g, b| {
                let a = g.constant(a.clone())?;
                g.matmul(a, b, t)
            })
        }),
    ));
    v.push((
        "softmax",
        Box::new(|s| {
            let mut r = rng(s + 110);
            check(uniform(&mut r, &[3, 5], -2.0, 2.0), s, |g, x| g.softmax(x))
        }),
    ));
    for (name, kind) in [
        ("activation/relu", Activation::Relu),
        ("activation/leaky_relu", Activation::LeakyRelu),
        ("activation/sigmoid", Activation::Sigmoid),
    ] {
        v.push((
            name,
            Box::new(move |s| {
                let mut r = rng(s + 120);
                check(away_from_zero(&mut r, &[2, 3, 4]), s, move |g, x| {
                    g.activation(x, kind)
                })
            }),
        ));
    }
    v.push((
        "concat",
        Box::new(|s| {
            let mut r = rng(s + 130);
            let axis = s as usize % 3;
            let mut other_shape = vec![2, 3, 2];
            other_shape[axis] = 1 + s as usize;
            let other = uniform(&mut r, &other_shape, -1.0, 1.0);
            check(uniform(&mut r, &[2, 3, 2], -1.0, 1.0), s, move |g, x| {
                let o = g.constant(other.clone())?;
                let x2 = g.scale(x, 2.0)?;
                g.concat(&[o, x, x2], axis)
            })
        }),
    ));
    v.push((
        "slice",
        Box::new(|s| {
            let mut r = rng(s + 140);
            let axis = s as usize % 3;
            check(uniform(&mut r, &[3, 4, 5], -1.0, 1.0), s, move |g, x| {
                g.slice(x, axis, 1, 2)
            })
        }),
    ));
    for (name, which) in [("add", 0u8), ("sub", 1), ("mul", 2)] {
        v.push((
            name,
            Box::new(move |s| {
                let mut r = rng(s + 150 + which as u64);
                let other = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
                check(uniform(&mut r, &[2, 3, 4], -1.0, 1.0), s, move |g, x| {
                    let o = g.constant(other.clone())?;
                    // Both operand slots carry the probed input.
                    let (a, b) = match which {
                        0 => (g.add(x, o)?, x),
                        1 => (g.sub(o, x)?, x),
                        _ => (g.mul(x, o)?, x),
                    };
                    match which {
                        0 => g.add(b, a),
                        1 => g.sub(a, b),
                        _ => g.mul(a, b),
                    }
                })
            }),
        ));
    }
    v.push((
        "scale",
        Box::new(|s| {
            let mut r = rng(s + 160);
            let c = -1.5 + s as f64;
            check(uniform(&mut r, &[4, 3], -1.0, 1.0), s, move |g, x| g.scale(x, c))
        }),
    ));
    for (name, slot) in [
        ("channel_affine/input", 0u8),
        ("channel_affine/gamma", 1),
        ("channel_affine/beta", 2),
    ] {
        v.push((
            name,
            Box::new(move |s| {
                let mut r = rng(s + 170 + slot as u64);
                let x = uniform(&mut r, &[2, 3, 3, 4], -1.0, 1.0);
                let gm = uniform(&mut r, &[2, 3], -1.0, 1.0);
                let bt = uniform(&mut r, &[2, 3], -1.0, 1.0);
                let probe = [&x, &gm, &bt][slot as usize].clone();
                check(probe, s, move |g, p| {
                    let mut vars = [None, None, None];
                    for (i, t) in [&x, &gm, &bt].into_iter().enumerate() {
                        vars[i] = Some(if i == slot as usize { p } else { g.constant(t.clone())? });
                    }
                    g.channel_affine(vars[0].unwrap(), vars[1].unwrap(), vars[2].unwrap())
                })
            }),
        ));
    }
    for (name, slot) in [("channel_add/input", 0u8), ("channel_add/offset", 1)] {
        v.push((
            name,
            Box::new(move |s| {
                let mut r = rng(s + 180 + slot as u64);
                let x = uniform(&mut r, &[2, 3, 3, 2], -1.0, 1.0);
                let o = uniform(&mut r, &[2, 3], -1.0, 1.0);
                let probe = if slot == 0 { x.clone() } else { o.clone() };
                check(probe, s, move |g, p| {
                    if slot == 0 {
                        let o = g.constant(o.clone())?;
                        g.channel_add(p, o)
                    } else {
                        let x = g.constant(x.clone())?;
                        g.channel_add(x, p)
                    }
                })
            }),
        ));
    }
    v.push((
        "sum",
        Box::new(|s| {
            let mut r = rng(s + 190);
            check(uniform(&mut r, &[3, 4], -1.0, 1.0), s, |g, x| g.sum(x))
        }),
    ));
    v.push((
        "mean_abs",
        Box::new(|s| {
            let mut r = rng(s + 200);
            check(away_from_zero(&mut r, &[3, 4]), s, |g, x| g.mean_abs(x))
        }),
    ));
    v.push((
        "mean_sq",
        Box::new(|s| {
            let mut r = rng(s + 210);
            check(uniform(&mut r, &[3, 4], -1.0, 1.0), s, |g, x| g.mean_sq(x))
        }),
    ));
    v
}

/// Worst relative error of each op over [`INSTANCES`] random instances.
pub fn suite() -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .map(|(name, case)| {
            let worst = (0..INSTANCES)
                .map(|s| case(s).unwrap_or_else(|e| panic!("{name} instance {s}: {e}")))
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
