//! Finite-difference gradient suite over every differentiable op, every
//! loss, the descriptor aggregation and a whole network, across seeds.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::aggregate_on_tape;
use crate::error::Result;
use crate::losses::{LossWeights, ReconReduction, SegClassWeights};
use crate::math::Real;
use crate::ndgrad::{grad_check, GradCheck, GradReport, Padding, Reduce, Tape, Tensor, Var};
use crate::net::{reparameterize, sample_epsilon, CalcNet, NetConfig};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Bounded away from zero so kinked activations are smooth nearby.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: Real = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Distinct values 0.05 apart, so no max is near a tie.
fn spaced(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<Real> = (0..n).map(|i| i as Real * 0.05 - n as Real * 0.025).collect();
    data.shuffle(rng);
    Tensor::new(shape, data).expect("shape")
}

/// Scalarizes with fixed random weights so every element matters.
fn weighted(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random(tape.shape(x), &mut rng);
    let w = tape.constant(w);
    tape.dot(x, w)
}

fn unary(x: Tensor, seed: u64, cfg: &GradCheck, op: fn(&mut Tape, Var) -> Result<Var>) -> Result<GradReport> {
    grad_check(
        |t, v| {
            let y = op(t, v[0])?;
            weighted(t, y, seed)
        },
        &[x],
        cfg,
    )
}

fn binary(a: Tensor, b: Tensor, seed: u64, cfg: &GradCheck, op: fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<GradReport> {
    grad_check(
        |t, v| {
            let y = op(t, v[0], v[1])?;
            weighted(t, y, seed)
        },
        &[a, b],
        cfg,
    )
}

fn labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..classes) as u8).collect()
}

fn class_weights(classes: usize, rng: &mut ChaCha8Rng) -> SegClassWeights {
    let mut hist: Vec<u64> = (0..classes).map(|_| rng.random_range(1..50)).collect();
    hist[0] = 60;
    crate::losses::class_weights(&hist).expect("positive histogram")
}

type CaseFn = fn(u64, &GradCheck) -> Result<GradReport>;

/// A named gradient check over seeded random inputs.
pub struct GradCase {
    pub name: &'static str,
    pub run: CaseFn,
}

macro_rules! case {
    ($name:expr, $f:expr) => {
        GradCase { name: $name, run: $f }
    };
}

/// Every case. Names are the op names reported by the fault hook where a
/// case covers a single op.
pub fn gradient_cases() -> Vec<GradCase> {
    vec![
        case!("conv2d", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            binary(random(&[5, 5, 2], &mut r), random(&[3, 3, 2, 4], &mut r), s, c, |t, x, k| {
                t.conv2d(x, k, 1, Padding::Same)
            })
        }),
        case!("conv2d stride 2", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            binary(random(&[6, 5, 2], &mut r), random(&[3, 3, 2, 3], &mut r), s, c, |t, x, k| {
                t.conv2d(x, k, 2, Padding::Same)
            })
        }),
        case!("add_bias", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            binary(random(&[3, 4, 3], &mut r), random(&[3], &mut r), s, c, |t, x, b| t.add_bias(x, b))
        }),
        case!("maxpool2x2", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(spaced(&[4, 6, 2], &mut r), s, c, |t, x| t.maxpool2x2(x))
        }),
        case!("elu", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(off_zero(&[3, 4, 2], &mut r), s, c, |t, x| Ok(t.elu(x)))
        }),
        case!("sigmoid", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[3, 4, 2], &mut r), s, c, |t, x| Ok(t.sigmoid(x)))
        }),
        case!("exp", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[3, 4], &mut r), s, c, |t, x| Ok(t.exp(x)))
        }),
        case!("relu", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(off_zero(&[3, 4], &mut r), s, c, |t, x| Ok(t.relu(x)))
        }),
        case!("scale", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[7], &mut r), s, c, |t, x| Ok(t.scale(x, -1.7)))
        }),
        case!("add_scalar", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[7], &mut r), s, c, |t, x| Ok(t.add_scalar(x, 0.3)))
        }),
        case!("add", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            binary(random(&[2, 5], &mut r), random(&[2, 5], &mut r), s, c, |t, a, b| t.add(a, b))
        }),
        case!("sub", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            binary(random(&[2, 5], &mut r), random(&[2, 5], &mut r), s, c, |t, a, b| t.sub(a, b))
        }),
        case!("mul", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            binary(random(&[2, 5], &mut r), random(&[2, 5], &mut r), s, c, |t, a, b| t.mul(a, b))
        }),
        case!("subpixel_upscale", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[2, 3, 8], &mut r), s, c, |t, x| t.subpixel_upscale(x))
        }),
        case!("slice_channels", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[2, 3, 5], &mut r), s, c, |t, x| t.slice_channels(x, 1, 3))
        }),
        case!("concat_channels", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            binary(random(&[2, 3, 2], &mut r), random(&[2, 3, 3], &mut r), s, c, |t, a, b| {
                t.concat_channels(&[b, a])
            })
        }),
        case!("reshape", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[2, 3, 4], &mut r), s, c, |t, x| t.reshape(x, &[6, 4]))
        }),
        case!("transpose2d", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[3, 5], &mut r), s, c, |t, x| t.transpose2d(x))
        }),
        case!("l2_normalize", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(off_zero(&[3, 6], &mut r), s, c, |t, x| t.l2_normalize(x, 1))
        }),
        case!("reduce_sum", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[3, 6], &mut r), s, c, |t, x| t.reduce(x, Reduce::Sum, 0))
        }),
        case!("reduce_mean", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(random(&[3, 6], &mut r), s, c, |t, x| t.reduce(x, Reduce::Mean, 1))
        }),
        case!("reduce_max", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            unary(spaced(&[4, 5], &mut r), s, c, |t, x| t.reduce(x, Reduce::Max, 1))
        }),
        case!("dot", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            grad_check(|t, v| t.dot(v[0], v[1]), &[random(&[9], &mut r), random(&[9], &mut r)], c)
        }),
        case!("weighted_sum", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            grad_check(
                |t, v| {
                    let y = t.weighted_sum(&[(v[0], 0.7), (v[1], -1.3)])?;
                    weighted(t, y, s)
                },
                &[random(&[6], &mut r), random(&[6], &mut r)],
                c,
            )
        }),
        case!("kld_loss", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            grad_check(|t, v| t.kld_loss(v[0], v[1]), &[random(&[2, 2, 3], &mut r), random(&[2, 2, 3], &mut r)], c)
        }),
        case!("recon_loss", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let target = random(&[3, 3, 3], &mut r).map(|v| (v + 1.0) / 2.0);
            grad_check(
                |t, v| {
                    let x = t.constant(target.clone());
                    let p = t.sigmoid(v[0]);
                    t.recon_loss(x, p, ReconReduction::Sum)
                },
                &[random(&[3, 3, 3], &mut r)],
                c,
            )
        }),
        case!("recon_loss mean", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let target = random(&[3, 3, 3], &mut r).map(|v| (v + 1.0) / 2.0);
            grad_check(
                |t, v| {
                    let x = t.constant(target.clone());
                    let p = t.sigmoid(v[0]);
                    t.recon_loss(x, p, ReconReduction::Mean)
                },
                &[random(&[3, 3, 3], &mut r)],
                c,
            )
        }),
        case!("seg_loss", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let l = labels(12, 4, &mut r);
            let w = class_weights(4, &mut r);
            grad_check(|t, v| t.seg_loss(v[0], &l, &w), &[random(&[3, 4, 4], &mut r).map(|v| 2.0 * v)], c)
        }),
        case!("triplet_loss", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let xs = [off_zero(&[8], &mut r), off_zero(&[8], &mut r), off_zero(&[8], &mut r)];
            grad_check(
                |t, v| {
                    let a = t.l2_normalize(v[0], 0)?;
                    let p = t.l2_normalize(v[1], 0)?;
                    let n = t.l2_normalize(v[2], 0)?;
                    // large margin keeps the hinge active
                    t.triplet_loss(a, p, n, 2.5)
                },
                &xs,
                c,
            )
        }),
        case!("total_loss", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let target = random(&[2, 2, 3], &mut r).map(|v| (v + 1.0) / 2.0);
            let l = labels(4, 3, &mut r);
            let w = class_weights(3, &mut r);
            let weights = LossWeights {
                kld: 0.3,
                recon: 0.2,
                seg: 0.7,
                triplet: 1.1,
                margin: 2.5,
            };
            let inputs = [
                random(&[2, 2, 2], &mut r),
                random(&[2, 2, 2], &mut r),
                random(&[2, 2, 3], &mut r),
                random(&[2, 2, 3], &mut r),
                off_zero(&[8], &mut r),
                off_zero(&[8], &mut r),
            ];
            grad_check(
                |t, v| {
                    let kld = t.kld_loss(v[0], v[1])?;
                    let x = t.constant(target.clone());
                    let p = t.sigmoid(v[2]);
                    let recon = t.recon_loss(x, p, ReconReduction::Sum)?;
                    let seg = t.seg_loss(v[3], &l, &w)?;
                    let a = t.l2_normalize(v[4], 0)?;
                    let pos = t.l2_normalize(v[5], 0)?;
                    let neg = t.reshape(v[0], &[8])?;
                    let neg = t.l2_normalize(neg, 0)?;
                    let trip = t.triplet_loss(a, pos, neg, weights.margin)?;
                    t.total_loss(Some(kld), Some(recon), Some(seg), Some(trip), &weights)
                },
                &inputs,
                c,
            )
        }),
        case!("reparameterize", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let eps = random(&[2, 2, 3], &mut r);
            grad_check(
                |t, v| {
                    let e = t.constant(eps.clone());
                    let z = reparameterize(t, v[0], v[1], e)?;
                    weighted(t, z, s)
                },
                &[random(&[2, 2, 3], &mut r), random(&[2, 2, 3], &mut r)],
                c,
            )
        }),
        case!("aggregate", |s, c| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            grad_check(
                |t, v| {
                    let d = aggregate_on_tape(t, v[0], v[1])?;
                    weighted(t, d, s)
                },
                &[random(&[2, 3, 4], &mut r), random(&[4, 6], &mut r).map(|v| 0.3 * v)],
                c,
            )
        }),
        case!("network", network_case),
    ]
}

/// Image and every parameter of a smallest-size network through encoder,
/// resampling, decoders and the per-image objective.
fn network_case(seed: u64, cfg: &GradCheck) -> Result<GradReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let net_cfg = NetConfig::tiny();
    let net = CalcNet::new(net_cfg.clone(), &mut r)?;
    let image = random(&net_cfg.image_shape(), &mut r).map(|v| (v + 1.0) / 2.0);
    let eps = sample_epsilon(&net_cfg.latent_shape(), &mut r);
    let l = labels(net_cfg.height * net_cfg.width, net_cfg.classes, &mut r);
    let w = SegClassWeights::uniform(net_cfg.classes);
    let weights = LossWeights {
        kld: 0.1,
        recon: 0.01,
        seg: 1.0,
        triplet: 1.0,
        margin: 0.5,
    };
    let mut inputs = vec![image.clone()];
    inputs.extend(net.params().tensors().iter().cloned());
    grad_check(
        |t, v| {
            let bound = net.bind_vars(t, &v[1..])?;
            let target = t.constant(image.clone());
            let out = net.forward(t, &bound, v[0], eps.clone())?;
            let kld = t.kld_loss(out.latent.mu, out.latent.sigma)?;
            let recon = t.recon_loss(target, out.reconstruction, ReconReduction::Sum)?;
            let seg = t.seg_loss(out.seg_logits, &l, &w)?;
            let centers = net.bound_centers(&bound);
            let d = aggregate_on_tape(t, out.latent.mu, centers)?;
            let desc = weighted(t, d, seed)?;
            let local = t.total_loss(Some(kld), Some(recon), Some(seg), None, &weights)?;
            t.add(local, desc)
        },
        &inputs,
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSummary {
    pub name: &'static str,
    pub seeds: usize,
    pub max_rel_error: f64,
    /// Seeds whose check failed.
    pub failed_seeds: Vec<u64>,
}

impl CaseSummary {
    pub fn passed(&self) -> bool {
        self.failed_seeds.is_empty()
    }
}

pub fn run_case(case: &GradCase, seeds: core::ops::Range<u64>, cfg: &GradCheck) -> Result<CaseSummary> {
    let mut summary = CaseSummary {
        name: case.name,
        seeds: 0,
        max_rel_error: 0.0,
        failed_seeds: Vec::new(),
    };
    for s in seeds {
        let report = (case.run)(s, cfg)?;
        summary.seeds += 1;
        summary.max_rel_error = summary.max_rel_error.max(report.max_rel_error());
        if !report.passed {
            summary.failed_seeds.push(s);
        }
    }
    Ok(summary)
}
