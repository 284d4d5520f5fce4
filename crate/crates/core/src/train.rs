//! One optimization step of the siamese objective.
//!
//! Every image gets its own tape. Anchors run the full network (latent,
//! decoders, descriptor); positives run the encoder and descriptor only.
//! The triplet hinge is evaluated on a small tape whose leaves are the
//! descriptors; its gradients are then pushed back through each image tape
//! together with that image's own losses, and summed into one Adam update.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{make_true_positive, AugmentConfig, LabelMap};
use crate::descriptor::aggregate_on_tape;
use crate::error::{Error, Result};
use crate::losses::{mine_hard_negative, total_loss, LossParts, LossWeights, ReconReduction, SegClassWeights};
use crate::math::Real;
use crate::ndgrad::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::net::{sample_epsilon, Bound, CalcNet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub recon: ReconReduction,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 12,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            recon: ReconReduction::Sum,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Tensor,
    pub labels: Option<LabelMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Steps completed, this one included.
    pub step: u64,
    /// Weighted objective, averaged over the batch.
    pub loss: f64,
    /// Unweighted batch means of each part.
    pub parts: LossParts,
    /// Mined negative for every anchor.
    pub negatives: Vec<usize>,
}

struct ImageTape {
    tape: Tape,
    bound: Bound,
    descriptor: Var,
    local: Option<Var>,
}

pub struct Trainer {
    net: CalcNet,
    adam: AdamState,
    config: TrainConfig,
    class_weights: SegClassWeights,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// `class_weights` defaults to uniform weights.
    pub fn new(net: CalcNet, config: TrainConfig, class_weights: Option<SegClassWeights>) -> Result<Self> {
        if config.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2 for in-batch negatives".into()));
        }
        config.augment.validate()?;
        let classes = net.config().classes;
        let class_weights = class_weights.unwrap_or_else(|| SegClassWeights::uniform(classes));
        if class_weights.len() != classes {
            return Err(Error::shape("class weights", &[class_weights.len()], &[classes]));
        }
        let adam = AdamState::new(config.adam, net.params().tensors());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            net,
            adam,
            config,
            class_weights,
            rng,
        })
    }

    pub fn net(&self) -> &CalcNet {
        &self.net
    }

    pub fn into_net(self) -> CalcNet {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    fn anchor_tape(&self, sample: &TrainSample, epsilon: &Tensor, parts: &mut LossParts, scale: f64) -> Result<ImageTape> {
        let w = self.config.weights;
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, true);
        let x = tape.constant(sample.image.clone());
        let out = self.net.forward(&mut tape, &bound, x, epsilon.clone())?;
        let centers = self.net.bound_centers(&bound);
        let descriptor = aggregate_on_tape(&mut tape, out.latent.mu, centers)?;
        let kld = tape.kld_loss(out.latent.mu, out.latent.sigma)?;
        let recon = tape.recon_loss(x, out.reconstruction, self.config.recon)?;
        let seg = match &sample.labels {
            Some(l) if w.seg > 0.0 => Some(tape.seg_loss(out.seg_logits, &l.labels, &self.class_weights)?),
            _ => None,
        };
        parts.kld += tape.value(kld).item() as f64 * scale;
        parts.recon += tape.value(recon).item() as f64 * scale;
        if let Some(s) = seg {
            parts.seg += tape.value(s).item() as f64 * scale;
        }
        let local = tape.total_loss(Some(kld), Some(recon), seg, None, &w)?;
        Ok(ImageTape {
            tape,
            bound,
            descriptor,
            local: Some(local),
        })
    }

    fn positive_tape(&self, image: &Tensor) -> Result<ImageTape> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, true);
        let x = tape.constant(image.clone());
        let enc = self.net.encode(&mut tape, &bound, x)?;
        let centers = self.net.bound_centers(&bound);
        let descriptor = aggregate_on_tape(&mut tape, enc.mu, centers)?;
        Ok(ImageTape {
            tape,
            bound,
            descriptor,
            local: None,
        })
    }

    /// Objective and parameter gradients for fixed positives and noise.
    pub fn gradients(&self, batch: &[&TrainSample], positives: &[Tensor], epsilons: &[Tensor]) -> Result<BatchGradients> {
        let b = batch.len();
        if b < 2 {
            return Err(Error::InvalidArgument("a training batch needs at least 2 images".into()));
        }
        if positives.len() != b || epsilons.len() != b {
            return Err(Error::shape("batch", &[b], &[positives.len(), epsilons.len()]));
        }
        let scale = 1.0 / b as f64;
        let mut parts = LossParts::default();
        let mut anchors = Vec::with_capacity(b);
        let mut pos = Vec::with_capacity(b);
        for ((sample, positive), eps) in batch.iter().zip(positives).zip(epsilons) {
            anchors.push(self.anchor_tape(sample, eps, &mut parts, scale)?);
            pos.push(self.positive_tape(positive)?);
        }

        // triplet tape over descriptor leaves
        let mut tt = Tape::new();
        let a_vals: Vec<Tensor> = anchors.iter().map(|t| t.tape.value(t.descriptor).clone()).collect();
        let a: Vec<Var> = a_vals.iter().map(|v| tt.param(v.clone())).collect();
        let p: Vec<Var> = pos.iter().map(|t| tt.param(t.tape.value(t.descriptor).clone())).collect();
        let a_data: Vec<&[Real]> = a_vals.iter().map(|t| t.data()).collect();
        let negatives = (0..b).map(|i| mine_hard_negative(i, &a_data)).collect::<Result<Vec<_>>>()?;
        let mut hinge = Vec::with_capacity(b);
        for i in 0..b {
            let l = tt.triplet_loss(a[i], p[i], a[negatives[i]], self.config.weights.margin)?;
            hinge.push((l, (scale * self.config.weights.triplet) as Real));
        }
        let triplet = tt.weighted_sum(&hinge)?;
        parts.triplet = hinge.iter().map(|&(l, _)| tt.value(l).item() as f64).sum::<f64>() * scale;
        let tgrads = tt.backward(triplet)?;
        let loss = total_loss(&parts, &self.config.weights)?;

        let mut grads: Vec<Tensor> = self.net.params().tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (img, &leaf) in anchors.iter().zip(&a).chain(pos.iter().zip(&p)) {
            let mut seeds = Vec::with_capacity(2);
            let dshape = img.tape.shape(img.descriptor).to_vec();
            seeds.push((img.descriptor, tgrads.get_or_zeros(leaf, &dshape)));
            if let Some(local) = img.local {
                seeds.push((local, Tensor::scalar(scale as Real)));
            }
            let g = img.tape.backward_from(seeds)?;
            for (acc, g) in grads.iter_mut().zip(img.bound.gradients(&img.tape, &g)) {
                acc.add_assign(&g);
            }
        }
        if let Some(bad) = grads.iter().flat_map(|g| g.data()).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                part: "gradient",
                value: *bad as f64,
            });
        }
        Ok(BatchGradients {
            loss,
            parts,
            negatives,
            grads,
        })
    }

    /// Anchors are the batch images as given; each gets a freshly sampled
    /// true positive. All anchors must show distinct places.
    pub fn step(&mut self, batch: &[&TrainSample]) -> Result<StepReport> {
        let mut positives = Vec::with_capacity(batch.len());
        let mut epsilons = Vec::with_capacity(batch.len());
        let latent = self.net.config().latent_shape();
        for sample in batch {
            epsilons.push(sample_epsilon(&latent, &mut self.rng));
            positives.push(make_true_positive(&sample.image, &self.config.augment, &mut self.rng)?);
        }
        let out = self.gradients(batch, &positives, &epsilons)?;
        let grads: Vec<&Tensor> = out.grads.iter().collect();
        let mut params: Vec<&mut Tensor> = self.net.params_mut().tensors_mut().iter_mut().collect();
        self.adam.step(&mut params, &grads)?;
        Ok(StepReport {
            step: self.adam.steps(),
            loss: out.loss,
            parts: out.parts,
            negatives: out.negatives,
        })
    }
}

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub parts: LossParts,
    pub negatives: Vec<usize>,
    /// In parameter order.
    pub grads: Vec<Tensor>,
}
