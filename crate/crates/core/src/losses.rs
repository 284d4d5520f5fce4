//! Training objectives: KL divergence of the latent, RGB reconstruction,
//! class-weighted segmentation cross-entropy, the triplet hinge and their
//! weighted total, plus in-batch hard-negative mining.
//!
//! Every loss exists twice: as a plain function over values and as a tape
//! op with an analytic backward rule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Real, LOG_CLAMP};
use crate::ndgrad::{Function, Tape, Tensor, Var};

/// Scale of each objective and the triplet margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub kld: f64,
    pub recon: f64,
    pub seg: f64,
    pub triplet: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            kld: 1e-4,
            recon: 1e-4,
            seg: 1.0,
            triplet: 1.0,
            margin: 0.5,
        }
    }
}

/// How the reconstruction cross-entropy is reduced over elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconReduction {
    #[default]
    Sum,
    Mean,
}

/// Per-class weights, the most prevalent class weighing exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SegClassWeights(Vec<Real>);

impl SegClassWeights {
    pub fn uniform(classes: usize) -> Self {
        SegClassWeights(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weights from a pixel-label histogram: `wᵢ = f_max / fᵢ`.
pub fn class_weights(histogram: &[u64]) -> Result<SegClassWeights> {
    if histogram.is_empty() {
        return Err(Error::InvalidArgument("class_weights: empty histogram".into()));
    }
    if let Some(i) = histogram.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("class_weights: class {i} has no pixels")));
    }
    let max = *histogram.iter().max().expect("nonempty") as f64;
    Ok(SegClassWeights(
        histogram.iter().map(|&c| (max / c as f64) as Real).collect(),
    ))
}

/// ½·Σ(exp σᵢ − σᵢ + μᵢ² − 1).
pub fn kld_loss(mu: &[Real], sigma: &[Real]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::shape("kld_loss", &[mu.len()], &[sigma.len()]));
    }
    Ok(0.5
        * mu
            .iter()
            .zip(sigma)
            .map(|(&m, &s)| {
                let (m, s) = (m as f64, s as f64);
                libm::exp(s) - s + m * m - 1.0
            })
            .sum::<f64>())
}

fn clamped_ln(p: f64) -> f64 {
    libm::log(p.max(LOG_CLAMP as f64))
}

/// Binary cross-entropy of reconstruction `r` against image `x`.
pub fn recon_loss(x: &Tensor, r: &Tensor, reduction: ReconReduction) -> Result<f64> {
    if x.shape() != r.shape() {
        return Err(Error::shape("recon_loss", x.shape(), r.shape()));
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(r.data())
        .map(|(&x, &r)| {
            let (x, r) = (x as f64, r as f64);
            -(x * clamped_ln(r) + (1.0 - x) * clamped_ln(1.0 - r))
        })
        .sum();
    Ok(match reduction {
        ReconReduction::Sum => sum,
        ReconReduction::Mean => sum / x.len() as f64,
    })
}

fn check_labels(logits: &Tensor, labels: &[u8], weights: &SegClassWeights) -> Result<(usize, usize)> {
    let (h, w, n) = logits.hwc()?;
    if labels.len() != h * w {
        return Err(Error::shape("seg_loss", &[h, w], &[labels.len()]));
    }
    if weights.len() != n {
        return Err(Error::shape("seg_loss", &[n], &[weights.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n) {
        return Err(Error::OutOfRange {
            op: "seg_loss",
            index: bad as usize,
            bound: n,
        });
    }
    Ok((h * w, n))
}

fn log_softmax_at(row: &[Real], label: usize) -> f64 {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max) as f64;
    let lse = libm::log(row.iter().map(|&v| libm::exp(v as f64 - max)).sum::<f64>()) + max;
    row[label] as f64 - lse
}

/// Pixel-mean of class-weighted softmax cross-entropy.
pub fn seg_loss(logits: &Tensor, labels: &[u8], weights: &SegClassWeights) -> Result<f64> {
    let (pixels, n) = check_labels(logits, labels, weights)?;
    let total: f64 = logits
        .data()
        .chunks_exact(n)
        .zip(labels)
        .map(|(row, &l)| -(weights.0[l as usize] as f64) * log_softmax_at(row, l as usize))
        .sum();
    Ok(total / pixels as f64)
}

fn check_unit(what: &'static str, v: &[Real]) -> Result<()> {
    let n = math::norm(v);
    if (n - 1.0).abs() > 1e-3 {
        return Err(Error::NotUnitNorm { what, norm: n });
    }
    Ok(())
}

/// max(0, d_dᵀ(d_n − d_p) + m) over unit-norm descriptors.
pub fn triplet_loss(anchor: &[Real], positive: &[Real], negative: &[Real], margin: f64) -> Result<f64> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::shape("triplet_loss", &[anchor.len()], &[positive.len(), negative.len()]));
    }
    check_unit("anchor descriptor", anchor)?;
    check_unit("positive descriptor", positive)?;
    check_unit("negative descriptor", negative)?;
    let s = math::dot(anchor, negative) - math::dot(anchor, positive) + margin;
    Ok(s.max(0.0))
}

/// Index of the most similar other descriptor in the batch; ties go to the
/// smallest index.
pub fn mine_hard_negative<D: AsRef<[Real]>>(anchor: usize, batch: &[D]) -> Result<usize> {
    if batch.len() < 2 {
        return Err(Error::InvalidArgument("mine_hard_negative: batch needs at least 2 items".into()));
    }
    if anchor >= batch.len() {
        return Err(Error::OutOfRange {
            op: "mine_hard_negative",
            index: anchor,
            bound: batch.len(),
        });
    }
    let a = batch[anchor].as_ref();
    let mut best: Option<(usize, f64)> = None;
    for (j, d) in batch.iter().enumerate() {
        if j == anchor {
            continue;
        }
        let s = math::dot(a, d.as_ref());
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    Ok(best.expect("batch has another element").0)
}

/// Unweighted values of the four objectives.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub kld: f64,
    pub recon: f64,
    pub seg: f64,
    pub triplet: f64,
}

/// λ0·L_KLD + λ1·L_r + λ2·L_s + λ3·L_t.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    for (part, value) in [
        ("kld", parts.kld),
        ("recon", parts.recon),
        ("seg", parts.seg),
        ("triplet", parts.triplet),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFinite { part, value });
        }
    }
    Ok(weights.kld * parts.kld + weights.recon * parts.recon + weights.seg * parts.seg + weights.triplet * parts.triplet)
}

struct KldOp;

impl Function for KldOp {
    fn name(&self) -> &'static str {
        "kld_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let g = g.item();
        let (mu, sigma) = (inputs[0], inputs[1]);
        vec![
            Some(mu.map(|m| g * m)),
            Some(sigma.map(|s| g * 0.5 * (math::exp(s) - 1.0))),
        ]
    }
}

struct BceOp {
    mean: bool,
}

impl Function for BceOp {
    fn name(&self) -> &'static str {
        "recon_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, r) = (inputs[0], inputs[1]);
        let mut scale = g.item() as f64;
        if self.mean {
            scale /= x.len() as f64;
        }
        let clamp = LOG_CLAMP as f64;
        let dr = x
            .data()
            .iter()
            .zip(r.data())
            .map(|(&x, &r)| {
                let (x, r) = (x as f64, r as f64);
                let d_pos = if r > clamp { -x / r } else { 0.0 };
                let d_neg = if 1.0 - r > clamp { (1.0 - x) / (1.0 - r) } else { 0.0 };
                (scale * (d_pos + d_neg)) as Real
            })
            .collect();
        vec![None, Some(Tensor::new(r.shape(), dr).expect("bce"))]
    }
}

struct SoftmaxXentOp {
    labels: Vec<u8>,
    weights: Vec<Real>,
}

impl Function for SoftmaxXentOp {
    fn name(&self) -> &'static str {
        "seg_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let n = *logits.shape().last().expect("rank 3");
        let scale = g.item() as f64 / self.labels.len() as f64;
        let mut d = Vec::with_capacity(logits.len());
        for (row, &l) in logits.data().chunks_exact(n).zip(&self.labels) {
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v as f64 - max)).collect();
            let z: f64 = exps.iter().sum();
            let w = self.weights[l as usize] as f64 * scale;
            for (c, e) in exps.iter().enumerate() {
                let target = if c == l as usize { 1.0 } else { 0.0 };
                d.push((w * (e / z - target)) as Real);
            }
        }
        vec![Some(Tensor::new(logits.shape(), d).expect("xent"))]
    }
}

impl Tape {
    pub fn kld_loss(&mut self, mu: Var, sigma: Var) -> Result<Var> {
        let v = kld_loss(self.value(mu).data(), self.value(sigma).data())?;
        Ok(self.record(KldOp, &[mu, sigma], Tensor::scalar(v as Real)))
    }

    /// `x` is the target image and is not differentiated.
    pub fn recon_loss(&mut self, x: Var, r: Var, reduction: ReconReduction) -> Result<Var> {
        let v = recon_loss(self.value(x), self.value(r), reduction)?;
        let op = BceOp {
            mean: reduction == ReconReduction::Mean,
        };
        Ok(self.record(op, &[x, r], Tensor::scalar(v as Real)))
    }

    pub fn seg_loss(&mut self, logits: Var, labels: &[u8], weights: &SegClassWeights) -> Result<Var> {
        let v = seg_loss(self.value(logits), labels, weights)?;
        let op = SoftmaxXentOp {
            labels: labels.to_vec(),
            weights: weights.0.clone(),
        };
        Ok(self.record(op, &[logits], Tensor::scalar(v as Real)))
    }

    /// Triplet hinge on tape descriptors (assumed unit norm).
    pub fn triplet_loss(&mut self, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<Var> {
        let diff = self.sub(negative, positive)?;
        let s = self.dot(anchor, diff)?;
        let s = self.add_scalar(s, margin as Real);
        Ok(self.relu(s))
    }

    /// Weighted total of whichever loss vars are present.
    pub fn total_loss(
        &mut self,
        kld: Option<Var>,
        recon: Option<Var>,
        seg: Option<Var>,
        triplet: Option<Var>,
        weights: &LossWeights,
    ) -> Result<Var> {
        let mut terms = Vec::new();
        for (part, v, w) in [
            ("kld", kld, weights.kld),
            ("recon", recon, weights.recon),
            ("seg", seg, weights.seg),
            ("triplet", triplet, weights.triplet),
        ] {
            if let Some(v) = v {
                let value = self.value(v).item() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite { part, value });
                }
                terms.push((v, w as Real));
            }
        }
        if terms.is_empty() {
            let zero = self.constant(Tensor::scalar(0.0));
            return Ok(zero);
        }
        self.weighted_sum(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kld_examples() {
        assert_eq!(kld_loss(&[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
        assert!(close(kld_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5, 1e-12));
        // ½(2 − ln 2 − 1)
        let expected = 0.5 * (2.0 - core::f64::consts::LN_2 - 1.0);
        let got = kld_loss(&[0.0], &[core::f64::consts::LN_2 as Real]).unwrap();
        assert!(close(got, expected, 1e-6), "{got}");
        assert!(close(expected, 0.15343, 1e-5));
        assert!(kld_loss(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn recon_examples() {
        let half = Tensor::full(&[1, 1, 1], 0.5);
        assert!(close(recon_loss(&half, &half, ReconReduction::Sum).unwrap(), core::f64::consts::LN_2, 1e-7));
        let x = Tensor::full(&[1, 1, 1], 1.0);
        let r = Tensor::full(&[1, 1, 1], 0.9);
        let got = recon_loss(&x, &r, ReconReduction::Sum).unwrap();
        assert!(close(got, 0.10536, 1e-5), "{got}");
        assert!(recon_loss(&x, &Tensor::zeros(&[1, 1, 2]), ReconReduction::Sum).is_err());
    }

    #[test]
    fn recon_minimized_at_target() {
        let x = Tensor::full(&[1, 1, 1], 0.3);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let below = tape.param(Tensor::full(&[1, 1, 1], 0.2));
        let above = tape.param(Tensor::full(&[1, 1, 1], 0.4));
        let lb = tape.recon_loss(xv, below, ReconReduction::Sum).unwrap();
        let la = tape.recon_loss(xv, above, ReconReduction::Sum).unwrap();
        let total = tape.add(lb, la).unwrap();
        let g = tape.backward(total).unwrap();
        assert!(g.get(below).unwrap().item() < 0.0);
        assert!(g.get(above).unwrap().item() > 0.0);
    }

    #[test]
    fn seg_examples() {
        let logits = Tensor::zeros(&[1, 1, 4]);
        let got = seg_loss(&logits, &[2], &SegClassWeights::uniform(4)).unwrap();
        assert!(close(got, libm::log(4.0), 1e-6));

        let logits = Tensor::new(&[1, 1, 2], vec![200.0, -200.0]).unwrap();
        assert!(seg_loss(&logits, &[0], &SegClassWeights::uniform(2)).unwrap() < 1e-12);

        let logits = Tensor::zeros(&[1, 2, 2]);
        let w = SegClassWeights(vec![1.0, 2.0]);
        let got = seg_loss(&logits, &[0, 1], &w).unwrap();
        assert!(close(got, 1.5 * core::f64::consts::LN_2, 1e-6));
        assert!(close(got, 1.0397, 1e-4));

        assert!(matches!(
            seg_loss(&logits, &[0, 2], &w),
            Err(Error::OutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn class_weight_examples() {
        let w = class_weights(&[50, 30, 20]).unwrap();
        let expected = [1.0, 5.0 / 3.0, 2.5];
        for (a, b) in w.as_slice().iter().zip(expected) {
            assert!(close(*a as f64, b, 1e-6));
        }
        assert_eq!(class_weights(&[7, 7, 7]).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(class_weights(&[3]).unwrap().as_slice(), &[1.0]);
        assert!(class_weights(&[3, 0]).is_err());
    }

    fn unit(v: &[Real]) -> Vec<Real> {
        let n = math::norm(v) as Real;
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn triplet_examples() {
        let a = unit(&[1.0, 2.0, 3.0]);
        let p = unit(&[3.0, 1.0, 0.0]);
        assert!(close(triplet_loss(&a, &p, &p, 0.5).unwrap(), 0.5, 1e-7));

        // d_d = d_p, d_dᵀd_n = 0.6
        let d = [1.0, 0.0];
        let n = [0.6, 0.8];
        assert!(close(triplet_loss(&d, &d, &n, 0.5).unwrap(), 0.1, 1e-6));
        // d_dᵀd_n = 1 − m = 0.5 sits on the hinge boundary
        let n = [0.5, libm::sqrt(0.75) as Real];
        assert!(triplet_loss(&d, &d, &n, 0.5).unwrap() < 1e-6);

        assert!(matches!(
            triplet_loss(&[2.0, 0.0], &d, &d, 0.5),
            Err(Error::NotUnitNorm { .. })
        ));
    }

    #[test]
    fn hard_negative_examples() {
        let batch = [vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(mine_hard_negative(0, &batch).unwrap(), 1);
        assert_eq!(mine_hard_negative(1, &batch).unwrap(), 0);

        let s = libm::sqrt(1.0 - 0.81) as Real;
        let batch = [
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.9, s, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(mine_hard_negative(0, &batch).unwrap(), 2);
        // equal similarity: smallest index
        let batch = [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(mine_hard_negative(0, &batch).unwrap(), 1);
        assert!(mine_hard_negative(0, &batch[..1]).is_err());
    }

    #[test]
    fn total_examples() {
        let ones = LossParts {
            kld: 1.0,
            recon: 1.0,
            seg: 1.0,
            triplet: 1.0,
        };
        assert!(close(total_loss(&ones, &LossWeights::default()).unwrap(), 2.0002, 1e-12));
        let zero = LossWeights {
            kld: 0.0,
            recon: 0.0,
            seg: 0.0,
            triplet: 0.0,
            margin: 0.5,
        };
        assert_eq!(total_loss(&ones, &zero).unwrap(), 0.0);
        let bad = LossParts { seg: f64::NAN, ..ones };
        assert!(matches!(
            total_loss(&bad, &LossWeights::default()),
            Err(Error::NonFinite { part: "seg", .. })
        ));
    }
}
