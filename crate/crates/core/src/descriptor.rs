//! Global image descriptor built from the latent μ.
//!
//! Each of the M·(N+1) latent channels is flattened over the H/16 × W/16
//! grid into a D-vector, offset by its learned cluster center, normalized on
//! its own (intra-normalization) and concatenated; the concatenation is then
//! normalized as a whole so descriptors compare by inner product.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Real, EPS_NORM};
use crate::ndgrad::{Tape, Tensor, Var};

/// Unit-norm descriptor of `blocks × block_len` values, block-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    data: Vec<Real>,
    blocks: usize,
    block_len: usize,
    degenerate: bool,
}

impl GlobalDescriptor {
    /// Wraps stored values (e.g. read back from disk).
    pub fn from_parts(data: Vec<Real>, blocks: usize, block_len: usize) -> Result<Self> {
        if blocks == 0 || block_len == 0 || data.len() != blocks * block_len {
            return Err(Error::shape("descriptor", &[data.len()], &[blocks, block_len]));
        }
        let degenerate = data.chunks_exact(block_len).any(|b| math::norm(b) <= EPS_NORM as f64);
        Ok(GlobalDescriptor {
            data,
            blocks,
            block_len,
            degenerate,
        })
    }

    /// Single-block descriptor over a raw vector, normalized here.
    pub fn from_vector(v: &[Real]) -> Result<Self> {
        let n = math::norm(v).max(EPS_NORM as f64);
        let data = v.iter().map(|&x| (x as f64 / n) as Real).collect();
        Self::from_parts(data, 1, v.len())
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// True when at least one residual block was zero before normalization.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn block(&self, i: usize) -> &[Real] {
        &self.data[i * self.block_len..(i + 1) * self.block_len]
    }

    /// The M blocks belonging to decoder group `g`.
    pub fn block_view(&self, group: usize, maps_per_group: usize) -> Result<Vec<&[Real]>> {
        if maps_per_group == 0 || self.blocks % maps_per_group != 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "descriptor has {} blocks, not a multiple of {maps_per_group} maps per group",
                self.blocks
            )));
        }
        let groups = self.blocks / maps_per_group;
        if group >= groups {
            return Err(Error::OutOfRange {
                op: "block_view",
                index: group,
                bound: groups,
            });
        }
        Ok((group * maps_per_group..(group + 1) * maps_per_group)
            .map(|i| self.block(i))
            .collect())
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.data)
    }
}

fn check_unit(d: &GlobalDescriptor) -> Result<()> {
    let n = d.norm();
    if (n - 1.0).abs() > 1e-3 {
        return Err(Error::NotUnitNorm {
            what: "global descriptor",
            norm: n,
        });
    }
    Ok(())
}

/// Inner product of two unit descriptors.
pub fn similarity(a: &GlobalDescriptor, b: &GlobalDescriptor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("similarity", &[a.len()], &[b.len()]));
    }
    check_unit(a)?;
    check_unit(b)?;
    Ok(math::dot(&a.data, &b.data))
}

fn check_shapes(mu: &[usize], centers: &[usize]) -> Result<(usize, usize)> {
    match (mu, centers) {
        ([h, w, c], [cc, d]) if c == cc && h * w == *d => Ok((*c, *d)),
        _ => Err(Error::shape("aggregate", mu, centers)),
    }
}

/// Residual aggregation of an H/16 × W/16 × C latent against C centers of
/// dimension D, with intra- and global normalization.
pub fn aggregate(mu: &Tensor, centers: &Tensor) -> Result<GlobalDescriptor> {
    let (c, d) = check_shapes(mu.shape(), centers.shape())?;
    let mut out = alloc::vec![0.0f64; c * d];
    for (pos, fiber) in mu.data().chunks_exact(c).enumerate() {
        for (ch, &v) in fiber.iter().enumerate() {
            out[ch * d + pos] = v as f64 - centers.data()[ch * d + pos] as f64;
        }
    }
    let mut degenerate = false;
    for block in out.chunks_exact_mut(d) {
        let n = libm::sqrt(block.iter().map(|v| v * v).sum::<f64>());
        if n <= EPS_NORM as f64 {
            degenerate = true;
        }
        let n = n.max(EPS_NORM as f64);
        block.iter_mut().for_each(|v| *v /= n);
    }
    let n = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>()).max(EPS_NORM as f64);
    Ok(GlobalDescriptor {
        data: out.into_iter().map(|v| (v / n) as Real).collect(),
        blocks: c,
        block_len: d,
        degenerate,
    })
}

/// Differentiable aggregation; returns the flat C·D descriptor var.
pub fn aggregate_on_tape(tape: &mut Tape, mu: Var, centers: Var) -> Result<Var> {
    let (c, d) = check_shapes(tape.shape(mu), tape.shape(centers))?;
    let grid = tape.reshape(mu, &[d, c])?;
    let blocks = tape.transpose2d(grid)?;
    let residual = tape.sub(blocks, centers)?;
    let intra = tape.l2_normalize(residual, 1)?;
    let flat = tape.reshape(intra, &[c * d])?;
    tape.l2_normalize(flat, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn exact_center_is_degenerate() {
        let mu = Tensor::new(&[1, 2, 2], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let centers = Tensor::new(&[2, 2], vec![0.5, 2.0, -1.0, 3.0]).unwrap();
        let g = aggregate(&mu, &centers).unwrap();
        assert!(g.is_degenerate());
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_block_equals_normalized_residual() {
        let mu = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let centers = Tensor::new(&[1, 4], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let g = aggregate(&mu, &centers).unwrap();
        let r = [0.5, 1.5, -3.5, 0.0];
        let n = libm::sqrt(r.iter().map(|v: &f64| v * v).sum());
        for (a, b) in g.as_slice().iter().zip(r) {
            assert!((*a as f64 - b / n).abs() < 1e-6);
        }
    }

    #[test]
    fn two_block_hand_example() {
        // residual blocks [3, 4, 0, 0] and [0, 0, 0, 5]; grid 2×2, channels 2
        let mu = Tensor::new(&[2, 2, 2], vec![3.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 5.0]).unwrap();
        let centers = Tensor::zeros(&[2, 4]);
        let g = aggregate(&mu, &centers).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let expected = [0.6 * s, 0.8 * s, 0.0, 0.0, 0.0, 0.0, 0.0, s];
        for (a, b) in g.as_slice().iter().zip(expected) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert!(!g.is_degenerate());
    }

    #[test]
    fn tape_matches_plain() {
        let mu = Tensor::new(&[2, 2, 3], (0..12).map(|i| (i as Real * 0.37).sin()).collect()).unwrap();
        let centers = Tensor::new(&[3, 4], (0..12).map(|i| (i as Real * 0.11).cos() * 0.3).collect()).unwrap();
        let plain = aggregate(&mu, &centers).unwrap();
        let mut tape = Tape::new();
        let m = tape.constant(mu);
        let c = tape.constant(centers);
        let v = aggregate_on_tape(&mut tape, m, c).unwrap();
        for (a, b) in plain.as_slice().iter().zip(tape.value(v).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn similarity_rules() {
        let a = GlobalDescriptor::from_vector(&[1.0, 0.0]).unwrap();
        let b = GlobalDescriptor::from_vector(&[0.0, 2.0]).unwrap();
        assert!((similarity(&a, &a).unwrap() - 1.0).abs() < 1e-7);
        assert_eq!(similarity(&a, &b).unwrap(), 0.0);
        let c = GlobalDescriptor::from_parts(vec![2.0, 0.0], 1, 2).unwrap();
        assert!(matches!(similarity(&a, &c), Err(Error::NotUnitNorm { .. })));
    }

    #[test]
    fn block_views_partition() {
        let data: Vec<Real> = (0..24).map(|i| i as Real).collect();
        let g = GlobalDescriptor::from_parts(data.clone(), 6, 4).unwrap();
        let mut joined = Vec::new();
        for group in 0..3 {
            for b in g.block_view(group, 2).unwrap() {
                joined.extend_from_slice(b);
            }
        }
        assert_eq!(joined, data);
        assert!(g.block_view(3, 2).is_err());
        assert!(g.block_view(0, 4).is_err());
    }
}
