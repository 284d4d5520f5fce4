//! Keypoints from windowed maxima of the full-resolution feature map,
//! 3×3 residual descriptors and 2-NN ratio-test matching.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Real};
use crate::ndgrad::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: usize,
    pub v: usize,
    /// Feature map the maximum came from.
    pub channel: usize,
    pub activation: Real,
}

/// Residuals of the 8 neighbours against the center fiber, `8 × C` values.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointDescriptor(pub Vec<Real>);

impl KeypointDescriptor {
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

impl AsRef<[Real]> for KeypointDescriptor {
    fn as_ref(&self) -> &[Real] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

/// A frame's keypoints with their descriptors, index-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<KeypointDescriptor>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.keypoints[i].u as f64, self.keypoints[i].v as f64)
    }

    /// Drops keypoints closer than `margin` pixels to the edge of a
    /// `width × height` map, keeping order.
    pub fn retain_interior(&mut self, width: usize, height: usize, margin: usize) {
        if margin == 0 {
            return;
        }
        let inside = |k: &Keypoint| {
            k.u >= margin && k.v >= margin && k.u + margin < width && k.v + margin < height
        };
        let keep: Vec<bool> = self.keypoints.iter().map(inside).collect();
        let mut flags = keep.iter();
        self.keypoints.retain(|_| *flags.next().unwrap());
        let mut flags = keep.iter();
        self.descriptors.retain(|_| *flags.next().unwrap());
    }
}

/// Argmax of every `H/n × W/n` window of every channel, then one keypoint
/// per distinct pixel (highest activation wins, then lowest channel).
/// Output is sorted row-major by pixel.
pub fn extract(conv5: &Tensor, windows: usize) -> Result<Vec<Keypoint>> {
    let (h, w, c) = conv5.hwc()?;
    if windows == 0 || h % windows != 0 || w % windows != 0 {
        return Err(Error::invalid("extract", conv5.shape(), "extents not divisible by the window count"));
    }
    let (wh, ww) = (h / windows, w / windows);
    let data = conv5.data();
    let mut best: Vec<Option<Keypoint>> = vec![None; h * w];
    for ch in 0..c {
        for gy in 0..windows {
            for gx in 0..windows {
                let (mut bu, mut bv) = (gx * ww, gy * wh);
                let mut top = data[(bv * w + bu) * c + ch];
                for v in gy * wh..(gy + 1) * wh {
                    for u in gx * ww..(gx + 1) * ww {
                        let a = data[(v * w + u) * c + ch];
                        if a > top {
                            (top, bu, bv) = (a, u, v);
                        }
                    }
                }
                let slot = &mut best[bv * w + bu];
                if slot.is_none_or(|k| top > k.activation) {
                    *slot = Some(Keypoint {
                        u: bu,
                        v: bv,
                        channel: ch,
                        activation: top,
                    });
                }
            }
        }
    }
    Ok(best.into_iter().flatten().collect())
}

/// Neighbour fibers minus the center fiber, neighbours in row-major order
/// (center skipped) with replicate padding at the border.
pub fn describe(conv5: &Tensor, kp: &Keypoint) -> Result<KeypointDescriptor> {
    let (h, w, c) = conv5.hwc()?;
    if kp.u >= w || kp.v >= h {
        return Err(Error::OutOfRange {
            op: "describe",
            index: kp.v * w + kp.u,
            bound: h * w,
        });
    }
    let data = conv5.data();
    let center = &data[(kp.v * w + kp.u) * c..][..c];
    let mut out = Vec::with_capacity(8 * c);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let u = (kp.u as isize + dx).clamp(0, w as isize - 1) as usize;
            let v = (kp.v as isize + dy).clamp(0, h as isize - 1) as usize;
            let fiber = &data[(v * w + u) * c..][..c];
            out.extend(fiber.iter().zip(center).map(|(n, m)| n - m));
        }
    }
    Ok(KeypointDescriptor(out))
}

/// Unit-normalizes a descriptor in place (optional matching mode).
pub fn normalize_descriptor(d: &mut KeypointDescriptor) {
    let n = math::norm(&d.0).max(math::EPS_NORM as f64);
    d.0.iter_mut().for_each(|x| *x = (*x as f64 / n) as Real);
}

/// Extract and describe in one pass.
pub fn detect_and_describe(conv5: &Tensor, windows: usize, normalize: bool) -> Result<KeypointSet> {
    let keypoints = extract(conv5, windows)?;
    let descriptors = keypoints
        .iter()
        .map(|kp| {
            let mut d = describe(conv5, kp)?;
            if normalize {
                normalize_descriptor(&mut d);
            }
            Ok(d)
        })
        .collect::<Result<_>>()?;
    Ok(KeypointSet { keypoints, descriptors })
}

pub fn euclidean(a: &[Real], b: &[Real]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64) * (x as f64 - y as f64)).sum())
}

/// For every descriptor of `a`, its nearest neighbour in `b` if it passes
/// the ratio test `d1 < ratio · d2`. With a single candidate in `b` the
/// match is accepted as is.
pub fn match_descriptors<D: AsRef<[Real]>>(a: &[D], b: &[D], ratio: f64) -> Result<Vec<Match>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("ratio {ratio} outside (0, 1]")));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let dim = a[0].as_ref().len();
    if let Some(bad) = a.iter().chain(b).find(|d| d.as_ref().len() != dim) {
        return Err(Error::shape("match", &[dim], &[bad.as_ref().len()]));
    }
    let mut out = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let (mut j1, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
        for (j, db) in b.iter().enumerate() {
            let d = euclidean(da.as_ref(), db.as_ref());
            if d < d1 {
                (d2, d1, j1) = (d1, d, j);
            } else if d < d2 {
                d2 = d;
            }
        }
        if b.len() == 1 || d1 < ratio * d2 {
            out.push(Match {
                index_a: i,
                index_b: j1,
                distance: d1,
            });
        }
    }
    Ok(out)
}
