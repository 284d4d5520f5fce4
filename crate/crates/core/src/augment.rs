//! Synthetic true positives: random homography warps, conditional
//! darkening and left-right flips, sampled fresh for every use.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::Real;
use crate::ndgrad::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Images with mean intensity above this may be darkened.
    pub tau: f64,
    /// Independent corner displacement, as a fraction of each extent.
    pub corner_fraction: f64,
    /// Rotation bound in degrees (symmetric).
    pub rotation_deg: f64,
    pub scale_range: (f64, f64),
    /// Translation bound as a fraction of each extent (symmetric).
    pub translation_fraction: f64,
    pub darken_range: (f64, f64),
    pub darken_prob: f64,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            tau: 0.2,
            corner_fraction: 0.1,
            rotation_deg: 15.0,
            scale_range: (0.9, 1.1),
            translation_fraction: 0.1,
            darken_range: (0.25, 0.75),
            darken_prob: 0.5,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every random component switched off: the pipeline is the identity.
    pub fn disabled() -> Self {
        AugmentConfig {
            corner_fraction: 0.0,
            rotation_deg: 0.0,
            scale_range: (1.0, 1.0),
            translation_fraction: 0.0,
            darken_prob: 0.0,
            flip_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = self.tau >= 0.0
            && self.corner_fraction >= 0.0
            && self.rotation_deg >= 0.0
            && self.translation_fraction >= 0.0
            && self.scale_range.0 > 0.0
            && self.scale_range.0 <= self.scale_range.1
            && self.darken_range.0 > 0.0
            && self.darken_range.0 <= self.darken_range.1
            && self.darken_range.1 < 1.0
            && prob(self.darken_prob)
            && prob(self.flip_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("augment config has an empty range or bad probability".into()))
        }
    }
}

/// 3×3 projective transform, row-major, normalized so `m[8] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [f64; 9]);

impl Homography {
    pub fn identity() -> Self {
        Homography([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography([1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    fn normalized(m: [f64; 9]) -> Option<Self> {
        if m[8].abs() < 1e-12 || !m.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Homography(m.map(|v| v / m[8])))
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.abs() <= 1e-9 {
            return Err(Error::Degenerate("homography is singular"));
        }
        let m = &self.0;
        let adj = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        Self::normalized(adj.map(|v| v / d)).ok_or(Error::Degenerate("homography inverse at infinity"))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Homography {
        let (a, b) = (&self.0, &other.0);
        let mut m = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
            }
        }
        Self::normalized(m).unwrap_or(Homography(m))
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[6] * x + m[7] * y + m[8];
        ((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w)
    }

    /// Homography taking four source points to four destination points.
    pub fn from_correspondences(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<Self> {
        let mut a = [[0.0f64; 9]; 8];
        for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        // Gaussian elimination with partial pivoting on the 8×8 system.
        for col in 0..8 {
            let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[pivot][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, pivot);
            for row in 0..8 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..9 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        let mut m = [1.0; 9];
        for i in 0..8 {
            m[i] = a[i][8] / a[i][i];
        }
        Self::normalized(m)
    }
}

const MAX_ATTEMPTS: usize = 100;

/// Random viewpoint change for a `width × height` image: rotation, scale and
/// translation about the image center, then independent corner jitter.
pub fn sample_homography<R: Rng + ?Sized>(
    cfg: &AugmentConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Homography> {
    let (w, h) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let uniform = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
    for _ in 0..MAX_ATTEMPTS {
        let theta = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg).to_radians();
        let s = uniform(rng, cfg.scale_range.0, cfg.scale_range.1);
        let tx = uniform(rng, -cfg.translation_fraction, cfg.translation_fraction) * w;
        let ty = uniform(rng, -cfg.translation_fraction, cfg.translation_fraction) * h;
        let (sin, cos) = (libm::sin(theta), libm::cos(theta));
        let affine = Homography([
            s * cos,
            -s * sin,
            cx - s * (cos * cx - sin * cy) + tx,
            s * sin,
            s * cos,
            cy - s * (sin * cx + cos * cy) + ty,
            0.0,
            0.0,
            1.0,
        ]);
        let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
        let mut moved = [(0.0, 0.0); 4];
        for (m, &(x, y)) in moved.iter_mut().zip(&corners) {
            let (u, v) = affine.apply(x, y);
            let du = uniform(rng, -cfg.corner_fraction, cfg.corner_fraction) * w;
            let dv = uniform(rng, -cfg.corner_fraction, cfg.corner_fraction) * h;
            *m = (u + du, v + dv);
        }
        if let Some(hm) = Homography::from_correspondences(&corners, &moved) {
            if hm.det().abs() > 1e-9 && hm.inverse().is_ok() {
                return Ok(hm);
            }
        }
    }
    Err(Error::Degenerate("no invertible homography after 100 draws"))
}

/// Bilinear sample at a continuous pixel position; `None` outside the image.
fn sample(img: &Tensor, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
    let (h, w, _) = img.hwc().ok()?;
    const SLACK: f64 = 1e-9;
    if !(x >= -SLACK && y >= -SLACK && x <= (w - 1) as f64 + SLACK && y <= (h - 1) as f64 + SLACK) {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (libm::floor(x) as usize, libm::floor(y) as usize);
    Some((x0, y0, x - x0 as f64, y - y0 as f64))
}

/// Inverse-mapped bilinear warp; pixels whose source falls outside the
/// image are black.
pub fn warp(image: &Tensor, hm: &Homography) -> Result<Tensor> {
    let (h, w, c) = image.hwc()?;
    let inv = hm.inverse()?;
    let src = image.data();
    let mut out = vec![0.0 as Real; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let Some((x0, y0, fx, fy)) = sample(image, sx, sy) else {
                continue;
            };
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let o = &mut out[(y * w + x) * c..][..c];
            for (ch, o) in o.iter_mut().enumerate() {
                let p = |xx: usize, yy: usize| src[(yy * w + xx) * c + ch] as f64;
                let mut v = p(x0, y0) * (1.0 - fx) * (1.0 - fy);
                if fx > 0.0 {
                    v += p(x1, y0) * fx * (1.0 - fy);
                }
                if fy > 0.0 {
                    v += p(x0, y1) * (1.0 - fx) * fy;
                }
                if fx > 0.0 && fy > 0.0 {
                    v += p(x1, y1) * fx * fy;
                }
                *o = v as Real;
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Per-pixel class ids of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape("labels", &[height, width], &[labels.len()]));
        }
        Ok(LabelMap { width, height, labels })
    }

    pub fn histogram(&self, classes: usize) -> Vec<u64> {
        let mut h = vec![0u64; classes];
        for &l in &self.labels {
            if (l as usize) < classes {
                h[l as usize] += 1;
            }
        }
        h
    }
}

/// Nearest-neighbour warp of a label map; outside pixels get label 0.
pub fn warp_labels(labels: &LabelMap, hm: &Homography) -> Result<LabelMap> {
    let inv = hm.inverse()?;
    let (w, h) = (labels.width, labels.height);
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let (rx, ry) = (libm::round(sx), libm::round(sy));
            if rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 {
                out[y * w + x] = labels.labels[ry as usize * w + rx as usize];
            }
        }
    }
    LabelMap::new(w, h, out)
}

pub fn flip_lr(image: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image.hwc()?;
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..][..c]);
        }
    }
    Tensor::new(image.shape(), out)
}

pub fn flip_labels(labels: &LabelMap) -> LabelMap {
    let mut out = Vec::with_capacity(labels.labels.len());
    for row in labels.labels.chunks_exact(labels.width) {
        out.extend(row.iter().rev());
    }
    LabelMap {
        width: labels.width,
        height: labels.height,
        labels: out,
    }
}

pub fn mean_intensity(image: &Tensor) -> f64 {
    image.sum() / image.len() as f64
}

/// Warp, maybe darken (only if brighter than τ), maybe flip. Labels, when
/// given, follow the same geometric transform.
pub fn make_true_positive_with_labels<R: Rng + ?Sized>(
    image: &Tensor,
    labels: Option<&LabelMap>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor, Option<LabelMap>)> {
    let (h, w, _) = image.hwc()?;
    let hm = sample_homography(cfg, w, h, rng)?;
    let mut out = warp(image, &hm)?;
    let mut lab = labels.map(|l| warp_labels(l, &hm)).transpose()?;
    let darken = rng.random_bool(cfg.darken_prob);
    let factor = if cfg.darken_range.1 > cfg.darken_range.0 {
        rng.random_range(cfg.darken_range.0..cfg.darken_range.1)
    } else {
        cfg.darken_range.0
    };
    if darken && mean_intensity(&out) > cfg.tau {
        out = out.map(|v| (v as f64 * factor) as Real);
    }
    if rng.random_bool(cfg.flip_prob) {
        out = flip_lr(&out)?;
        lab = lab.map(|l| flip_labels(&l));
    }
    Ok((out, lab))
}

pub fn make_true_positive<R: Rng + ?Sized>(image: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    make_true_positive_with_labels(image, None, cfg, rng).map(|(img, _)| img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor {
        let data = (0..h * w * 3).map(|i| ((i * 37) % 101) as Real / 100.0).collect();
        Tensor::new(&[h, w, 3], data).unwrap()
    }

    #[test]
    fn zero_ranges_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hm = sample_homography(&AugmentConfig::disabled(), 32, 24, &mut rng).unwrap();
        for (a, b) in hm.0.iter().zip(Homography::identity().0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let cfg = AugmentConfig::default();
        let a = sample_homography(&cfg, 64, 48, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_homography(&cfg, 64, 48, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = ramp(9, 7);
        assert_eq!(warp(&img, &Homography::identity()).unwrap(), img);
    }

    #[test]
    fn integer_translation_shifts_with_zero_fill() {
        let img = ramp(8, 10);
        let out = warp(&img, &Homography::translation(3.0, -2.0)).unwrap();
        for y in 0..8 {
            for x in 0..10 {
                let (sx, sy) = (x as isize - 3, y as isize + 2);
                for c in 0..3 {
                    let got = out.data()[(y * 10 + x) * 3 + c];
                    let want = if sx >= 0 && sy < 8 {
                        img.data()[(sy as usize * 10 + sx as usize) * 3 + c]
                    } else {
                        0.0
                    };
                    assert_eq!(got, want, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn singular_homography_is_rejected() {
        let img = ramp(4, 4);
        let flat = Homography([1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(warp(&img, &flat).is_err());
    }

    #[test]
    fn warp_round_trip_on_interior() {
        // smooth image so bilinear resampling error stays small
        let (h, w) = (48, 64);
        let data = (0..h * w * 3)
            .map(|i| {
                let (p, c) = (i / 3, i % 3);
                let (y, x) = ((p / w) as f64, (p % w) as f64);
                (0.5 + 0.4 * libm::sin(x / 9.0 + c as f64) * libm::cos(y / 11.0)) as Real
            })
            .collect();
        let img = Tensor::new(&[h, w, 3], data).unwrap();
        let cfg = AugmentConfig {
            corner_fraction: 0.03,
            rotation_deg: 5.0,
            translation_fraction: 0.03,
            scale_range: (0.97, 1.03),
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let hm = sample_homography(&cfg, w, h, &mut rng).unwrap();
            let back = warp(&warp(&img, &hm).unwrap(), &hm.inverse().unwrap()).unwrap();
            for y in 12..h - 12 {
                for x in 12..w - 12 {
                    for c in 0..3 {
                        let i = (y * w + x) * 3 + c;
                        assert!((back.data()[i] - img.data()[i]).abs() < 2.0 / 255.0);
                    }
                }
            }
        }
    }

    #[test]
    fn dark_images_are_never_darkened() {
        let img = Tensor::full(&[8, 8, 3], 0.1);
        let cfg = AugmentConfig {
            darken_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(make_true_positive(&img, &cfg, &mut rng).unwrap(), img);
        }
    }

    #[test]
    fn darkening_reduces_mean() {
        let img = Tensor::full(&[8, 8, 3], 0.6);
        let cfg = AugmentConfig {
            darken_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let out = make_true_positive(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(mean_intensity(&out) < mean_intensity(&img));
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp(5, 6);
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let once = make_true_positive(&img, &cfg, &mut rng).unwrap();
        assert_ne!(once, img);
        assert_eq!(make_true_positive(&once, &cfg, &mut rng).unwrap(), img);
    }

    #[test]
    fn disabled_pipeline_is_identity() {
        let img = ramp(16, 16);
        let out = make_true_positive(&img, &AugmentConfig::disabled(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn labels_follow_flip() {
        let l = LabelMap::new(3, 1, vec![0, 1, 2]).unwrap();
        assert_eq!(flip_labels(&l).labels, vec![2, 1, 0]);
    }
}
