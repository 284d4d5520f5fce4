//! Fundamental-matrix estimation: normalized 8-point solver, Sampson
//! residual and seeded RANSAC with local refits.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Correspondence `a ↔ b` with the constraint `bᵀ F a = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPair {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl PointPair {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Self {
        PointPair { a, b }
    }
}

/// Rank-2, unit Frobenius norm, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(pub [f64; 9]);

impl FundamentalMatrix {
    pub fn det(&self) -> f64 {
        det3(&self.0)
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }

    /// `bᵀ F a`.
    pub fn residual(&self, p: &PointPair) -> f64 {
        let l = mat_vec(&self.0, [p.a.0, p.a.1, 1.0]);
        p.b.0 * l[0] + p.b.1 * l[1] + l[2]
    }
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
}

fn mat_vec(m: &[f64; 9], x: [f64; 3]) -> [f64; 3] {
    [
        m[0] * x[0] + m[1] * x[1] + m[2] * x[2],
        m[3] * x[0] + m[4] * x[1] + m[5] * x[2],
        m[6] * x[0] + m[7] * x[1] + m[8] * x[2],
    ]
}

fn mat_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut m = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            m[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
        }
    }
    m
}

fn transpose(a: &[f64; 9]) -> [f64; 9] {
    [a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]]
}

/// Cyclic Jacobi eigen-decomposition of a symmetric `n × n` matrix.
/// Returns eigenvalues ascending and the matching eigenvectors.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Similarity transform taking points to zero mean and mean distance √2.
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Result<[f64; 9]> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(x, y), p| (x + p.0, y + p.1));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.clone().map(|(x, y)| libm::hypot(x - cx, y - cy)).sum::<f64>() / n;
    if mean_dist < 1e-9 {
        return Err(Error::Degenerate("coincident points"));
    }
    let s = core::f64::consts::SQRT_2 / mean_dist;
    // collinear sets have a vanishing minor axis in the normalized frame
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (x, y) = ((x - cx) * s, (y - cy) * s);
        xx += x * x;
        xy += x * y;
        yy += y * y;
    }
    let (tr, det) = ((xx + yy) / n, (xx * yy - xy * xy) / (n * n));
    let minor = tr / 2.0 - libm::sqrt((tr * tr / 4.0 - det).max(0.0));
    if minor < 1e-10 * tr {
        return Err(Error::Degenerate("collinear points"));
    }
    Ok([s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0])
}

/// Removes the smallest singular direction and rescales to unit norm,
/// fixing the sign so the largest-magnitude entry is positive.
fn project_rank2(f: &[f64; 9]) -> Result<FundamentalMatrix> {
    let ftf = mat_mul(&transpose(f), f);
    let (_, vecs) = symmetric_eigen(&ftf, 3);
    let v = &vecs[0];
    let mut p = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            p[r * 3 + c] = if r == c { 1.0 } else { 0.0 } - v[r] * v[c];
        }
    }
    let g = mat_mul(f, &p);
    let norm = libm::sqrt(g.iter().map(|x| x * x).sum());
    if !(norm > 1e-300) || !norm.is_finite() {
        return Err(Error::Degenerate("vanishing fundamental matrix"));
    }
    let big = g.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    let sign = if big < 0.0 { -1.0 } else { 1.0 };
    Ok(FundamentalMatrix(g.map(|x| sign * x / norm)))
}

/// Hartley-normalized linear estimate from at least 8 correspondences.
pub fn eight_point(pairs: &[PointPair]) -> Result<FundamentalMatrix> {
    if pairs.len() < 8 {
        return Err(Error::InvalidArgument(alloc::format!("8-point solver needs 8 pairs, got {}", pairs.len())));
    }
    let ta = normalizer(pairs.iter().map(|p| p.a))?;
    let tb = normalizer(pairs.iter().map(|p| p.b))?;
    let mut ata = [0.0f64; 81];
    for p in pairs {
        let a = mat_vec(&ta, [p.a.0, p.a.1, 1.0]);
        let b = mat_vec(&tb, [p.b.0, p.b.1, 1.0]);
        let row = [b[0] * a[0], b[0] * a[1], b[0], b[1] * a[0], b[1] * a[1], b[1], a[0], a[1], 1.0];
        for i in 0..9 {
            for j in 0..9 {
                ata[i * 9 + j] += row[i] * row[j];
            }
        }
    }
    let (_, vecs) = symmetric_eigen(&ata, 9);
    let mut fnorm = [0.0; 9];
    fnorm.copy_from_slice(&vecs[0]);
    let fnorm = project_rank2(&fnorm)?;
    let f = mat_mul(&mat_mul(&transpose(&tb), &fnorm.0), &ta);
    project_rank2(&f)
}

/// First-order geometric error of a correspondence, in pixels.
pub fn sampson_distance(f: &FundamentalMatrix, p: &PointPair) -> f64 {
    let fa = mat_vec(&f.0, [p.a.0, p.a.1, 1.0]);
    let ftb = mat_vec(&transpose(&f.0), [p.b.0, p.b.1, 1.0]);
    let e = p.b.0 * fa[0] + p.b.1 * fa[1] + fa[2];
    let denom = fa[0] * fa[0] + fa[1] * fa[1] + ftb[0] * ftb[0] + ftb[1] * ftb[1];
    if e == 0.0 {
        0.0
    } else if denom > 0.0 {
        libm::sqrt(e * e / denom)
    } else {
        f64::INFINITY
    }
}

pub const MIN_INLIERS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacParams {
    /// Inlier threshold on the Sampson distance, pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
    pub seed: u64,
    /// Upper bound on log10 of the expected number of false alarms of the
    /// final model; `None` keeps only the inlier-count gate.
    pub max_log_nfa: Option<f64>,
    /// Image extents used by the chance model; defaults to the bounding
    /// box of the points.
    pub image_size: Option<(f64, f64)>,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            threshold: 1.0,
            max_iterations: 500,
            confidence: 0.99,
            seed: 0,
            max_log_nfa: Some(0.0),
            image_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub f: FundamentalMatrix,
    /// Indices into the input pairs, ascending.
    pub inliers: Vec<usize>,
    pub iterations: usize,
    /// log10 of the expected number of false alarms.
    pub log_nfa: f64,
}

fn inliers_of(f: &FundamentalMatrix, pairs: &[PointPair], threshold: f64) -> Vec<usize> {
    (0..pairs.len()).filter(|&i| sampson_distance(f, &pairs[i]) <= threshold).collect()
}

fn fit(pairs: &[PointPair], idx: &[usize]) -> Result<FundamentalMatrix> {
    let subset: Vec<PointPair> = idx.iter().map(|&i| pairs[i]).collect();
    eight_point(&subset)
}

/// A scored hypothesis; lower `log_nfa` is better.
#[derive(Clone)]
struct Candidate {
    f: FundamentalMatrix,
    inliers: Vec<usize>,
    log_nfa: f64,
}

impl Candidate {
    fn score(f: FundamentalMatrix, pairs: &[PointPair], threshold: f64, size: (f64, f64)) -> Self {
        let inliers = inliers_of(&f, pairs, threshold);
        let log_nfa = log_nfa(&f, pairs, &inliers, size);
        Candidate { f, inliers, log_nfa }
    }

    fn beats(&self, other: &Option<Candidate>) -> bool {
        other.as_ref().is_none_or(|o| self.log_nfa < o.log_nfa)
    }
}

const LOCAL_SAMPLES: usize = 20;

/// Inner RANSAC over the inliers of a promising hypothesis with larger
/// samples, then a least-squares refit on the winner's inliers.
fn local_optimize<R: rand::Rng + ?Sized>(
    start: Candidate,
    pairs: &[PointPair],
    threshold: f64,
    size: (f64, f64),
    rng: &mut R,
) -> Candidate {
    let mut best = start;
    let pool = best.inliers.clone();
    let take = (pool.len() / 2).max(MIN_INLIERS);
    if pool.len() > take {
        for _ in 0..LOCAL_SAMPLES {
            let idx: Vec<usize> = rand::seq::index::sample(rng, pool.len(), take).iter().map(|i| pool[i]).collect();
            if let Ok(f) = fit(pairs, &idx) {
                let c = Candidate::score(f, pairs, threshold, size);
                if c.log_nfa < best.log_nfa {
                    best = c;
                }
            }
        }
    }
    for _ in 0..3 {
        let Ok(f) = fit(pairs, &best.inliers) else { break };
        let c = Candidate::score(f, pairs, threshold, size);
        if c.log_nfa >= best.log_nfa {
            break;
        }
        best = c;
    }
    best
}

fn required_iterations(inliers: usize, total: usize, confidence: f64) -> f64 {
    let w = inliers as f64 / total as f64;
    let p_clean = libm::pow(w, MIN_INLIERS as f64);
    if p_clean >= 1.0 {
        return 0.0;
    }
    if p_clean <= 0.0 {
        return f64::INFINITY;
    }
    libm::log(1.0 - confidence) / libm::log(1.0 - p_clean)
}

fn log10_choose(n: usize, k: usize) -> f64 {
    let lg = |x: usize| libm::lgamma(x as f64 + 1.0);
    (lg(n) - lg(k) - lg(n - k)) / core::f64::consts::LN_10
}

/// Smallest log10 expected count of false alarms over the `k` best-fitting
/// inliers, for a chance model where a random point lands within distance
/// `d` of an epipolar line with probability `2 d · diagonal / area`.
pub fn log_nfa(f: &FundamentalMatrix, pairs: &[PointPair], inliers: &[usize], image_size: (f64, f64)) -> f64 {
    let n = pairs.len();
    if n <= 7 || inliers.len() < MIN_INLIERS {
        return f64::INFINITY;
    }
    let (w, h) = image_size;
    let spread = 2.0 * libm::hypot(w, h) / (w * h).max(f64::MIN_POSITIVE);
    let mut d: Vec<f64> = inliers.iter().map(|&i| sampson_distance(f, &pairs[i])).collect();
    d.sort_by(f64::total_cmp);
    let base = libm::log10((n - 7) as f64);
    (MIN_INLIERS..=d.len())
        .map(|k| {
            let alpha = (spread * d[k - 1]).clamp(1e-30, 1.0);
            base + log10_choose(n, k) + log10_choose(k, 7) + (k - 7) as f64 * libm::log10(alpha)
        })
        .fold(f64::INFINITY, f64::min)
}

fn bounding_size(pairs: &[PointPair]) -> (f64, f64) {
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in pairs {
        for q in [p.a, p.b] {
            lo = (lo.0.min(q.0), lo.1.min(q.1));
            hi = (hi.0.max(q.0), hi.1.max(q.1));
        }
    }
    (hi.0 - lo.0 + 1.0, hi.1 - lo.1 + 1.0)
}

/// Seeded hypothesize-and-verify; hypotheses are ranked by their
/// false-alarm score. `None` when fewer than 8 pairs are given, the best
/// model has fewer than 8 inliers, or it is no better than chance.
pub fn ransac_fundamental(pairs: &[PointPair], params: &RansacParams) -> Option<RansacResult> {
    if pairs.len() < MIN_INLIERS {
        return None;
    }
    let size = params.image_size.unwrap_or_else(|| bounding_size(pairs));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Candidate> = None;
    let mut bound = params.max_iterations as f64;
    let mut iterations = 0;
    let mut sample = Vec::with_capacity(MIN_INLIERS);
    while (iterations as f64) < bound.min(params.max_iterations as f64) {
        iterations += 1;
        sample.clear();
        sample.extend(rand::seq::index::sample(&mut rng, pairs.len(), MIN_INLIERS).iter().map(|i| pairs[i]));
        let Ok(f) = eight_point(&sample) else { continue };
        let c = Candidate::score(f, pairs, params.threshold, size);
        if c.inliers.len() < MIN_INLIERS || !c.beats(&best) {
            continue;
        }
        let c = local_optimize(c, pairs, params.threshold, size, &mut rng);
        bound = required_iterations(c.inliers.len(), pairs.len(), params.confidence);
        best = Some(c);
    }
    let best = best?;
    if best.inliers.len() < MIN_INLIERS || params.max_log_nfa.is_some_and(|b| best.log_nfa > b) {
        return None;
    }
    Some(RansacResult {
        f: best.f,
        inliers: best.inliers,
        iterations,
        log_nfa: best.log_nfa,
    })
}

/// Two-view scene with labelled correspondences, for oracles and self-tests.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub pairs: Vec<PointPair>,
    /// `true` where the pair obeys the ground-truth geometry.
    pub is_inlier: Vec<bool>,
    pub truth: FundamentalMatrix,
}

/// Random rigid camera pair viewing points 4 to 8 units away, projected into
/// a `width × height` image. Outliers are uniform pairs at least `margin`
/// pixels (Sampson) away from the true epipolar geometry.
pub fn synthetic_scene<R: rand::Rng + ?Sized>(
    rng: &mut R,
    width: f64,
    height: f64,
    inliers: usize,
    outliers: usize,
    margin: f64,
) -> SyntheticScene {
    let (fl, cx, cy) = (0.8 * width, width / 2.0, height / 2.0);
    let k = [fl, 0.0, cx, 0.0, fl, cy, 0.0, 0.0, 1.0];
    let kinv = [1.0 / fl, 0.0, -cx / fl, 0.0, 1.0 / fl, -cy / fl, 0.0, 0.0, 1.0];
    let (ax, ay, az) = (
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    );
    let rx = [1.0, 0.0, 0.0, 0.0, libm::cos(ax), -libm::sin(ax), 0.0, libm::sin(ax), libm::cos(ax)];
    let ry = [libm::cos(ay), 0.0, libm::sin(ay), 0.0, 1.0, 0.0, -libm::sin(ay), 0.0, libm::cos(ay)];
    let rz = [libm::cos(az), -libm::sin(az), 0.0, libm::sin(az), libm::cos(az), 0.0, 0.0, 0.0, 1.0];
    let r = mat_mul(&rz, &mat_mul(&ry, &rx));
    let t = [rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)];
    let skew = [0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0];
    let truth = project_rank2(&mat_mul(&mat_mul(&transpose(&kinv), &mat_mul(&skew, &r)), &kinv))
        .expect("camera pair with nonzero baseline");
    let project = |x: [f64; 3]| {
        let p = mat_vec(&k, x);
        (p[0] / p[2], p[1] / p[2])
    };
    let inside = |p: (f64, f64)| p.0 >= 0.0 && p.1 >= 0.0 && p.0 < width && p.1 < height;
    let mut pairs = Vec::with_capacity(inliers + outliers);
    let mut is_inlier = Vec::with_capacity(inliers + outliers);
    while pairs.len() < inliers {
        let z = rng.random_range(4.0..8.0);
        let x = [rng.random_range(-0.6..0.6) * z, rng.random_range(-0.45..0.45) * z, z];
        let mut x2 = mat_vec(&r, x);
        x2.iter_mut().zip(t).for_each(|(a, b)| *a += b);
        let (a, b) = (project(x), project(x2));
        if x2[2] > 0.1 && inside(a) && inside(b) {
            pairs.push(PointPair::new(a, b));
            is_inlier.push(true);
        }
    }
    while pairs.len() < inliers + outliers {
        let a = (rng.random_range(0.0..width), rng.random_range(0.0..height));
        let b = (rng.random_range(0.0..width), rng.random_range(0.0..height));
        let p = PointPair::new(a, b);
        if sampson_distance(&truth, &p) >= margin {
            pairs.push(p);
            is_inlier.push(false);
        }
    }
    // interleave so inliers are not a prefix
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    SyntheticScene {
        pairs: order.iter().map(|&i| pairs[i]).collect(),
        is_inlier: order.iter().map(|&i| is_inlier[i]).collect(),
        truth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skew(t: [f64; 3]) -> [f64; 9] {
        [0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0]
    }

    /// Cameras K[I|0] and K[I|t]; F = K⁻ᵀ [t]× K⁻¹.
    fn translation_scene(t: [f64; 3], n: usize) -> (Vec<PointPair>, [f64; 9]) {
        let (fx, cx, cy) = (200.0, 128.0, 96.0);
        let project = |x: f64, y: f64, z: f64| (fx * x / z + cx, fx * y / z + cy);
        let pairs = (0..n)
            .map(|i| {
                let s = i as f64;
                let (x, y, z) = (libm::sin(s * 1.3) * 2.0, libm::cos(s * 0.7) * 1.5, 4.0 + libm::sin(s * 2.1) * 1.5);
                PointPair::new(project(x, y, z), project(x + t[0], y + t[1], z + t[2]))
            })
            .collect();
        let kinv = [1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fx, -cy / fx, 0.0, 0.0, 1.0];
        let f = mat_mul(&mat_mul(&transpose(&kinv), &skew(t)), &kinv);
        (pairs, f)
    }

    fn same_up_to_scale(a: &[f64; 9], b: &[f64; 9], tol: f64) -> bool {
        let na = libm::sqrt(a.iter().map(|x| x * x).sum());
        let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
        let diff = |s: f64| a.iter().zip(b).map(|(x, y)| (x / na - s * y / nb).abs()).fold(0.0, f64::max);
        diff(1.0) < tol || diff(-1.0) < tol
    }

    #[test]
    fn pure_translation_recovers_skew_form() {
        let (pairs, truth) = translation_scene([0.5, 0.1, 0.05], 20);
        let f = eight_point(&pairs).unwrap();
        assert!(same_up_to_scale(&f.0, &truth, 1e-6));
        for p in &pairs {
            assert!(f.residual(p).abs() <= 1e-6);
        }
        assert!((f.frobenius() - 1.0).abs() < 1e-9);
        assert!(f.det().abs() <= 1e-8);
    }

    #[test]
    fn known_fundamental_is_recovered() {
        let truth = project_rank2(&[0.2, -1.1, 0.3, 0.9, 0.1, -0.4, -0.3, 0.6, 1.0]).unwrap();
        // sample a, then b on the epipolar line l = F a
        let pairs: Vec<PointPair> = (0..15)
            .map(|i| {
                let s = i as f64;
                let a = (libm::sin(s * 1.7) * 3.0, libm::cos(s * 0.9) * 2.0);
                let l = mat_vec(&truth.0, [a.0, a.1, 1.0]);
                let bx = libm::cos(s * 2.3) * 2.5;
                PointPair::new(a, (bx, -(l[0] * bx + l[2]) / l[1]))
            })
            .collect();
        let f = eight_point(&pairs).unwrap();
        assert!(same_up_to_scale(&f.0, &truth.0, 1e-4));
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pairs = vec![PointPair::new((3.0, 4.0), (5.0, 6.0)); 8];
        assert!(matches!(eight_point(&pairs), Err(Error::Degenerate(_))));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pairs: Vec<_> = (0..9)
            .map(|i| PointPair::new((i as f64, 2.0 * i as f64), (i as f64 * 0.3, libm::sin(i as f64))))
            .collect();
        assert!(matches!(eight_point(&pairs), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sampson_hand_example() {
        // translation along x: constraint y' = y
        let f = FundamentalMatrix([0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
        let d = sampson_distance(&f, &PointPair::new((1.0, 2.0), (3.0, 5.0)));
        assert!((d - 3.0 / core::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(sampson_distance(&f, &PointPair::new((1.0, 2.0), (7.0, 2.0))), 0.0);
        let scaled = FundamentalMatrix(f.0.map(|x| -4.5 * x));
        assert!((sampson_distance(&scaled, &PointPair::new((1.0, 2.0), (3.0, 5.0))) - d).abs() < 1e-12);
    }

    #[test]
    fn seven_pairs_give_no_model() {
        let (pairs, _) = translation_scene([0.5, 0.0, 0.0], 7);
        assert!(ransac_fundamental(&pairs, &RansacParams::default()).is_none());
    }

    #[test]
    fn exact_duplicates_pass() {
        let pairs: Vec<_> = (0..30)
            .map(|i| {
                let p = (libm::sin(i as f64) * 100.0 + 128.0, libm::cos(i as f64 * 1.9) * 80.0 + 96.0);
                PointPair::new(p, p)
            })
            .collect();
        let r = ransac_fundamental(&pairs, &RansacParams::default()).unwrap();
        assert_eq!(r.inliers.len(), 30);
    }

    #[test]
    fn ransac_is_deterministic() {
        let (mut pairs, _) = translation_scene([0.5, 0.1, 0.05], 30);
        pairs.extend((0..20).map(|i| PointPair::new((i as f64 * 7.0, 3.0 * i as f64), (250.0 - i as f64, i as f64))));
        let p = RansacParams { seed: 11, ..RansacParams::default() };
        assert_eq!(ransac_fundamental(&pairs, &p), ransac_fundamental(&pairs, &p));
    }

    #[test]
    fn jacobi_matches_diagonal() {
        let (vals, vecs) = symmetric_eigen(&[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0], 3);
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
        assert_eq!(vecs[0], vec![0.0, 1.0, 0.0]);
    }
}
