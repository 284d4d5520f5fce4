//! Built-in verification suites run by `calc2 selftest`.

use std::fmt;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use calc2_core::descriptor::aggregate;
use calc2_core::geometry::{ransac_fundamental, synthetic_scene, RansacParams};
use calc2_core::keypoints::{euclidean, match_descriptors};
use calc2_core::math::Real;
use calc2_core::ndgrad::GradCheck;
use calc2_core::selfcheck::{gradient_cases, run_case};
use calc2_core::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    /// Largest error observed, in the suite's own unit.
    pub max_error: f64,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} max error {:.3e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.max_error,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    pub seeds: u64,
    /// Op whose backward rule is deliberately corrupted.
    pub fault: Option<&'static str>,
}

pub fn gradient_suite(opts: &SelftestOptions) -> Result<Vec<SuiteResult>> {
    let mut cfg = GradCheck::for_precision();
    cfg.fault = opts.fault;
    let mut out = Vec::new();
    for case in gradient_cases() {
        let seeds = if case.name == "network" { 0..opts.seeds.min(2) } else { 0..opts.seeds };
        let s = run_case(&case, seeds, &cfg)?;
        out.push(SuiteResult {
            suite: format!("gradient {}", s.name),
            passed: s.passed(),
            max_error: s.max_rel_error,
            detail: if s.passed() {
                format!("{} seeds, tolerance {:.0e}", s.seeds, cfg.tolerance)
            } else {
                format!("failed seeds {:?}", s.failed_seeds)
            },
        });
    }
    Ok(out)
}

pub fn normalization_suite() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (h, w, c) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..6));
        let d = h * w;
        let scale: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let mu = Tensor::new(&[h, w, c], (0..h * w * c).map(|_| (rng.random_range(-1.0..1.0) * scale) as Real).collect())?;
        let centers = Tensor::new(&[c, d], (0..c * d).map(|_| rng.random_range(-0.5..0.5)).collect())?;
        let desc = aggregate(&mu, &centers)?;
        worst = worst.max((desc.norm() - 1.0).abs());
    }
    Ok(SuiteResult {
        suite: "descriptor unit norm".into(),
        passed: worst <= 1e-5,
        max_error: worst,
        detail: "1000 random inputs, tolerance 1e-5".into(),
    })
}

pub fn ransac_suite() -> Result<SuiteResult> {
    let mut worst_recovery: f64 = 1.0;
    let mut outliers = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = synthetic_scene(&mut rng, 256.0, 192.0, 50, 50, 5.0);
        let params = RansacParams {
            seed,
            ..RansacParams::default()
        };
        match ransac_fundamental(&scene.pairs, &params) {
            Some(r) => {
                let found = r.inliers.iter().filter(|&&i| scene.is_inlier[i]).count();
                outliers += r.inliers.len() - found;
                worst_recovery = worst_recovery.min(found as f64 / 50.0);
            }
            None => worst_recovery = 0.0,
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let seven = synthetic_scene(&mut rng, 256.0, 192.0, 7, 0, 5.0);
    let seven_none = ransac_fundamental(&seven.pairs, &RansacParams::default()).is_none();
    Ok(SuiteResult {
        suite: "ransac synthetic oracle".into(),
        passed: worst_recovery >= 0.98 && outliers == 0 && seven_none,
        max_error: 1.0 - worst_recovery,
        detail: format!("20 scenes, {outliers} outliers accepted, 7 matches give no model: {seven_none}"),
    })
}

fn brute_force_matches(a: &[Vec<Real>], b: &[Vec<Real>], ratio: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let mut d: Vec<(f64, usize)> = b.iter().enumerate().map(|(j, db)| (euclidean(da, db), j)).collect();
        d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        if d.len() == 1 || (d.len() >= 2 && d[0].0 < ratio * d[1].0) {
            out.push((i, d[0].1));
        }
    }
    out
}

pub fn matcher_suite() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut mismatched = 0;
    for _ in 0..100 {
        let dim = rng.random_range(1..12);
        let (na, nb) = (rng.random_range(0..25), rng.random_range(0..25));
        let mut gen = |n: usize| -> Vec<Vec<Real>> {
            (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (a, b) = (gen(na), gen(nb));
        let got: Vec<(usize, usize)> = match_descriptors(&a, &b, 0.7)?
            .iter()
            .map(|m| (m.index_a, m.index_b))
            .collect();
        if got != brute_force_matches(&a, &b, 0.7) {
            mismatched += 1;
        }
    }
    Ok(SuiteResult {
        suite: "matcher vs brute force".into(),
        passed: mismatched == 0,
        max_error: mismatched as f64,
        detail: format!("100 instances, {mismatched} differ"),
    })
}

/// Every suite in order; callers decide the exit status.
pub fn run_all(opts: &SelftestOptions) -> Result<Vec<SuiteResult>> {
    let mut out = gradient_suite(opts)?;
    out.push(normalization_suite()?);
    out.push(ransac_suite()?);
    out.push(matcher_suite()?);
    Ok(out)
}

/// Static op names accepted by the fault hook.
pub fn fault_op(name: &str) -> Option<&'static str> {
    const OPS: &[&str] = &[
        "conv2d",
        "add_bias",
        "maxpool2x2",
        "elu",
        "sigmoid",
        "exp",
        "relu",
        "scale",
        "add_scalar",
        "add",
        "sub",
        "mul",
        "subpixel_upscale",
        "slice_channels",
        "concat_channels",
        "reshape",
        "transpose2d",
        "l2_normalize",
        "reduce_sum",
        "reduce_mean",
        "reduce_max",
        "dot",
        "kld_loss",
        "recon_loss",
        "seg_loss",
    ];
    OPS.iter().copied().find(|&op| op == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        assert!(normalization_suite().unwrap().passed);
        assert!(matcher_suite().unwrap().passed);
        assert!(ransac_suite().unwrap().passed);
    }

    #[test]
    fn fault_names_the_op() {
        let opts = SelftestOptions {
            seeds: 1,
            fault: fault_op("elu"),
        };
        let results = gradient_suite(&opts).unwrap();
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.suite.as_str()).collect();
        assert!(failed.contains(&"gradient elu"), "{failed:?}");
        assert!(results.iter().find(|r| r.suite == "gradient sigmoid").unwrap().passed);
    }
}
