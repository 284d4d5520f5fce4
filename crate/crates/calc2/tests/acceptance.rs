//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test --release -p calc2 --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use calc2::config::TrainSettings;
use calc2::corpus::{self, CorpusSpec, Manifest, SequenceSpec, Split};
use calc2::describe::{describe_paths, write_set, DescribedSet};
use calc2::selftest;
use calc2::training::{load_training_set, moving_average, run_training};
use calc2_core::descriptor::{aggregate, GlobalDescriptor};
use calc2_core::geometry::{ransac_fundamental, synthetic_scene, RansacParams};
use calc2_core::keypoints::{euclidean, match_descriptors, KeypointSet};
use calc2_core::loopdb::{FrameRecord, LoopDatabase, LoopParams};
use calc2_core::losses::mine_hard_negative;
use calc2_core::math::{self, Real};
use calc2_core::ndgrad::GradCheck;
use calc2_core::net::{CalcNet, NetConfig};
use calc2_core::pipeline::{describe_image, frame_record, DescribeParams};
use calc2_core::selfcheck::{gradient_cases, run_case};
use calc2_core::train::TrainConfig;
use calc2_core::Tensor;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let cfg = GradCheck::for_precision();
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    let mut cases = 0;
    for case in gradient_cases() {
        // the whole-network case composes every op and is slow; a few seeds suffice
        let seeds = if case.name == "network" { 0..3 } else { 0..20 };
        let s = run_case(&case, seeds, &cfg).unwrap();
        worst = worst.max(s.max_rel_error);
        if !s.passed() {
            failed.push(format!("{} {:?}", s.name, s.failed_seeds));
        }
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failed.is_empty() && worst < cfg.tolerance && secs < 120.0,
        format!(
            "{cases} cases, 20 seeds each (whole-network case 3), max rel error {worst:.2e} (tolerance {:.0e}), {secs:.1} s, failures {failed:?}",
            cfg.tolerance
        ),
    )
}

fn dimensional_fidelity() -> Outcome {
    let cfg = NetConfig::full();
    let net = CalcNet::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = cfg.height * cfg.width * 3;
    let img = Tensor::new(&[cfg.height, cfg.width, 3], (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let params = DescribeParams {
        windows: 4,
        ..DescribeParams::default()
    };
    let (g, k) = describe_image(&net, &img, &params).unwrap();
    let kdims: Vec<usize> = k.descriptors.iter().map(|d| d.len()).collect();
    let passed = g.len() == 10752 && !kdims.is_empty() && kdims.iter().all(|&d| d == 256);
    outcome(
        passed,
        format!(
            "192x256 input: descriptor {} values, {} keypoints of dimension {:?}",
            g.len(),
            kdims.len(),
            kdims.first()
        ),
    )
}

fn descriptor_math() -> Outcome {
    let norm = selftest::normalization_suite().unwrap();

    let mu = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
    let centers = Tensor::new(&[1, 4], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    let g = aggregate(&mu, &centers).unwrap();
    let r = [0.5f64, 1.5, -3.5, 0.0];
    let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let one = g.as_slice().iter().zip(r).map(|(a, b)| (*a as f64 - b / rn).abs()).fold(0.0, f64::max);

    let mu = Tensor::new(&[2, 2, 2], vec![3.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 5.0]).unwrap();
    let g = aggregate(&mu, &Tensor::zeros(&[2, 4])).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let want = [0.6 * s, 0.8 * s, 0.0, 0.0, 0.0, 0.0, 0.0, s];
    let two = g.as_slice().iter().zip(want).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);

    outcome(
        norm.passed && one <= 1e-6 && two <= 1e-5,
        format!("unit norm max error {:.2e} over 1000 inputs, one block {one:.2e}, two blocks {two:.2e}", norm.max_error),
    )
}

fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<Real>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut matcher_diffs = 0;
    for _ in 0..100 {
        let dim = rng.random_range(1..16);
        let (na, nb) = (rng.random_range(0..30), rng.random_range(0..30));
        let a = random_vectors(&mut rng, na, dim);
        let b = random_vectors(&mut rng, nb, dim);
        let got: Vec<(usize, usize)> = match_descriptors(&a, &b, 0.7)
            .unwrap()
            .iter()
            .map(|m| (m.index_a, m.index_b))
            .collect();
        let mut want = Vec::new();
        for (i, da) in a.iter().enumerate() {
            let mut d: Vec<(f64, usize)> = b.iter().enumerate().map(|(j, db)| (euclidean(da, db), j)).collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if d.len() == 1 || (d.len() >= 2 && d[0].0 < 0.7 * d[1].0) {
                want.push((i, d[0].1));
            }
        }
        matcher_diffs += (got != want) as usize;
    }

    let mut query_diffs = 0;
    for _ in 0..100 {
        let dim = rng.random_range(1..24);
        let n = rng.random_range(1..60);
        let mut db = LoopDatabase::new();
        let mut id = 0u64;
        for v in random_vectors(&mut rng, n, dim) {
            id += rng.random_range(1..4);
            db.insert(FrameRecord {
                id,
                descriptor: GlobalDescriptor::from_vector(&v).unwrap(),
                keypoints: KeypointSet::default(),
            })
            .unwrap();
        }
        let q = GlobalDescriptor::from_vector(&random_vectors(&mut rng, 1, dim)[0]).unwrap();
        let k = rng.random_range(1..10);
        let qid = rng.random_range(0..id + 5);
        let exclusion = rng.random_range(0..6);
        let got = db.query_raw(&q, k, Some(qid), exclusion).unwrap();
        let mut want: Vec<(u64, f64)> = db
            .records()
            .iter()
            .filter(|r| qid.abs_diff(r.id) >= exclusion)
            .map(|r| (r.id, math::dot(r.descriptor.as_slice(), q.as_slice())))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        want.truncate(k);
        query_diffs += (got != want) as usize;
    }

    let mut mining_diffs = 0;
    let mut mining_cases = 0;
    for size in 2..=16 {
        for _ in 0..20 {
            let batch = random_vectors(&mut rng, size, 8);
            for anchor in 0..size {
                let got = mine_hard_negative(anchor, &batch).unwrap();
                let mut best = usize::MAX;
                let mut best_s = f64::NEG_INFINITY;
                for (j, d) in batch.iter().enumerate() {
                    let s = math::dot(&batch[anchor], d);
                    if j != anchor && s > best_s {
                        (best, best_s) = (j, s);
                    }
                }
                mining_diffs += (got != best) as usize;
                mining_cases += 1;
            }
        }
    }

    outcome(
        matcher_diffs == 0 && query_diffs == 0 && mining_diffs == 0,
        format!(
            "matcher {matcher_diffs}/100 differ, query_raw {query_diffs}/100 differ, hard negatives {mining_diffs}/{mining_cases} differ"
        ),
    )
}

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 1.0;
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
                worst = worst.min(found as f64 / 50.0);
            }
            None => worst = 0.0,
        }
    }
    let mut seven_models = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let scene = synthetic_scene(&mut rng, 256.0, 192.0, 7, 0, 5.0);
        seven_models += ransac_fundamental(&scene.pairs, &RansacParams::default()).is_some() as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst >= 0.98 && outliers == 0 && seven_models == 0 && secs < 30.0,
        format!(
            "worst inlier recovery {:.0}%, {outliers} outliers accepted, 7-match models {seven_models}/20, {secs:.2} s",
            worst * 100.0
        ),
    )
}

/// Raw top-1 accuracy of held-out query views against the database views.
fn held_out_top1(net: &CalcNet, manifest: &Manifest) -> f64 {
    let db: Vec<_> = manifest.split(Split::Database).collect();
    let qs: Vec<_> = manifest.split(Split::Query).collect();
    let params = DescribeParams::default();
    let db_set = describe_paths(net, &db.iter().map(|e| manifest.path(&e.image)).collect::<Vec<_>>(), &params).unwrap();
    let q_set = describe_paths(net, &qs.iter().map(|e| manifest.path(&e.image)).collect::<Vec<_>>(), &params).unwrap();
    let mut store = LoopDatabase::new();
    for r in db_set.records() {
        store.insert(r).unwrap();
    }
    let mut correct = 0;
    for (q, entry) in q_set.descriptors.iter().zip(&qs) {
        let top = store.query_raw(q, 1, None, 0).unwrap();
        correct += (db[top[0].0 as usize].place == entry.place) as usize;
    }
    correct as f64 / qs.len() as f64
}

fn desk_scale_learning(work: &Path) -> (Outcome, Option<CalcNet>) {
    let start = Instant::now();
    let cfg = NetConfig::toy();
    let spec = CorpusSpec::new(7, 12, 6, cfg.width, cfg.height, cfg.classes);
    let manifest = corpus::make_corpus(&spec, &work.join("corpus")).unwrap();
    let set = load_training_set(&manifest, &cfg, true).unwrap();
    let settings = TrainSettings {
        core: TrainConfig {
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        },
        steps: 2000,
        checkpoint_every: 0,
        data: None,
    };
    let net = CalcNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let run = match run_training(net, &set, &settings, &work.join("train")) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("training failed: {e:#}")), None),
    };
    let early = moving_average(&run.reports, 10, 10);
    let late = moving_average(&run.reports, run.reports.len(), 10);
    let drop = 1.0 - late / early;
    let top1 = held_out_top1(&run.net, &manifest);
    let secs = start.elapsed().as_secs_f64();
    (
        outcome(
            drop >= 0.5 && top1 >= 0.9,
            format!(
                "loss {early:.4} -> {late:.4} ({:.1}% drop), held-out top-1 {:.1}% over {} queries, {secs:.0} s",
                drop * 100.0,
                top1 * 100.0,
                12 * spec.query_views()
            ),
        ),
        Some(run.net),
    )
}

fn loop_closure(work: &Path, net: &CalcNet) -> Outcome {
    let spec = SequenceSpec::with_revisit(3);
    let dir = work.join("sequence");
    corpus::write_sequence(&spec, &dir).unwrap();
    let weights = work.join("loop_weights.clc2");
    calc2::formats::save_weights(net, &weights).unwrap();
    let config = work.join("loop.ini");
    fs::write(&config, "[net]\npreset = toy\n[loop]\ntemporal = 11\n").unwrap();
    let out = work.join("loop_out");
    let status = Command::new(env!("CARGO_BIN_EXE_calc2"))
        .arg("--config")
        .arg(&config)
        .arg("loop")
        .arg("--weights")
        .arg(&weights)
        .arg("--out")
        .arg(&out)
        .arg(&dir)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    if !status.success() {
        return outcome(false, format!("loop command exited with {status}"));
    }
    let mut reader = csv::Reader::from_path(out.join("loop_log.csv")).unwrap();
    let (mut inside, mut outside) = (0, Vec::new());
    for row in reader.records() {
        let row = row.unwrap();
        let frame: usize = row[0].parse().unwrap();
        let matched: i64 = row[1].parse().unwrap();
        if &row[4] != "1" {
            continue;
        }
        let in_revisit = (300..=320).contains(&frame) && (50..=70).contains(&matched);
        if in_revisit {
            inside += 1;
        } else {
            outside.push((frame, matched));
        }
    }
    outcome(
        inside >= 1 && outside.is_empty(),
        format!("{inside} confirmed frames inside the revisit, {} elsewhere {outside:?}", outside.len()),
    )
}

fn metric_correctness(work: &Path) -> Outcome {
    // four database places on axes 0..4; query i sits at cosine s_i from place i
    let scores = [0.9f64, 0.8, 0.7, 0.6];
    let unit = |v: Vec<f64>| GlobalDescriptor::from_vector(&v.iter().map(|&x| x as Real).collect::<Vec<_>>()).unwrap();
    let axis = |i: usize, s: f64| {
        let mut v = vec![0.0; 8];
        v[i] = s;
        v[4 + i] = (1.0 - s * s).sqrt();
        v
    };
    let db = DescribedSet {
        sources: (0..4).map(|i| format!("db{i}").into()).collect(),
        descriptors: (0..4).map(|i| unit(axis(i, 1.0))).collect(),
        keypoints: vec![KeypointSet::default(); 4],
        channels: 1,
    };
    let qs = DescribedSet {
        sources: (0..4).map(|i| format!("q{i}").into()).collect(),
        descriptors: scores.iter().enumerate().map(|(i, &s)| unit(axis(i, s))).collect(),
        keypoints: vec![KeypointSet::default(); 4],
        channels: 1,
    };
    write_set(&db, &work.join("fx_db")).unwrap();
    write_set(&qs, &work.join("fx_q")).unwrap();
    // query 1 belongs to place 2, so its top-1 answer is wrong
    let gt: BTreeMap<usize, Vec<u64>> = [(0, vec![0]), (1, vec![2]), (2, vec![2]), (3, vec![3])].into();
    fs::write(work.join("fx_gt.txt"), corpus::ground_truth_to_text(&gt)).unwrap();

    let run = |mode: &str| -> Vec<Vec<String>> {
        let out = work.join(format!("fx_{mode}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_calc2"))
            .args(["eval-pr", "--mode", mode, "--database"])
            .arg(work.join("fx_db"))
            .arg("--queries")
            .arg(work.join("fx_q"))
            .arg("--ground-truth")
            .arg(work.join("fx_gt.txt"))
            .arg("--out")
            .arg(&out)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "eval-pr {mode} failed");
        let read = |p: &Path| -> Vec<Vec<String>> {
            csv::Reader::from_path(p)
                .unwrap()
                .records()
                .map(|r| r.unwrap().iter().map(String::from).collect())
                .collect()
        };
        let mut rows = read(&out);
        rows.extend(read(&out.with_extension("answers.csv")));
        rows
    };

    let raw = run("raw");
    let want = [(1.0, 0.25), (0.5, 0.25), (2.0 / 3.0, 0.5), (0.75, 0.75)];
    let points: Vec<(f64, f64)> = raw[..4].iter().map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
    let points_ok = points == want;
    let mut auc = 0.0;
    let mut prev = (1.0, 0.0);
    for &(p, r) in &points {
        auc += (r - prev.1) * (p + prev.0) / 2.0;
        prev = (p, r);
    }
    let auc_ok = auc == 55.0 / 96.0;

    let geo = run("geometric");
    let answers = &geo[geo.len() - 4..];
    let minus_one = answers.iter().all(|r| r[1] == "-1" && r[2].parse::<f64>().unwrap() == -1.0);

    let stdout = Command::new(env!("CARGO_BIN_EXE_calc2"))
        .args(["eval-pr", "--database"])
        .arg(work.join("fx_db"))
        .arg("--queries")
        .arg(work.join("fx_q"))
        .arg("--ground-truth")
        .arg(work.join("fx_gt.txt"))
        .arg("--out")
        .arg(work.join("fx_print.csv"))
        .output()
        .unwrap()
        .stdout;
    let printed = String::from_utf8_lossy(&stdout).lines().next().unwrap_or_default().to_string();
    let auc_printed = printed == format!("AUC {:.6}", 55.0 / 96.0);

    outcome(
        points_ok && auc_ok && minus_one && auc_printed,
        format!("PR points {points:?}, AUC {auc} (want 55/96), printed {printed:?}, geometric no-match scores -1: {minus_one}"),
    )
}

fn throughput(net: &CalcNet) -> Outcome {
    let spec = SequenceSpec {
        frames: 1050,
        ..SequenceSpec::without_revisit(9)
    };
    let frames = corpus::make_sequence(&spec).unwrap();
    let params = LoopParams::default();
    let describe = DescribeParams::default();
    let mut db = LoopDatabase::new();
    for (i, img) in frames[..1000].iter().enumerate() {
        db.insert(frame_record(net, i as u64, img, &describe).unwrap()).unwrap();
    }
    let start = Instant::now();
    for (i, img) in frames[1000..].iter().enumerate() {
        let r = frame_record(net, 1000 + i as u64, img, &describe).unwrap();
        db.detect(&r, &params).unwrap();
    }
    let rate = 50.0 / start.elapsed().as_secs_f64();
    outcome(rate >= 20.0, format!("{rate:.1} decisions/s against 1000 frames (soft target 20, not gating)"))
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path();
    let mut lines = Vec::new();
    let mut report = |n: usize, o: Outcome, gating: bool| {
        let line = format!("criterion {n}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        lines.push((line, o.passed || !gating));
    };
    report(1, gradient_integrity(), true);
    report(2, dimensional_fidelity(), true);
    report(3, descriptor_math(), true);
    report(4, oracle_equivalence(), true);
    report(5, geometry(), true);
    let (learning, trained) = desk_scale_learning(work);
    report(6, learning, true);
    let net = trained.unwrap_or_else(|| CalcNet::new(NetConfig::toy(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
    report(7, loop_closure(work, &net), true);
    report(8, metric_correctness(work), true);
    report(9, throughput(&net), false);
    let failed: Vec<&String> = lines.iter().filter(|(_, ok)| !ok).map(|(l, _)| l).collect();
    assert!(failed.is_empty(), "failed criteria:\n{failed:#?}");
}
