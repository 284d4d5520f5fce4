use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use calc2::config::{LoopSettings, TrainSettings};
use calc2::corpus::{self, class_iou, CorpusSpec, GroundTruth, Manifest, SequenceSpec, Split};
use calc2::describe::{describe_paths, read_set, write_set};
use calc2::evaluate::{score_queries, EvalMode};
use calc2::formats;
use calc2::image_io;
use calc2::sequence::{run_images, LoopEvent};
use calc2::training::{checkpoint_path, load_training_set, run_training};
use calc2_core::loopdb::LoopParams;
use calc2_core::net::{CalcNet, NetConfig};
use calc2_core::pipeline::DescribeParams;
use calc2_core::train::TrainConfig;

fn toy_corpus(dir: &Path, places: usize, views: usize) -> Manifest {
    let cfg = NetConfig::toy();
    corpus::make_corpus(&CorpusSpec::new(3, places, views, cfg.width, cfg.height, cfg.classes), dir).unwrap()
}

fn one_step(batch: usize) -> TrainSettings {
    TrainSettings {
        core: TrainConfig {
            batch_size: batch,
            ..TrainConfig::default()
        },
        steps: 1,
        checkpoint_every: 1,
        data: None,
    }
}

#[test]
fn single_step_writes_loadable_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = toy_corpus(&tmp.path().join("c"), 4, 3);
    let set = load_training_set(&manifest, &NetConfig::toy(), true).unwrap();
    assert_eq!(set.len(), 4);
    let net = CalcNet::new(NetConfig::toy(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let out = tmp.path().join("run");
    let run = run_training(net, &set, &one_step(4), &out).unwrap();
    assert_eq!(run.reports.len(), 1);
    assert!(run.reports[0].loss.is_finite());
    let back = formats::load_weights(&checkpoint_path(&out, 1)).unwrap();
    assert_eq!(back.config(), run.net.config());
    assert_eq!(formats::load_weights(&out.join("weights.clc2")).unwrap().config(), run.net.config());
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn training_without_labels_drops_segmentation() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = toy_corpus(&tmp.path().join("c"), 4, 3);
    let set = load_training_set(&manifest, &NetConfig::toy(), false).unwrap();
    assert!(!set.has_labels());
    let net = CalcNet::new(NetConfig::toy(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let run = run_training(net, &set, &one_step(2), &tmp.path().join("run")).unwrap();
    let r = &run.reports[0];
    let w = TrainConfig::default().weights;
    let expected = w.kld * r.parts.kld + w.recon * r.parts.recon + w.triplet * r.parts.triplet;
    assert!((r.loss - expected).abs() <= 1e-6 * expected.abs().max(1.0), "{} vs {expected}", r.loss);
}

#[test]
fn describe_is_deterministic_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = toy_corpus(&tmp.path().join("c"), 3, 2);
    let paths: Vec<_> = manifest.entries.iter().map(|e| manifest.path(&e.image)).collect();
    let net = CalcNet::new(NetConfig::toy(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let params = DescribeParams::default();
    let a = describe_paths(&net, &paths, &params).unwrap();
    let b = describe_paths(&net, &paths, &params).unwrap();
    assert_eq!(a, b);
    assert!(a.descriptors.iter().all(|d| d.len() == NetConfig::toy().descriptor_dim()));
    write_set(&a, &tmp.path().join("s1")).unwrap();
    write_set(&b, &tmp.path().join("s2")).unwrap();
    for name in ["descriptors.cld2", "keypoints/000000.clk2", "images.txt"] {
        assert_eq!(fs::read(tmp.path().join("s1").join(name)).unwrap(), fs::read(tmp.path().join("s2").join(name)).unwrap());
    }
    let back = read_set(&tmp.path().join("s1")).unwrap();
    assert_eq!(back.descriptors.len(), a.descriptors.len());
    for (x, y) in back.descriptors.iter().zip(&a.descriptors) {
        assert_eq!(x.as_slice(), y.as_slice());
    }
    assert_eq!(back.sources, a.sources);
    for (x, y) in back.keypoints.iter().zip(&a.keypoints) {
        assert_eq!(x.descriptors, y.descriptors);
        assert_eq!(x.keypoints.iter().map(|k| (k.u, k.v)).collect::<Vec<_>>(), y.keypoints.iter().map(|k| (k.u, k.v)).collect::<Vec<_>>());
    }
}

#[test]
fn evaluation_requires_ground_truth_for_every_query() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = toy_corpus(&tmp.path().join("c"), 2, 3);
    let net = CalcNet::new(NetConfig::toy(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let paths = |s| manifest.split(s).map(|e| manifest.path(&e.image)).collect::<Vec<_>>();
    let db = describe_paths(&net, &paths(Split::Database), &DescribeParams::default()).unwrap();
    let qs = describe_paths(&net, &paths(Split::Query), &DescribeParams::default()).unwrap();
    let mut truth: GroundTruth = corpus::load_ground_truth(&tmp.path().join("c").join(corpus::GROUND_TRUTH_FILE)).unwrap();
    assert_eq!(truth.len(), qs.len());
    let ok = score_queries(db.records(), &qs.records(), &truth, EvalMode::Raw, &LoopParams::default()).unwrap();
    assert_eq!(ok.len(), qs.len());
    truth.remove(&1);
    let err = score_queries(db.records(), &qs.records(), &truth, EvalMode::Raw, &LoopParams::default()).unwrap_err();
    assert!(err.to_string().contains("query 1"), "{err}");
}

#[test]
fn corpus_is_deterministic_and_places_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let a = toy_corpus(&tmp.path().join("a"), 6, 2);
    let b = toy_corpus(&tmp.path().join("b"), 6, 2);
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert_eq!(fs::read(a.path(&x.image)).unwrap(), fs::read(b.path(&y.image)).unwrap());
        assert_eq!(fs::read(a.path(x.labels.as_ref().unwrap())).unwrap(), fs::read(b.path(y.labels.as_ref().unwrap())).unwrap());
    }
    let cfg = NetConfig::toy();
    let mut total = 0.0;
    let mut pairs = 0;
    for seed in 0..4 {
        let spec = CorpusSpec::new(seed, 8, 1, cfg.width, cfg.height, cfg.classes);
        let labels: Vec<_> = (0..8).map(|p| corpus::place_scene(&spec, p).render().1).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                total += class_iou(&labels[i], &labels[j]);
                pairs += 1;
            }
        }
    }
    let mean = total / pairs as f64;
    assert!(mean < 0.3, "mean IoU across places {mean}");
}

#[test]
fn corpus_labels_match_image_extents() {
    let tmp = tempfile::tempdir().unwrap();
    let m = toy_corpus(&tmp.path().join("c"), 2, 4);
    for e in &m.entries {
        let img = image_io::read_raster(&m.path(&e.image)).unwrap();
        let lab = image_io::load_labels(&m.path(e.labels.as_ref().unwrap())).unwrap();
        assert_eq!((img.width, img.height), (lab.width, lab.height));
        assert!(lab.labels.iter().all(|&c| (c as usize) < NetConfig::toy().classes));
    }
    let split_counts = |s| m.split(s).count();
    assert_eq!((split_counts(Split::Database), split_counts(Split::Train), split_counts(Split::Query)), (2, 2, 4));
}

fn assert_confirmations_are_backed(events: &[LoopEvent], temporal: usize) {
    for (i, e) in events.iter().enumerate() {
        if e.confirmed.is_some() {
            assert!(i + 1 >= temporal);
            assert!(events[i + 1 - temporal..=i].iter().all(|x| x.matched.is_some()), "frame {i}");
        }
    }
}

#[test]
fn loop_without_revisit_confirms_nothing() {
    let net = CalcNet::new(NetConfig::toy(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let frames = corpus::make_sequence(&SequenceSpec::without_revisit(3)).unwrap();
    let settings = LoopSettings::default();
    let events = run_images(&net, &frames, &settings).unwrap();
    assert_eq!(events.len(), 400);
    assert!(events[..200].iter().all(|e| e.matched.is_none() && e.similarity == -1.0));
    assert_confirmations_are_backed(&events, settings.temporal);
    let confirmed: Vec<u64> = events.iter().filter(|e| e.confirmed.is_some()).map(|e| e.frame).collect();
    assert!(confirmed.is_empty(), "{confirmed:?}");
}

#[test]
fn loop_revisit_is_confirmed_in_place() {
    let net = CalcNet::new(NetConfig::toy(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let spec = SequenceSpec::with_revisit(3);
    let frames = corpus::make_sequence(&spec).unwrap();
    let settings = LoopSettings::default();
    let events = run_images(&net, &frames, &settings).unwrap();
    assert_confirmations_are_backed(&events, settings.temporal);
    let mut inside = 0;
    for e in events.iter().filter(|e| e.confirmed.is_some()) {
        assert!((300..=320).contains(&e.frame), "frame {}", e.frame);
        assert!((50..=70).contains(&e.matched.unwrap()));
        inside += 1;
    }
    assert!(inside >= 1);
}
