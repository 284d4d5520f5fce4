//! Training driver: batch sampling over a manifest, CSV loss log and
//! periodic checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use calc2_core::losses::{class_weights, SegClassWeights};
use calc2_core::net::{CalcNet, NetConfig};
use calc2_core::train::{StepReport, TrainSample, Trainer};

use crate::config::TrainSettings;
use crate::corpus::{Manifest, Split};
use crate::{formats, image_io};

/// Training images grouped by place.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub places: Vec<Vec<TrainSample>>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.places.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_labels(&self) -> bool {
        self.places.iter().flatten().all(|s| s.labels.is_some())
    }

    /// Inverse-frequency class weights from every label map.
    pub fn class_weights(&self, classes: usize) -> Result<Option<SegClassWeights>> {
        if !self.has_labels() {
            return Ok(None);
        }
        let mut hist = vec![0u64; classes];
        for s in self.places.iter().flatten() {
            let l = s.labels.as_ref().expect("checked above");
            for (h, c) in hist.iter_mut().zip(l.histogram(classes)) {
                *h += c;
            }
        }
        Ok(Some(class_weights(&hist)?))
    }
}

/// Loads the manifest's training split (database views included, query
/// views held out), resized to the network input.
pub fn load_training_set(manifest: &Manifest, net: &NetConfig, with_labels: bool) -> Result<TrainingSet> {
    let mut places: Vec<Vec<TrainSample>> = Vec::new();
    let mut ids: Vec<usize> = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split != Split::Query) {
        let image = image_io::load_image(&manifest.path(&e.image), net.height, net.width)?;
        let labels = match (&e.labels, with_labels) {
            (Some(p), true) => {
                let l = image_io::load_labels(&manifest.path(p))?;
                if l.labels.iter().any(|&c| c as usize >= net.classes) {
                    bail!("{} holds a class id outside 0..{}", p.display(), net.classes);
                }
                Some(image_io::resize_labels(&l, net.height, net.width))
            }
            _ => None,
        };
        let slot = match ids.iter().position(|&p| p == e.place) {
            Some(i) => i,
            None => {
                ids.push(e.place);
                places.push(Vec::new());
                places.len() - 1
            }
        };
        places[slot].push(TrainSample { image, labels });
    }
    if places.is_empty() {
        bail!("manifest has no training images");
    }
    Ok(TrainingSet { places })
}

/// One image from each of `batch` distinct places, so in-batch negatives
/// never share a place with their anchor.
pub fn sample_batch<'a>(set: &'a TrainingSet, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&'a TrainSample>> {
    if batch > set.places.len() {
        bail!("batch size {batch} exceeds the {} distinct places", set.places.len());
    }
    let mut order: Vec<usize> = (0..set.places.len()).collect();
    order.shuffle(rng);
    Ok(order[..batch]
        .iter()
        .map(|&p| set.places[p].choose(rng).expect("places are non-empty"))
        .collect())
}

pub struct TrainRun {
    pub net: CalcNet,
    pub reports: Vec<StepReport>,
}

/// Runs `settings.steps` steps. Writes `train_log.csv`, periodic
/// `checkpoint_NNNNNN.clc2` files and `weights.clc2` into `out_dir`.
pub fn run_training(net: CalcNet, set: &TrainingSet, settings: &TrainSettings, out_dir: &Path) -> Result<TrainRun> {
    fs::create_dir_all(out_dir)?;
    let mut cfg = settings.core.clone();
    let weights = if set.has_labels() {
        set.class_weights(net.config().classes)?
    } else {
        if cfg.weights.seg > 0.0 {
            log::warn!("no segmentation labels: dropping the segmentation term");
        }
        cfg.weights.seg = 0.0;
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xBA7C_4E5D);
    let batch = cfg.batch_size;
    let mut trainer = Trainer::new(net, cfg, weights)?;
    let mut log = csv::Writer::from_path(out_dir.join("train_log.csv"))?;
    log.write_record(["step", "loss", "kld", "recon", "seg", "triplet"])?;
    let mut reports = Vec::with_capacity(settings.steps as usize);
    for step in 1..=settings.steps {
        let b = sample_batch(set, batch, &mut rng)?;
        let r = trainer
            .step(&b)
            .with_context(|| format!("training aborted at step {step}"))?;
        if !r.loss.is_finite() {
            bail!("training aborted at step {step}: loss is {}", r.loss);
        }
        log.write_record(&[
            r.step.to_string(),
            r.loss.to_string(),
            r.parts.kld.to_string(),
            r.parts.recon.to_string(),
            r.parts.seg.to_string(),
            r.parts.triplet.to_string(),
        ])?;
        if step % 50 == 0 || step == 1 {
            log::info!("step {step}: loss {:.5}", r.loss);
            log.flush()?;
        }
        if settings.checkpoint_every > 0 && step % settings.checkpoint_every == 0 {
            formats::save_weights(trainer.net(), &checkpoint_path(out_dir, step))?;
        }
        reports.push(r);
    }
    log.flush()?;
    let net = trainer.into_net();
    formats::save_weights(&net, &out_dir.join("weights.clc2"))?;
    Ok(TrainRun { net, reports })
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{step:06}.clc2"))
}

/// Trailing mean of the `window` losses ending at `step` (1-based).
pub fn moving_average(reports: &[StepReport], step: usize, window: usize) -> f64 {
    let end = step.min(reports.len());
    let start = end.saturating_sub(window);
    let xs = &reports[start..end];
    xs.iter().map(|r| r.loss).sum::<f64>() / xs.len().max(1) as f64
}

/// Writes a plain progress line to a sink; used by the CLI.
pub fn summarize(reports: &[StepReport], out: &mut impl Write) -> Result<()> {
    if reports.is_empty() {
        return Ok(());
    }
    let first = moving_average(reports, 10, 10);
    let last = moving_average(reports, reports.len(), 10);
    writeln!(out, "steps: {}", reports.len())?;
    writeln!(out, "loss (10-step mean): {first:.5} -> {last:.5}")?;
    Ok(())
}
