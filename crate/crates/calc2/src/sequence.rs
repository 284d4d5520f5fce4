//! Sequential loop-closure detection over an ordered image stream.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use calc2_core::loopdb::{LoopDatabase, TemporalState, TemporalStatus};
use calc2_core::net::CalcNet;
use calc2_core::pipeline::frame_record;
use calc2_core::Tensor;

use crate::config::LoopSettings;
use crate::image_io;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopEvent {
    pub frame: u64,
    pub matched: Option<u64>,
    pub similarity: f64,
    pub inliers: usize,
    /// Id range of a confirmed loop.
    pub confirmed: Option<(u64, u64)>,
}

pub struct LoopDetector<'a> {
    net: &'a CalcNet,
    settings: LoopSettings,
    db: LoopDatabase,
    temporal: TemporalState,
    next_id: u64,
}

impl<'a> LoopDetector<'a> {
    pub fn new(net: &'a CalcNet, settings: LoopSettings) -> Result<Self> {
        let temporal = TemporalState::new(settings.temporal, settings.half_width)?;
        Ok(LoopDetector {
            net,
            settings,
            db: LoopDatabase::new(),
            temporal,
            next_id: 0,
        })
    }

    pub fn database(&self) -> &LoopDatabase {
        &self.db
    }

    /// Describe, detect against earlier frames, update the temporal window,
    /// then store the frame.
    pub fn process(&mut self, image: &Tensor) -> Result<LoopEvent> {
        let id = self.next_id;
        let record = frame_record(self.net, id, image, &self.settings.describe)?;
        let decision = self.db.detect(&record, &self.settings.params)?;
        let event = LoopEvent {
            frame: id,
            matched: decision.matched,
            similarity: decision.similarity,
            inliers: decision.inliers,
            confirmed: match self.temporal.update(decision) {
                TemporalStatus::Confirmed { min_id, max_id } => Some((min_id, max_id)),
                TemporalStatus::Pending => None,
            },
        };
        if let (true, Some((lo, hi))) = (self.settings.sparsify, event.confirmed) {
            let w = self.settings.half_width;
            self.db.remove_range(lo.saturating_sub(w), hi + w);
        }
        self.db.insert(record)?;
        self.next_id += 1;
        Ok(event)
    }
}

pub fn run_images(net: &CalcNet, images: &[Tensor], settings: &LoopSettings) -> Result<Vec<LoopEvent>> {
    let mut det = LoopDetector::new(net, settings.clone())?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| det.process(img).with_context(|| format!("frame {i}")))
        .collect()
}

/// Images are decoded one at a time, in order.
pub fn run_paths(net: &CalcNet, paths: &[PathBuf], settings: &LoopSettings) -> Result<Vec<LoopEvent>> {
    let cfg = net.config();
    let mut det = LoopDetector::new(net, settings.clone())?;
    let mut events = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let img = image_io::load_image(p, cfg.height, cfg.width)?;
        let e = det.process(&img).with_context(|| format!("frame {i} ({})", p.display()))?;
        if let Some((lo, hi)) = e.confirmed {
            log::info!("frame {i}: loop confirmed with frames {lo}..={hi}");
        }
        events.push(e);
    }
    Ok(events)
}

pub fn write_log_csv(events: &[LoopEvent], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "matched", "similarity", "inliers", "confirmed"])?;
    for e in events {
        w.write_record(&[
            e.frame.to_string(),
            e.matched.map_or("-1".to_string(), |m| m.to_string()),
            e.similarity.to_string(),
            e.inliers.to_string(),
            (e.confirmed.is_some() as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per confirmed frame: the frame and the frame it closes onto.
pub fn write_associations(events: &[LoopEvent], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "matched", "window_min", "window_max"])?;
    for e in events {
        if let (Some(m), Some((lo, hi))) = (e.matched, e.confirmed) {
            w.write_record(&[e.frame.to_string(), m.to_string(), lo.to_string(), hi.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
