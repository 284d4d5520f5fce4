//! Batch description of images into an on-disk set: `descriptors.cld2`,
//! one `keypoints/NNNNNN.clk2` per image and `images.txt` naming the
//! sources in order.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use calc2_core::descriptor::GlobalDescriptor;
use calc2_core::keypoints::KeypointSet;
use calc2_core::loopdb::FrameRecord;
use calc2_core::net::CalcNet;
use calc2_core::pipeline::{describe_image, DescribeParams};

use crate::{formats, image_io};

pub const DESCRIPTORS_FILE: &str = "descriptors.cld2";
pub const KEYPOINT_DIR: &str = "keypoints";
pub const SOURCES_FILE: &str = "images.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DescribedSet {
    pub sources: Vec<PathBuf>,
    pub descriptors: Vec<GlobalDescriptor>,
    pub keypoints: Vec<KeypointSet>,
    /// conv5 channel count of the keypoint descriptors.
    pub channels: usize,
}

impl DescribedSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Frame records with ids equal to list positions.
    pub fn records(&self) -> Vec<FrameRecord> {
        self.descriptors
            .iter()
            .zip(&self.keypoints)
            .enumerate()
            .map(|(i, (d, k))| FrameRecord {
                id: i as u64,
                descriptor: d.clone(),
                keypoints: k.clone(),
            })
            .collect()
    }
}

/// Describes every image, in parallel, keeping input order.
pub fn describe_paths(net: &CalcNet, paths: &[PathBuf], params: &DescribeParams) -> Result<DescribedSet> {
    let cfg = net.config();
    let out = paths
        .par_iter()
        .map(|p| -> Result<_> {
            let img = image_io::load_image(p, cfg.height, cfg.width)?;
            describe_image(net, &img, params).with_context(|| format!("describing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (descriptors, keypoints) = out.into_iter().unzip();
    Ok(DescribedSet {
        sources: paths.to_vec(),
        descriptors,
        keypoints,
        channels: cfg.stem_channels,
    })
}

pub fn write_set(set: &DescribedSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(KEYPOINT_DIR))?;
    formats::write_atomic(&dir.join(DESCRIPTORS_FILE), &formats::encode_descriptors(&set.descriptors)?)?;
    set.keypoints
        .par_iter()
        .enumerate()
        .map(|(i, k)| -> Result<()> {
            let bytes = formats::encode_keypoints(k, set.channels)?;
            formats::write_atomic(&dir.join(KEYPOINT_DIR).join(format!("{i:06}.clk2")), &bytes)?;
            Ok(())
        })
        .collect::<Result<()>>()?;
    let names: String = set.sources.iter().map(|p| format!("{}\n", p.display())).collect();
    fs::write(dir.join(SOURCES_FILE), names)?;
    Ok(())
}

pub fn read_set(dir: &Path) -> Result<DescribedSet> {
    let descriptors = formats::decode_descriptors(&formats::read_file(&dir.join(DESCRIPTORS_FILE))?)
        .with_context(|| format!("reading descriptors in {}", dir.display()))?;
    let sources: Vec<PathBuf> = fs::read_to_string(dir.join(SOURCES_FILE))
        .with_context(|| format!("reading {}", dir.join(SOURCES_FILE).display()))?
        .lines()
        .map(PathBuf::from)
        .collect();
    if sources.len() != descriptors.len() {
        bail!("{}: {} sources but {} descriptors", dir.display(), sources.len(), descriptors.len());
    }
    let mut keypoints = Vec::with_capacity(descriptors.len());
    let mut channels = 0;
    for i in 0..descriptors.len() {
        let path = dir.join(KEYPOINT_DIR).join(format!("{i:06}.clk2"));
        let (k, c) = formats::decode_keypoints(&formats::read_file(&path)?)
            .with_context(|| format!("reading {}", path.display()))?;
        channels = c;
        keypoints.push(k);
    }
    Ok(DescribedSet {
        sources,
        descriptors,
        keypoints,
        channels,
    })
}
