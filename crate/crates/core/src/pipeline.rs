//! Per-frame inference: encoder pass, global descriptor and keypoints.

use crate::descriptor::{aggregate, GlobalDescriptor};
use crate::error::Result;
use crate::keypoints::{detect_and_describe, KeypointSet};
use crate::loopdb::FrameRecord;
use crate::ndgrad::Tensor;
use crate::net::CalcNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescribeParams {
    /// Keypoint windows per side.
    pub windows: usize,
    /// Unit-normalize keypoint descriptors before matching.
    pub normalize_keypoints: bool,
    /// Keypoints closer than this to the conv5 edge are dropped. Their
    /// descriptor window leaves the map and their activations are shaped
    /// by padding, which makes unrelated frames agree geometrically.
    pub border_margin: usize,
}

impl Default for DescribeParams {
    fn default() -> Self {
        DescribeParams {
            windows: 4,
            normalize_keypoints: false,
            border_margin: 1,
        }
    }
}

/// Image must already have the network's input shape.
pub fn describe_image(net: &CalcNet, image: &Tensor, params: &DescribeParams) -> Result<(GlobalDescriptor, KeypointSet)> {
    let inf = net.infer(image)?;
    let global = aggregate(&inf.mu, net.centers())?;
    let mut keypoints = detect_and_describe(&inf.conv5, params.windows, params.normalize_keypoints)?;
    let (h, w, _) = inf.conv5.hwc()?;
    keypoints.retain_interior(w, h, params.border_margin);
    Ok((global, keypoints))
}

pub fn frame_record(net: &CalcNet, id: u64, image: &Tensor, params: &DescribeParams) -> Result<FrameRecord> {
    let (descriptor, keypoints) = describe_image(net, image, params)?;
    Ok(FrameRecord {
        id,
        descriptor,
        keypoints,
    })
}
