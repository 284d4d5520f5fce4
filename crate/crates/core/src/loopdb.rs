//! Loop-closure database: exhaustive retrieval, keypoint + epipolar gate,
//! best-similarity selection and temporal confirmation.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use crate::descriptor::GlobalDescriptor;
use crate::error::{Error, Result};
use crate::geometry::{ransac_fundamental, FundamentalMatrix, PointPair, RansacParams, MIN_INLIERS};
use crate::keypoints::{match_descriptors, KeypointSet, Match};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: u64,
    pub descriptor: GlobalDescriptor,
    pub keypoints: KeypointSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopParams {
    /// Candidates retrieved per query.
    pub k: usize,
    pub ratio: f64,
    /// Frames whose id differs from the query by less than this are skipped.
    pub exclusion: u64,
    pub ransac: RansacParams,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            k: 7,
            ratio: 0.7,
            exclusion: 200,
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopDecision {
    pub matched: Option<u64>,
    /// Global similarity of the match, or −1 without one.
    pub similarity: f64,
    pub inliers: usize,
    pub f: Option<FundamentalMatrix>,
}

impl LoopDecision {
    pub fn none() -> Self {
        LoopDecision {
            matched: None,
            similarity: -1.0,
            inliers: 0,
            f: None,
        }
    }

    pub fn is_match(&self) -> bool {
        self.matched.is_some()
    }
}

/// Ordered frame store. Ids are strictly increasing.
#[derive(Debug, Clone, Default)]
pub struct LoopDatabase {
    records: Vec<FrameRecord>,
}

impl LoopDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&FrameRecord> {
        self.records.binary_search_by_key(&id, |r| r.id).ok().map(|i| &self.records[i])
    }

    pub fn insert(&mut self, record: FrameRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.id <= last.id {
                return Err(Error::InvalidArgument(alloc::format!(
                    "frame id {} not after last stored id {}",
                    record.id,
                    last.id
                )));
            }
            if record.descriptor.len() != last.descriptor.len() {
                return Err(Error::shape("insert", &[last.descriptor.len()], &[record.descriptor.len()]));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Drops every frame with id in `[lo, hi]`, for optional sparsification
    /// around detected loops.
    pub fn remove_range(&mut self, lo: u64, hi: u64) -> usize {
        let before = self.records.len();
        self.records.retain(|r| r.id < lo || r.id > hi);
        before - self.records.len()
    }

    /// Top-`k` frames by inner product, descending, ties to the older frame.
    /// With `query_id` set, frames closer than `exclusion` ids are skipped.
    pub fn query_raw(
        &self,
        descriptor: &GlobalDescriptor,
        k: usize,
        query_id: Option<u64>,
        exclusion: u64,
    ) -> Result<Vec<(u64, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut scored = Vec::with_capacity(self.records.len());
        for r in &self.records {
            if query_id.is_some_and(|q| q.abs_diff(r.id) < exclusion) {
                continue;
            }
            if r.descriptor.len() != descriptor.len() {
                return Err(Error::shape("query", &[r.descriptor.len()], &[descriptor.len()]));
            }
            scored.push((r.id, math::dot(r.descriptor.as_slice(), descriptor.as_slice())));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Retrieval, then keypoint matching and RANSAC per candidate in
    /// descending similarity; the first candidate passing the gate wins.
    /// Does not modify the database.
    pub fn detect(&self, query: &FrameRecord, params: &LoopParams) -> Result<LoopDecision> {
        let candidates = self.query_raw(&query.descriptor, params.k, Some(query.id), params.exclusion)?;
        for (id, similarity) in candidates {
            let Some(cand) = self.get(id) else { continue };
            if let Some((f, inliers)) = verify(&query.keypoints, &cand.keypoints, params, mix_seed(params.ransac.seed, query.id, id))? {
                assert!(inliers >= MIN_INLIERS, "matched decision with {inliers} inliers");
                return Ok(LoopDecision {
                    matched: Some(id),
                    similarity,
                    inliers,
                    f: Some(f),
                });
            }
        }
        Ok(LoopDecision::none())
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined ids
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keeps, for every candidate keypoint, only its closest query match.
/// Several query points sharing one candidate point are all consistent
/// with any F whose epipolar line through them is the same, so they would
/// inflate the inlier count without constraining the geometry.
pub fn one_to_one(matches: Vec<Match>) -> Vec<Match> {
    let mut best: BTreeMap<usize, Match> = BTreeMap::new();
    for m in matches {
        let slot = best.entry(m.index_b).or_insert(m);
        if m.distance < slot.distance {
            *slot = m;
        }
    }
    let mut out: Vec<Match> = best.into_values().collect();
    out.sort_by_key(|m| m.index_a);
    out
}

/// Ratio-test matches from `query` to `candidate`, made one-to-one, then
/// RANSAC. Returns the fundamental matrix and inlier count when the pair
/// passes.
pub fn verify(
    query: &KeypointSet,
    candidate: &KeypointSet,
    params: &LoopParams,
    seed: u64,
) -> Result<Option<(FundamentalMatrix, usize)>> {
    let matches = one_to_one(match_descriptors(&query.descriptors, &candidate.descriptors, params.ratio)?);
    if matches.len() < MIN_INLIERS {
        return Ok(None);
    }
    let pairs: Vec<PointPair> = matches
        .iter()
        .map(|m| PointPair::new(query.point(m.index_a), candidate.point(m.index_b)))
        .collect();
    let ransac = RansacParams {
        seed,
        ..params.ransac.clone()
    };
    Ok(ransac_fundamental(&pairs, &ransac).map(|r| (r.f, r.inliers.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalStatus {
    Pending,
    /// The last run of decisions agreed on frames in `[min_id, max_id]`.
    Confirmed { min_id: u64, max_id: u64 },
}

/// Sliding window over the most recent decisions.
#[derive(Debug, Clone)]
pub struct TemporalState {
    length: usize,
    half_width: u64,
    buffer: VecDeque<LoopDecision>,
}

impl TemporalState {
    pub fn new(length: usize, half_width: u64) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidArgument("temporal length must be at least 1".into()));
        }
        Ok(TemporalState {
            length,
            half_width,
            buffer: VecDeque::with_capacity(length),
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Confirmed iff the last `length` decisions all matched and their ids
    /// span at most `2 · half_width`.
    pub fn update(&mut self, decision: LoopDecision) -> TemporalStatus {
        if self.buffer.len() == self.length {
            self.buffer.pop_front();
        }
        self.buffer.push_back(decision);
        if self.buffer.len() < self.length {
            return TemporalStatus::Pending;
        }
        let ids: Option<Vec<u64>> = self.buffer.iter().map(|d| d.matched).collect();
        let Some(ids) = ids else {
            return TemporalStatus::Pending;
        };
        let (lo, hi) = (ids.iter().min().copied().unwrap_or(0), ids.iter().max().copied().unwrap_or(0));
        if hi - lo <= 2 * self.half_width {
            TemporalStatus::Confirmed { min_id: lo, max_id: hi }
        } else {
            TemporalStatus::Pending
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::{Keypoint, KeypointDescriptor};
    use alloc::vec;

    fn unit(dim: usize, i: usize) -> GlobalDescriptor {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        GlobalDescriptor::from_vector(&v).unwrap()
    }

    fn record(id: u64, d: GlobalDescriptor) -> FrameRecord {
        FrameRecord {
            id,
            descriptor: d,
            keypoints: KeypointSet::default(),
        }
    }

    fn matched(id: u64) -> LoopDecision {
        LoopDecision {
            matched: Some(id),
            similarity: 0.9,
            inliers: 20,
            f: None,
        }
    }

    #[test]
    fn insert_and_self_query() {
        let mut db = LoopDatabase::new();
        assert_eq!(db.len(), 0);
        for i in 0..4 {
            db.insert(record(i, unit(4, i as usize))).unwrap();
        }
        let hits = db.query_raw(&unit(4, 2), 1, None, 0).unwrap();
        assert_eq!(hits[0].0, 2);
        assert!((hits[0].1 - 1.0).abs() < 1e-9);
        assert!(db.insert(record(3, unit(4, 0))).is_err());
    }

    #[test]
    fn large_k_returns_everything_sorted() {
        let mut db = LoopDatabase::new();
        for i in 0..3u64 {
            let v = [1.0, i as crate::Real];
            db.insert(record(i, GlobalDescriptor::from_vector(&v).unwrap())).unwrap();
        }
        let q = GlobalDescriptor::from_vector(&[0.0, 1.0]).unwrap();
        let ids: Vec<u64> = db.query_raw(&q, 10, None, 0).unwrap().iter().map(|h| h.0).collect();
        assert_eq!(ids, vec![2, 1, 0]);
    }

    #[test]
    fn exclusion_skips_recent_frames() {
        let mut db = LoopDatabase::new();
        for i in 0..10u64 {
            db.insert(record(i, unit(2, 0))).unwrap();
        }
        let hits = db.query_raw(&unit(2, 0), 10, Some(10), 4).unwrap();
        assert!(hits.iter().all(|h| h.0 <= 6));
        assert_eq!(hits.len(), 7);
    }

    #[test]
    fn empty_database_gives_none() {
        let db = LoopDatabase::new();
        let d = db.detect(&record(5, unit(2, 0)), &LoopParams::default()).unwrap();
        assert_eq!(d, LoopDecision::none());
        assert_eq!(d.similarity, -1.0);
    }

    fn textured_set(n: usize) -> KeypointSet {
        // points on a jittered grid with distinctive descriptors
        let mut keypoints = Vec::new();
        let mut descriptors = Vec::new();
        for i in 0..n {
            let (u, v) = ((i * 37) % 251, (i * 53 + (i * i) % 17) % 187);
            keypoints.push(Keypoint { u, v, channel: 0, activation: 1.0 });
            descriptors.push(KeypointDescriptor(vec![i as crate::Real, (i * i % 13) as crate::Real]));
        }
        KeypointSet { keypoints, descriptors }
    }

    #[test]
    fn one_to_one_keeps_closest_per_candidate() {
        let m = |a, b, d| Match { index_a: a, index_b: b, distance: d };
        let out = one_to_one(vec![m(0, 5, 0.3), m(1, 2, 0.1), m(2, 5, 0.2), m(3, 5, 0.2), m(4, 7, 0.9)]);
        assert_eq!(out, vec![m(1, 2, 0.1), m(2, 5, 0.2), m(4, 7, 0.9)]);
    }

    #[test]
    fn stacked_border_matches_are_not_a_loop() {
        // column of query points all matched to one candidate point, plus
        // a handful of unrelated pairs: fits some F but is not a view pair
        let mut q = KeypointSet::default();
        let mut c = KeypointSet::default();
        for i in 0..12 {
            q.keypoints.push(Keypoint { u: 0, v: 5 * i, channel: 0, activation: 1.0 });
            q.descriptors.push(KeypointDescriptor(vec![0.0, i as crate::Real * 1e-3]));
        }
        c.keypoints.push(Keypoint { u: 0, v: 28, channel: 0, activation: 1.0 });
        c.descriptors.push(KeypointDescriptor(vec![0.0, 0.0]));
        for i in 0..5usize {
            q.keypoints.push(Keypoint { u: 10 + 7 * i, v: 40 - 3 * i, channel: 0, activation: 1.0 });
            q.descriptors.push(KeypointDescriptor(vec![10.0 * (i + 1) as crate::Real, 0.0]));
            c.keypoints.push(Keypoint { u: 50 - 9 * i, v: 11 + 5 * i, channel: 0, activation: 1.0 });
            c.descriptors.push(KeypointDescriptor(vec![10.0 * (i + 1) as crate::Real, 0.0]));
        }
        let params = LoopParams::default();
        let raw = match_descriptors(&q.descriptors, &c.descriptors, params.ratio).unwrap();
        assert!(raw.len() >= 8);
        assert!(verify(&q, &c, &params, 0).unwrap().is_none());
    }

    #[test]
    fn duplicate_frame_is_matched() {
        let kps = textured_set(40);
        let mut db = LoopDatabase::new();
        db.insert(FrameRecord { id: 0, descriptor: unit(3, 0), keypoints: kps.clone() }).unwrap();
        let q = FrameRecord { id: 300, descriptor: unit(3, 0), keypoints: kps };
        let d = db.detect(&q, &LoopParams::default()).unwrap();
        assert_eq!(d.matched, Some(0));
        assert!((d.similarity - 1.0).abs() < 1e-9);
        assert!(d.inliers >= 8);
    }

    #[test]
    fn gate_falls_through_to_second_candidate() {
        let good = textured_set(40);
        // same descriptors, scrambled positions: matches exist but no geometry
        let mut bad = good.clone();
        for (i, kp) in bad.keypoints.iter_mut().enumerate() {
            kp.u = (i * 101 + 7) % 256;
            kp.v = (i * i * 29 + 3) % 192;
        }
        let near = GlobalDescriptor::from_vector(&[1.0, 0.2, 0.0]).unwrap();
        let top = GlobalDescriptor::from_vector(&[1.0, 0.0, 0.0]).unwrap();
        let mut db = LoopDatabase::new();
        db.insert(FrameRecord { id: 0, descriptor: top.clone(), keypoints: bad }).unwrap();
        db.insert(FrameRecord { id: 1, descriptor: near, keypoints: good.clone() }).unwrap();
        let q = FrameRecord { id: 500, descriptor: top, keypoints: good };
        let hits = db.query_raw(&q.descriptor, 7, Some(500), 200).unwrap();
        assert_eq!(hits[0].0, 0);
        let d = db.detect(&q, &LoopParams::default()).unwrap();
        assert_eq!(d.matched, Some(1));
    }

    #[test]
    fn eleven_close_matches_confirm() {
        let mut t = TemporalState::new(11, 5).unwrap();
        let mut last = TemporalStatus::Pending;
        for id in 100..111 {
            last = t.update(matched(id));
        }
        assert_eq!(last, TemporalStatus::Confirmed { min_id: 100, max_id: 110 });
    }

    #[test]
    fn a_miss_restarts_the_run() {
        let mut t = TemporalState::new(11, 5).unwrap();
        for id in 0..10 {
            assert_eq!(t.update(matched(100 + id)), TemporalStatus::Pending);
        }
        assert_eq!(t.update(LoopDecision::none()), TemporalStatus::Pending);
        for id in 0..10 {
            assert_eq!(t.update(matched(100 + id)), TemporalStatus::Pending);
        }
        assert!(matches!(t.update(matched(105)), TemporalStatus::Confirmed { .. }));
    }

    #[test]
    fn spread_matches_stay_pending() {
        let mut t = TemporalState::new(11, 5).unwrap();
        let mut last = TemporalStatus::Pending;
        for i in 0..11 {
            last = t.update(matched(100 + i * 10));
        }
        assert_eq!(last, TemporalStatus::Pending);
        assert!(t.buffered() <= 11);
    }
}
