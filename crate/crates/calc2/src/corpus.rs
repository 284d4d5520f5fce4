//! Procedural "places" built from layered coloured shapes, their warped
//! views, dataset manifests and ground-truth files, and a sliding-window
//! image sequence with a planted revisit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use calc2_core::augment::{make_true_positive_with_labels, warp, AugmentConfig, Homography, LabelMap};
use calc2_core::{Real, Tensor};

use crate::image_io;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    /// Half extents and rotation.
    Rect { hw: f64, hh: f64, angle: f64 },
    Ellipse { rx: f64, ry: f64, angle: f64 },
    /// Vertices relative to the centre.
    Triangle { pts: [(f64, f64); 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub color: [f64; 3],
    /// Second colour and stripe period/direction, if striped.
    pub stripes: Option<([f64; 3], f64, f64)>,
    pub class: u8,
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Rect { hw, hh, angle } => {
                let (s, c) = angle.sin_cos();
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= hw && v.abs() <= hh
            }
            ShapeKind::Ellipse { rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            ShapeKind::Triangle { pts } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (dy - a.1) - (b.1 - a.1) * (dx - a.0);
                let e = [edge(pts[0], pts[1]), edge(pts[1], pts[2]), edge(pts[2], pts[0])];
                e.iter().all(|&v| v >= 0.0) || e.iter().all(|&v| v <= 0.0)
            }
        }
    }

    fn color_at(&self, x: f64, y: f64) -> [f64; 3] {
        match self.stripes {
            Some((alt, period, angle)) => {
                let t = (x * angle.cos() + y * angle.sin()) / period;
                if t.rem_euclid(1.0) < 0.5 {
                    self.color
                } else {
                    alt
                }
            }
            None => self.color,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    /// Background colours at the left and right edges.
    pub background: [[f64; 3]; 2],
    pub shapes: Vec<Shape>,
    /// Smooth grey noise baked into the scene: amplitude, cell size, seed.
    pub texture: Option<(f64, f64, u64)>,
}

/// Value noise in [-1, 1], bilinear between lattice points `cell` apart.
fn value_noise(x: f64, y: f64, cell: f64, seed: u64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (tx, ty) = (gx - x0, gy - y0);
    let at = |i: f64, j: f64| {
        let h = stream_seed(seed, i as i64 as u64, j as i64 as u64);
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
    top * (1.0 - ty) + bottom * ty
}

impl Scene {
    /// Later shapes paint over earlier ones; background pixels are class 0.
    pub fn render(&self) -> (Tensor, LabelMap) {
        let (w, h) = (self.width, self.height);
        let mut img = Vec::with_capacity(w * h * 3);
        let mut labels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let t = if w > 1 { fx / (w - 1) as f64 } else { 0.0 };
                let mut color = [0.0; 3];
                for (c, slot) in color.iter_mut().enumerate() {
                    *slot = self.background[0][c] * (1.0 - t) + self.background[1][c] * t;
                }
                let mut class = 0;
                for s in self.shapes.iter().rev() {
                    if s.contains(fx, fy) {
                        color = s.color_at(fx, fy);
                        class = s.class;
                        break;
                    }
                }
                if let Some((amp, cell, seed)) = self.texture {
                    let n = amp * value_noise(fx, fy, cell, seed);
                    color.iter_mut().for_each(|c| *c = (*c + n).clamp(0.0, 1.0));
                }
                img.extend(color.iter().map(|&v| v as Real));
                labels.push(class);
            }
        }
        (
            Tensor::new(&[h, w, 3], img).expect("scene extents"),
            LabelMap::new(w, h, labels).expect("scene extents"),
        )
    }
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    // saturated: one channel high, one low, one anywhere
    let mut c = [rng.random_range(0.75..1.0), rng.random_range(0.0..0.25), rng.random_range(0.0..1.0)];
    for i in (1..3).rev() {
        c.swap(i, rng.random_range(0..=i));
    }
    c
}

fn random_shape<R: Rng>(rng: &mut R, cx: f64, cy: f64, size: f64, classes: usize) -> Shape {
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let a = size * rng.random_range(0.5..1.0);
    let b = size * rng.random_range(0.3..1.0);
    let kind = match rng.random_range(0..3) {
        0 => ShapeKind::Rect { hw: a, hh: b, angle },
        1 => ShapeKind::Ellipse { rx: a, ry: b, angle },
        _ => {
            let mut pts = [(0.0, 0.0); 3];
            for (i, p) in pts.iter_mut().enumerate() {
                let t = angle + i as f64 * 2.0 * std::f64::consts::PI / 3.0 + rng.random_range(-0.4..0.4);
                let r = size * rng.random_range(0.7..1.3);
                *p = (r * t.cos(), r * t.sin());
            }
            ShapeKind::Triangle { pts }
        }
    };
    let stripes = rng
        .random_bool(0.4)
        .then(|| (random_color(rng), rng.random_range(3.0..8.0), rng.random_range(0.0..std::f64::consts::PI)));
    Shape {
        kind,
        cx,
        cy,
        color: random_color(rng),
        stripes,
        class: if classes > 1 { rng.random_range(1..classes) as u8 } else { 0 },
    }
}

/// A place: graded background with `count` shapes scattered over it.
pub fn random_scene<R: Rng>(rng: &mut R, width: usize, height: usize, classes: usize, count: usize) -> Scene {
    let extent = width.min(height) as f64;
    let shapes = (0..count)
        .map(|_| {
            let cx = rng.random_range(0.0..width as f64);
            let cy = rng.random_range(0.0..height as f64);
            let size = extent * rng.random_range(0.08..0.22);
            random_shape(rng, cx, cy, size, classes)
        })
        .collect();
    Scene {
        width,
        height,
        background: [random_color(rng).map(|v| v * 0.5), random_color(rng).map(|v| v * 0.5)],
        shapes,
        texture: Some((0.12, 3.0, rng.random())),
    }
}

/// Warp settings for corpus views: a moderate viewpoint change and mild
/// darkening without mirror flips.
pub fn view_augment() -> AugmentConfig {
    AugmentConfig {
        corner_fraction: 0.05,
        rotation_deg: 8.0,
        scale_range: (0.95, 1.05),
        translation_fraction: 0.05,
        darken_range: (0.6, 0.95),
        darken_prob: 0.5,
        flip_prob: 0.0,
        ..AugmentConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub places: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub shapes_per_place: usize,
    pub view_augment: AugmentConfig,
}

impl CorpusSpec {
    pub fn new(seed: u64, places: usize, views: usize, width: usize, height: usize, classes: usize) -> Self {
        CorpusSpec {
            seed,
            places,
            views,
            width,
            height,
            classes,
            shapes_per_place: 7,
            view_augment: view_augment(),
        }
    }

    /// Views held out as queries; the remaining views are for training.
    pub fn query_views(&self) -> usize {
        if self.views >= 3 {
            2
        } else {
            self.views - 1
        }
    }
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn place_scene(spec: &CorpusSpec, place: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, place as u64, u64::MAX));
    random_scene(&mut rng, spec.width, spec.height, spec.classes, spec.shapes_per_place)
}

/// View 0 is the place itself; later views are warped copies.
pub fn render_view(spec: &CorpusSpec, scene: &Scene, place: usize, view: usize) -> Result<(Tensor, LabelMap)> {
    let (img, labels) = scene.render();
    if view == 0 {
        return Ok((img, labels));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, place as u64, view as u64));
    let (img, labels) = make_true_positive_with_labels(&img, Some(&labels), &spec.view_augment, &mut rng)?;
    Ok((img, labels.expect("labels follow the warp")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Database,
    Query,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Database => "database",
            Split::Query => "query",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Split::Train,
            "database" => Split::Database,
            "query" => Split::Query,
            other => bail!("unknown split {other:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
    pub place: usize,
}

/// Dataset listing; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const DATABASE_LIST: &str = "database.txt";
pub const QUERY_LIST: &str = "queries.txt";

impl Manifest {
    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# split image labels place\n");
        for e in &self.entries {
            let labels = e.labels.as_ref().map_or("-".to_string(), |p| p.display().to_string());
            out.push_str(&format!("{} {} {} {}\n", e.split.as_str(), e.image.display(), labels, e.place));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                bail!("{}:{}: expected 4 fields, found {}", path.display(), n + 1, f.len());
            }
            entries.push(ManifestEntry {
                split: Split::parse(f[0]).with_context(|| format!("{}:{}", path.display(), n + 1))?,
                image: PathBuf::from(f[1]),
                labels: (f[2] != "-").then(|| PathBuf::from(f[2])),
                place: f[3].parse().with_context(|| format!("{}:{}: bad place", path.display(), n + 1))?,
            });
        }
        Ok(Manifest {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }
}

/// `query_index: id id …` lines; ids index the database in list order.
pub type GroundTruth = BTreeMap<usize, Vec<u64>>;

pub fn ground_truth_to_text(gt: &GroundTruth) -> String {
    let mut out = String::new();
    for (q, ids) in gt {
        let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
        out.push_str(&format!("{q}: {}\n", ids.join(" ")));
    }
    out
}

pub fn parse_ground_truth(text: &str) -> Result<GroundTruth> {
    let mut gt = GroundTruth::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (q, ids) = line
            .split_once(':')
            .with_context(|| format!("ground truth line {}: missing ':'", n + 1))?;
        let q: usize = q.trim().parse().with_context(|| format!("ground truth line {}: bad query index", n + 1))?;
        let ids = ids
            .split_whitespace()
            .map(|s| s.parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("ground truth line {}: bad id", n + 1))?;
        if gt.insert(q, ids).is_some() {
            bail!("ground truth line {}: query {q} listed twice", n + 1);
        }
    }
    Ok(gt)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    parse_ground_truth(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

/// Image paths, one per line, relative to the list's directory.
pub fn load_image_list(path: &Path) -> Result<Vec<PathBuf>> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| root.join(l))
        .collect())
}

/// Images under a directory (`.ppm`/`.pgm`, sorted by name) or listed in a
/// text file.
pub fn collect_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut out: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        out.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")));
        out.sort();
        if out.is_empty() {
            bail!("no .ppm or .pgm images in {}", input.display());
        }
        Ok(out)
    } else {
        load_image_list(input)
    }
}

/// Writes images, labels, the manifest, the database and query lists and
/// the ground truth. Output is identical for a fixed spec.
pub fn make_corpus(spec: &CorpusSpec, out: &Path) -> Result<Manifest> {
    if spec.places == 0 || spec.views == 0 {
        bail!("places and views must be at least 1");
    }
    spec.view_augment.validate()?;
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("labels"))?;
    let jobs: Vec<(usize, usize)> = (0..spec.places).flat_map(|p| (0..spec.views).map(move |v| (p, v))).collect();
    let scenes: Vec<Scene> = (0..spec.places).into_par_iter().map(|p| place_scene(spec, p)).collect();
    let queries = spec.query_views();
    let entries = jobs
        .par_iter()
        .map(|&(p, v)| -> Result<ManifestEntry> {
            let (img, labels) = render_view(spec, &scenes[p], p, v)?;
            let image = PathBuf::from(format!("images/p{p:03}_v{v}.ppm"));
            let label_path = PathBuf::from(format!("labels/p{p:03}_v{v}.pgm"));
            image_io::save_image(&out.join(&image), &img)?;
            image_io::save_labels(&out.join(&label_path), &labels)?;
            let split = if v == 0 {
                Split::Database
            } else if v >= spec.views - queries {
                Split::Query
            } else {
                Split::Train
            };
            Ok(ManifestEntry {
                split,
                image,
                labels: Some(label_path),
                place: p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        root: out.to_path_buf(),
        entries,
    };
    fs::write(out.join(MANIFEST_FILE), manifest.to_text())?;
    let list = |split| {
        manifest
            .split(split)
            .map(|e| format!("{}\n", e.image.display()))
            .collect::<String>()
    };
    fs::write(out.join(DATABASE_LIST), list(Split::Database))?;
    fs::write(out.join(QUERY_LIST), list(Split::Query))?;
    let gt: GroundTruth = manifest
        .split(Split::Query)
        .enumerate()
        .map(|(q, e)| (q, vec![e.place as u64]))
        .collect();
    fs::write(out.join(GROUND_TRUTH_FILE), ground_truth_to_text(&gt))?;
    Ok(manifest)
}

/// Mean over shape classes present in either map of the class-mask IoU.
pub fn class_iou(a: &LabelMap, b: &LabelMap) -> f64 {
    let classes = a.labels.iter().chain(&b.labels).copied().max().unwrap_or(0) as usize;
    let mut total = 0.0;
    let mut n = 0;
    for c in 1..=classes as u8 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&x, &y) in a.labels.iter().zip(&b.labels) {
            inter += (x == c && y == c) as usize;
            union += (x == c || y == c) as usize;
        }
        if union > 0 {
            total += inter as f64 / union as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// A camera sliding along a long strip of shapes, `step` pixels per frame.
/// Frames `revisit_at .. revisit_at + revisit_len` are warped copies of
/// frames starting at `revisit_of`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub step: usize,
    /// Shapes per frame width of strip.
    pub density: f64,
    pub revisit_of: usize,
    pub revisit_at: usize,
    pub revisit_len: usize,
    pub revisit_augment: AugmentConfig,
}

impl SequenceSpec {
    /// 400 frames at 64×64; frames 300–320 revisit frames 50–70.
    pub fn with_revisit(seed: u64) -> Self {
        SequenceSpec {
            seed,
            frames: 400,
            width: 64,
            height: 64,
            classes: 3,
            step: 4,
            density: 7.0,
            revisit_of: 50,
            revisit_at: 300,
            revisit_len: 21,
            revisit_augment: AugmentConfig {
                corner_fraction: 0.02,
                rotation_deg: 3.0,
                scale_range: (0.97, 1.03),
                translation_fraction: 0.02,
                darken_prob: 0.0,
                flip_prob: 0.0,
                ..AugmentConfig::default()
            },
        }
    }

    pub fn without_revisit(seed: u64) -> Self {
        SequenceSpec {
            revisit_len: 0,
            ..Self::with_revisit(seed)
        }
    }

    /// Source frame for a revisiting frame.
    pub fn revisit_source(&self, frame: usize) -> Option<usize> {
        (frame >= self.revisit_at && frame < self.revisit_at + self.revisit_len)
            .then(|| self.revisit_of + frame - self.revisit_at)
    }
}

fn crop(strip: &Tensor, x0: usize, width: usize) -> Tensor {
    let (h, w, c) = strip.hwc().expect("strip is an image");
    let mut data = Vec::with_capacity(h * width * c);
    for y in 0..h {
        data.extend_from_slice(&strip.data()[(y * w + x0) * c..(y * w + x0 + width) * c]);
    }
    Tensor::new(&[h, width, c], data).expect("crop extents")
}

pub fn make_sequence(spec: &SequenceSpec) -> Result<Vec<Tensor>> {
    if spec.revisit_len > 0 && spec.revisit_of + spec.revisit_len > spec.revisit_at {
        bail!("revisited frames must precede the revisit");
    }
    let strip_w = spec.width + spec.step * spec.frames;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = (spec.density * strip_w as f64 / spec.width as f64).ceil() as usize;
    let mut scene = random_scene(&mut rng, strip_w, spec.height, spec.classes, 0);
    let extent = spec.height as f64;
    for i in 0..count {
        // stratified along the strip so every frame sees several shapes
        let cx = (i as f64 + rng.random_range(0.0..1.0)) * strip_w as f64 / count as f64;
        let cy = rng.random_range(0.0..spec.height as f64);
        let size = extent * rng.random_range(0.08..0.22);
        scene.shapes.push(random_shape(&mut rng, cx, cy, size, spec.classes));
    }
    let (strip, _) = scene.render();
    (0..spec.frames)
        .into_par_iter()
        .map(|f| match spec.revisit_source(f) {
            Some(src) => {
                let base = crop(&strip, src * spec.step, spec.width);
                let mut r = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, f as u64, 1));
                let hm: Homography =
                    calc2_core::augment::sample_homography(&spec.revisit_augment, spec.width, spec.height, &mut r)?;
                Ok(warp(&base, &hm)?)
            }
            None => Ok(crop(&strip, f * spec.step, spec.width)),
        })
        .collect()
}

/// Frames as `frame_NNNNN.ppm` in `out`.
pub fn write_sequence(spec: &SequenceSpec, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let frames = make_sequence(spec)?;
    frames
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let p = out.join(format!("frame_{i:05}.ppm"));
            image_io::save_image(&p, img)?;
            Ok(p)
        })
        .collect()
}
