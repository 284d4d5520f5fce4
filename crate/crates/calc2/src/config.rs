//! Plain-text `key = value` configuration with `[net]`, `[train]`,
//! `[augment]` and `[loop]` sections. Missing keys keep their defaults;
//! unknown sections or keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ini::{Ini, Properties};

use calc2_core::augment::AugmentConfig;
use calc2_core::geometry::RansacParams;
use calc2_core::loopdb::LoopParams;
use calc2_core::losses::ReconReduction;
use calc2_core::net::{NetConfig, POOL_STAGES};
use calc2_core::pipeline::DescribeParams;
use calc2_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub core: TrainConfig,
    pub steps: u64,
    /// Checkpoint period in steps; 0 writes only the final weights.
    pub checkpoint_every: u64,
    /// Dataset manifest; may also be given on the command line.
    pub data: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            core: TrainConfig::default(),
            steps: 2000,
            checkpoint_every: 500,
            data: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub params: LoopParams,
    pub describe: DescribeParams,
    /// Frames that must agree before a loop is confirmed.
    pub temporal: usize,
    /// Allowed spread of matched ids is twice this.
    pub half_width: u64,
    /// Drop database frames around confirmed matches.
    pub sparsify: bool,
}

impl Default for LoopSettings {
    fn default() -> Self {
        LoopSettings {
            params: LoopParams::default(),
            describe: DescribeParams::default(),
            temporal: 11,
            half_width: 5,
            sparsify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub net: NetConfig,
    pub train: TrainSettings,
    pub augment: AugmentConfig,
    pub loop_: LoopSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            net: NetConfig::full(),
            train: TrainSettings::default(),
            augment: AugmentConfig::default(),
            loop_: LoopSettings::default(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("[{section}] {key} = {value:?}: {e}"))
}

fn pair(section: &str, key: &str, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 2 {
        bail!("[{section}] {key} = {value:?}: expected two comma-separated numbers");
    }
    Ok((parse(section, key, parts[0])?, parse(section, key, parts[1])?))
}

fn preset(name: &str) -> Result<NetConfig> {
    match name {
        "full" => Ok(NetConfig::full()),
        "toy" => Ok(NetConfig::toy()),
        "tiny" => Ok(NetConfig::tiny()),
        other => bail!("[net] preset = {other:?}: expected full, toy or tiny"),
    }
}

fn apply_net(net: &mut NetConfig, props: &Properties) -> Result<()> {
    const S: &str = "net";
    if let Some(p) = props.get("preset") {
        *net = preset(p.trim())?;
    }
    for (key, value) in props.iter() {
        match key {
            "preset" => {}
            "height" => net.height = parse(S, key, value)?,
            "width" => net.width = parse(S, key, value)?,
            "maps_per_group" => net.maps_per_group = parse(S, key, value)?,
            "classes" => net.classes = parse(S, key, value)?,
            "stem_channels" => net.stem_channels = parse(S, key, value)?,
            "decoder_channels" => net.decoder_channels = parse(S, key, value)?,
            "stage_channels" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != POOL_STAGES {
                    bail!("[net] stage_channels = {value:?}: expected {POOL_STAGES} comma-separated widths");
                }
                for (slot, p) in net.stage_channels.iter_mut().zip(parts) {
                    *slot = parse(S, key, p)?;
                }
            }
            _ => bail!("unknown key [net] {key}"),
        }
    }
    net.validate().map_err(|e| anyhow!("[net]: {e}"))
}

fn apply_train(train: &mut TrainSettings, props: &Properties) -> Result<()> {
    const S: &str = "train";
    let c = &mut train.core;
    for (key, value) in props.iter() {
        match key {
            "steps" => train.steps = parse(S, key, value)?,
            "checkpoint_every" => train.checkpoint_every = parse(S, key, value)?,
            "data" => train.data = Some(PathBuf::from(value.trim())),
            "batch_size" => c.batch_size = parse(S, key, value)?,
            "seed" => c.seed = parse(S, key, value)?,
            "lr" => c.adam.lr = parse(S, key, value)?,
            "beta1" => c.adam.beta1 = parse(S, key, value)?,
            "beta2" => c.adam.beta2 = parse(S, key, value)?,
            "eps" => c.adam.eps = parse(S, key, value)?,
            "lambda_kld" => c.weights.kld = parse(S, key, value)?,
            "lambda_recon" => c.weights.recon = parse(S, key, value)?,
            "lambda_seg" => c.weights.seg = parse(S, key, value)?,
            "lambda_triplet" => c.weights.triplet = parse(S, key, value)?,
            "margin" => c.weights.margin = parse(S, key, value)?,
            "recon" => {
                c.recon = match value.trim() {
                    "sum" => ReconReduction::Sum,
                    "mean" => ReconReduction::Mean,
                    other => bail!("[train] recon = {other:?}: expected sum or mean"),
                }
            }
            _ => bail!("unknown key [train] {key}"),
        }
    }
    if c.batch_size < 2 {
        bail!("[train] batch_size must be at least 2 for in-batch negatives");
    }
    Ok(())
}

fn apply_augment(a: &mut AugmentConfig, props: &Properties) -> Result<()> {
    const S: &str = "augment";
    for (key, value) in props.iter() {
        match key {
            "tau" => a.tau = parse(S, key, value)?,
            "corner_fraction" => a.corner_fraction = parse(S, key, value)?,
            "rotation_deg" => a.rotation_deg = parse(S, key, value)?,
            "scale_range" => a.scale_range = pair(S, key, value)?,
            "translation_fraction" => a.translation_fraction = parse(S, key, value)?,
            "darken_range" => a.darken_range = pair(S, key, value)?,
            "darken_prob" => a.darken_prob = parse(S, key, value)?,
            "flip_prob" => a.flip_prob = parse(S, key, value)?,
            _ => bail!("unknown key [augment] {key}"),
        }
    }
    a.validate().map_err(|e| anyhow!("[augment]: {e}"))
}

fn apply_loop(l: &mut LoopSettings, props: &Properties) -> Result<()> {
    const S: &str = "loop";
    let r: &mut RansacParams = &mut l.params.ransac;
    for (key, value) in props.iter() {
        match key {
            "k" => l.params.k = parse(S, key, value)?,
            "ratio" => l.params.ratio = parse(S, key, value)?,
            "exclusion" => l.params.exclusion = parse(S, key, value)?,
            "windows" => l.describe.windows = parse(S, key, value)?,
            "normalize_keypoints" => l.describe.normalize_keypoints = parse(S, key, value)?,
            "border_margin" => l.describe.border_margin = parse(S, key, value)?,
            "temporal" => l.temporal = parse(S, key, value)?,
            "half_width" => l.half_width = parse(S, key, value)?,
            "sparsify" => l.sparsify = parse(S, key, value)?,
            "threshold" => r.threshold = parse(S, key, value)?,
            "max_iterations" => r.max_iterations = parse(S, key, value)?,
            "confidence" => r.confidence = parse(S, key, value)?,
            "max_log_nfa" => {
                r.max_log_nfa = match value.trim() {
                    "off" | "none" => None,
                    v => Some(parse(S, key, v)?),
                }
            }
            _ => bail!("unknown key [loop] {key}"),
        }
    }
    if l.params.k == 0 || l.temporal == 0 || l.describe.windows == 0 {
        bail!("[loop] k, temporal and windows must be positive");
    }
    if !(l.params.ratio > 0.0 && l.params.ratio <= 1.0) {
        bail!("[loop] ratio must lie in (0, 1]");
    }
    Ok(())
}

impl Config {
    pub fn from_text(text: &str) -> Result<Config> {
        let ini = Ini::load_from_str(text).context("config syntax")?;
        let mut cfg = Config::default();
        for (section, props) in ini.iter() {
            match section {
                None if props.is_empty() => {}
                None => bail!("config keys must sit under a [section]"),
                Some("net") => apply_net(&mut cfg.net, props)?,
                Some("train") => apply_train(&mut cfg.train, props)?,
                Some("augment") => apply_augment(&mut cfg.augment, props)?,
                Some("loop") => apply_loop(&mut cfg.loop_, props)?,
                Some(other) => bail!("unknown config section [{other}]"),
            }
        }
        cfg.train.core.augment = cfg.augment.clone();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Config::from_text(&text).with_context(|| format!("in {}", path.display()))
    }
}

/// The `[net]` section for a configuration, as embedded in weight files.
pub fn net_to_text(net: &NetConfig) -> String {
    let stages: Vec<String> = net.stage_channels.iter().map(|c| c.to_string()).collect();
    format!(
        "[net]\nheight = {}\nwidth = {}\nmaps_per_group = {}\nclasses = {}\nstem_channels = {}\nstage_channels = {}\ndecoder_channels = {}\n",
        net.height,
        net.width,
        net.maps_per_group,
        net.classes,
        net.stem_channels,
        stages.join(","),
        net.decoder_channels
    )
}

pub fn net_from_text(text: &str) -> Result<NetConfig> {
    let ini = Ini::load_from_str(text).context("network metadata syntax")?;
    let props = ini.section(Some("net")).ok_or_else(|| anyhow!("network metadata lacks [net]"))?;
    let mut net = NetConfig::full();
    apply_net(&mut net, props)?;
    Ok(net)
}
