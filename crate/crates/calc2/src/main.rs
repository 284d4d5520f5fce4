use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use calc2::config::Config;
use calc2::corpus::{self, CorpusSpec, Manifest, SequenceSpec};
use calc2::describe::{describe_paths, read_set, write_set};
use calc2::evaluate::{self, EvalMode};
use calc2::selftest::{self, SelftestOptions};
use calc2::{formats, sequence, training};
use calc2_core::net::CalcNet;

#[derive(Parser)]
#[command(name = "calc2", version, about = "Loop-closure descriptors: train, describe, evaluate, detect")]
struct Cli {
    /// Configuration file with [net] [train] [augment] [loop] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct LoopArgs {
    /// Candidates retrieved per query.
    #[arg(long)]
    k: Option<usize>,
    /// Ratio-test threshold.
    #[arg(long)]
    ratio: Option<f64>,
    /// Keypoint windows per side.
    #[arg(long)]
    nw: Option<usize>,
    /// Consecutive agreeing frames needed to confirm a loop.
    #[arg(long)]
    temporal: Option<usize>,
    /// Frames closer than this many ids are never candidates.
    #[arg(long)]
    exclusion: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a dataset manifest.
    Train {
        /// Manifest written by make-corpus (overrides [train] data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for the log, checkpoints and weights.
        #[arg(long)]
        out: PathBuf,
        /// Start from these weights instead of a fresh network.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Ignore segmentation labels.
        #[arg(long)]
        no_labels: bool,
    },
    /// Write freshly initialised weights.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Describe images (a directory of .ppm/.pgm or a list file).
    Describe {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
        #[command(flatten)]
        loop_args: LoopArgs,
    },
    /// Precision-recall of described queries against a described database.
    EvalPr {
        #[arg(long)]
        database: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long, default_value = "raw")]
        mode: EvalMode,
        /// CSV of (threshold, precision, recall).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        loop_args: LoopArgs,
    },
    /// Sequential loop-closure detection over an ordered image sequence.
    Loop {
        #[arg(long)]
        weights: PathBuf,
        /// Output directory for loop_log.csv and associations.csv.
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        loop_args: LoopArgs,
    },
    /// Run the built-in verification suites.
    Selftest {
        /// Seeds per gradient case.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Corrupt the backward rule of this op (debug hook).
        #[arg(long)]
        fault: Option<String>,
    },
    /// Generate a synthetic places corpus or an image sequence.
    MakeCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        places: usize,
        #[arg(long, default_value_t = 6)]
        views: usize,
        /// Write a 400-frame sequence with frames 300–320 revisiting 50–70.
        #[arg(long)]
        sequence: bool,
        /// Sequence without any revisit.
        #[arg(long, conflicts_with = "sequence")]
        sequence_no_revisit: bool,
    },
}

fn apply_loop_args(cfg: &mut Config, a: &LoopArgs) {
    let l = &mut cfg.loop_;
    if let Some(k) = a.k {
        l.params.k = k;
    }
    if let Some(r) = a.ratio {
        l.params.ratio = r;
    }
    if let Some(nw) = a.nw {
        l.describe.windows = nw;
    }
    if let Some(t) = a.temporal {
        l.temporal = t;
    }
    if let Some(e) = a.exclusion {
        l.params.exclusion = e;
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Train {
            data,
            out,
            weights,
            seed,
            steps,
            no_labels,
        } => {
            if let Some(s) = seed {
                cfg.train.core.seed = s;
            }
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let data = data
                .or(cfg.train.data.clone())
                .context("no dataset: pass --data or set [train] data")?;
            let net = match weights {
                Some(w) => formats::load_weights(&w).with_context(|| format!("loading {}", w.display()))?,
                None => CalcNet::new(cfg.net.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.train.core.seed))?,
            };
            let manifest = Manifest::load(&data)?;
            let set = training::load_training_set(&manifest, net.config(), !no_labels)?;
            log::info!("{} training images over {} places", set.len(), set.places.len());
            let run = training::run_training(net, &set, &cfg.train, &out)?;
            training::summarize(&run.reports, &mut std::io::stdout())?;
            println!("weights: {}", out.join("weights.clc2").display());
        }
        Command::Init { out, seed } => {
            let net = CalcNet::new(cfg.net.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?;
            formats::save_weights(&net, &out)?;
            println!("descriptor dimension {}", net.config().descriptor_dim());
        }
        Command::Describe {
            weights,
            out,
            input,
            loop_args,
        } => {
            apply_loop_args(&mut cfg, &loop_args);
            let net = formats::load_weights(&weights).with_context(|| format!("loading {}", weights.display()))?;
            let paths = corpus::collect_images(&input)?;
            let set = describe_paths(&net, &paths, &cfg.loop_.describe)?;
            write_set(&set, &out)?;
            println!(
                "{} images, descriptor dimension {}, keypoint descriptor dimension {}",
                set.len(),
                net.config().descriptor_dim(),
                8 * net.config().stem_channels
            );
        }
        Command::EvalPr {
            database,
            queries,
            ground_truth,
            mode,
            out,
            seed,
            loop_args,
        } => {
            apply_loop_args(&mut cfg, &loop_args);
            cfg.loop_.params.ransac.seed = seed;
            let db = read_set(&database)?;
            let qs = read_set(&queries)?;
            let gt = corpus::load_ground_truth(&ground_truth)?;
            let results = evaluate::score_queries(db.records(), &qs.records(), &gt, mode, &cfg.loop_.params)?;
            let curve = evaluate::curve(&results)?;
            evaluate::write_curve_csv(&curve, &out)?;
            evaluate::write_answers_csv(&results, &out.with_extension("answers.csv"))?;
            println!("AUC {:.6}", curve.auc);
            println!("recall at precision 1: {:.6}", curve.r_at_p1);
            println!("top-1 accuracy: {:.6}", evaluate::top1_accuracy(&results));
        }
        Command::Loop {
            weights,
            out,
            input,
            seed,
            loop_args,
        } => {
            apply_loop_args(&mut cfg, &loop_args);
            cfg.loop_.params.ransac.seed = seed;
            let net = formats::load_weights(&weights).with_context(|| format!("loading {}", weights.display()))?;
            let paths = corpus::collect_images(&input)?;
            let events = sequence::run_paths(&net, &paths, &cfg.loop_)?;
            fs::create_dir_all(&out)?;
            sequence::write_log_csv(&events, &out.join("loop_log.csv"))?;
            sequence::write_associations(&events, &out.join("associations.csv"))?;
            let confirmed = events.iter().filter(|e| e.confirmed.is_some()).count();
            println!("{} frames, {confirmed} confirmed loop frames", events.len());
        }
        Command::Selftest { seeds, fault } => {
            let fault = match fault {
                Some(name) => Some(selftest::fault_op(&name).with_context(|| format!("unknown op {name:?}"))?),
                None => None,
            };
            let results = selftest::run_all(&SelftestOptions { seeds, fault })?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                println!("{failed} suite(s) failed");
                return Ok(ExitCode::FAILURE);
            }
            println!("all suites passed");
        }
        Command::MakeCorpus {
            out,
            seed,
            places,
            views,
            sequence,
            sequence_no_revisit,
        } => {
            if sequence || sequence_no_revisit {
                let mut spec = if sequence {
                    SequenceSpec::with_revisit(seed)
                } else {
                    SequenceSpec::without_revisit(seed)
                };
                spec.height = cfg.net.height;
                spec.width = cfg.net.width;
                spec.classes = cfg.net.classes;
                let frames = corpus::write_sequence(&spec, &out)?;
                println!("{} frames in {}", frames.len(), out.display());
            } else {
                if places == 0 || views == 0 {
                    bail!("--places and --views must be at least 1");
                }
                let spec = CorpusSpec::new(seed, places, views, cfg.net.width, cfg.net.height, cfg.net.classes);
                let m = corpus::make_corpus(&spec, &out)?;
                println!("{} images in {}", m.entries.len(), out.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
