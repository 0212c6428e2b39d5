//! The `densecorr` command line: data generation, training, fitting,
//! benchmarking and debug rendering over one TOML run configuration.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for data errors and
//! 4 for numerical faults.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use densecorr_core::datagen::Stage;

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Pretrain,
    Finetune,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::Finetune => Stage::Finetune,
        }
    }
}

fn stage_name(s: StageArg) -> &'static str {
    match s {
        StageArg::Pretrain => "pretrain",
        StageArg::Finetune => "finetune",
    }
}

#[derive(Debug, Parser)]
#[command(name = "densecorr", version, about = "Dense facial correspondence and morphable-model fitting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set data.scene.image_size=32`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run seed; every random choice derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural morphable model.
    Genmodel {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render synthetic training pairs or a landmark benchmark.
    Gendata {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long)]
        count: Option<usize>,
        /// Write benchmark items (image, landmarks, exact flow) instead of pairs.
        #[arg(long)]
        benchmark: bool,
    },
    /// Train one curriculum stage.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Starting checkpoint (required for finetune).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fit the model to one image.
    Fit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required_unless_present = "no_network")]
        weights: Option<PathBuf>,
        /// Skip the network and fit to the flow given by --flow.
        #[arg(long, requires = "flow")]
        no_network: bool,
        #[arg(long, requires = "no_network")]
        flow: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Landmark NMS over a benchmark set, by yaw bucket.
    Bench {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Fit to the stored ground-truth flow (pipeline ceiling).
        #[arg(long)]
        perfect: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Debug renders of one synthetic pair.
    Render {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Sizes the global worker pool; later calls in the same process are ignored.
pub fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.global.overrides.clone();
    if let Some(seed) = cli.global.seed {
        overrides.push(format!("seed={seed}"));
    }
    match &cli.command {
        Command::Gendata { stage, count, benchmark, .. } => {
            if let Some(s) = stage {
                overrides.push(format!("data.stage=\"{}\"", stage_name(*s)));
            }
            if let Some(n) = count {
                overrides.push(format!("data.scene.count={n}"));
            }
            if *benchmark {
                overrides.push("data.benchmark=true".into());
            }
        }
        Command::Render { stage: Some(s), .. } => overrides.push(format!("data.stage=\"{}\"", stage_name(*s))),
        Command::Bench { perfect: true, .. } => overrides.push("bench.perfect=true".into()),
        _ => {}
    }
    RunConfig::load(cli.global.config.as_deref(), &overrides)
}

/// Runs the parsed command line and returns the text to print on success.
pub fn run(cli: &Cli) -> Result<String> {
    configure_threads(cli.global.threads);
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Genmodel { out } => commands::genmodel(&cfg, out),
        Command::Gendata { model, out, .. } => {
            let (written, skipped) = commands::gendata(&cfg, &commands::GendataArgs { model: model.clone(), out: out.clone() })?;
            Ok(format!("{written} written, {skipped} already present in {}", out.display()))
        }
        Command::Train { data, stage, init, out, log } => {
            let args = commands::TrainArgs {
                data: data.clone(),
                stage: (*stage).into(),
                init: init.clone(),
                out: out.clone(),
                log: log.clone(),
            };
            let rows = commands::train(&cfg, &args)?;
            let (first, last) = (rows.first(), rows.last());
            Ok(match (first, last) {
                (Some(a), Some(b)) => format!(
                    "{} steps, total loss {:.5} -> {:.5}, weights in {}",
                    rows.len(),
                    a.loss.total,
                    b.loss.total,
                    out.display()
                ),
                _ => format!("0 steps, weights in {}", out.display()),
            })
        }
        Command::Fit { image, model, weights, flow, out, .. } => {
            let args = commands::FitArgs {
                image: image.clone(),
                model: model.clone(),
                weights: weights.clone(),
                flow: flow.clone(),
                out: out.clone(),
            };
            let o = commands::fit(&cfg, &args)?;
            let e = o.fit.fit.euler();
            let r = &o.fit.report;
            let mut text = format!(
                "yaw {:.2} pitch {:.2} roll {:.2} deg, focal {:.1} px, rms {:.3} px, {} iterations ({}), {} correspondences, solve {:.1} ms",
                e.yaw.to_degrees(),
                e.pitch.to_degrees(),
                e.roll.to_degrees(),
                o.fit.fit.pose.focal,
                r.reprojection_rms,
                r.iteration_count,
                if r.converged { "converged" } else { "not converged" },
                o.fit.correspondences.len(),
                r.wall_time_ms
            );
            if let Some(ms) = o.prediction_ms {
                text.push_str(&format!(", prediction {ms:.1} ms"));
            }
            Ok(text)
        }
        Command::Bench { bench, model, weights, out, .. } => {
            let args = commands::BenchArgs {
                bench: bench.clone(),
                model: model.clone(),
                weights: weights.clone(),
                out: out.clone(),
            };
            let s = commands::bench(&cfg, &args)?;
            let mut text = s.result.table();
            if s.failed > 0 {
                text.push_str(&format!("unscored images: {}\n", s.failed));
            }
            Ok(text.trim_end().to_string())
        }
        Command::Render { model, index, out, .. } => {
            commands::render(&cfg, &commands::RenderArgs { model: model.clone(), index: *index, out: out.clone() })?;
            Ok(format!("pair {index} rendered to {}", out.display()))
        }
    }
}
