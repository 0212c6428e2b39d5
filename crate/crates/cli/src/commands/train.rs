use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use densecorr_core::datagen::io::load_pair_set;
use densecorr_core::datagen::Stage;
use densecorr_flownet::{train_stage, write_log_csv, LogRow, Sample, Weights};

use super::create_dir;
use crate::config::{snapshot_for_file, RunConfig};
use crate::error::{io_at, CliError, Result};

pub struct TrainArgs {
    pub data: PathBuf,
    pub stage: Stage,
    /// Checkpoint to start from; required for fine-tuning.
    pub init: Option<PathBuf>,
    pub out: PathBuf,
    /// Log path; defaults to `<out>.log.csv`.
    pub log: Option<PathBuf>,
}

/// Trains one stage and writes the weights, the per-step log and the config
/// snapshot. Divergence writes the last finite weights and reports a numerical fault.
pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<Vec<LogRow>> {
    let manifest = args.data.join("manifest.txt");
    if !manifest.is_file() {
        return Err(CliError::Data(format!("training data manifest {} not found", manifest.display())));
    }
    let weights = match (&args.init, args.stage) {
        (Some(p), _) => {
            if !p.is_file() {
                return Err(CliError::Data(format!("checkpoint {} not found", p.display())));
            }
            Weights::<f32>::load(p)?
        }
        (None, Stage::Pretrain) => Weights::init(&cfg.network, cfg.train.init_seed)?,
        (None, Stage::Finetune) => {
            return Err(CliError::Config("fine-tuning starts from a pre-trained checkpoint; pass --init".into()));
        }
    };
    if weights.spec.input_size != cfg.network.input_size || weights.spec.base_channels != cfg.network.base_channels {
        return Err(CliError::Config(format!(
            "checkpoint network ({:?}, c={}) differs from the configured one ({:?}, c={})",
            weights.spec.input_size, weights.spec.base_channels, cfg.network.input_size, cfg.network.base_channels
        )));
    }
    let pairs = load_pair_set(&args.data)?;
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{} lists no pairs", manifest.display())));
    }
    let (w, h) = cfg.network.input_size;
    if let Some(p) = pairs.iter().find(|p| p.size() != (w as u32, h as u32)) {
        return Err(CliError::Config(format!("pairs are {:?} but the network expects {w}x{h}", p.size())));
    }
    if args.stage == Stage::Finetune && pairs.iter().any(|p| p.target != pairs[0].target) {
        return Err(CliError::Config("fine-tuning needs a fixed-target dataset (generate it with data.stage = \"finetune\")".into()));
    }
    let samples: Vec<Sample<f32>> = pairs.iter().map(Sample::from_pair).collect();
    drop(pairs);
    let outcome = train_stage(weights, &samples, args.stage, cfg.train.stage(args.stage))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    outcome.weights.save(&args.out)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".log.csv");
        args.out.with_file_name(name)
    });
    let file = io_at(&log_path, File::create(&log_path))?;
    write_log_csv(&outcome.log, BufWriter::new(file), cfg.train.log_wall_time)?;
    cfg.write_snapshot(&snapshot_for_file(&args.out))?;
    if let Some(step) = outcome.diverged_at {
        return Err(CliError::Numerical(format!(
            "training diverged at step {step}; last finite weights written to {}",
            args.out.display()
        )));
    }
    Ok(outcome.log)
}
