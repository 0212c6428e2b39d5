use std::fs;
use std::path::{Path, PathBuf};

use densecorr_core::datagen::build_synthetic_set;
use densecorr_core::datagen::io::{pair_dir, save_pair, write_manifest};
use densecorr_core::evalkit::benchmark::{item_dir, save_item, synthetic_item, write_index};
use rayon::prelude::*;

use super::{create_dir, read_backgrounds, read_model};
use crate::config::{snapshot_in_dir, RunConfig};
use crate::error::{io_at, CliError, Result};

pub struct GendataArgs {
    pub model: PathBuf,
    pub out: PathBuf,
}

fn complete(dir: &Path, files: &[&str]) -> bool {
    files.iter().all(|f| dir.join(f).is_file())
}

/// Generates `data.scene.count` pairs (or benchmark items) into `out`. Indices
/// whose files already exist are skipped, so an interrupted run can be resumed
/// with the same configuration. Returns `(written, skipped)`.
pub fn gendata(cfg: &RunConfig, args: &GendataArgs) -> Result<(usize, usize)> {
    let model = read_model(&args.model)?;
    let backgrounds = read_backgrounds(cfg)?;
    create_dir(&args.out)?;
    let snapshot = snapshot_in_dir(&args.out);
    if snapshot.exists() {
        let previous = io_at(&snapshot, fs::read_to_string(&snapshot))?;
        if previous != cfg.to_toml() {
            return Err(CliError::Config(format!(
                "{} was generated with different settings (see {}); use a fresh directory",
                args.out.display(),
                snapshot.display()
            )));
        }
    } else {
        cfg.write_snapshot(&snapshot)?;
    }
    let set = build_synthetic_set(&model, &cfg.data.scene, cfg.data.stage, &backgrounds)?;
    let n = cfg.data.scene.count;
    let todo: Vec<usize> = if cfg.data.benchmark {
        (0..n)
            .filter(|&i| !complete(&item_dir(&args.out, i), &["image.png", "landmarks.json", "gt.dcfl"]))
            .collect()
    } else {
        (0..n)
            .filter(|&i| !complete(&pair_dir(&args.out, i), &["source.png", "target.png", "gt.dcfl", "meta.json"]))
            .collect()
    };
    let benchmark = cfg.data.benchmark;
    todo.par_iter().try_for_each(|&i| -> Result<()> {
        if benchmark {
            let (item, _) = synthetic_item(&set, &model, i as u64)?;
            save_item(&args.out, i, &item)?;
        } else {
            save_pair(&args.out, i, &set.pair(i as u64)?)?;
        }
        Ok(())
    })?;
    if benchmark {
        write_index(&args.out, &(0..n).collect::<Vec<_>>())?;
    } else {
        let entries: Vec<(usize, &str)> = (0..n).map(|i| (i, "synthetic")).collect();
        write_manifest(&args.out, &entries)?;
    }
    Ok((todo.len(), n - todo.len()))
}
