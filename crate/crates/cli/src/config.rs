//! Run configuration: a TOML file with one section per pipeline stage, dotted
//! `section.key=value` overrides from the command line, and the resolved
//! snapshot written next to every output.
//!
//! All randomness derives from the top-level `seed`: a ChaCha generator seeded
//! with it draws the per-stage seeds in a fixed order, overwriting any
//! section-level `seed` keys.

use std::fs;
use std::path::{Path, PathBuf};

use densecorr_core::datagen::Stage;
use densecorr_core::evalkit::LandmarkSubset;
use densecorr_core::facemodel::procedural::ProceduralConfig;
use densecorr_core::fit::FlowFitConfig;
use densecorr_core::raster::DataGenConfig;
use densecorr_flownet::{NetworkSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub stage: Stage,
    /// Write a landmark benchmark (images + annotations + exact flow) instead of training pairs.
    pub benchmark: bool,
    pub scene: DataGenConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            stage: Stage::Pretrain,
            benchmark: false,
            scene: DataGenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Seed of the weight initialization (derived).
    pub init_seed: u64,
    /// Add the wall-clock column to the training log. Off by default so logs
    /// are reproducible byte for byte.
    pub log_wall_time: bool,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            init_seed: 0,
            log_wall_time: false,
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
        }
    }
}

impl TrainSection {
    pub fn stage(&self, stage: Stage) -> &TrainConfig {
        match stage {
            Stage::Pretrain => &self.pretrain,
            Stage::Finetune => &self.finetune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub subset: LandmarkSubset,
    /// Fit to the stored ground-truth flow instead of the network's prediction.
    pub perfect: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            subset: LandmarkSubset::VisibleInner,
            perfect: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ProceduralConfig,
    pub data: DataSection,
    pub network: NetworkSpec,
    pub train: TrainSection,
    pub fit: FlowFitConfig,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            model: ProceduralConfig::default(),
            data: DataSection::default(),
            network: NetworkSpec::default(),
            train: TrainSection::default(),
            fit: FlowFitConfig::default(),
            bench: BenchSection::default(),
        }
    }
}

/// Sets `path` (dotted) in `table` to `value`, parsed as a TOML value and
/// falling back to a plain string.
fn set_dotted(table: &mut toml::Table, path: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::Config(format!("empty override key in '{path}'")))?;
    let mut cur = table;
    for k in keys {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{path}': '{k}' is not a section")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text plus `key=value` overrides, then derives the seeds.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not of the form section.key=value")))?;
            set_dotted(&mut table, k.trim(), v.trim())?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or the defaults when `None`) with overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => io_at(p, fs::read_to_string(p))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides).map_err(|e| match (e, path) {
            (CliError::Config(msg), Some(p)) => CliError::Config(format!("{}: {msg}", p.display())),
            (e, _) => e,
        })
    }

    fn derive_seeds(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // 63 bits so the snapshot stays within TOML's signed integers
        let mut next = || rng.gen::<u64>() >> 1;
        self.model.seed = next();
        self.data.scene.seed = next();
        self.train.init_seed = next();
        self.train.pretrain.seed = next();
        self.train.finetune.seed = next();
    }

    pub fn validate(&self) -> Result<()> {
        self.data.scene.validate()?;
        self.network.validate()?;
        self.train.pretrain.validate()?;
        self.train.finetune.validate()?;
        if self.fit.init_yaws.is_empty() || self.fit.stride == 0 {
            return Err(CliError::Config("fit needs at least one starting yaw and a stride of at least 1".into()));
        }
        let reference = self.fit.prior_reference_size;
        if self.fit.scale_priors && !(reference.is_finite() && reference > 0.0) {
            return Err(CliError::Config(format!("fit.prior_reference_size must be positive, got {reference}")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serializes to TOML")
    }

    /// Writes the resolved configuration to `path`.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            io_at(dir, fs::create_dir_all(dir))?;
        }
        io_at(path, fs::write(path, self.to_toml()))
    }
}

/// Snapshot location for a single-file output: `<file>.config.toml`.
pub fn snapshot_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.toml");
    out.with_file_name(name)
}

/// Snapshot location inside an output directory.
pub fn snapshot_in_dir(dir: &Path) -> PathBuf {
    dir.join("resolved_config.toml")
}
