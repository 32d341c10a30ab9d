use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::DatasetSpec;
use crate::compression::{DistanceKind, TrainConfig};
use crate::net::Activation;
use crate::ot::SeedMode;
use crate::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Block widths; an input stem is added when the first width differs
    /// from the data width.
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            widths: vec![16; 6],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressConfig {
    pub delta: f64,
    /// When set, removes every block at or under this distance at once
    /// instead of running the budgeted greedy loop.
    pub epsilon: Option<f64>,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self {
            delta: 0.02,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambda: Option<Vec<f64>>,
    pub n_proj: Option<Vec<usize>>,
    pub batch_size: Option<Vec<usize>>,
    pub distance: Option<Vec<DistanceKind>>,
    pub seed_mode: Option<Vec<SeedMode>>,
    /// Training seeds; table values are medians over them.
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub report: PathBuf,
    pub plot: PathBuf,
    pub checkpoint: PathBuf,
    /// Aggregated sweep table.
    pub table: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            report: "report.json".into(),
            plot: "plot.csv".into(),
            checkpoint: "model.ckpt".into(),
            table: "ablation.csv".into(),
        }
    }
}

impl OutputConfig {
    /// Every path rebased under `dir` when relative.
    pub fn under(&self, dir: &Path) -> Self {
        let rebase = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                dir.join(p)
            }
        };
        Self {
            report: rebase(&self.report),
            plot: rebase(&self.plot),
            checkpoint: rebase(&self.checkpoint),
            table: rebase(&self.table),
        }
    }

    /// Paths with `-{tag}` appended to each file stem.
    pub fn tagged(&self, tag: &str) -> Self {
        let tag_path = |p: &PathBuf| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let name = match p.extension() {
                Some(ext) => format!("{stem}-{tag}.{}", ext.to_string_lossy()),
                None => format!("{stem}-{tag}"),
            };
            p.with_file_name(name)
        };
        Self {
            report: tag_path(&self.report),
            plot: tag_path(&self.plot),
            checkpoint: tag_path(&self.checkpoint),
            table: self.table.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub dataset: DatasetSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub compress: CompressConfig,
    pub sweep: Option<SweepConfig>,
    pub outputs: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            dataset: DatasetSpec::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            compress: CompressConfig::default(),
            sweep: None,
            outputs: OutputConfig::default(),
        }
    }
}

fn nonempty<T>(name: &str, v: &Option<Vec<T>>) -> Result<usize> {
    match v {
        Some(v) if v.is_empty() => Err(Error::Config(format!("sweep.{name} is empty"))),
        Some(_) => Ok(1),
        None => Ok(0),
    }
}

impl SweepConfig {
    /// Swept axes other than `seeds`.
    pub fn axis_count(&self) -> Result<usize> {
        Ok(nonempty("lambda", &self.lambda)?
            + nonempty("n_proj", &self.n_proj)?
            + nonempty("batch_size", &self.batch_size)?
            + nonempty("distance", &self.distance)?
            + nonempty("seed_mode", &self.seed_mode)?)
    }

    pub fn validate(&self, train: &TrainConfig) -> Result<()> {
        nonempty("seeds", &self.seeds)?;
        let axes = self.axis_count()?;
        if !(1..=2).contains(&axes) {
            return Err(Error::Config(format!(
                "sweep needs one or two axes, found {axes}"
            )));
        }
        let distances = self
            .distance
            .clone()
            .unwrap_or_else(|| vec![train.distance]);
        if let Some(k) = distances.iter().find(|k| !k.uses_directions()) {
            for (name, present) in [
                ("n_proj", self.n_proj.is_some()),
                ("seed_mode", self.seed_mode.is_some()),
            ] {
                if present {
                    return Err(Error::Config(format!(
                        "sweep.{name} conflicts with distance '{}', which uses no projections",
                        k.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.dataset.validate()?;
        if self.net.widths.is_empty() || self.net.widths.contains(&0) {
            return Err(Error::Config(
                "net.widths must be nonempty and positive".into(),
            ));
        }
        self.train.validate()?;
        if !(self.compress.delta >= 0.0) {
            return Err(Error::Config("compress.delta must be >= 0".into()));
        }
        if self.compress.epsilon.is_some_and(|e| !(e >= 0.0)) {
            return Err(Error::Config("compress.epsilon must be >= 0".into()));
        }
        if let Some(s) = &self.sweep {
            s.validate(&self.train)?;
        }
        Ok(())
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub n_proj: Option<usize>,
    pub distance: Option<DistanceKind>,
    pub n_samples: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    /// Applies the overrides; `seed` drives both data generation and training.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.dataset.seed = s;
            cfg.train.seed = s;
            if let SeedMode::Seeded(_) = cfg.train.distance_cfg.seed_mode {
                cfg.train.distance_cfg.seed_mode = SeedMode::Seeded(s);
            }
        }
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field.clone() {
                    cfg.$($target)+ = v;
                }
            };
        }
        set!(lambda => train.lambda);
        set!(delta => compress.delta);
        set!(epochs => train.epochs);
        set!(batch_size => train.batch_size);
        set!(learning_rate => train.learning_rate);
        set!(n_proj => train.distance_cfg.n_proj);
        set!(distance => train.distance);
        set!(n_samples => dataset.n_samples);
        if self.epsilon.is_some() {
            cfg.compress.epsilon = self.epsilon;
        }
        if let Some(dir) = &self.out_dir {
            cfg.outputs = cfg.outputs.under(dir);
        }
        cfg.validate()
    }
}
