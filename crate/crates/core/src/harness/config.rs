use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::series::{DatasetSchema, SplitSpec};
use crate::zoo::VariantSpec;

pub const SEED_ENV: &str = "TSLAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_schema")]
    pub schema: DatasetSchema,
}

fn default_schema() -> DatasetSchema {
    DatasetSchema::Series
}

/// The task to train, with every horizon or ratio to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskSpec {
    Forecast {
        horizons: Vec<usize>,
    },
    Impute {
        mask_ratios: Vec<f64>,
    },
    Anomaly {
        anomaly_ratio: f64,
        #[serde(default = "yes")]
        point_adjust: bool,
    },
    Classify {
        classes: usize,
    },
}

fn yes() -> bool {
    true
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Forecast { .. } => "forecast",
            TaskSpec::Impute { .. } => "impute",
            TaskSpec::Anomaly { .. } => "anomaly",
            TaskSpec::Classify { .. } => "classify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "default_grid")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Caps the optimizer steps taken per epoch.
    #[serde(default)]
    pub max_steps_per_epoch: Option<usize>,
}

fn default_grid() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}
fn default_epochs() -> usize {
    10
}
fn default_patience() -> usize {
    3
}
fn default_batch() -> usize {
    32
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rates: default_grid(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            batch_size: default_batch(),
            max_steps_per_epoch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_lag")]
    pub max_lag: usize,
    /// Compute the token alignment report on the first test window.
    #[serde(default = "yes")]
    pub alignment: bool,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_lag() -> usize {
    crate::diagnostics::DEFAULT_MAX_LAG
}
fn default_k() -> usize {
    crate::diagnostics::DEFAULT_K
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            max_lag: default_lag(),
            alignment: true,
            k: default_k(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetConfig,
    pub task: TaskSpec,
    pub variant: VariantSpec,
    pub lookback: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file; relative dataset and checkpoint paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset.path);
        if let DatasetSchema::Anomaly { labels } = &mut cfg.dataset.schema {
            fix(labels);
        }
        if let Some(c) = &mut cfg.variant.checkpoint {
            fix(c);
        }
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    /// Replaces the seed with `TSLAB_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.variant.width.unwrap_or(self.d_model)
    }

    /// Checks everything that can be checked without reading the data.
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.patch_len == 0 || self.stride == 0 || self.d_model == 0 {
            return config("lookback, patch_len, stride and d_model must be positive");
        }
        crate::series::patch_count(self.lookback, self.patch_len, self.stride)?;
        self.variant.validate(self.width())?;
        match &self.task {
            TaskSpec::Forecast { horizons } => {
                if horizons.is_empty() || horizons.contains(&0) {
                    return config("forecast needs at least one positive horizon");
                }
            }
            TaskSpec::Impute { mask_ratios } => {
                if mask_ratios.is_empty() || mask_ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
                    return config("mask ratios must be non-empty and lie in (0, 1)");
                }
            }
            TaskSpec::Anomaly { anomaly_ratio, .. } => {
                if !(*anomaly_ratio > 0.0 && *anomaly_ratio < 100.0) {
                    return config(format!("anomaly ratio {anomaly_ratio} must lie in (0, 100)"));
                }
            }
            TaskSpec::Classify { classes } => {
                if *classes < 2 {
                    return config("classification needs at least 2 classes");
                }
            }
        }
        let o = &self.optimizer;
        if o.learning_rates.is_empty() || o.learning_rates.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return config("learning-rate grid must be non-empty and positive");
        }
        if o.max_epochs == 0 || o.batch_size == 0 {
            return config("max_epochs and batch_size must be positive");
        }
        let mut paths = vec![&self.dataset.path];
        if let DatasetSchema::Anomaly { labels } = &self.dataset.schema {
            paths.push(labels);
        }
        if let Some(c) = &self.variant.checkpoint {
            paths.push(c);
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "path does not exist")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
