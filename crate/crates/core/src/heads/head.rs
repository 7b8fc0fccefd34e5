use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{config, Error, Result};
use crate::series::NormStats;
use crate::zoo::Dense;

/// Task-specific settings; exactly the fields of the selected task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskConfig {
    Forecast { horizon: usize },
    Impute { mask_ratio: f64 },
    Anomaly { anomaly_ratio: f64, point_adjust: bool },
    Classify { classes: usize },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Forecast { .. } => "forecast",
            TaskConfig::Impute { .. } => "impute",
            TaskConfig::Anomaly { .. } => "anomaly",
            TaskConfig::Classify { .. } => "classify",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskConfig::Forecast { horizon } if horizon == 0 => config("horizon must be at least 1"),
            TaskConfig::Impute { mask_ratio } if !(mask_ratio > 0.0 && mask_ratio < 1.0) => {
                config(format!("mask ratio {mask_ratio} must lie in (0, 1)"))
            }
            TaskConfig::Anomaly { anomaly_ratio, .. } if !(anomaly_ratio > 0.0 && anomaly_ratio < 100.0) => {
                config(format!("anomaly ratio {anomaly_ratio} must lie in (0, 100)"))
            }
            TaskConfig::Classify { classes } if classes < 2 => config("classification needs at least 2 classes"),
            _ => Ok(()),
        }
    }
}

/// Flatten each channel's `S×D` tokens and map them to `out` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenHead {
    pub dense: Dense,
    pub tokens: usize,
    pub width: usize,
    pub out: usize,
}

impl FlattenHead {
    pub fn build(store: &mut ParamStore, name: &str, tokens: usize, width: usize, out: usize, rng: &mut impl Rng) -> Self {
        let fan_in = tokens * width;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, out), |_| rng.random_range(-bound..=bound));
        Self {
            dense: Dense {
                w: store.add(format!("{name}.weight"), w, ParamGroup::Head),
                b: store.add(format!("{name}.bias"), Array2::zeros((1, out)), ParamGroup::Head),
                lora: None,
            },
            tokens,
            width,
            out,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.dense.w, self.dense.b]
    }

    /// `(R·S)×D` token blocks → `R×out` normalized outputs, one row per
    /// (sample, channel).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: Var) -> Var {
        let rows = tape.value(tokens).nrows() / self.tokens;
        let flat = tape.reshape(tokens, rows, self.tokens * self.width);
        self.dense.forward(tape, store, flat)
    }

    /// Applies the head to per-channel `S×D` embeddings and denormalizes
    /// with each channel's statistics; returns `out×V`.
    pub fn predict(&self, store: &ParamStore, channels: &[Array2<f64>], stats: &[NormStats]) -> Result<Array2<f64>> {
        if stats.len() != channels.len() {
            return Err(Error::Shape(format!(
                "{} channels but {} denormalization stats",
                channels.len(),
                stats.len()
            )));
        }
        let mut out = Array2::zeros((self.out, channels.len()));
        for (c, (e, st)) in channels.iter().zip(stats).enumerate() {
            if e.dim() != (self.tokens, self.width) {
                return Err(Error::Shape(format!(
                    "channel {c} embeddings {:?}, head expects {:?}",
                    e.dim(),
                    (self.tokens, self.width)
                )));
            }
            let mut tape = Tape::new();
            let x = tape.constant(e.clone());
            let y = self.forward(&mut tape, store, x);
            for (t, v) in tape.value(y).row(0).iter().enumerate() {
                out[[t, c]] = v * st.std + st.mean;
            }
        }
        Ok(out)
    }
}

/// Mean-pool tokens, concatenate channels, map to `C` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyHead {
    pub dense: Dense,
    pub tokens: usize,
    pub channels: usize,
    pub width: usize,
    pub classes: usize,
}

impl ClassifyHead {
    pub fn build(
        store: &mut ParamStore,
        tokens: usize,
        channels: usize,
        width: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return config("classification needs at least 2 classes");
        }
        let fan_in = channels * width;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, classes), |_| rng.random_range(-bound..=bound));
        Ok(Self {
            dense: Dense {
                w: store.add("classify.weight", w, ParamGroup::Head),
                b: store.add("classify.bias", Array2::zeros((1, classes)), ParamGroup::Head),
                lora: None,
            },
            tokens,
            channels,
            width,
            classes,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.dense.w, self.dense.b]
    }

    /// `(B·V·S)×D` → `B×C` scores.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: Var) -> Var {
        let pooled = tape.block_mean(tokens, self.tokens);
        let b = tape.value(pooled).nrows() / self.channels;
        let flat = tape.reshape(pooled, b, self.channels * self.width);
        self.dense.forward(tape, store, flat)
    }
}

/// Mean squared error over the cells where `weight` is 1; zero when no cell
/// is selected.
pub fn masked_mse(tape: &mut Tape, pred: Var, target: Array2<f64>, weight: Array2<f64>) -> Var {
    let n = weight.sum();
    let t = tape.constant(target);
    let w = tape.constant(weight);
    let d = tape.sub(pred, t);
    let dw = tape.mul(d, w);
    let sq = tape.square(dw);
    let s = tape.sum_all(sq);
    tape.scale(s, if n > 0.0 { 1.0 / n } else { 0.0 })
}
