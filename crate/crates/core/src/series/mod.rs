//! Series ingestion and the preprocessing shared by every task: windowing,
//! patching, instance normalization, additive decomposition and imputation
//! masks.

mod decompose;
mod io;
mod mask;
mod patch;
mod window;

pub use decompose::{decompose_additive, DecompositionTriple};
pub use io::{load_anomaly, load_classification, load_csv, load_dataset, Dataset, DatasetSchema};
pub use mask::{make_imputation_mask, ImputationMask};
pub use patch::{
    denormalize, extract_patches, instance_normalize, patch_count, patchify, NormStats, PatchEmbedding,
    PatchTokens, STD_GUARD,
};
pub use window::{make_windows, split_ranges, SplitRanges, SplitSpec, SplitWindows, Standardizer, TargetKind, WindowSet};

use chrono::NaiveDateTime;
use ndarray::Array2;

use crate::error::{config, Result};

/// A length-`L`, `V`-variate series. Rows are time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTensor {
    pub values: Array2<f64>,
    pub columns: Vec<String>,
    pub timestamps: Option<Vec<NaiveDateTime>>,
    /// Per-step anomaly ground truth.
    pub point_labels: Option<Vec<u8>>,
    pub class_label: Option<usize>,
}

impl SeriesTensor {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let columns = (0..values.ncols()).map(|i| format!("v{i}")).collect();
        let s = Self {
            values,
            columns,
            timestamps: None,
            point_labels: None,
            class_label: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (l, v) = self.values.dim();
        if l == 0 || v == 0 {
            return config(format!("series must be non-empty, got {l}x{v}"));
        }
        if self.values.iter().any(|x| !x.is_finite()) {
            return config("series contains non-finite values");
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != l {
                return config("timestamp count differs from series length");
            }
            if let Some(i) = ts.windows(2).position(|w| w[1] <= w[0]) {
                return config(format!("timestamps not strictly increasing at row {}", i + 2));
            }
        }
        if let Some(lbl) = &self.point_labels {
            if lbl.len() != l {
                return config("point label count differs from series length");
            }
            if lbl.iter().any(|&x| x > 1) {
                return config("point labels must be 0/1");
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }
}
