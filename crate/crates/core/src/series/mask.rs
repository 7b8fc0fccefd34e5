use ndarray::Array2;
use rand::Rng;

use crate::error::{config, Result};

/// `1` marks an observed cell, `0` a missing one.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationMask {
    pub mask: Array2<u8>,
    pub ratio: f64,
}

impl ImputationMask {
    /// An all-observed mask.
    pub fn observed(rows: usize, cols: usize) -> Self {
        Self {
            mask: Array2::ones((rows, cols)),
            ratio: 0.0,
        }
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 0).count()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.mask.mapv(f64::from)
    }
}

/// Marks `round(ratio · rows · cols)` uniformly chosen cells missing.
pub fn make_imputation_mask(rows: usize, cols: usize, ratio: f64, rng: &mut impl Rng) -> Result<ImputationMask> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return config(format!("mask ratio {ratio} must lie in (0, 1)"));
    }
    let n = rows * cols;
    let k = (ratio * n as f64).round() as usize;
    let mut mask = Array2::ones((rows, cols));
    for idx in rand::seq::index::sample(rng, n, k) {
        mask[[idx / cols, idx % cols]] = 0;
    }
    Ok(ImputationMask { mask, ratio })
}
