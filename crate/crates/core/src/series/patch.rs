use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Patches whose population std falls below this are normalized to zeros.
pub const STD_GUARD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub guarded: bool,
}

/// Population-std standardization with the degenerate-patch guard.
pub fn instance_normalize(x: &[f64]) -> (Vec<f64>, NormStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < STD_GUARD {
        return (vec![0.0; x.len()], NormStats { mean, std, guarded: true });
    }
    let out = x.iter().map(|v| (v - mean) / std).collect();
    (out, NormStats { mean, std, guarded: false })
}

pub fn denormalize(z: &[f64], stats: &NormStats) -> Vec<f64> {
    z.iter().map(|v| v * stats.std + stats.mean).collect()
}

pub fn patch_count(lookback: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if stride == 0 || patch_len == 0 {
        return config("patch length and stride must be positive");
    }
    if patch_len > lookback {
        return config(format!("patch length {patch_len} exceeds window length {lookback}"));
    }
    Ok((lookback - patch_len) / stride + 1)
}

/// `S×P` matrix of patches; token `t` covers steps `[t·stride, t·stride + P)`.
/// Trailing steps that do not fill a patch are dropped.
pub fn extract_patches(x: ArrayView1<'_, f64>, patch_len: usize, stride: usize) -> Result<Array2<f64>> {
    let n = patch_count(x.len(), patch_len, stride)?;
    Ok(Array2::from_shape_fn((n, patch_len), |(t, j)| x[t * stride + j]))
}

/// Linear patch embedding `P → D` shared by all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl PatchEmbedding {
    pub fn random(patch_len: usize, width: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (patch_len as f64).sqrt();
        let u = Uniform::new(-bound, bound).expect("valid bound");
        Self {
            weight: Array2::from_shape_fn((patch_len, width), |_| u.sample(rng)),
            bias: Array2::zeros((1, width)),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.weight.nrows()
    }

    pub fn width(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTokens {
    /// `S×D` embedded patches.
    pub tokens: Array2<f64>,
    pub patch_len: usize,
    pub stride: usize,
    pub denorm_stats: Vec<NormStats>,
    pub channel_id: usize,
}

impl PatchTokens {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

/// Channel-independent patching: every variate of the `L_in×V` window is cut
/// into patches, each patch is instance-normalized, then embedded.
pub fn patchify(window: ArrayView2<'_, f64>, stride: usize, embed: &PatchEmbedding) -> Result<Vec<PatchTokens>> {
    let p = embed.patch_len();
    patch_count(window.nrows(), p, stride)?;
    window
        .columns()
        .into_iter()
        .enumerate()
        .map(|(c, col)| {
            let raw = extract_patches(col, p, stride)?;
            let mut normed = Array2::zeros(raw.dim());
            let mut stats = Vec::with_capacity(raw.nrows());
            for (t, row) in raw.rows().into_iter().enumerate() {
                let (z, st) = instance_normalize(&row.to_vec());
                normed.slice_mut(s![t, ..]).assign(&ArrayView1::from(&z));
                stats.push(st);
            }
            let mut tokens = normed.dot(&embed.weight);
            tokens += &embed.bias;
            Ok(PatchTokens {
                tokens,
                patch_len: p,
                stride,
                denorm_stats: stats,
                channel_id: c,
            })
        })
        .collect()
}
