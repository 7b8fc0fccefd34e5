//! Fixtures shared by the criterion benches.

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tslab::harness::{HeadSpec, ModelShape, TsModel};
use tslab::zoo::{pretrain_checkpoint, Checkpoint, PretrainConfig, VariantKind, VariantSpec};

pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// AR(1) residuals with coefficient `phi`.
pub fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x = phi * x + rng.random_range(-1.0..1.0);
            x
        })
        .collect()
}

/// A briefly pretrained width-32, depth-2 checkpoint under the temp dir.
pub fn checkpoint() -> PathBuf {
    let dir = std::env::temp_dir().join("tslab-bench-ckpt");
    if Checkpoint::load(&dir).is_err() {
        let cfg = PretrainConfig {
            positions: 32,
            seq_len: 16,
            steps: 20,
            ..Default::default()
        };
        pretrain_checkpoint(&cfg, &dir).expect("pretraining");
    }
    dir
}

/// Forecasting model with lookback 96, patch 16/8, horizon 24, width 32.
pub fn forecaster(kind: VariantKind, n_vars: usize) -> TsModel {
    let shape = ModelShape {
        lookback: 96,
        patch_len: 16,
        stride: 8,
        width: 32,
        n_vars,
        head: HeadSpec::Flatten { out: 24 },
    };
    let mut spec = VariantSpec::new(kind);
    if !matches!(kind, VariantKind::Linear | VariantKind::Nollm) {
        spec = spec.with_depth(2).with_heads(4);
    }
    if kind == VariantKind::Llm {
        spec = spec.with_checkpoint(checkpoint());
    }
    TsModel::build(shape, &spec, 0).expect("valid shape")
}
