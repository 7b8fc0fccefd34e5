use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::normal_matrix;
use super::checkpoint::Checkpoint;
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankSource {
    Random { seed: u64 },
    Checkpoint { path: String },
}

/// `M×D` text-token embeddings that series tokens are matched against.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub vectors: Array2<f64>,
    pub source: BankSource,
}

impl PrototypeBank {
    pub fn new(vectors: Array2<f64>, source: BankSource) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.iter().any(|v| !v.is_finite()) {
            return config("prototype bank must be non-empty and finite");
        }
        Ok(Self { vectors, source })
    }

    /// Gaussian rows rescaled to unit norm.
    pub fn random(m: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = normal_matrix(m, width, 1.0, &mut rng);
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        Self::new(v, BankSource::Random { seed })
    }

    /// Vocabulary table `wte` of a checkpoint.
    pub fn from_checkpoint(dir: &Path, width: usize) -> Result<Self> {
        let ckpt = Checkpoint::load(dir)?;
        let wte = ckpt.tensors.get("wte").ok_or_else(|| Error::Checkpoint {
            message: "no vocabulary table".into(),
            tensors: vec!["wte".into()],
        })?;
        if wte.ncols() != width {
            return Err(Error::Checkpoint {
                message: format!("vocabulary width {} != token width {width}", wte.ncols()),
                tensors: vec!["wte".into()],
            });
        }
        Self::new(wte.clone(), BankSource::Checkpoint { path: dir.display().to_string() })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.vectors.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub prototypes: Array2<f64>,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Bank rows with the highest mean scaled dot product `⟨x, p⟩/√D` over the
/// series tokens, best first; equal scores go to the lower index.
pub fn select_prototypes(ts_tokens: &Array2<f64>, bank: &PrototypeBank, k: usize) -> Result<Selection> {
    let d = ts_tokens.ncols();
    if bank.width() != d {
        return Err(Error::Shape(format!("bank width {} != token width {d}", bank.width())));
    }
    if k == 0 || k > bank.len() {
        return config(format!("cannot select {k} of {} prototypes", bank.len()));
    }
    if ts_tokens.nrows() == 0 {
        return Err(Error::Shape("no series tokens".into()));
    }
    let sums = ts_tokens.sum_axis(Axis(0));
    let all = bank.vectors.dot(&sums) / (ts_tokens.nrows() as f64 * (d as f64).sqrt());
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&i, &j| all[j].total_cmp(&all[i]).then(i.cmp(&j)));
    order.truncate(k);
    Ok(Selection {
        prototypes: bank.vectors.select(Axis(0), &order),
        scores: order.iter().map(|&i| all[i]).collect(),
        indices: order,
    })
}
