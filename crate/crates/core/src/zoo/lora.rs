use ndarray::Array2;
use rand::Rng;

use super::backbone::{normal_matrix, uniform_matrix};
use crate::error::{config, Error, Result};

/// Linear operator `y = W·x + (alpha/r)·B·A·x` over column vectors, with
/// `W` frozen and the factors trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear {
    /// `d_out×d_in`.
    pub weight: Array2<f64>,
    /// `r×d_in`, seeded.
    pub a: Array2<f64>,
    /// `d_out×r`, zero at construction.
    pub b: Array2<f64>,
    pub alpha: f64,
}

pub fn lora_wrap(weight: Array2<f64>, r: usize, alpha: f64, rng: &mut impl Rng) -> Result<LoraLinear> {
    let (d_out, d_in) = weight.dim();
    if r == 0 || r > d_out.min(d_in) {
        return config(format!("LoRA rank {r} outside 1..={}", d_out.min(d_in)));
    }
    Ok(LoraLinear {
        a: uniform_matrix(r, d_in, 1.0 / (d_in as f64).sqrt(), rng),
        b: Array2::zeros((d_out, r)),
        weight,
        alpha,
    })
}

impl LoraLinear {
    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn delta(&self) -> Array2<f64> {
        self.b.dot(&self.a) * self.scale()
    }

    pub fn effective_weight(&self) -> Array2<f64> {
        &self.weight + &self.delta()
    }

    /// Applies the operator to the rows of `x` (`n×d_in` → `n×d_out`).
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weight.ncols() {
            return Err(Error::Shape(format!("input width {} != d_in {}", x.ncols(), self.weight.ncols())));
        }
        let base = x.dot(&self.weight.t());
        let low = x.dot(&self.a.t()).dot(&self.b.t()) * self.scale();
        Ok(base + low)
    }

    /// Plain gradient step on the factors for the loss `½‖forward(x) − y‖²/n`.
    pub fn sgd_step(&mut self, x: &Array2<f64>, y: &Array2<f64>, lr: f64) -> Result<f64> {
        let out = self.forward(x)?;
        let n = x.nrows() as f64;
        let err = (&out - y) / n;
        let s = self.scale();
        let xa = x.dot(&self.a.t());
        let gb = err.t().dot(&xa) * s;
        let ga = self.b.t().dot(&err.t()).dot(x) * s;
        self.b.scaled_add(-lr, &gb);
        self.a.scaled_add(-lr, &ga);
        Ok(0.5 * (&out - y).mapv(|v| v * v).sum() / n)
    }
}

/// Random dense `d_out×d_in` matrix with N(0, 0.02²) entries.
pub fn random_weight(d_out: usize, d_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    normal_matrix(d_out, d_in, 0.02, rng)
}
