use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTriple {
    pub trend: Array2<f64>,
    pub seasonal: Array2<f64>,
    pub residual: Array2<f64>,
}

impl DecompositionTriple {
    pub fn reconstruct(&self) -> Array2<f64> {
        &self.trend + &self.seasonal + &self.residual
    }
}

/// Centered moving average with replicated edges; output length equals input.
fn moving_average(col: &[f64], kernel: usize) -> Vec<f64> {
    let half = kernel / 2;
    let n = col.len() as isize;
    let at = |i: isize| col[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|t| (t - half as isize..=t + half as isize).map(at).sum::<f64>() / kernel as f64)
        .collect()
}

/// Additive trend + seasonal + residual split of each variate. The residual
/// is defined as the remainder so the three parts sum back to the input.
pub fn decompose_additive(window: ArrayView2<'_, f64>, period: usize, kernel: usize) -> Result<DecompositionTriple> {
    let l = window.nrows();
    if kernel.is_multiple_of(2) || kernel > l {
        return config(format!("moving-average kernel {kernel} must be odd and at most {l}"));
    }
    if period == 0 {
        return config("period must be at least 1");
    }
    let mut trend = Array2::zeros(window.dim());
    let mut seasonal = Array2::zeros(window.dim());
    for (j, col) in window.axis_iter(Axis(1)).enumerate() {
        let x = col.to_vec();
        let tr = moving_average(&x, kernel);
        let mut sums = vec![0.0; period];
        let mut counts = vec![0usize; period];
        for t in 0..l {
            sums[t % period] += x[t] - tr[t];
            counts[t % period] += 1;
        }
        let phase: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let filled = counts.iter().filter(|&&c| c > 0).count() as f64;
        let center = phase.iter().zip(&counts).filter(|(_, &c)| c > 0).map(|(p, _)| p).sum::<f64>() / filled;
        for t in 0..l {
            trend[[t, j]] = tr[t];
            seasonal[[t, j]] = phase[t % period] - center;
        }
    }
    let residual = &window - &trend - &seasonal;
    Ok(DecompositionTriple {
        trend,
        seasonal,
        residual,
    })
}
