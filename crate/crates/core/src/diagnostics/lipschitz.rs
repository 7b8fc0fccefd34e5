use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::wasserstein::{optimal_matching, sliced_wasserstein, unit_directions, DEFAULT_PROJECTIONS};
use crate::autograd::gelu_scalar;
use crate::error::{Error, Result};

/// Upper bound on `sup |d/dx GELU(x)|` for the tanh form (the true maximum
/// is about 1.1290).
pub const GELU_LIPSCHITZ: f64 = 1.13;

/// One layer of a probe function applied to row vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeLayer {
    /// `x ↦ x·W + b`, `W` is `d_in×d_out`.
    Linear { weight: Array2<f64>, bias: Option<Array1<f64>> },
    Relu,
    Tanh,
    Gelu,
    LayerNorm,
    Attention,
}

impl ProbeLayer {
    pub fn kind(&self) -> &'static str {
        match self {
            ProbeLayer::Linear { .. } => "linear",
            ProbeLayer::Relu => "relu",
            ProbeLayer::Tanh => "tanh",
            ProbeLayer::Gelu => "gelu",
            ProbeLayer::LayerNorm => "layer_norm",
            ProbeLayer::Attention => "attention",
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            ProbeLayer::Linear { weight, bias } => {
                let mut y = x.dot(weight);
                if let Some(b) = bias {
                    y += b;
                }
                y
            }
            ProbeLayer::Relu => x.mapv(|v| v.max(0.0)),
            ProbeLayer::Tanh => x.mapv(f64::tanh),
            ProbeLayer::Gelu => x.mapv(gelu_scalar),
            ProbeLayer::LayerNorm | ProbeLayer::Attention => unreachable!("rejected by lipschitz_upper"),
        }
    }
}

/// Largest singular value by power iteration on `AᵀA`: at most 100
/// iterations, stopping once the estimate changes by less than 1e-8
/// relatively.
pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 0.01 * i as f64);
    v /= v.dot(&v).sqrt();
    let mut sigma = 0.0;
    for _ in 0..100 {
        let w = a.t().dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let av = a.dot(&v);
        let next = av.dot(&av).sqrt();
        let done = (next - sigma).abs() <= 1e-8 * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

/// Product of per-layer Lipschitz constants.
pub fn lipschitz_upper(layers: &[ProbeLayer]) -> Result<f64> {
    let mut k = 1.0;
    for (i, l) in layers.iter().enumerate() {
        k *= match l {
            ProbeLayer::Linear { weight, .. } => spectral_norm(weight),
            ProbeLayer::Relu | ProbeLayer::Tanh => 1.0,
            ProbeLayer::Gelu => GELU_LIPSCHITZ,
            ProbeLayer::LayerNorm | ProbeLayer::Attention => {
                return Err(Error::NotAnalyzable(format!("layer {i} ({})", l.kind())));
            }
        };
    }
    Ok(k)
}

/// Applies the layers to every row of `x`.
pub fn probe_apply(layers: &[ProbeLayer], x: &Array2<f64>) -> Result<Array2<f64>> {
    lipschitz_upper(layers)?;
    let mut h = x.clone();
    for l in layers {
        h = l.apply(&h);
    }
    Ok(h)
}

/// A seeded unit-norm linear functional on `dim` inputs.
pub fn scalar_probe(dim: usize, seed: u64) -> ProbeLayer {
    let u = unit_directions(1, dim, seed);
    ProbeLayer::Linear {
        weight: u.t().to_owned(),
        bias: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub lipschitz_k: f64,
    /// Exact empirical Wasserstein-1 between the two clouds.
    pub w1: f64,
    pub w1_sliced: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Whether `lhs ≤ K·sliced` also holds; the sliced estimate is a lower
    /// bound on `w1`, so this can fail while `holds` is true.
    pub holds_sliced: bool,
}

/// Compares `|mean f(S) − mean f(T)|` with `K·W₁(S, T)`. Vector-valued `f`
/// is reduced to a scalar by a seeded unit functional.
pub fn check_reprogram_bound(layers: &[ProbeLayer], s: &Array2<f64>, t: &Array2<f64>, seed: u64) -> Result<BoundCheck> {
    let mut f = layers.to_vec();
    let out_dim = layers
        .iter()
        .rev()
        .find_map(|l| match l {
            ProbeLayer::Linear { weight, .. } => Some(weight.ncols()),
            _ => None,
        })
        .unwrap_or(s.ncols());
    if out_dim != 1 {
        f.push(scalar_probe(out_dim, seed));
    }
    let k = lipschitz_upper(&f)?;
    let fs = probe_apply(&f, s)?;
    let ft = probe_apply(&f, t)?;
    // summing matched differences keeps lhs ≤ w1 exact in floating point
    // when f is the identity
    let (pairs, w1) = optimal_matching(s, t)?;
    let gap: f64 = pairs.iter().map(|&(i, j)| fs[[i, 0]] - ft[[j, 0]]).sum();
    let lhs = gap.abs() / s.nrows() as f64;
    let w1_sliced = if s.ncols() == 1 { w1 } else { sliced_wasserstein(s, t, DEFAULT_PROJECTIONS, seed)? };
    let rhs = k * w1;
    Ok(BoundCheck {
        lhs,
        lipschitz_k: k,
        w1,
        w1_sliced,
        rhs,
        holds: lhs <= rhs + 1e-9,
        holds_sliced: lhs <= k * w1_sliced + 1e-9,
    })
}
