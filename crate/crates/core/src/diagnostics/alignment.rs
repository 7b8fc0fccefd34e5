use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::lipschitz::{check_reprogram_bound, ProbeLayer};
use super::residual::ResidualDiagnostics;
use super::wasserstein::{sliced_wasserstein, DEFAULT_PROJECTIONS};
use crate::error::{config, Error, Result};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub ts_pre_std: Vec<f64>,
    pub ts_post_std: Vec<f64>,
    pub text_std: Vec<f64>,
    /// Per-dimension `std(ts)/std(text)`; 0 where the text std is 0.
    pub ratio_pre: Vec<f64>,
    pub ratio_post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub centroid_shift_before: f64,
    pub centroid_shift_after: f64,
    pub variance_profile: VarianceProfile,
    pub knn_jaccard: f64,
    /// Which pair of clouds the Jaccard overlap compares.
    pub knn_pair: String,
    pub w1_sliced: f64,
    #[serde(rename = "lipschitz_K")]
    pub lipschitz_k: f64,
    pub bound_holds: bool,
    /// Rows used for the transport-based figures (`min(n, M)`).
    pub matched_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentOptions<'a> {
    pub k: usize,
    pub seed: u64,
    pub n_proj: usize,
    /// Defaults to a seeded unit functional.
    pub probe: Option<&'a [ProbeLayer]>,
}

impl Default for AlignmentOptions<'_> {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            n_proj: DEFAULT_PROJECTIONS,
            probe: None,
        }
    }
}

fn centroid(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty cloud")
}

fn stds(x: &Array2<f64>) -> Vec<f64> {
    x.std_axis(Axis(0), 0.0).to_vec()
}

fn ratio(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| if *y > 0.0 { x / y } else { 0.0 }).collect()
}

/// Indices of the `k` nearest other rows of each row (Euclidean), closest
/// first, lower index on ties.
pub fn knn_indices(x: &Array2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.nrows();
    if k == 0 || k >= n {
        return config(format!("k = {k} must lie in 1..{n}"));
    }
    Ok((0..n)
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = &x.row(i) - &x.row(j);
                    (diff.dot(&diff), j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect())
}

/// Mean Jaccard overlap of each token's k-NN sets in two embeddings of the
/// same tokens.
pub fn knn_jaccard(a: &Array2<f64>, b: &Array2<f64>, k: usize) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!("{} vs {} tokens", a.nrows(), b.nrows())));
    }
    let na = knn_indices(a, k)?;
    let nb = knn_indices(b, k)?;
    let total: f64 = na
        .iter()
        .zip(&nb)
        .map(|(x, y)| {
            let x: BTreeSet<_> = x.iter().collect();
            let y: BTreeSet<_> = y.iter().collect();
            x.intersection(&y).count() as f64 / x.union(&y).count() as f64
        })
        .sum();
    Ok(total / a.nrows() as f64)
}

/// Centroid distances, spread profiles, neighbourhood overlap and the
/// transport bound between series tokens and text tokens. The Jaccard
/// overlap compares `ts_post` with `alt_post` when given, otherwise
/// `ts_pre` with `ts_post`.
pub fn alignment_report(
    ts_pre: &Array2<f64>,
    ts_post: &Array2<f64>,
    text: &Array2<f64>,
    alt_post: Option<&Array2<f64>>,
    opts: AlignmentOptions<'_>,
) -> Result<AlignmentReport> {
    let d = ts_pre.ncols();
    if ts_post.ncols() != d || text.ncols() != d || alt_post.is_some_and(|a| a.ncols() != d) {
        return Err(Error::Shape("all clouds must share the token width".into()));
    }
    if ts_post.nrows() != ts_pre.nrows() || alt_post.is_some_and(|a| a.nrows() != ts_post.nrows()) {
        return Err(Error::Shape("series clouds must hold the same tokens".into()));
    }
    if text.nrows() == 0 {
        return config("text cloud is empty");
    }
    let n = ts_post.nrows();
    if opts.k >= n {
        return config(format!("k = {} must be below the token count {n}", opts.k));
    }
    let ct = centroid(text);
    let shift = |x: &Array2<f64>| {
        let v = centroid(x) - &ct;
        v.dot(&v).sqrt()
    };
    let text_std = stds(text);
    let (ts_pre_std, ts_post_std) = (stds(ts_pre), stds(ts_post));
    let (knn_jaccard, knn_pair) = match alt_post {
        Some(alt) => (knn_jaccard(ts_post, alt, opts.k)?, "ts_post~alt_post"),
        None => (knn_jaccard(ts_pre, ts_post, opts.k)?, "ts_pre~ts_post"),
    };
    let m = n.min(text.nrows());
    let s_rows = ts_post.slice(s![..m, ..]).to_owned();
    let t_rows = text.slice(s![..m, ..]).to_owned();
    let bound = check_reprogram_bound(opts.probe.unwrap_or(&[]), &s_rows, &t_rows, opts.seed)?;
    Ok(AlignmentReport {
        centroid_shift_before: shift(ts_pre),
        centroid_shift_after: shift(ts_post),
        variance_profile: VarianceProfile {
            ratio_pre: ratio(&ts_pre_std, &text_std),
            ratio_post: ratio(&ts_post_std, &text_std),
            ts_pre_std,
            ts_post_std,
            text_std,
        },
        knn_jaccard,
        knn_pair: knn_pair.into(),
        w1_sliced: sliced_wasserstein(&s_rows, &t_rows, opts.n_proj, opts.seed)?,
        lipschitz_k: bound.lipschitz_k,
        bound_holds: bound.holds,
        matched_rows: m,
    })
}

/// Flat report with the fixed diagnostics keys; absent parts are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub dw: Option<f64>,
    pub acf: Option<Vec<f64>>,
    pub band: Option<f64>,
    pub n: Option<usize>,
    pub centroid_shift_before: Option<f64>,
    pub centroid_shift_after: Option<f64>,
    pub knn_jaccard: Option<f64>,
    pub w1_sliced: Option<f64>,
    #[serde(rename = "lipschitz_K")]
    pub lipschitz_k: Option<f64>,
    pub bound_holds: Option<bool>,
}

impl DiagnosticsSummary {
    pub fn new(residual: Option<&ResidualDiagnostics>, alignment: Option<&AlignmentReport>) -> Self {
        Self {
            dw: residual.map(|r| r.dw),
            acf: residual.map(|r| r.acf.clone()),
            band: residual.map(|r| r.band),
            n: residual.map(|r| r.n),
            centroid_shift_before: alignment.map(|a| a.centroid_shift_before),
            centroid_shift_after: alignment.map(|a| a.centroid_shift_after),
            knn_jaccard: alignment.map(|a| a.knn_jaccard),
            w1_sliced: alignment.map(|a| a.w1_sliced),
            lipschitz_k: alignment.map(|a| a.lipschitz_k),
            bound_holds: alignment.map(|a| a.bound_holds),
        }
    }
}

/// Rotation about the first two axes, for invariance checks.
pub fn plane_rotation(dim: usize, angle: f64) -> Array2<f64> {
    let mut r = Array2::eye(dim);
    if dim >= 2 {
        let (s, c) = angle.sin_cos();
        r[[0, 0]] = c;
        r[[0, 1]] = -s;
        r[[1, 0]] = s;
        r[[1, 1]] = c;
    }
    r
}
