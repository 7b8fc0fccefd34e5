use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Error, Result};
use crate::series::{make_imputation_mask, SeriesTensor, SplitSpec, Standardizer, WindowSet};

/// One split's training examples.
#[derive(Debug, Clone)]
pub enum Examples {
    /// Sliding windows; `masks` (1 = observed) turn them into imputation
    /// examples.
    Windows { set: WindowSet, masks: Option<Vec<Array2<f64>>> },
    Samples { inputs: Vec<Array2<f64>>, labels: Vec<usize> },
}

/// Targets of one batch, laid out to match the model output.
#[derive(Debug, Clone)]
pub enum BatchTarget {
    /// `(B·V)×N`; `weight` selects the scored cells.
    Values { values: Array2<f64>, weight: Option<Array2<f64>> },
    Classes(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Array2<f64>>,
    pub observed: Option<Vec<Array2<f64>>>,
    pub target: BatchTarget,
}

impl Batch {
    pub fn views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.inputs.iter().map(|a| a.view()).collect()
    }
}

/// `N×V` windows → `(B·V)×N` rows, one per (window, variate).
pub fn stack_channels(windows: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    let (n, v) = windows.first().map_or((0, 0), |w| w.dim());
    let mut out = Array2::zeros((windows.len() * v, n));
    for (b, w) in windows.iter().enumerate() {
        out.slice_mut(s![b * v..(b + 1) * v, ..]).assign(&w.t());
    }
    out
}

impl Examples {
    pub fn len(&self) -> usize {
        match self {
            Examples::Windows { set, .. } => set.len(),
            Examples::Samples { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        match self {
            Examples::Windows { set, masks: None } => {
                let targets: Vec<_> = idx.iter().map(|&i| set.target(i)).collect();
                Batch {
                    inputs: idx.iter().map(|&i| set.input(i).to_owned()).collect(),
                    observed: None,
                    target: BatchTarget::Values {
                        values: stack_channels(&targets),
                        weight: None,
                    },
                }
            }
            Examples::Windows { set, masks: Some(masks) } => {
                let obs: Vec<Array2<f64>> = idx.iter().map(|&i| masks[i].clone()).collect();
                let inputs = idx.iter().zip(&obs).map(|(&i, m)| &set.input(i) * m).collect();
                let missing: Vec<Array2<f64>> = obs.iter().map(|m| m.mapv(|x| 1.0 - x)).collect();
                let missing_views: Vec<_> = missing.iter().map(|m| m.view()).collect();
                let targets: Vec<_> = idx.iter().map(|&i| set.target(i)).collect();
                Batch {
                    inputs,
                    observed: Some(obs),
                    target: BatchTarget::Values {
                        values: stack_channels(&targets),
                        weight: Some(stack_channels(&missing_views)),
                    },
                }
            }
            Examples::Samples { inputs, labels } => Batch {
                inputs: idx.iter().map(|&i| inputs[i].clone()).collect(),
                observed: None,
                target: BatchTarget::Classes(idx.iter().map(|&i| labels[i]).collect()),
            },
        }
    }

    /// Consecutive index chunks in fixed order.
    pub fn chunks(&self, size: usize) -> Vec<Vec<usize>> {
        (0..self.len())
            .collect::<Vec<_>>()
            .chunks(size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Seeded per-window imputation masks (1 = observed).
pub fn window_masks(set: &WindowSet, ratio: f64, seed: u64) -> Result<Vec<Array2<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..set.len())
        .map(|_| Ok(make_imputation_mask(set.lookback, set.n_vars(), ratio, &mut rng)?.as_f64()))
        .collect()
}

/// Seeded random split of classification samples, standardized by the
/// training samples' statistics and truncated to `lookback` steps.
pub fn split_samples(
    samples: &[SeriesTensor],
    lookback: usize,
    classes: usize,
    split: &SplitSpec,
    seed: u64,
) -> Result<[Examples; 3]> {
    let SplitSpec::Fractions(f) = split else {
        return config("classification needs a fractional split");
    };
    let n = samples.len();
    let n_train = (n as f64 * f[0]) as usize;
    let n_test = (n as f64 * f[2]) as usize;
    let n_val = n - n_train - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return config(format!("{n} samples leave an empty split under {f:?}"));
    }
    let v = samples[0].n_vars();
    for (i, s) in samples.iter().enumerate() {
        if s.len() < lookback {
            return config(format!("sample {i} has {} steps, lookback is {lookback}", s.len()));
        }
        if s.n_vars() != v {
            return Err(Error::Shape(format!("sample {i} has {} variates, expected {v}", s.n_vars())));
        }
        match s.class_label {
            Some(c) if c < classes => {}
            other => return config(format!("sample {i} label {other:?} outside 0..{classes}")),
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = |i: usize| samples[i].values.slice(s![..lookback, ..]).to_owned();
    let train_rows: Vec<Array2<f64>> = order[..n_train].iter().map(|&i| cut(i)).collect();
    let views: Vec<_> = train_rows.iter().map(|a| a.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    let z = Standardizer::fit(pooled.view());
    let make = |ids: &[usize]| Examples::Samples {
        inputs: ids.iter().map(|&i| z.transform(&cut(i))).collect(),
        labels: ids.iter().map(|&i| samples[i].class_label.expect("checked")).collect(),
    };
    Ok([
        make(&order[..n_train]),
        make(&order[n_train..n_train + n_val]),
        make(&order[n_train + n_val..]),
    ])
}
