use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Chronological train/validation/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Fractions of the series length; the test and train counts are
    /// truncated and validation takes the remainder.
    Fractions([f64; 3]),
    /// 12/4/4 months of hourly data (ETTh-style borders).
    EttHour,
    /// 12/4/4 months of 15-minute data (ETTm-style borders).
    EttMinute,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions([0.7, 0.1, 0.2])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_ranges(len: usize, split: &SplitSpec) -> Result<SplitRanges> {
    let (train, val, test) = match split {
        SplitSpec::Fractions(f) => {
            if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return config(format!("split fractions {f:?} must be in [0,1] and sum to 1"));
            }
            let train = (len as f64 * f[0]) as usize;
            let test = (len as f64 * f[2]) as usize;
            let val = len - train - test;
            (train, val, test)
        }
        SplitSpec::EttHour | SplitSpec::EttMinute => {
            let per_month = if matches!(split, SplitSpec::EttHour) { 30 * 24 } else { 30 * 24 * 4 };
            let need = 20 * per_month;
            if len < need {
                return config(format!("ETT split needs {need} steps, series has {len}"));
            }
            (12 * per_month, 4 * per_month, 4 * per_month)
        }
    };
    Ok(SplitRanges {
        train: 0..train,
        val: train..train + val,
        test: train + val..train + val + test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Predict the next `N` steps.
    Forecast(usize),
    /// Reconstruct the input window itself.
    Reconstruct,
}

/// Windows cut from one contiguous segment of a parent series. Inputs and
/// targets are views into the stored segment.
#[derive(Debug, Clone)]
pub struct WindowSet {
    segment: Array2<f64>,
    segment_start: usize,
    pub lookback: usize,
    pub target: TargetKind,
    /// Absolute start offsets in the parent series.
    pub origins: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.segment.ncols()
    }

    pub fn horizon(&self) -> usize {
        match self.target {
            TargetKind::Forecast(n) => n,
            TargetKind::Reconstruct => 0,
        }
    }

    pub fn input(&self, i: usize) -> ArrayView2<'_, f64> {
        let o = self.origins[i] - self.segment_start;
        self.segment.slice(s![o..o + self.lookback, ..])
    }

    pub fn target(&self, i: usize) -> ArrayView2<'_, f64> {
        let o = self.origins[i] - self.segment_start;
        match self.target {
            TargetKind::Forecast(n) => self.segment.slice(s![o + self.lookback..o + self.lookback + n, ..]),
            TargetKind::Reconstruct => self.segment.slice(s![o..o + self.lookback, ..]),
        }
    }

    /// Inclusive last absolute index touched by window `i`.
    pub fn last_index(&self, i: usize) -> usize {
        self.origins[i] + self.lookback + self.horizon() - 1
    }

    pub fn segment(&self) -> ArrayView2<'_, f64> {
        self.segment.view()
    }

    pub fn segment_start(&self) -> usize {
        self.segment_start
    }
}

#[derive(Debug, Clone)]
pub struct SplitWindows {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

fn windows_in(values: &Array2<f64>, range: Range<usize>, lookback: usize, target: TargetKind, stride: usize) -> WindowSet {
    let span = lookback
        + match target {
            TargetKind::Forecast(n) => n,
            TargetKind::Reconstruct => 0,
        };
    let len = range.len();
    let origins = if len >= span {
        (0..=(len - span) / stride).map(|k| range.start + k * stride).collect()
    } else {
        Vec::new()
    };
    WindowSet {
        segment: values.slice(s![range.clone(), ..]).to_owned(),
        segment_start: range.start,
        lookback,
        target,
        origins,
    }
}

/// Cuts windows inside each chronological split. Per split the count is
/// `floor((L_split - span) / stride) + 1` when non-negative, else zero.
pub fn make_windows(
    values: &Array2<f64>,
    lookback: usize,
    target: TargetKind,
    stride: usize,
    split: &SplitSpec,
) -> Result<SplitWindows> {
    let l = values.nrows();
    if lookback == 0 || stride == 0 {
        return config("lookback and stride must be positive");
    }
    let span = match target {
        TargetKind::Forecast(0) => return config("forecast horizon must be positive"),
        TargetKind::Forecast(n) => lookback + n,
        TargetKind::Reconstruct => lookback,
    };
    if span > l {
        return config(format!("lookback + horizon = {span} exceeds series length {l}"));
    }
    let r = split_ranges(l, split)?;
    Ok(SplitWindows {
        train: windows_in(values, r.train, lookback, target, stride),
        val: windows_in(values, r.val, lookback, target, stride),
        test: windows_in(values, r.test, lookback, target, stride),
    })
}

/// Per-variate z-scoring fitted on a row range (the training split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(values: ArrayView2<'_, f64>) -> Self {
        let n = values.nrows() as f64;
        let mean = values.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let std = values
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, m)| {
                let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd < super::STD_GUARD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|x| (x - m) / s);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest};

    fn ramp(l: usize, v: usize) -> Array2<f64> {
        Array2::from_shape_fn((l, v), |(i, j)| (i * 10 + j) as f64)
    }

    #[test]
    fn single_split_count() {
        let w = make_windows(&ramp(10, 1), 4, TargetKind::Forecast(2), 1, &SplitSpec::Fractions([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(w.train.len(), 5);
        assert_eq!(w.val.len(), 0);
        assert_eq!(w.test.len(), 0);
        assert_eq!(w.train.input(4)[[0, 0]], 40.0);
        assert_eq!(w.train.target(4)[[1, 0]], 90.0);
    }

    #[test]
    fn overlong_window_is_config_error() {
        assert!(make_windows(&ramp(10, 1), 10, TargetKind::Forecast(1), 1, &SplitSpec::default()).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(split_ranges(100, &SplitSpec::Fractions([0.5, 0.1, 0.1])).is_err());
    }

    #[test]
    fn ett_hour_borders() {
        let r = split_ranges(17420, &SplitSpec::EttHour).unwrap();
        assert_eq!(r.train, 0..8640);
        assert_eq!(r.val, 8640..11520);
        assert_eq!(r.test, 11520..14400);
    }

    #[test]
    fn standardizer_zero_mean_unit_std() {
        let x = ramp(50, 3);
        let st = Standardizer::fit(x.view());
        let z = st.transform(&x);
        for col in z.axis_iter(Axis(1)) {
            assert!(col.mean().unwrap().abs() < 1e-12);
            assert!((col.std(0.0) - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_counted(l in 20usize..400, lookback in 1usize..20, n in 1usize..10, stride in 1usize..5) {
            prop_assume!(lookback + n <= l);
            let w = make_windows(&ramp(l, 2), lookback, TargetKind::Forecast(n), stride, &SplitSpec::default()).unwrap();
            let r = split_ranges(l, &SplitSpec::default()).unwrap();
            for (set, range) in [(&w.train, &r.train), (&w.val, &r.val), (&w.test, &r.test)] {
                let expect = if range.len() >= lookback + n { (range.len() - lookback - n) / stride + 1 } else { 0 };
                prop_assert_eq!(set.len(), expect);
                for i in 0..set.len() {
                    prop_assert!(set.origins[i] >= range.start && set.last_index(i) < range.end);
                    prop_assert_eq!(set.input(i).dim(), (lookback, 2));
                    prop_assert_eq!(set.target(i).dim(), (n, 2));
                }
            }
            if !w.train.is_empty() && !w.val.is_empty() {
                prop_assert!(w.train.last_index(w.train.len() - 1) < w.val.origins[0]);
            }
            if !w.val.is_empty() && !w.test.is_empty() {
                prop_assert!(w.val.last_index(w.val.len() - 1) < w.test.origins[0]);
            }
        }
    }
}
