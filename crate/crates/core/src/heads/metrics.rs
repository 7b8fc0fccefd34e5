use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics of one evaluation. Keys that do not apply to the task are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: String,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub horizon: Option<usize>,
}

impl MetricRecord {
    fn empty(task: &str) -> Self {
        Self {
            task: task.into(),
            mse: None,
            mae: None,
            precision: None,
            recall: None,
            f1: None,
            accuracy: None,
            horizon: None,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }
}

/// Elementwise MSE and MAE.
pub fn regression_metrics(task: &str, pred: &Array2<f64>, target: &Array2<f64>) -> Result<MetricRecord> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("nothing to evaluate".into()));
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let mut r = MetricRecord::empty(task);
    r.mse = Some(diff.iter().map(|d| d * d).sum::<f64>() / n);
    r.mae = Some(diff.iter().map(|d| d.abs()).sum::<f64>() / n);
    Ok(r)
}

/// MSE/MAE over cells where `weight` is non-zero.
pub fn masked_regression_metrics(
    task: &str,
    pred: &Array2<f64>,
    target: &Array2<f64>,
    weight: &Array2<f64>,
) -> Result<MetricRecord> {
    if pred.dim() != target.dim() || weight.dim() != pred.dim() {
        return Err(Error::Shape("prediction, target and mask shapes differ".into()));
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut n = 0usize;
    for ((p, t), w) in pred.iter().zip(target).zip(weight) {
        if *w != 0.0 {
            se += (p - t) * (p - t);
            ae += (p - t).abs();
            n += 1;
        }
    }
    let mut r = MetricRecord::empty(task);
    let n = n.max(1) as f64;
    r.mse = Some(se / n);
    r.mae = Some(ae / n);
    Ok(r)
}

/// Expands every flagged point inside a true anomalous segment to the whole
/// segment.
pub fn point_adjust(labels: &[u8], flags: &[bool]) -> Vec<bool> {
    let mut out = flags.to_vec();
    let mut start = 0;
    while start < labels.len() {
        if labels[start] == 0 {
            start += 1;
            continue;
        }
        let mut end = start;
        while end < labels.len() && labels[end] != 0 {
            end += 1;
        }
        if flags[start..end].iter().any(|&f| f) {
            out[start..end].iter_mut().for_each(|f| *f = true);
        }
        start = end;
    }
    out
}

/// Point-wise precision/recall/F1. Precision is 0 with no predicted
/// positives, recall 0 with no true positives, F1 0 when both are 0.
pub fn detection_metrics(labels: &[u8], flags: &[bool], adjust: bool) -> Result<MetricRecord> {
    if labels.len() != flags.len() {
        return Err(Error::Shape(format!("{} labels vs {} flags", labels.len(), flags.len())));
    }
    let flags = if adjust { point_adjust(labels, flags) } else { flags.to_vec() };
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&l, &f) in labels.iter().zip(&flags) {
        match (l != 0, f) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let p = ratio(tp, fp);
    let r = ratio(tp, fn_);
    let mut m = MetricRecord::empty("anomaly");
    m.precision = Some(p);
    m.recall = Some(r);
    m.f1 = Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    Ok(m)
}

pub fn accuracy_metrics(predicted: &[usize], labels: &[usize]) -> Result<MetricRecord> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", predicted.len(), labels.len())));
    }
    let correct = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    let mut m = MetricRecord::empty("classify");
    m.accuracy = Some(correct as f64 / labels.len() as f64);
    Ok(m)
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    #[test]
    fn identity_regression() {
        let a = Array2::from_shape_fn((4, 3), |(i, j)| (i * j) as f64);
        let m = regression_metrics("forecast", &a, &a).unwrap();
        assert_eq!((m.mse, m.mae), (Some(0.0), Some(0.0)));
        assert!(regression_metrics("forecast", &a, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn hand_detection() {
        let labels = [0, 1, 1, 0];
        let flags = [false, true, false, false];
        let m = detection_metrics(&labels, &flags, false).unwrap();
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, Some(0.5));
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let m = detection_metrics(&labels, &flags, true).unwrap();
        assert_eq!((m.recall, m.f1), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn no_positives() {
        let m = detection_metrics(&[0, 0, 1], &[false; 3], true).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn json_keys_fixed() {
        let m = accuracy_metrics(&[1, 0], &[1, 1]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = vec!["task", "mse", "mae", "precision", "recall", "f1", "accuracy", "horizon"];
        want.sort();
        let mut got = keys.clone();
        got.sort();
        assert_eq!(got, want);
        assert_eq!(v["accuracy"], 0.5);
        assert!(v["mse"].is_null());
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    proptest! {
        #[test]
        fn f1_consistent(pairs in prop::collection::vec((0u8..2, prop::bool::ANY), 1..200), adjust in prop::bool::ANY) {
            let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let flags: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let m = detection_metrics(&labels, &flags, adjust).unwrap();
            let (p, r, f) = (m.precision.unwrap(), m.recall.unwrap(), m.f1.unwrap());
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
            if p + r > 0.0 {
                prop_assert!((f - 2.0 * p * r / (p + r)).abs() <= 1e-9);
            }
        }

        #[test]
        fn adjust_never_lowers_recall(pairs in prop::collection::vec((0u8..2, prop::bool::ANY), 1..200)) {
            let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let flags: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let a = detection_metrics(&labels, &flags, false).unwrap();
            let b = detection_metrics(&labels, &flags, true).unwrap();
            prop_assert!(b.recall.unwrap() >= a.recall.unwrap());
        }
    }
}
