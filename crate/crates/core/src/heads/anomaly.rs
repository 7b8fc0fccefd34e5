use ndarray::Array2;

use crate::error::{config, Error, Result};

/// Per-step squared error averaged over variates.
pub fn error_energy(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Vec<f64>> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    Ok((pred - target).rows().into_iter().map(|r| r.mapv(|d| d * d).mean().unwrap_or(0.0)).collect())
}

/// `q`-th percentile (0..=100) with linear interpolation between order
/// statistics at rank `q/100·(n−1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return config("percentile of an empty set");
    }
    if !(0.0..=100.0).contains(&q) {
        return config(format!("percentile {q} outside [0, 100]"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Threshold `τ` at the `(100 − r)`-th percentile of the pooled train and
/// test energies.
pub fn anomaly_threshold(train: &[f64], test: &[f64], ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio < 100.0) {
        return config(format!("anomaly ratio {ratio} must lie in (0, 100)"));
    }
    if train.is_empty() && test.is_empty() {
        return config("no reconstruction errors to threshold");
    }
    let pooled: Vec<f64> = train.iter().chain(test).copied().collect();
    percentile(&pooled, 100.0 - ratio)
}

/// Steps whose energy strictly exceeds `tau`.
pub fn flag_anomalies(energy: &[f64], tau: f64) -> Vec<bool> {
    energy.iter().map(|&e| e > tau).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_to_hundred() {
        let e: Vec<f64> = (1..=100).map(f64::from).collect();
        let tau = anomaly_threshold(&e[..50], &e[50..], 1.0).unwrap();
        // rank 0.99·99 = 98.01 between 99 and 100
        assert!((tau - 99.01).abs() < 1e-9);
        assert_eq!(flag_anomalies(&e, tau).iter().filter(|&&f| f).count(), 1);
    }

    #[test]
    fn perfect_reconstruction() {
        let z = vec![0.0; 40];
        let tau = anomaly_threshold(&z, &z, 5.0).unwrap();
        assert_eq!(tau, 0.0);
        assert!(flag_anomalies(&z, tau).iter().all(|f| !f));
    }

    #[test]
    fn errors() {
        assert!(anomaly_threshold(&[], &[], 1.0).is_err());
        assert!(anomaly_threshold(&[1.0], &[], 0.0).is_err());
        assert!(anomaly_threshold(&[1.0], &[], 100.0).is_err());
    }

    #[test]
    fn energy_averages_variates() {
        let p = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        let t = Array2::zeros((2, 2));
        assert_eq!(error_energy(&p, &t).unwrap(), vec![2.5, 0.0]);
    }
}
