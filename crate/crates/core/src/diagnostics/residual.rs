use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

pub const DEFAULT_MAX_LAG: usize = 40;

/// Durbin-Watson statistic with ACF of the same residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub dw: f64,
    /// `ρ_1 … ρ_maxlag`; `ρ_0 = 1` is implicit.
    pub acf: Vec<f64>,
    pub band: f64,
    pub n: usize,
    pub aggregation: String,
}

/// `Σ_{t≥2}(e_t − e_{t−1})² / Σ e_t²`.
pub fn durbin_watson(e: &[f64]) -> Result<f64> {
    if e.len() < 2 {
        return config(format!("Durbin-Watson needs at least 2 residuals, got {}", e.len()));
    }
    let den: f64 = e.iter().map(|v| v * v).sum();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Undefined("Durbin-Watson of all-zero or non-finite residuals".into()));
    }
    let num: f64 = e.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok(num / den)
}

/// Mean of per-sequence statistics, with the sequence count.
pub fn aggregate_dw<S: AsRef<[f64]>>(sequences: &[S]) -> Result<(f64, usize)> {
    if sequences.is_empty() {
        return config("no residual sequences to aggregate");
    }
    let mut sum = 0.0;
    for s in sequences {
        sum += durbin_watson(s.as_ref())?;
    }
    Ok((sum / sequences.len() as f64, sequences.len()))
}

/// `ρ_k` for `k = 0..=max_lag` around the sample mean.
pub fn acf(e: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = e.len();
    if max_lag >= n {
        return config(format!("max lag {max_lag} must be below the residual count {n}"));
    }
    let mean = e.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = e.iter().map(|v| v - mean).collect();
    let den: f64 = c.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Undefined("autocorrelation of zero-variance residuals".into()));
    }
    Ok((0..=max_lag)
        .map(|k| c[k..].iter().zip(&c[..n - k]).map(|(a, b)| a * b).sum::<f64>() / den)
        .collect())
}

pub fn residual_acf(e: &[f64], max_lag: usize) -> Result<ResidualDiagnostics> {
    let rho = acf(e, max_lag)?;
    Ok(ResidualDiagnostics {
        dw: durbin_watson(e)?,
        acf: rho[1..].to_vec(),
        band: 1.96 / (e.len() as f64).sqrt(),
        n: e.len(),
        aggregation: "single sequence".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assume, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn hand_values() {
        assert_eq!(durbin_watson(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 3.0);
        assert_eq!(durbin_watson(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(durbin_watson(&[0.0, 0.0]), Err(Error::Undefined(_))));
        assert!(durbin_watson(&[1.0]).is_err());
    }

    #[test]
    fn aggregate() {
        let a = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(aggregate_dw(&[a]).unwrap(), (3.0, 1));
        // (0 + 4 + 0) / 4
        let b = [1.0, 1.0, -1.0, -1.0];
        assert_eq!(durbin_watson(&b).unwrap(), 1.0);
        assert_eq!(aggregate_dw(&[b, a]).unwrap(), (2.0, 2));
        assert!(aggregate_dw::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn white_noise_near_two() {
        let dw = durbin_watson(&normals(10_000, 1)).unwrap();
        assert!((1.94..=2.06).contains(&dw), "{dw}");
    }

    #[test]
    fn ar1_matches_lag_one_relation() {
        let z = normals(10_000, 2);
        let mut e = vec![0.0; z.len()];
        for t in 1..z.len() {
            e[t] = 0.5 * e[t - 1] + z[t];
        }
        let dw = durbin_watson(&e).unwrap();
        let rho1 = acf(&e, 1).unwrap()[1];
        assert!((dw - 2.0 * (1.0 - rho1)).abs() < 0.01, "{dw} vs {rho1}");
        assert!((0.9..=1.1).contains(&dw), "{dw}");
    }

    #[test]
    fn acf_properties() {
        let e = normals(5_000, 3);
        let d = residual_acf(&e, 40).unwrap();
        assert_eq!(acf(&e, 3).unwrap()[0], 1.0);
        let outside = d.acf.iter().filter(|r| r.abs() > d.band).count();
        assert!(outside <= 4, "{outside}");
        let p = 24;
        let s: Vec<f64> = (0..4800).map(|t| (2.0 * std::f64::consts::PI * t as f64 / p as f64).sin()).collect();
        assert!(acf(&s, p).unwrap()[p] >= 0.9);
        assert!(acf(&[2.0; 10], 3).is_err());
        assert!(acf(&e[..5], 5).is_err());
    }

    proptest! {
        #[test]
        fn scale_invariant_and_bounded(e in prop::collection::vec(-1e3f64..1e3, 2..200), c in -1e3f64..1e3) {
            prop_assume!(e.iter().any(|v| *v != 0.0) && c.abs() > 1e-3);
            let d = durbin_watson(&e).unwrap();
            prop_assert!((0.0..=4.0).contains(&d));
            let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
            prop_assert!((durbin_watson(&scaled).unwrap() - d).abs() <= 1e-12 * d.max(1.0));
        }

        #[test]
        fn acf_bounded(e in prop::collection::vec(-10f64..10.0, 3..100)) {
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            prop_assume!(e.iter().any(|v| (v - mean).abs() > 1e-9));
            for r in acf(&e, e.len() - 1).unwrap() {
                prop_assert!(r.abs() <= 1.0 + 1e-9);
            }
        }
    }
}
