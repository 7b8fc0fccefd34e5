use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One table row: variant name → metric value.
pub type Row = (String, BTreeMap<String, f64>);

/// Wins per variant for one metric: each row's minimum earns a win and
/// every variant tied at the minimum is credited.
pub fn count_wins(variants: &[String], rows: &[Row]) -> Result<Vec<usize>> {
    let mut wins = vec![0; variants.len()];
    for (name, cells) in rows {
        let values = variants
            .iter()
            .map(|v| {
                cells.get(v).copied().ok_or_else(|| Error::MissingCell {
                    row: name.clone(),
                    variant: v.clone(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        for (w, v) in wins.iter_mut().zip(&values) {
            if *v == best {
                *w += 1;
            }
        }
    }
    Ok(wins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinTally {
    pub variants: Vec<String>,
    pub mse_wins: Vec<usize>,
    pub mae_wins: Vec<usize>,
}

impl WinTally {
    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>8}\n", "variant", "mse_wins", "mae_wins");
        for ((v, a), b) in self.variants.iter().zip(&self.mse_wins).zip(&self.mae_wins) {
            out.push_str(&format!("{v:<10} {a:>8} {b:>8}\n"));
        }
        out
    }
}

/// Per-row MSE and MAE wins across the listed variants.
pub fn tally_wins(variants: &[String], mse: &[Row], mae: &[Row]) -> Result<WinTally> {
    Ok(WinTally {
        variants: variants.to_vec(),
        mse_wins: count_wins(variants, mse)?,
        mae_wins: count_wins(variants, mae)?,
    })
}
