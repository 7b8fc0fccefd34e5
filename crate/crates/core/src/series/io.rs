use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::SeriesTensor;
use crate::error::{Error, Result};

/// Which on-disk layout a dataset path refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSchema {
    /// One CSV: optional `date` column, then numeric variates.
    Series,
    /// Data CSV plus a label CSV with one 0/1 entry per step (last column).
    Anomaly { labels: PathBuf },
    /// Manifest CSV with `path,label` rows; each path is a series CSV.
    Classification,
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Series(SeriesTensor),
    Samples(Vec<SeriesTensor>),
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    match schema {
        DatasetSchema::Series => load_csv(path).map(Dataset::Series),
        DatasetSchema::Anomaly { labels } => load_anomaly(path, labels).map(Dataset::Series),
        DatasetSchema::Classification => load_classification(path).map(Dataset::Samples),
    }
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y/%m/%d %H:%M"];
    let raw = raw.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a header-first CSV whose optional first column is `date`.
pub fn load_csv(path: &Path) -> Result<SeriesTensor> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let has_date = header.first().is_some_and(|h| h.eq_ignore_ascii_case("date"));
    let first = usize::from(has_date);
    let columns: Vec<String> = header[first..].to_vec();
    if columns.is_empty() {
        return Err(Error::Ingest {
            path: path.into(),
            row: 0,
            message: "no numeric columns".into(),
        });
    }
    let width = header.len();
    let mut values = Vec::new();
    let mut stamps = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingest {
            path: path.into(),
            row,
            message: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::Ingest {
                path: path.into(),
                row,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if has_date {
            let ts = parse_timestamp(&rec[0]).ok_or_else(|| Error::Ingest {
                path: path.into(),
                row,
                message: format!("unparseable date `{}`", &rec[0]),
            })?;
            stamps.push(ts);
        }
        for (j, name) in columns.iter().enumerate() {
            let raw = &rec[first + j];
            let v = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::BadCell {
                path: path.into(),
                row,
                column: name.clone(),
                value: raw.to_owned(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Ingest {
            path: path.into(),
            row: 0,
            message: "no data rows".into(),
        });
    }
    let values = Array2::from_shape_vec((rows, columns.len()), values).expect("row-major fill");
    let series = SeriesTensor {
        values,
        columns,
        timestamps: has_date.then_some(stamps),
        point_labels: None,
        class_label: None,
    };
    series.validate().map_err(|e| Error::Ingest {
        path: path.into(),
        row: 0,
        message: e.to_string(),
    })?;
    Ok(series)
}

pub fn load_anomaly(data: &Path, labels: &Path) -> Result<SeriesTensor> {
    let mut series = load_csv(data)?;
    let mut rdr = reader(labels)?;
    let mut out = Vec::with_capacity(series.len());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let raw = rec.get(rec.len().saturating_sub(1)).unwrap_or("");
        let v = match raw.parse::<f64>() {
            Ok(v) if v == 0.0 => 0u8,
            Ok(v) if v == 1.0 => 1u8,
            _ => {
                return Err(Error::BadCell {
                    path: labels.into(),
                    row,
                    column: "label".into(),
                    value: raw.into(),
                })
            }
        };
        out.push(v);
    }
    if out.len() != series.len() {
        return Err(Error::Ingest {
            path: labels.into(),
            row: out.len(),
            message: format!("{} labels for {} steps", out.len(), series.len()),
        });
    }
    series.point_labels = Some(out);
    Ok(series)
}

pub fn load_classification(manifest: &Path) -> Result<Vec<SeriesTensor>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut rdr = reader(manifest)?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Ingest {
                path: manifest.into(),
                row,
                message: "manifest rows must be `path,label`".into(),
            });
        }
        let label: usize = rec[1].parse().map_err(|_| Error::BadCell {
            path: manifest.into(),
            row,
            column: "label".into(),
            value: rec[1].to_owned(),
        })?;
        let p = base.join(&rec[0]);
        let mut s = load_csv(&p)?;
        s.class_label = Some(label);
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::Ingest {
            path: manifest.into(),
            row: 0,
            message: "empty manifest".into(),
        });
    }
    Ok(samples)
}
