use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Writes `source,token_id,dim_0,…,dim_{D−1}` rows, one per token.
pub fn export_embeddings(sets: &[(&str, &Array2<f64>)], path: &Path) -> Result<()> {
    let d = sets.first().map(|s| s.1.ncols()).unwrap_or(0);
    if sets.iter().any(|s| s.1.ncols() != d) {
        return Err(Error::Shape("token sets differ in width".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header = vec!["source".to_string(), "token_id".to_string()];
    header.extend((0..d).map(|j| format!("dim_{j}")));
    w.write_record(&header)?;
    for (source, m) in sets {
        for (i, row) in m.rows().into_iter().enumerate() {
            let mut rec = vec![source.to_string(), i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an export file back into `(source, matrix)` groups in file order.
pub fn read_embeddings(path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut groups: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let source = rec.get(0).unwrap_or_default().to_string();
        let values = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(c, v)| {
                v.trim().parse::<f64>().map_err(|_| Error::BadCell {
                    path: path.to_path_buf(),
                    row: row + 2,
                    column: format!("dim_{c}"),
                    value: v.into(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match groups.last_mut() {
            Some((s, rows)) if *s == source => rows.push(values),
            _ => groups.push((source, vec![values])),
        }
    }
    groups.into_iter().map(|(s, rows)| Ok((s, to_matrix(rows, path)?))).collect()
}

fn to_matrix(rows: Vec<Vec<f64>>, path: &Path) -> Result<Array2<f64>> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            row: 0,
            message: "ragged rows".into(),
        });
    }
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("rectangular"))
}

/// Reads a token matrix: either an export file (all its rows) or a plain
/// numeric CSV with a header row.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let exported = r.headers()?.get(0) == Some("source");
    if exported {
        let groups = read_embeddings(path)?;
        let rows: Vec<Vec<f64>> = groups
            .iter()
            .flat_map(|(_, m)| m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .collect();
        return to_matrix(rows, path);
    }
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .enumerate()
                .map(|(c, v)| {
                    v.trim().parse::<f64>().map_err(|_| Error::BadCell {
                        path: path.to_path_buf(),
                        row: row + 2,
                        column: c.to_string(),
                        value: v.into(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    to_matrix(rows, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let a = Array2::from_shape_vec((3, 2), vec![0.1, -2.5, 1e-7, 3.0, 1.0 / 3.0, 42.0]).unwrap();
        let b = Array2::from_shape_vec((1, 2), vec![7.0, 8.0]).unwrap();
        export_embeddings(&[("ts", &a), ("text", &b)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "source,token_id,dim_0,dim_1");
        assert_eq!(lines.len(), 5);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 2 + 2));
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back, vec![("ts".to_string(), a.clone()), ("text".to_string(), b)]);
        assert_eq!(read_matrix(&p).unwrap().nrows(), 4);
    }

    #[test]
    fn plain_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "a,b\n1,2\n3,4\n").unwrap();
        assert_eq!(read_matrix(&p).unwrap(), ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        std::fs::write(&p, "a,b\n1,x\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::BadCell { .. })));
    }
}
