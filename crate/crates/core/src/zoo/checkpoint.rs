//! Named-tensor archive: a directory holding `manifest.txt` (one
//! `name,shape,dtype` line per tensor, shape written `RxC`) and
//! `tensors.bin` (little-endian values concatenated in manifest order).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::autograd::ParamGroup;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const TENSORS: &str = "tensors.bin";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Array2<f64>>,
}

fn ckpt_err(message: impl Into<String>, tensors: Vec<String>) -> Error {
    Error::Checkpoint {
        message: message.into(),
        tensors,
    }
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        let mut blob = Vec::new();
        for (name, t) in &self.tensors {
            manifest.push_str(&format!("{name},{}x{},f64\n", t.nrows(), t.ncols()));
            for v in t.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mp = dir.join(MANIFEST);
        fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(TENSORS);
        let mut f = fs::File::create(&bp).map_err(|e| Error::io(&bp, e))?;
        f.write_all(&blob).map_err(|e| Error::io(&bp, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST);
        let manifest = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(TENSORS);
        let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        let mut offset = 0usize;
        let mut tensors = BTreeMap::new();
        for line in manifest.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let [name, shape, dtype] = parts[..] else {
                return Err(ckpt_err(format!("malformed manifest line `{line}`"), vec![]));
            };
            let dims: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| ckpt_err(format!("bad shape `{shape}`"), vec![name.into()]))?;
            let (r, c) = match dims[..] {
                [n] => (1, n),
                [r, c] => (r, c),
                _ => return Err(ckpt_err(format!("tensor rank {} unsupported", dims.len()), vec![name.into()])),
            };
            let width = match dtype {
                "f64" => 8,
                "f32" => 4,
                other => return Err(ckpt_err(format!("dtype `{other}` unsupported"), vec![name.into()])),
            };
            let bytes = r * c * width;
            if offset + bytes > blob.len() {
                return Err(ckpt_err("tensor data truncated", vec![name.into()]));
            }
            let raw = &blob[offset..offset + bytes];
            offset += bytes;
            let values: Vec<f64> = if width == 8 {
                raw.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect()
            } else {
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect()
            };
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ckpt_err("non-finite values", vec![name.into()]));
            }
            tensors.insert(name.to_string(), Array2::from_shape_vec((r, c), values).expect("sized"));
        }
        if offset != blob.len() {
            return Err(ckpt_err(format!("{} trailing bytes after last tensor", blob.len() - offset), vec![]));
        }
        Ok(Self { tensors })
    }

    /// Number of `h.{i}.*` blocks present.
    pub fn block_count(&self) -> usize {
        self.tensors
            .keys()
            .filter_map(|k| k.strip_prefix("h.")?.split('.').next()?.parse::<usize>().ok())
            .map(|i| i + 1)
            .max()
            .unwrap_or(0)
    }

    /// Values for every expected tensor, in order; fails listing every
    /// missing or mis-shaped name.
    pub fn take_validated(&self, expected: &[(String, (usize, usize), ParamGroup)]) -> Result<Vec<Array2<f64>>> {
        let mut bad = Vec::new();
        for (name, shape, _) in expected {
            match self.tensors.get(name) {
                Some(t) if t.dim() == *shape => {}
                Some(t) => bad.push(format!("{name} (expected {}x{}, found {}x{})", shape.0, shape.1, t.nrows(), t.ncols())),
                None => bad.push(format!("{name} (missing)")),
            }
        }
        if !bad.is_empty() {
            return Err(ckpt_err("checkpoint does not match the backbone", bad));
        }
        Ok(expected.iter().map(|(n, _, _)| self.tensors[n].clone()).collect())
    }
}
