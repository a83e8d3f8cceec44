//! `.ctxvec` sidecar of externally computed contextual vectors.
//!
//! A JSON header line `{"d_model": D, "count": N}` followed by `N` records,
//! each `u32` id length, id bytes (UTF-8), `u32` position count `P`, then
//! `P × D` little-endian `f32` values in row-major order. One record per
//! example, one vector per input position (sentinel included).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    d_model: usize,
    count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImportedVectors {
    pub d_model: usize,
    pub vectors: HashMap<String, Array2<f64>>,
}

impl ImportedVectors {
    pub fn new(d_model: usize) -> Self {
        ImportedVectors {
            d_model,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Array2<f64>) -> Result<()> {
        if v.ncols() != self.d_model {
            return Err(Error::Vectors(format!(
                "vector width {} does not match d_model {}",
                v.ncols(),
                self.d_model
            )));
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    /// Vectors for `id`, checked against the expected sequence length and width.
    pub fn get(&self, id: &str, len: usize, d_model: usize) -> Result<Array2<f64>> {
        let v = self
            .vectors
            .get(id)
            .ok_or_else(|| Error::Vectors(format!("no vectors for example {id:?}")))?;
        if v.dim() != (len, d_model) {
            return Err(Error::Vectors(format!(
                "example {id:?}: vectors are {}×{}, input needs {len}×{d_model}",
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(v.clone())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_ctxvec(path: &Path) -> Result<ImportedVectors> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Vectors(format!("{}: bad header: {e}", path.display())))?;
    let truncated = |e: std::io::Error| Error::Vectors(format!("{}: truncated record: {e}", path.display()));
    let mut out = ImportedVectors::new(header.d_model);
    for _ in 0..header.count {
        let id_len = read_u32(&mut r).map_err(truncated)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id).map_err(|_| Error::Vectors(format!("{}: id is not UTF-8", path.display())))?;
        let n = read_u32(&mut r).map_err(truncated)? as usize;
        let mut raw = vec![0u8; n * header.d_model * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let v = Array2::from_shape_vec((n, header.d_model), values).expect("sized above");
        if out.vectors.insert(id.clone(), v).is_some() {
            return Err(Error::Vectors(format!("{}: duplicate id {id:?}", path.display())));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Vectors(format!("{}: trailing bytes after {} records", path.display(), header.count)));
    }
    Ok(out)
}

/// Writes records sorted by id.
pub fn write_ctxvec(path: &Path, vectors: &ImportedVectors) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_string(&Header {
        d_model: vectors.d_model,
        count: vectors.len(),
    })?;
    let mut ids: Vec<&String> = vectors.vectors.keys().collect();
    ids.sort();
    let write = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for id in ids {
            let v = &vectors.vectors[id];
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            w.write_all(&(v.nrows() as u32).to_le_bytes())?;
            for x in v.iter() {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ctxvec");
        let mut v = ImportedVectors::new(2);
        v.insert("b", array![[0.5, -1.0], [2.0, 0.25]]).unwrap();
        v.insert("a", array![[1.0, 3.0]]).unwrap();
        write_ctxvec(&path, &v).unwrap();
        let back = read_ctxvec(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.get("b", 2, 2).unwrap(), array![[0.5, -1.0], [2.0, 0.25]]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut v = ImportedVectors::new(2);
        v.insert("a", array![[1.0, 3.0]]).unwrap();
        assert!(v.get("a", 2, 2).is_err());
        assert!(v.get("a", 1, 4).is_err());
        assert!(v.get("missing", 1, 2).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ctxvec");
        let mut v = ImportedVectors::new(2);
        v.insert("a", array![[1.0, 3.0]]).unwrap();
        write_ctxvec(&path, &v).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_ctxvec(&path), Err(Error::Vectors(_))));
    }
}
