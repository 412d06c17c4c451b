//! On-disk embedding tables: a directory holding `index.json` and
//! `vectors.bin` (`count x dim` little-endian f32, row-major, no header).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{EmbeddingProvider, EmbeddingVector};

pub const INDEX_FILE: &str = "index.json";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dir: PathBuf,
    dim: usize,
    names: Vec<String>,
    rows: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: EmbeddingIndex = serde_json::from_str(&text).map_err(|e| Error::json(&index_path, e))?;
        if index.dtype != DTYPE_F32LE {
            return Err(Error::format(&index_path, format!("unsupported dtype {:?}", index.dtype)));
        }
        if index.dim == 0 {
            return Err(Error::format(&index_path, "dim must be positive"));
        }
        if index.names.len() != index.count {
            return Err(Error::format(
                &index_path,
                format!("count is {} but {} names are listed", index.count, index.names.len()),
            ));
        }
        let mut rows = HashMap::with_capacity(index.count);
        for (i, n) in index.names.iter().enumerate() {
            if rows.insert(n.clone(), i).is_some() {
                return Err(Error::format(&index_path, format!("duplicate name {n:?}")));
            }
        }

        let vec_path = dir.join(VECTORS_FILE);
        let bytes = fs::read(&vec_path).map_err(|e| Error::io(&vec_path, e))?;
        let expected = index.count * index.dim * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                &vec_path,
                format!(
                    "size {} bytes does not match {} x {} f32 = {expected} bytes declared in {INDEX_FILE}",
                    bytes.len(),
                    index.count,
                    index.dim
                ),
            ));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                &vec_path,
                format!("non-finite value in row {} ({:?})", pos / index.dim, index.names[pos / index.dim]),
            ));
        }
        Ok(EmbeddingStore {
            dir: dir.to_path_buf(),
            dim: index.dim,
            names: index.names,
            rows,
            data,
        })
    }

    /// Writes a table; `vectors` must all have dimension `dim`.
    pub fn write(dir: impl AsRef<Path>, names: &[String], vectors: &[Vec<f32>]) -> Result<()> {
        let dir = dir.as_ref();
        if names.len() != vectors.len() {
            return Err(Error::Shape(format!("{} names for {} vectors", names.len(), vectors.len())));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("embedding rows must share one positive dimension".into()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let index = EmbeddingIndex {
            dim,
            count: names.len(),
            dtype: DTYPE_F32LE.to_string(),
            names: names.to_vec(),
        };
        let index_path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(&index_path, e))?;
        fs::write(&index_path, text + "\n").map_err(|e| Error::io(&index_path, e))?;
        let bytes: Vec<u8> = vectors.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        let vec_path = dir.join(VECTORS_FILE);
        fs::write(&vec_path, bytes).map_err(|e| Error::io(&vec_path, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.rows
            .get(key)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }
}

impl EmbeddingProvider for EmbeddingStore {
    fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>> {
        keys.iter()
            .map(|k| {
                let row = self.get(k).ok_or_else(|| Error::Provider {
                    key: Some(k.clone()),
                    message: format!("no embedding in {}", self.dir.display()),
                })?;
                EmbeddingVector::new(row.to_vec())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_open() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        EmbeddingStore::write(dir.path(), &names, &[vec![1.0, 2.0, 3.0], vec![-1.5, 0.0, 4.25]]).unwrap();
        let bytes = fs::read(dir.path().join(VECTORS_FILE)).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        let s = EmbeddingStore::open(dir.path()).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.get("b").unwrap(), &[-1.5, 0.0, 4.25]);
        let e = s.embed(&["a".to_string()]).unwrap();
        assert_eq!(e[0].values(), &[1.0, 2.0, 3.0]);
        match s.embed(&["zzz".to_string()]) {
            Err(Error::Provider { key, .. }) => assert_eq!(key.as_deref(), Some("zzz")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn size_mismatch_names_vectors_file() {
        let dir = tempfile::tempdir().unwrap();
        EmbeddingStore::write(dir.path(), &["a".to_string()], &[vec![1.0, 2.0]]).unwrap();
        fs::write(dir.path().join(VECTORS_FILE), [0u8; 6]).unwrap();
        let err = EmbeddingStore::open(dir.path()).unwrap_err();
        match &err {
            Error::Format { path, .. } => assert!(path.ends_with(VECTORS_FILE)),
            e => panic!("{e}"),
        }
        assert!(err.to_string().contains("vectors.bin"));
    }

    #[test]
    fn index_inconsistencies_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(INDEX_FILE),
            r#"{"dim": 2, "count": 2, "dtype": "f32le", "names": ["a"]}"#,
        )
        .unwrap();
        fs::write(dir.path().join(VECTORS_FILE), [0u8; 16]).unwrap();
        assert!(matches!(EmbeddingStore::open(dir.path()), Err(Error::Format { .. })));
        fs::write(
            dir.path().join(INDEX_FILE),
            r#"{"dim": 2, "count": 2, "dtype": "f16", "names": ["a", "b"]}"#,
        )
        .unwrap();
        assert!(matches!(EmbeddingStore::open(dir.path()), Err(Error::Format { .. })));
    }
}
