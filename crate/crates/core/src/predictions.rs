//! On-disk predicted vectors, so that evaluation does not need a model.
//!
//! Two encodings share one record layout `(id, transcription, vector)`:
//!
//! * TSV: an optional `#phoc<TAB><json>` line, the header
//!   `id<TAB>transcription<TAB>vector`, then one row per sample with the
//!   vector as space-separated decimals.
//! * Binary: magic `PHOCPRD1`, `u32` length + JSON PHOC record (length 0 for
//!   none), `u64` record count, `u32` dimension, then per record a
//!   length-prefixed id, a length-prefixed transcription and `dim` `f32`
//!   values. Integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::phoc::PhocConfigRecord;

pub const MAGIC: &[u8; 8] = b"PHOCPRD1";
pub const TSV_HEADER: &str = "id\ttranscription\tvector";

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {detail}")]
    Malformed { path: PathBuf, line: usize, detail: String },
    #[error("{path}: truncated prediction file")]
    Truncated { path: PathBuf },
    #[error("vector of {id:?} has {found} entries, expected {expected}")]
    Dimension { id: String, found: usize, expected: usize },
}

type Result<T> = std::result::Result<T, PredictionError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub transcription: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    /// Label space the vectors live in, when they are PHOC estimates.
    pub phoc: Option<PhocConfigRecord>,
    pub records: Vec<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionFormat {
    Tsv,
    Binary,
}

impl PredictionSet {
    pub fn dimension(&self) -> usize {
        self.records.first().map_or(0, |r| r.vector.len())
    }

    pub fn check(&self) -> Result<()> {
        let dim = self.dimension();
        match self.records.iter().find(|r| r.vector.len() != dim) {
            Some(r) => Err(PredictionError::Dimension {
                id: r.id.clone(),
                found: r.vector.len(),
                expected: dim,
            }),
            None => Ok(()),
        }
    }

    pub fn vectors_f64(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.vector.iter().map(|&v| v as f64).collect())
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.records.iter().map(|r| r.transcription.clone()).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(phoc) = &self.phoc {
            out.push_str("#phoc\t");
            out.push_str(&serde_json::to_string(phoc).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(TSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.id);
            out.push('\t');
            out.push_str(&r.transcription);
            out.push('\t');
            let values: Vec<String> = r.vector.iter().map(f32::to_string).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let malformed = |line: usize, detail: String| PredictionError::Malformed {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut set = PredictionSet::default();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                if let Some(json) = line.strip_prefix("#phoc\t") {
                    set.phoc = Some(serde_json::from_str(json).map_err(|e| malformed(n, e.to_string()))?);
                    continue;
                }
                if line != TSV_HEADER {
                    return Err(malformed(n, format!("expected header {TSV_HEADER:?}")));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(malformed(n, format!("expected 3 columns, found {}", cols.len())));
            }
            let vector = cols[2]
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f32>().map_err(|e| malformed(n, format!("{s:?}: {e}"))))
                .collect::<Result<Vec<f32>>>()?;
            set.records.push(Prediction {
                id: cols[0].to_owned(),
                transcription: cols[1].to_owned(),
                vector,
            });
        }
        if !header_seen {
            return Err(malformed(1, "missing header".into()));
        }
        set.check()?;
        Ok(set)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let json = self
            .phoc
            .as_ref()
            .map(|p| serde_json::to_vec(p).expect("record serializes"))
            .unwrap_or_default();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dimension() as u32).to_le_bytes());
        for r in &self.records {
            for s in [&r.id, &r.transcription] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            for v in &r.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = || PredictionError::Truncated { path: path.to_path_buf() };
        let malformed = |detail: String| PredictionError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            detail,
        };
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
            pos += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(malformed("bad magic".into()));
        }
        let json_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let json = take(json_len)?;
        let phoc = if json_len == 0 {
            None
        } else {
            Some(serde_json::from_slice(json).map_err(|e| malformed(e.to_string()))?)
        };
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut strings = Vec::with_capacity(2);
            for _ in 0..2 {
                let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
                let s = std::str::from_utf8(take(len)?).map_err(|e| malformed(e.to_string()))?;
                strings.push(s.to_owned());
            }
            let raw = take(dim.checked_mul(4).ok_or_else(truncated)?)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let transcription = strings.pop().unwrap();
            let id = strings.pop().unwrap();
            records.push(Prediction { id, transcription, vector });
        }
        if pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(PredictionSet { phoc, records })
    }
}

pub fn write_predictions(path: impl AsRef<Path>, set: &PredictionSet, format: PredictionFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        PredictionFormat::Tsv => set.to_tsv().into_bytes(),
        PredictionFormat::Binary => set.to_bytes(),
    };
    fs::write(path, bytes).map_err(|source| PredictionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads either encoding, chosen by the leading magic bytes.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PredictionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(MAGIC) {
        return PredictionSet::from_bytes(&bytes, path);
    }
    let text = std::str::from_utf8(&bytes).map_err(|e| PredictionError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    })?;
    PredictionSet::from_tsv(text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PredictionSet {
        PredictionSet {
            phoc: Some(PhocConfigRecord {
                alphabet: "abc".into(),
                unigram_levels: vec![2, 3],
                bigrams: vec!["ab".into()],
                bigram_levels: vec![2],
            }),
            records: vec![
                Prediction {
                    id: "s1".into(),
                    transcription: "ab".into(),
                    vector: vec![0.1, 1.0 / 3.0, 0.0, 1e-30],
                },
                Prediction {
                    id: "s2".into(),
                    transcription: "c".into(),
                    vector: vec![1.0, 0.5, f32::MIN_POSITIVE, 0.999_999_9],
                },
            ],
        }
    }

    #[test]
    fn both_encodings_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample();
        for (name, format) in [("p.tsv", PredictionFormat::Tsv), ("p.bin", PredictionFormat::Binary)] {
            let path = dir.path().join(name);
            write_predictions(&path, &set, format).unwrap();
            assert_eq!(read_predictions(&path).unwrap(), set);
        }
        let bare = PredictionSet { phoc: None, ..set };
        let path = dir.path().join("bare.tsv");
        write_predictions(&path, &bare, PredictionFormat::Tsv).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), bare);
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("x");
        assert!(matches!(
            PredictionSet::from_tsv("id\tword\n", p),
            Err(PredictionError::Malformed { line: 1, .. })
        ));
        let ragged = format!("{TSV_HEADER}\na\tb\t1 2\nc\td\t1\n");
        assert!(matches!(PredictionSet::from_tsv(&ragged, p), Err(PredictionError::Dimension { .. })));
        let bad = format!("{TSV_HEADER}\na\tb\t1 x\n");
        assert!(matches!(PredictionSet::from_tsv(&bad, p), Err(PredictionError::Malformed { line: 2, .. })));
        let bytes = sample().to_bytes();
        assert!(matches!(
            PredictionSet::from_bytes(&bytes[..bytes.len() - 1], p),
            Err(PredictionError::Truncated { .. })
        ));
    }
}
