//! Embedding ingestion: loading, validating, and preprocessing fixed-width
//! vector data from jsonl and csv files.
//!
//! An [`EmbeddingSet`] is an id-keyed N×d matrix of finite 64-bit reals with
//! unique ids. Token-level hidden states ([`TokenStates`]) are a ragged
//! companion format that is reduced to one vector per record by mean pooling
//! over token positions: `pooled[j] = (1/T) Σ_t states[t][j]`.
//!
//! Unit normalization is applied at ingestion by callers that need a cosine
//! Gram base kernel; the set itself does not force it.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms at or below this are treated as zero vectors.
pub const ZERO_NORM_FLOOR: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("dimension mismatch for id {id:?}: expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
    #[error("file contains no records")]
    EmptyFile,
    #[error("zero vector: {context}")]
    ZeroVector { context: String },
    #[error("non-finite component in {context}")]
    NonFinite { context: String },
}

/// Identified collection of fixed-dimension embedding vectors.
///
/// Invariants, enforced at construction: all rows share one dimension d ≥ 1,
/// ids are unique and one per row, and every component is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, IngestError> {
        if ids.len() != rows.len() {
            return Err(IngestError::MalformedRecord {
                line: 0,
                message: format!("{} ids vs {} rows", ids.len(), rows.len()),
            });
        }
        if rows.is_empty() {
            return Err(IngestError::EmptyFile);
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(IngestError::DimensionMismatch {
                id: ids[0].clone(),
                expected: 1,
                found: 0,
            });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != dim {
                return Err(IngestError::DimensionMismatch {
                    id: id.clone(),
                    expected: dim,
                    found: row.len(),
                });
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(IngestError::NonFinite {
                    context: format!("embedding {id:?}"),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(IngestError::DuplicateId { id: id.clone() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { ids, data, dim })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Returns a copy with every row scaled to unit Euclidean length.
    pub fn normalized(&self) -> Result<EmbeddingSet, IngestError> {
        let mut data = Vec::with_capacity(self.data.len());
        for (id, row) in self.ids.iter().zip(self.rows()) {
            let n = crate::linalg::norm(row);
            if n <= ZERO_NORM_FLOOR {
                return Err(IngestError::ZeroVector {
                    context: format!("embedding {id:?}"),
                });
            }
            data.extend(row.iter().map(|v| v / n));
        }
        Ok(EmbeddingSet {
            ids: self.ids.clone(),
            data,
            dim: self.dim,
        })
    }

    /// True when every row has unit norm within `tol`.
    pub fn is_unit_normalized(&self, tol: f64) -> bool {
        self.rows()
            .all(|r| (crate::linalg::norm(r) - 1.0).abs() <= tol)
    }

    /// Uniform subsample of `cap` rows without replacement, seeded; rows
    /// keep their original relative order. Returns a clone when the set
    /// already fits the cap.
    pub fn subsample(&self, cap: usize, seed: u64) -> EmbeddingSet {
        use rand::{Rng, SeedableRng};
        assert!(cap >= 1, "cap must be >= 1");
        if self.len() <= cap {
            return self.clone();
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        for i in 0..cap {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        let mut picked = idx[..cap].to_vec();
        picked.sort_unstable();
        let ids = picked.iter().map(|&i| self.ids[i].clone()).collect();
        let rows = picked.iter().map(|&i| self.row(i).to_vec()).collect();
        EmbeddingSet::new(ids, rows).expect("subsample of a valid set is valid")
    }
}

/// Token-level hidden states for one record: a T×d matrix, T ≥ 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStates {
    data: Vec<f64>,
    tokens: usize,
    dim: usize,
}

impl TokenStates {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, IngestError> {
        if rows.is_empty() {
            return Err(IngestError::MalformedRecord {
                line: 0,
                message: "token states require T >= 1".into(),
            });
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(IngestError::MalformedRecord {
                line: 0,
                message: "token states require d >= 1".into(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(IngestError::DimensionMismatch {
                    id: String::new(),
                    expected: dim,
                    found: row.len(),
                });
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(IngestError::NonFinite {
                    context: "token states".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            data,
            tokens: rows.len(),
            dim,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Mean over token positions: `out[j] = (1/T) Σ_t states[t][j]`.
pub fn mean_pool(ts: &TokenStates) -> Vec<f64> {
    let mut out = vec![0.0; ts.dim()];
    for t in 0..ts.tokens() {
        for (o, v) in out.iter_mut().zip(ts.row(t)) {
            *o += v;
        }
    }
    let inv = 1.0 / ts.tokens() as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}

/// Scales `v` to unit Euclidean length. Errors when ‖v‖ ≤ 1e-15.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>, IngestError> {
    let n = crate::linalg::norm(v);
    if n <= ZERO_NORM_FLOOR {
        return Err(IngestError::ZeroVector {
            context: "input vector".into(),
        });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// On-disk embedding formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// One `{"id": ..., "embedding": [...]}` object per line.
    Jsonl,
    /// Header `id,e0,e1,...,e{d-1}`, one row per vector.
    Csv,
    /// One `{"id": ..., "token_states": [[...], ...]}` object per line;
    /// mean pooling is applied at load.
    TokensJsonl,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct TokenStatesRecord {
    id: String,
    token_states: Vec<Vec<f64>>,
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads an [`EmbeddingSet`] from `path` in the declared format. Row order
/// follows file order. Line numbers in errors are 1-based.
pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingSet, IngestError> {
    match format {
        Format::Jsonl => load_jsonl(path),
        Format::Csv => load_csv(path),
        Format::TokensJsonl => load_tokens_jsonl(path),
    }
}

fn load_jsonl(path: &Path) -> Result<EmbeddingSet, IngestError> {
    let reader = BufReader::new(open(path)?);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if !rec.embedding.iter().all(|v| v.is_finite()) {
            return Err(IngestError::MalformedRecord {
                line: lineno + 1,
                message: "non-finite embedding component".into(),
            });
        }
        ids.push(rec.id);
        rows.push(rec.embedding);
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    EmbeddingSet::new(ids, rows)
}

fn load_tokens_jsonl(path: &Path) -> Result<EmbeddingSet, IngestError> {
    let reader = BufReader::new(open(path)?);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenStatesRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        let ts = TokenStates::new(rec.token_states).map_err(|e| match e {
            IngestError::DimensionMismatch {
                expected, found, ..
            } => IngestError::DimensionMismatch {
                id: rec.id.clone(),
                expected,
                found,
            },
            IngestError::MalformedRecord { message, .. } => IngestError::MalformedRecord {
                line: lineno + 1,
                message,
            },
            IngestError::NonFinite { .. } => IngestError::MalformedRecord {
                line: lineno + 1,
                message: "non-finite token state".into(),
            },
            other => other,
        })?;
        ids.push(rec.id);
        rows.push(mean_pool(&ts));
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    EmbeddingSet::new(ids, rows)
}

fn load_csv(path: &Path) -> Result<EmbeddingSet, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(open(path)?);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedRecord {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("id") {
        if headers.is_empty() || (headers.len() == 1 && headers.get(0) == Some("")) {
            return Err(IngestError::EmptyFile);
        }
        return Err(IngestError::MalformedRecord {
            line: 1,
            message: "csv header must be id,e0,e1,...".into(),
        });
    }
    let dim = headers.len() - 1;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (recno, record) in reader.records().enumerate() {
        let lineno = recno + 2; // header is line 1
        let record = record.map_err(|e| IngestError::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        let id = record
            .get(0)
            .ok_or_else(|| IngestError::MalformedRecord {
                line: lineno,
                message: "missing id field".into(),
            })?
            .to_string();
        if record.len() != dim + 1 {
            return Err(IngestError::DimensionMismatch {
                id,
                expected: dim,
                found: record.len() - 1,
            });
        }
        let mut row = Vec::with_capacity(dim);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| IngestError::MalformedRecord {
                    line: lineno,
                    message: format!("cannot parse {field:?} as a number"),
                })?;
            if !v.is_finite() {
                return Err(IngestError::MalformedRecord {
                    line: lineno,
                    message: "non-finite embedding component".into(),
                });
            }
            row.push(v);
        }
        ids.push(id);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    EmbeddingSet::new(ids, rows)
}

/// Serializes the set as jsonl, one record per row, in row order. Numbers
/// round-trip bit-exactly through [`load_embeddings`] with [`Format::Jsonl`].
pub fn save_embeddings_jsonl(set: &EmbeddingSet, path: &Path) -> Result<(), IngestError> {
    let mut out = String::new();
    for (id, row) in set.ids().iter().zip(set.rows()) {
        let rec = EmbeddingRecord {
            id: id.clone(),
            embedding: row.to_vec(),
        };
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&rec).expect("embedding record serializes")
        );
    }
    let mut file = File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(out.as_bytes())
        .map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_temp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_two_rows_loads() {
        let f = write_temp(
            "{\"id\":\"a\",\"embedding\":[1.0,2.0,3.0]}\n{\"id\":\"b\",\"embedding\":[4.0,5.0,6.0]}\n",
            ".jsonl",
        );
        let set = load_embeddings(f.path(), Format::Jsonl).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.dim(), 3);
        assert_eq!(set.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(set.ids(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn mixed_dims_report_first_offender() {
        let f = write_temp(
            "{\"id\":\"a\",\"embedding\":[1,2,3]}\n{\"id\":\"bad\",\"embedding\":[1,2,3,4]}\n",
            ".jsonl",
        );
        match load_embeddings(f.path(), Format::Jsonl) {
            Err(IngestError::DimensionMismatch {
                id,
                expected,
                found,
            }) => {
                assert_eq!(id, "bad");
                assert_eq!((expected, found), (3, 4));
            }
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("", ".jsonl");
        assert!(matches!(
            load_embeddings(f.path(), Format::Jsonl),
            Err(IngestError::EmptyFile)
        ));
        let f = write_temp("id,e0,e1\n", ".csv");
        assert!(matches!(
            load_embeddings(f.path(), Format::Csv),
            Err(IngestError::EmptyFile)
        ));
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let f = write_temp(
            "{\"id\":\"a\",\"embedding\":[1,2]}\n{\"id\":\"a\",\"embedding\":[3,4]}\n",
            ".jsonl",
        );
        assert!(matches!(
            load_embeddings(f.path(), Format::Jsonl),
            Err(IngestError::DuplicateId { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_temp("{\"id\":\"a\",\"embedding\":[1,2]}\nnot json\n", ".jsonl");
        match load_embeddings(f.path(), Format::Jsonl) {
            Err(IngestError::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trips_values() {
        let f = write_temp("id,e0,e1\nx,0.5,-1.25\ny,3.0,4.0\n", ".csv");
        let set = load_embeddings(f.path(), Format::Csv).unwrap();
        assert_eq!(set.dim(), 2);
        assert_eq!(set.row(0), &[0.5, -1.25]);
        assert_eq!(set.id(1), "y");
    }

    #[test]
    fn csv_rejects_non_finite() {
        let f = write_temp("id,e0\nx,NaN\n", ".csv");
        assert!(matches!(
            load_embeddings(f.path(), Format::Csv),
            Err(IngestError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn tokens_jsonl_mean_pools_at_load() {
        let f = write_temp(
            "{\"id\":\"a\",\"token_states\":[[0.0,0.0],[2.0,2.0]]}\n",
            ".jsonl",
        );
        let set = load_embeddings(f.path(), Format::TokensJsonl).unwrap();
        assert_eq!(set.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn mean_pool_single_token_is_identity() {
        let ts = TokenStates::new(vec![vec![2.0, 4.0]]).unwrap();
        assert_eq!(mean_pool(&ts), vec![2.0, 4.0]);
    }

    #[test]
    fn mean_pool_symmetric_average() {
        let ts = TokenStates::new(vec![vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(mean_pool(&ts), vec![1.0, 1.0]);
    }

    #[test]
    fn mean_pool_matches_column_sum_oracle() {
        // Independent oracle: per-column summation with a separately
        // accumulated running total, divided once at the end.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let ts = TokenStates::new(rows.clone()).unwrap();
        let pooled = mean_pool(&ts);
        for j in 0..8 {
            let mut col_sum = 0.0;
            for row in &rows {
                col_sum += row[j];
            }
            let expected = col_sum / 5.0;
            assert!((pooled[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_three_four_five() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn normalize_unit_vector_is_identity() {
        let v = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_vector_errors() {
        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(IngestError::ZeroVector { .. })
        ));
    }

    #[test]
    fn subsample_is_deterministic_and_order_preserving() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let ids = (0..10).map(|i| format!("v{i}")).collect();
        let set = EmbeddingSet::new(ids, rows).unwrap();
        let a = set.subsample(4, 7);
        let b = set.subsample(4, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        // Ids keep the original relative order.
        let positions: Vec<usize> = a
            .ids()
            .iter()
            .map(|id| set.ids().iter().position(|s| s == id).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        // A cap at or above the size is a no-op.
        assert_eq!(set.subsample(10, 7), set);
        assert_ne!(set.subsample(4, 8), a);
    }

    #[test]
    fn normalized_set_has_unit_rows() {
        let set = EmbeddingSet::new(
            vec!["a".into(), "b".into()],
            vec![vec![3.0, 4.0], vec![0.0, 2.0]],
        )
        .unwrap();
        let unit = set.normalized().unwrap();
        assert!(unit.is_unit_normalized(1e-12));
        assert_eq!(unit.row(0), &[0.6, 0.8]);
    }
}
