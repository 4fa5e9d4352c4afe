//! Relevance scoring and the relevance-weighted similarity kernel.
//!
//! Each candidate in a pool gets a relevance score
//! `q_i = clamp(max_z cos(x_i, z), 0, 1)`, the best cosine similarity
//! against a reference set. The weighted kernel then damps the base cosine
//! Gram matrix entrywise:
//!
//! ```text
//!     entry(i, j) = (q_i * q_j)^beta * cos(x_i, x_j)
//! ```
//!
//! With unit relevance or `beta = 0` this is exactly the base kernel. The
//! induced dense matrix is `D L D` with `D = diag(q_i^beta)` nonnegative and
//! `L` a Gram matrix, hence positive semidefinite. Scores are clamped to
//! `[0, 1]` so the diagonal weight `q_i^{2beta}` stays nonnegative for real
//! exponents; a candidate with `q_i = 0` has a zero row and can never be
//! selected greedily.
//!
//! [`WeightedKernelView`] is a lazy accessor: greedy selection touches only
//! the diagonal plus one column per selected item, so the full N×N matrix is
//! materialized only for small-N oracle work ([`dense_kernel`]).

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingSet, ZERO_NORM_FLOOR};
use crate::linalg::{self, DenseMatrix};

/// Default cap on pool size for dense kernel materialization.
pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: pool dim {pool_dim} vs reference dim {ft_dim}")]
    DimensionMismatch { pool_dim: usize, ft_dim: usize },
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("index {index} out of range for pool of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("pool of size {len} exceeds dense cap {cap}")]
    PoolTooLarge { len: usize, cap: usize },
    #[error("scores length {scores} does not match pool size {pool}")]
    ScoresLengthMismatch { scores: usize, pool: usize },
    #[error("relevance score at index {index} is {value}, outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },
    #[error("beta must be a finite nonnegative real, got {0}")]
    InvalidBeta(f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed relevance record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

/// Cosine similarity `⟨a,b⟩ / (‖a‖‖b‖)`, clamped to `[-1, 1]` against
/// rounding. Errors when either vector has norm ≤ 1e-15.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64, KernelError> {
    let na = linalg::norm(a);
    let nb = linalg::norm(b);
    if na <= ZERO_NORM_FLOOR || nb <= ZERO_NORM_FLOOR {
        return Err(KernelError::ZeroVector);
    }
    Ok((linalg::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Per-candidate relevance scores in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceScores {
    q: Vec<f64>,
}

impl RelevanceScores {
    pub fn new(q: Vec<f64>) -> Result<Self, KernelError> {
        for (index, &value) in q.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(KernelError::ScoreOutOfRange { index, value });
            }
        }
        Ok(Self { q })
    }

    /// All-ones scores: the weighted kernel degenerates to the base kernel.
    pub fn uniform(n: usize) -> Self {
        Self { q: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.q[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }
}

/// Relevance of every pool candidate against a reference set:
/// `q_i = clamp(max_z cos(pool_i, ft_z), 0, 1)`.
///
/// Parallelized over pool rows; each score is produced by exactly one task,
/// so results are independent of thread count.
pub fn compute_relevance(
    pool: &EmbeddingSet,
    ft: &EmbeddingSet,
) -> Result<RelevanceScores, KernelError> {
    if pool.dim() != ft.dim() {
        return Err(KernelError::DimensionMismatch {
            pool_dim: pool.dim(),
            ft_dim: ft.dim(),
        });
    }
    if ft.is_empty() {
        return Err(KernelError::EmptyReferenceSet);
    }
    let q: Vec<Result<f64, KernelError>> = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let row = pool.row(i);
            let mut best = f64::NEG_INFINITY;
            for z in ft.rows() {
                let s = cosine_sim(row, z)?;
                if s > best {
                    best = s;
                }
            }
            Ok(best.clamp(0.0, 1.0))
        })
        .collect();
    let q = q.into_iter().collect::<Result<Vec<f64>, _>>()?;
    RelevanceScores::new(q)
}

/// Abstract symmetric kernel: a size plus an entry accessor. The greedy
/// selector and the dense oracles both run against this.
pub trait KernelSource: Sync {
    fn len(&self) -> usize;
    fn entry(&self, i: usize, j: usize) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl KernelSource for DenseMatrix {
    fn len(&self) -> usize {
        self.n()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

/// Lazy accessor for the relevance-weighted kernel
/// `(q_i q_j)^beta * cos(x_i, x_j)`.
pub struct WeightedKernelView<'a> {
    pool: &'a EmbeddingSet,
    scores: &'a RelevanceScores,
    beta: f64,
    inv_norms: Vec<f64>,
}

impl<'a> WeightedKernelView<'a> {
    /// Validates score length against the pool, beta ≥ 0 finite, and that no
    /// pool row is a zero vector (the base kernel is cosine similarity).
    pub fn new(
        pool: &'a EmbeddingSet,
        scores: &'a RelevanceScores,
        beta: f64,
    ) -> Result<Self, KernelError> {
        if scores.len() != pool.len() {
            return Err(KernelError::ScoresLengthMismatch {
                scores: scores.len(),
                pool: pool.len(),
            });
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(KernelError::InvalidBeta(beta));
        }
        let mut inv_norms = Vec::with_capacity(pool.len());
        for row in pool.rows() {
            let n = linalg::norm(row);
            if n <= ZERO_NORM_FLOOR {
                return Err(KernelError::ZeroVector);
            }
            inv_norms.push(1.0 / n);
        }
        Ok(Self {
            pool,
            scores,
            beta,
            inv_norms,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn pool(&self) -> &EmbeddingSet {
        self.pool
    }

    pub fn scores(&self) -> &RelevanceScores {
        self.scores
    }

    /// Bounds-checked entry accessor.
    pub fn checked_entry(&self, i: usize, j: usize) -> Result<f64, KernelError> {
        let n = self.pool.len();
        for index in [i, j] {
            if index >= n {
                return Err(KernelError::IndexOutOfRange { index, len: n });
            }
        }
        Ok(self.entry(i, j))
    }
}

impl KernelSource for WeightedKernelView<'_> {
    fn len(&self) -> usize {
        self.pool.len()
    }

    /// `(q_i q_j)^beta * cos(x_i, x_j)`, evaluated on the canonical ordered
    /// pair (lo, hi) so entry(i, j) and entry(j, i) are the same computation.
    fn entry(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let base = linalg::dot(self.pool.row(lo), self.pool.row(hi))
            * self.inv_norms[lo]
            * self.inv_norms[hi];
        let base = base.clamp(-1.0, 1.0);
        let weight = (self.scores.get(lo) * self.scores.get(hi)).powf(self.beta);
        weight * base
    }
}

/// Materializes the full weighted kernel matrix; refuses pools larger than
/// [`DEFAULT_DENSE_CAP`]. Rows are filled in parallel, one writer per row.
pub fn dense_kernel(view: &WeightedKernelView<'_>) -> Result<DenseMatrix, KernelError> {
    dense_kernel_capped(view, DEFAULT_DENSE_CAP)
}

pub fn dense_kernel_capped(
    view: &WeightedKernelView<'_>,
    cap: usize,
) -> Result<DenseMatrix, KernelError> {
    let n = view.len();
    if n > cap {
        return Err(KernelError::PoolTooLarge { len: n, cap });
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| view.entry(i, j)).collect())
        .collect();
    Ok(DenseMatrix::from_rows(&rows))
}

#[derive(Serialize, Deserialize)]
struct RelevanceRecord {
    id: String,
    q: f64,
}

/// Writes relevance scores as jsonl `{"id": ..., "q": ...}`, in pool order.
pub fn write_relevance_jsonl(
    ids: &[String],
    scores: &RelevanceScores,
    path: &Path,
) -> Result<(), KernelError> {
    assert_eq!(ids.len(), scores.len(), "one id per score");
    let body = relevance_jsonl_string(ids, scores);
    let mut file = File::create(path).map_err(|source| KernelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(body.as_bytes())
        .map_err(|source| KernelError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// The exact byte content [`write_relevance_jsonl`] produces.
pub fn relevance_jsonl_string(ids: &[String], scores: &RelevanceScores) -> String {
    let mut out = String::new();
    for (id, &q) in ids.iter().zip(scores.as_slice()) {
        let rec = RelevanceRecord { id: id.clone(), q };
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&rec).expect("relevance record serializes")
        );
    }
    out
}

/// Reads relevance scores written by [`write_relevance_jsonl`].
pub fn read_relevance_jsonl(path: &Path) -> Result<(Vec<String>, RelevanceScores), KernelError> {
    let reader = BufReader::new(File::open(path).map_err(|source| KernelError::Io {
        path: path.display().to_string(),
        source,
    })?);
    let mut ids = Vec::new();
    let mut q = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| KernelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RelevanceRecord =
            serde_json::from_str(&line).map_err(|e| KernelError::MalformedRecord {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        ids.push(rec.id);
        q.push(rec.q);
    }
    Ok((ids, RelevanceScores::new(q)?))
}
