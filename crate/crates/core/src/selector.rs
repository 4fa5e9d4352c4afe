//! Greedy MAP subset selection for determinantal point processes, plus
//! exhaustive oracles for verification.
//!
//! The unnormalized score of a subset C under kernel L is det(L_C). Adding
//! candidate i to a selected set C multiplies that determinant by the Schur
//! complement of the expanded principal submatrix,
//!
//! ```text
//!     gain(i | C) = L_ii - v_i^T L_C^{-1} v_i,
//! ```
//!
//! where v_i holds the kernel similarities between i and C. Maintaining the
//! Cholesky factor C_L of L_C turns the quadratic form into a triangular
//! solve: with C_L w_i = v_i, the gain is `L_ii - ‖w_i‖²`. Rather than
//! re-solving per step, every remaining candidate carries its coordinates
//! w_i and gain d_i² and both are updated incrementally when item j joins
//! the selection:
//!
//! ```text
//!     e_i = (L_ij - ⟨w_i, w_j⟩) / d_j,    w_i ← [w_i, e_i],    d_i² ← d_i² - e_i²
//! ```
//!
//! One inner product per candidate per step gives O(N k²) total work and
//! O(N k) memory, touching only the kernel diagonal plus one column per
//! selected item.
//!
//! Selection is deterministic: argmax ties break to the lowest candidate
//! index, and the per-candidate updates are independent, so results do not
//! depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseMatrix};
use crate::relevance::KernelSource;

/// Limit for exhaustive MAP enumeration.
pub const MAX_EXHAUSTIVE_N: usize = 20;

/// Cholesky pivots at or below this are treated as numerically singular.
pub const SINGULAR_PIVOT_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("invalid k = {k} for pool of size {n}")]
    InvalidK { k: usize, n: usize },
    #[error("eps must be a finite positive real, got {0}")]
    InvalidEps(f64),
    #[error("non-finite kernel entry at ({i}, {j})")]
    NonFiniteKernel { i: usize, j: usize },
    #[error("pool of size {n} exceeds exhaustive limit {max}")]
    TooLargeForExhaustive { n: usize, max: usize },
    #[error("duplicate index {index} in subset")]
    DuplicateIndex { index: usize },
    #[error("index {index} out of range for kernel of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Outcome of a greedy selection run.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// Selected pool indices, in selection order. No duplicates.
    pub selected: Vec<usize>,
    /// Per-step gain factors d² (each > the stopping floor), one per
    /// selected index, in order.
    pub gains: Vec<f64>,
    /// Σ log(gains): the log-determinant of the selected principal
    /// submatrix.
    pub log_det: f64,
    /// True when selection stopped before reaching `requested_k` because the
    /// best remaining gain fell to the floor.
    pub stopped_early: bool,
    pub requested_k: usize,
}

/// Per-step snapshots of the maintained lower-triangular factor, for
/// verification against from-scratch factorizations.
#[derive(Clone, Debug)]
pub struct GreedyTrace {
    /// `factors[m]` is the (m+1)-row lower-triangular factor of the selected
    /// principal submatrix after step m; row p has p+1 entries.
    pub factors: Vec<Vec<Vec<f64>>>,
}

/// Greedy MAP selection of up to `k` items under the kernel, stopping early
/// when the best remaining gain is ≤ `eps`.
pub fn greedy_select<K: KernelSource>(
    kernel: &K,
    k: usize,
    eps: f64,
) -> Result<SelectionResult, SelectError> {
    greedy_core(kernel, k, eps, false).map(|(result, _)| result)
}

/// [`greedy_select`] plus per-step factor snapshots. Intended for tests and
/// diagnostics; snapshots cost O(k³) extra memory.
pub fn greedy_select_traced<K: KernelSource>(
    kernel: &K,
    k: usize,
    eps: f64,
) -> Result<(SelectionResult, GreedyTrace), SelectError> {
    greedy_core(kernel, k, eps, true)
        .map(|(result, trace)| (result, trace.expect("trace requested")))
}

fn greedy_core<K: KernelSource>(
    kernel: &K,
    k: usize,
    eps: f64,
    traced: bool,
) -> Result<(SelectionResult, Option<GreedyTrace>), SelectError> {
    let n = kernel.len();
    if k == 0 || k > n {
        return Err(SelectError::InvalidK { k, n });
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(SelectError::InvalidEps(eps));
    }

    // d_i² starts at the diagonal entry; coordinates start empty.
    let mut gain: Vec<f64> = (0..n).into_par_iter().map(|i| kernel.entry(i, i)).collect();
    for (i, g) in gain.iter().enumerate() {
        if !g.is_finite() {
            return Err(SelectError::NonFiniteKernel { i, j: i });
        }
    }
    let mut coords = vec![0.0f64; n * k];
    let mut alive = vec![true; n];
    let mut selected = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut log_det = 0.0;
    let mut stopped_early = false;
    let mut trace = traced.then(|| GreedyTrace {
        factors: Vec::new(),
    });

    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if alive[i] {
                match best {
                    Some((_, g)) if gain[i] <= g => {}
                    _ => best = Some((i, gain[i])),
                }
            }
        }
        let (j, gj) = best.expect("k <= n leaves a live candidate");
        if gj <= eps {
            stopped_early = true;
            break;
        }
        let d = gj.sqrt();
        alive[j] = false;
        selected.push(j);
        gains.push(gj);
        log_det += gj.ln();

        if let Some(trace) = trace.as_mut() {
            let rows: Vec<Vec<f64>> = selected
                .iter()
                .enumerate()
                .map(|(s, &p)| {
                    let mut row = coords[p * k..p * k + s].to_vec();
                    row.push(gains[s].sqrt());
                    row
                })
                .collect();
            trace.factors.push(rows);
        }

        if selected.len() == k {
            break;
        }

        // Kernel column for the new item, then the incremental coordinate
        // and gain update for every remaining candidate.
        let col: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| if alive[i] { kernel.entry(i, j) } else { 0.0 })
            .collect();
        for (i, c) in col.iter().enumerate() {
            if alive[i] && !c.is_finite() {
                return Err(SelectError::NonFiniteKernel { i, j });
            }
        }
        let wj = coords[j * k..j * k + step].to_vec();
        coords
            .par_chunks_mut(k)
            .zip(gain.par_iter_mut())
            .zip(col.par_iter())
            .zip(alive.par_iter())
            .for_each(|(((wi, g), &c), &live)| {
                if live {
                    let e = (c - linalg::dot(&wi[..step], &wj)) / d;
                    wi[step] = e;
                    *g -= e * e;
                }
            });
    }

    Ok((
        SelectionResult {
            selected,
            gains,
            log_det,
            stopped_early,
            requested_k: k,
        },
        trace,
    ))
}

/// Log-determinant of the principal submatrix indexed by `subset`, via
/// Cholesky factorization. Returns `f64::NEG_INFINITY` when a pivot is at or
/// below [`SINGULAR_PIVOT_FLOOR`]. The empty subset has log-determinant 0.
pub fn subset_log_det(kernel: &DenseMatrix, subset: &[usize]) -> Result<f64, SelectError> {
    let n = kernel.n();
    let mut seen = vec![false; n];
    for &index in subset {
        if index >= n {
            return Err(SelectError::IndexOutOfRange { index, len: n });
        }
        if seen[index] {
            return Err(SelectError::DuplicateIndex { index });
        }
        seen[index] = true;
    }
    let sub = kernel.principal_submatrix(subset);
    Ok(sub
        .cholesky_log_det(SINGULAR_PIVOT_FLOOR)
        .unwrap_or(f64::NEG_INFINITY))
}

/// Exhaustive MAP: the size-`k` subset maximizing the determinant, found by
/// enumerating all C(n, k) subsets in lexicographic order. Ties keep the
/// lexicographically smallest index set. Guarded to n ≤ 20.
pub fn brute_force_map(kernel: &DenseMatrix, k: usize) -> Result<(Vec<usize>, f64), SelectError> {
    let n = kernel.n();
    if n > MAX_EXHAUSTIVE_N {
        return Err(SelectError::TooLargeForExhaustive {
            n,
            max: MAX_EXHAUSTIVE_N,
        });
    }
    if k == 0 || k > n {
        return Err(SelectError::InvalidK { k, n });
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best_subset = idx.clone();
    let mut best_log_det = subset_log_det(kernel, &idx)?;
    while advance_combination(&mut idx, n) {
        let ld = subset_log_det(kernel, &idx)?;
        if ld > best_log_det {
            best_log_det = ld;
            best_subset = idx.clone();
        }
    }
    Ok((best_subset, best_log_det))
}

/// Steps `idx` to the next k-combination of {0..n} in lexicographic order;
/// false when exhausted.
fn advance_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in (i + 1)..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// External document shape for a selection run: indices resolved to ids,
/// with the kernel exponent recorded.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SelectionDocument {
    pub selected_ids: Vec<String>,
    pub gains: Vec<f64>,
    pub log_det: f64,
    pub stopped_early: bool,
    pub k_requested: usize,
    pub beta: f64,
}

impl SelectionDocument {
    pub fn from_result(result: &SelectionResult, ids: &[String], beta: f64) -> Self {
        Self {
            selected_ids: result.selected.iter().map(|&i| ids[i].clone()).collect(),
            gains: result.gains.clone(),
            log_det: result.log_det,
            stopped_early: result.stopped_early,
            k_requested: result.requested_k,
            beta,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("selection document serializes")
    }
}
