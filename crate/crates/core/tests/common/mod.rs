//! Shared helpers for the integration suites: seeded kernel fixtures,
//! nalgebra bridges, and an iterative QP solver used as an independent
//! reference for the closed-form projection.
//!
//! Not every suite uses every helper.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spard_core::embedding::EmbeddingSet;
use spard_core::linalg::{dot, DenseMatrix};
use spard_core::relevance::{dense_kernel, KernelSource, RelevanceScores, WeightedKernelView};

/// Owns the pieces a [`WeightedKernelView`] borrows.
pub struct KernelFixture {
    pub pool: EmbeddingSet,
    pub scores: RelevanceScores,
    pub beta: f64,
}

impl KernelFixture {
    pub fn view(&self) -> WeightedKernelView<'_> {
        WeightedKernelView::new(&self.pool, &self.scores, self.beta).unwrap()
    }

    pub fn dense(&self) -> DenseMatrix {
        dense_kernel(&self.view()).unwrap()
    }

    /// The unweighted cosine Gram matrix of the pool.
    pub fn base_dense(&self) -> DenseMatrix {
        let uniform = RelevanceScores::uniform(self.pool.len());
        let view = WeightedKernelView::new(&self.pool, &uniform, 0.0).unwrap();
        dense_kernel(&view).unwrap()
    }
}

/// Random unit-vector pool with relevance scores drawn from `q_range`.
pub fn random_fixture(
    seed: u64,
    n: usize,
    d: usize,
    beta: f64,
    q_range: (f64, f64),
) -> KernelFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let pool = EmbeddingSet::new((0..n).map(|i| format!("p{i}")).collect(), rows)
        .unwrap()
        .normalized()
        .unwrap();
    let scores = RelevanceScores::new(
        (0..n)
            .map(|_| rng.random_range(q_range.0..q_range.1))
            .collect(),
    )
    .unwrap();
    KernelFixture { pool, scores, beta }
}

pub fn to_nalgebra(m: &DenseMatrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(m.n(), m.n(), |i, j| m.get(i, j))
}

/// Determinant of the principal submatrix ordered as `idx`, via nalgebra LU.
pub fn subset_det(m: &nalgebra::DMatrix<f64>, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    m.select_rows(idx.iter())
        .select_columns(idx.iter())
        .determinant()
}

/// A kernel scaled entrywise by a positive constant, for invariance checks.
pub struct ScaledKernel<'a, K: KernelSource> {
    pub inner: &'a K,
    pub factor: f64,
}

impl<K: KernelSource> KernelSource for ScaledKernel<'_, K> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.factor * self.inner.entry(i, j)
    }
}

/// Independent numerical solve of the projection program
///
/// ```text
///     minimize ‖θ − θ⁺‖²  subject to  ⟨g, θ − θ⁺⟩ ≤ bound
/// ```
///
/// by an augmented-Lagrangian loop: inner gradient descent on
/// `‖d‖² + (ρ/2)·max(0, λ/ρ + ⟨g,d⟩ − bound)² − λ²/(2ρ)` followed by a
/// multiplier update. Nothing here uses the closed-form solution.
pub fn alm_halfspace_projection(theta_plus: &[f64], g: &[f64], bound: f64) -> Vec<f64> {
    let dim = theta_plus.len();
    let g_norm_sq: f64 = dot(g, g);
    assert!(g_norm_sq > 0.0, "constraint gradient must be nonzero");
    let rho = 8.0 / g_norm_sq;
    let step = 0.9 / (2.0 + rho * g_norm_sq);
    let mut d = vec![0.0; dim];
    let mut lambda = 0.0;
    for _ in 0..200 {
        for _ in 0..400 {
            let slack = lambda / rho + dot(g, &d) - bound;
            let active = slack.max(0.0);
            let mut max_grad: f64 = 0.0;
            for j in 0..dim {
                let grad_j = 2.0 * d[j] + rho * active * g[j];
                d[j] -= step * grad_j;
                max_grad = max_grad.max(grad_j.abs());
            }
            if max_grad < 1e-12 {
                break;
            }
        }
        let violation = dot(g, &d) - bound;
        let new_lambda = (lambda + rho * violation).max(0.0);
        let converged = (new_lambda - lambda).abs() < 1e-12 && violation <= 1e-12;
        lambda = new_lambda;
        if converged {
            break;
        }
    }
    theta_plus.iter().zip(&d).map(|(t, di)| t + di).collect()
}

#[allow(dead_code)]
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
