//! Desk-scale benchmark problems and the comparison harness.
//!
//! Two problem families:
//!
//! * Seeded constrained quadratics whose constrained optimum has an exact
//!   solution via the stationarity system `(A_u + μ A_s) θ = b_u + μ b_s`
//!   with the multiplier pinned by a feasibility root-find. The generator
//!   guarantees the unconstrained utility optimum violates the safety
//!   constraint, so plain descent always ends infeasible while the
//!   projected optimizer must not.
//!
//! * A poisoned logistic-regression scenario: clean two-blob data plus a
//!   fraction of label-flipped points injected near the positive class,
//!   and a candidate pool of correctly-labeled "safe" points (a contested
//!   region near the decision boundary plus easy far-field background).
//!   Features double as embeddings, so the full select→train pipeline can
//!   run against files on disk.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::embedding::{load_embeddings, save_embeddings_jsonl, EmbeddingSet, Format, IngestError};
use crate::linalg::{self, DenseMatrix};
use crate::relevance::{compute_relevance, KernelError, WeightedKernelView};
use crate::selector::{greedy_select, SelectError, SelectionResult};
use crate::spag::{
    derive_seed, penalty_train, spag_train, LossOracle, ParamVector, SpagConfig, SpagError,
    TrainReport,
};

/// Default safety threshold for generated quadratics.
pub const DEFAULT_QUADRATIC_TAU: f64 = 0.2;

/// Safety-loss excess of the unconstrained optimum over τ, built into every
/// generated quadratic. Kept moderate so the utility gradient at the
/// constrained optimum stays below the safety gradient there (multiplier
/// < 1): the projected optimizer then settles in the unclamped regime,
/// where its steady-state constraint violation is second order in the step
/// size instead of η·‖g‖².
pub const INFEASIBILITY_GAP: f64 = 0.15;

/// Feasibility slack used in comparison tables.
pub const FEASIBILITY_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Spag(#[from] SpagError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Constrained quadratics
// ---------------------------------------------------------------------------

/// Utility quadratic `½θᵀA_uθ − b_uᵀθ` (A_u positive definite) constrained by
/// the safety quadratic `½θᵀA_sθ − b_sᵀθ + c_s ≤ τ` (A_s positive
/// semidefinite, feasible set nonempty by construction).
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    pub a_u: DenseMatrix,
    pub b_u: Vec<f64>,
    pub a_s: DenseMatrix,
    pub b_s: Vec<f64>,
    pub c_s: f64,
    pub tau: f64,
}

impl QuadraticProblem {
    pub fn dim(&self) -> usize {
        self.b_u.len()
    }

    pub fn utility_loss(&self, theta: &[f64]) -> f64 {
        0.5 * linalg::dot(theta, &self.a_u.matvec(theta)) - linalg::dot(&self.b_u, theta)
    }

    pub fn utility_grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = self.a_u.matvec(theta);
        for (gj, bj) in g.iter_mut().zip(&self.b_u) {
            *gj -= bj;
        }
        g
    }

    pub fn safety_loss(&self, theta: &[f64]) -> f64 {
        0.5 * linalg::dot(theta, &self.a_s.matvec(theta)) - linalg::dot(&self.b_s, theta) + self.c_s
    }

    pub fn safety_grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = self.a_s.matvec(theta);
        for (gj, bj) in g.iter_mut().zip(&self.b_s) {
            *gj -= bj;
        }
        g
    }

    pub fn utility_oracle(&self) -> QuadraticUtility<'_> {
        QuadraticUtility(self)
    }

    pub fn safety_oracle(&self) -> QuadraticSafety<'_> {
        QuadraticSafety(self)
    }

    /// Exact constrained optimum. If the unconstrained utility minimizer is
    /// feasible it is returned as-is; otherwise the active-constraint
    /// multiplier is isolated by bisection on the stationarity system
    /// `(A_u + μ A_s) θ(μ) = b_u + μ b_s`, whose safety loss decreases
    /// monotonically in μ toward the safety minimum.
    pub fn solve_analytic(&self) -> AnalyticSolution {
        let unconstrained = self
            .a_u
            .solve_spd(&self.b_u)
            .expect("utility quadratic is positive definite");
        let unconstrained_safety = self.safety_loss(&unconstrained);
        if unconstrained_safety <= self.tau {
            let utility = self.utility_loss(&unconstrained);
            return AnalyticSolution {
                constrained: unconstrained.clone(),
                unconstrained,
                multiplier: 0.0,
                constrained_utility_loss: utility,
                constrained_safety_loss: unconstrained_safety,
                constraint_active: false,
            };
        }

        let solve_for = |mu: f64| -> Vec<f64> {
            let n = self.dim();
            let mut m = DenseMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    m.set(i, j, self.a_u.get(i, j) + mu * self.a_s.get(i, j));
                }
            }
            let rhs: Vec<f64> = self
                .b_u
                .iter()
                .zip(&self.b_s)
                .map(|(u, s)| u + mu * s)
                .collect();
            m.solve_spd(&rhs)
                .expect("A_u + mu A_s is positive definite")
        };

        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.safety_loss(&solve_for(hi)) > self.tau {
            hi *= 2.0;
            assert!(hi < 1e18, "multiplier bracket failed to close");
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.safety_loss(&solve_for(mid)) > self.tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let multiplier = 0.5 * (lo + hi);
        let constrained = solve_for(multiplier);
        AnalyticSolution {
            constrained_utility_loss: self.utility_loss(&constrained),
            constrained_safety_loss: self.safety_loss(&constrained),
            unconstrained,
            constrained,
            multiplier,
            constraint_active: true,
        }
    }
}

/// Closed-form reference solution for a [`QuadraticProblem`].
#[derive(Clone, Debug)]
pub struct AnalyticSolution {
    pub unconstrained: Vec<f64>,
    pub constrained: Vec<f64>,
    pub multiplier: f64,
    pub constrained_utility_loss: f64,
    pub constrained_safety_loss: f64,
    pub constraint_active: bool,
}

pub struct QuadraticUtility<'a>(&'a QuadraticProblem);

impl LossOracle for QuadraticUtility<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn loss(&self, theta: &[f64], _seed: u64) -> Result<f64, SpagError> {
        Ok(self.0.utility_loss(theta))
    }

    fn grad(&self, theta: &[f64], _seed: u64) -> Result<Vec<f64>, SpagError> {
        Ok(self.0.utility_grad(theta))
    }
}

pub struct QuadraticSafety<'a>(&'a QuadraticProblem);

impl LossOracle for QuadraticSafety<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn loss(&self, theta: &[f64], _seed: u64) -> Result<f64, SpagError> {
        Ok(self.0.safety_loss(theta))
    }

    fn grad(&self, theta: &[f64], _seed: u64) -> Result<Vec<f64>, SpagError> {
        Ok(self.0.safety_grad(theta))
    }
}

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
        .collect();
    // G Gᵀ / dim + 0.5 I: eigenvalues in roughly [0.5, 4.5].
    let mut m = DenseMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            let mut v = linalg::dot(&rows[i], &rows[j]) / dim as f64;
            if i == j {
                v += 0.5;
            }
            m.set(i, j, v);
        }
    }
    m
}

/// Seeded constrained-quadratic generator with τ = 0.2.
pub fn make_quadratic(dim: usize, seed: u64) -> (QuadraticProblem, AnalyticSolution) {
    make_quadratic_with_tau(dim, seed, DEFAULT_QUADRATIC_TAU)
}

/// Generator core: builds an instance whose unconstrained utility optimum
/// has safety loss exactly τ + [`INFEASIBILITY_GAP`], with the safety
/// minimum at 0 (feasible set nonempty). Instances whose constrained-optimum
/// utility magnitude is below 0.5 are re-rolled deterministically so
/// relative comparisons against the optimum stay well-posed.
pub fn make_quadratic_with_tau(
    dim: usize,
    seed: u64,
    tau: f64,
) -> (QuadraticProblem, AnalyticSolution) {
    assert!(dim >= 1, "dim must be >= 1");
    assert!(tau.is_finite() && tau > 0.0, "tau must be positive");
    for attempt in 0..64u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x71AD ^ attempt));
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a_u = random_spd(dim, &mut rng);
        let m_u: Vec<f64> = (0..dim).map(|_| 1.5 * normal.sample(&mut rng)).collect();
        let b_u = a_u.matvec(&m_u);
        let a_s = random_spd(dim, &mut rng);
        let dir: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let dir_norm = linalg::norm(&dir);
        if dir_norm < 1e-9 {
            continue;
        }
        let unit: Vec<f64> = dir.iter().map(|v| v / dir_norm).collect();
        let curvature = linalg::dot(&unit, &a_s.matvec(&unit));
        let radius = (2.0 * (tau + INFEASIBILITY_GAP) / curvature).sqrt();
        let m_s: Vec<f64> = m_u.iter().zip(&unit).map(|(m, u)| m - radius * u).collect();
        let b_s = a_s.matvec(&m_s);
        let c_s = 0.5 * linalg::dot(&m_s, &a_s.matvec(&m_s));
        let problem = QuadraticProblem {
            a_u,
            b_u,
            a_s,
            b_s,
            c_s,
            tau,
        };
        let solution = problem.solve_analytic();
        // Usable instance: active constraint, a utility optimum whose
        // magnitude supports relative comparisons, and a multiplier safely
        // inside the unclamped regime (α* = η·μ* < η_safe).
        if solution.constraint_active
            && solution.constrained_utility_loss.abs() >= 0.5
            && solution.multiplier <= 0.7
        {
            return (problem, solution);
        }
    }
    unreachable!("quadratic generator failed to produce a usable instance");
}

/// Defaults used by the quadratic benchmark runs.
pub fn default_quadratic_config(tau: f64, seed: u64) -> SpagConfig {
    SpagConfig {
        eta_ft: 1e-2,
        tau,
        eta_safe: 1e-2,
        max_steps: 5000,
        seed,
    }
}

// ---------------------------------------------------------------------------
// Poisoned logistic regression
// ---------------------------------------------------------------------------

/// A 2-d feature vector with a binary label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub x: [f64; 2],
    pub label: u8,
}

/// Synthetic poisoned classification task. The true rule is
/// `label = (x₀ > 0)`; poison points are label-flipped samples planted in
/// the positive region. The safe pool mixes a contested band near the
/// boundary (where the poison does its damage) with easy far-field
/// background points.
#[derive(Clone, Debug)]
pub struct PoisonedDataset {
    pub clean_points: Vec<LabeledPoint>,
    pub poison_points: Vec<LabeledPoint>,
    pub safe_pool: Vec<LabeledPoint>,
    pub poison_fraction: f64,
}

impl PoisonedDataset {
    /// Fine-tuning set: clean followed by poison, in generation order.
    pub fn ft_points(&self) -> Vec<LabeledPoint> {
        let mut out = self.clean_points.clone();
        out.extend_from_slice(&self.poison_points);
        out
    }
}

/// Generated scenario plus the file artifacts the selection pipeline reads.
#[derive(Clone, Debug)]
pub struct PoisonedScenario {
    pub dataset: PoisonedDataset,
    pub pool_path: PathBuf,
    pub ft_path: PathBuf,
    /// "Aligned" initial parameters: fit on clean data only.
    pub theta0: ParamVector,
    /// Mean safety loss of `theta0` over the full safe pool.
    pub tau: f64,
}

/// Logistic-regression loss oracle over fixed points, with seed-selected
/// mini-batches (`batch_size = None` means full batch). Features are
/// augmented with a trailing bias component.
pub struct LogisticOracle {
    features: Vec<[f64; 3]>,
    labels: Vec<f64>,
    batch_size: Option<usize>,
}

impl LogisticOracle {
    pub fn new(points: &[LabeledPoint], batch_size: Option<usize>) -> Self {
        let features = points.iter().map(|p| [p.x[0], p.x[1], 1.0]).collect();
        let labels = points.iter().map(|p| f64::from(p.label)).collect();
        Self {
            features,
            labels,
            batch_size,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, seed: u64) -> Vec<usize> {
        match self.batch_size {
            None => (0..self.len()).collect(),
            Some(b) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..b).map(|_| rng.random_range(0..self.len())).collect()
            }
        }
    }

    fn point_loss(&self, theta: &[f64], i: usize) -> f64 {
        let z = linalg::dot(theta, &self.features[i]);
        softplus(z) - self.labels[i] * z
    }

    /// Mean loss over all points, independent of batching.
    pub fn mean_loss(&self, theta: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| self.point_loss(theta, i))
            .sum::<f64>()
            / self.len() as f64
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossOracle for LogisticOracle {
    fn dim(&self) -> usize {
        3
    }

    fn loss(&self, theta: &[f64], batch_seed: u64) -> Result<f64, SpagError> {
        let batch = self.batch(batch_seed);
        Ok(batch
            .iter()
            .map(|&i| self.point_loss(theta, i))
            .sum::<f64>()
            / batch.len() as f64)
    }

    fn grad(&self, theta: &[f64], batch_seed: u64) -> Result<Vec<f64>, SpagError> {
        let batch = self.batch(batch_seed);
        let mut g = vec![0.0; 3];
        for &i in &batch {
            let z = linalg::dot(theta, &self.features[i]);
            let r = sigmoid(z) - self.labels[i];
            for (gj, xj) in g.iter_mut().zip(&self.features[i]) {
                *gj += r * xj;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for gj in &mut g {
            *gj *= inv;
        }
        Ok(g)
    }
}

fn gaussian_blob(
    rng: &mut ChaCha8Rng,
    count: usize,
    center: [f64; 2],
    sigma: f64,
    label: u8,
) -> Vec<LabeledPoint> {
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..count)
        .map(|_| LabeledPoint {
            x: [
                center[0] + normal.sample(rng),
                center[1] + normal.sample(rng),
            ],
            label,
        })
        .collect()
}

fn embedding_file(points: &[LabeledPoint], prefix: &str, path: &Path) -> Result<(), BenchError> {
    let ids = (0..points.len())
        .map(|i| format!("{prefix}-{i:04}"))
        .collect();
    let rows = points.iter().map(|p| p.x.to_vec()).collect();
    let set = EmbeddingSet::new(ids, rows)?;
    save_embeddings_jsonl(&set, path)?;
    Ok(())
}

/// Generates the poisoned scenario, fits the aligned initial model on clean
/// data, sets τ from its mean loss over the safe pool, and writes
/// `pool.jsonl` / `ft.jsonl` under `work_dir`.
pub fn make_poisoned_logreg(seed: u64, work_dir: &Path) -> Result<PoisonedScenario, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x10C4));
    let poison_fraction = 0.10;
    // 2-d features give the cosine kernel rank 2, so diverse selection can
    // produce at most two items with positive gain. The fine-tuning set is
    // sized so the default p = 0.03 asks for exactly k = 2.
    let clean_per_class = 30;

    let mut clean = gaussian_blob(&mut rng, clean_per_class, [-1.8, 0.0], 0.35, 0);
    clean.extend(gaussian_blob(
        &mut rng,
        clean_per_class,
        [1.8, 0.0],
        0.35,
        1,
    ));
    let n_poison = ((2 * clean_per_class) as f64 * poison_fraction).round() as usize;
    // A two-pronged attack: label-flipped points planted at ±40° inside the
    // positive class region. The fine-tuning set contains no correct labels
    // in either prong, so only safety corrections can counter the flip.
    let half = n_poison / 2;
    let mut poison = gaussian_blob(&mut rng, half, [1.226, 1.028], 0.25, 0);
    poison.extend(gaussian_blob(
        &mut rng,
        n_poison - half,
        [1.226, -1.028],
        0.25,
        0,
    ));

    // Safe pool: correctly-labeled points on both attack prongs plus
    // off-axis background that any reasonable model classifies with a wide
    // margin. Prongs sit 80° apart at radius 2 so cross-prong pairs are far
    // more diverse (cos ≈ 0.17) than pairs inside one prong (cos ≥ 0.9).
    let mut safe_pool = Vec::new();
    safe_pool.extend(gaussian_blob(&mut rng, 45, [1.532, 1.286], 0.15, 1));
    safe_pool.extend(gaussian_blob(&mut rng, 45, [1.532, -1.286], 0.15, 1));
    safe_pool.extend(gaussian_blob(&mut rng, 105, [-2.2, 5.0], 0.5, 0));
    safe_pool.extend(gaussian_blob(&mut rng, 105, [-2.2, -5.0], 0.5, 0));

    let dataset = PoisonedDataset {
        clean_points: clean,
        poison_points: poison,
        safe_pool,
        poison_fraction,
    };

    std::fs::create_dir_all(work_dir).map_err(|source| BenchError::Io {
        path: work_dir.display().to_string(),
        source,
    })?;
    let pool_path = work_dir.join("pool.jsonl");
    let ft_path = work_dir.join("ft.jsonl");
    embedding_file(&dataset.safe_pool, "safe", &pool_path)?;
    embedding_file(&dataset.ft_points(), "ft", &ft_path)?;

    // Aligned initial model: full-batch descent on clean data only.
    let clean_oracle = LogisticOracle::new(&dataset.clean_points, None);
    let mut theta = ParamVector::zeros(3);
    for _ in 0..500 {
        let g = clean_oracle.grad(theta.as_slice(), 0)?;
        theta = crate::spag::utility_step(&theta, &g, 0.5)?;
    }
    let pool_oracle = LogisticOracle::new(&dataset.safe_pool, None);
    let tau = pool_oracle.mean_loss(theta.as_slice());

    Ok(PoisonedScenario {
        dataset,
        pool_path,
        ft_path,
        theta0: theta,
        tau,
    })
}

/// How the safety subset is chosen in the pipeline.
#[derive(Clone, Copy, Debug)]
pub enum SelectionStrategy {
    /// Relevance–diversity greedy MAP selection.
    Dpp { beta: f64, eps: f64 },
    /// Uniform subset without replacement, as a baseline.
    Random,
}

/// Pipeline knobs with the benchmark defaults.
#[derive(Clone, Copy, Debug)]
pub struct PipelineParams {
    /// Subset size as a fraction of the fine-tuning set: k = ceil(p·|ft|).
    pub p: f64,
    pub eta_ft: f64,
    pub max_steps: usize,
    pub utility_batch: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            p: 0.03,
            eta_ft: 0.05,
            max_steps: 600,
            utility_batch: 32,
        }
    }
}

/// Outcome of one select→train run.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub selected: Vec<usize>,
    pub stopped_early: bool,
    pub report: TrainReport,
    /// Mean safety loss over the entire candidate pool at the final
    /// parameters, a method-independent evaluation yardstick.
    pub pool_safety_loss: f64,
}

/// Runs the full pipeline against the scenario's on-disk artifacts: load,
/// normalize, score relevance, select k = ceil(p·|ft|) safety points, then
/// train with projections against the selected subset (safety batch 1).
pub fn run_poisoned_pipeline(
    scenario: &PoisonedScenario,
    strategy: SelectionStrategy,
    params: &PipelineParams,
    seed: u64,
) -> Result<PipelineOutcome, BenchError> {
    let pool = load_embeddings(&scenario.pool_path, Format::Jsonl)?.normalized()?;
    let ft = load_embeddings(&scenario.ft_path, Format::Jsonl)?.normalized()?;
    let k = (params.p * ft.len() as f64).ceil() as usize;
    let k = k.clamp(1, pool.len());

    let (selected, stopped_early) = match strategy {
        SelectionStrategy::Dpp { beta, eps } => {
            let scores = compute_relevance(&pool, &ft)?;
            let view = WeightedKernelView::new(&pool, &scores, beta)?;
            let result: SelectionResult = greedy_select(&view, k, eps)?;
            (result.selected, result.stopped_early)
        }
        SelectionStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x52A9));
            (sample_without_replacement(&mut rng, pool.len(), k), false)
        }
    };

    // The selected subset is tiny (k = ceil(p·|ft|)), so each safety
    // mini-batch is the whole subset: the per-batch mean is what the
    // threshold test sees, and paired corrections stay balanced.
    let subset_points: Vec<LabeledPoint> = selected
        .iter()
        .map(|&i| scenario.dataset.safe_pool[i])
        .collect();
    let safety = LogisticOracle::new(&subset_points, None);
    let utility = LogisticOracle::new(&scenario.dataset.ft_points(), Some(params.utility_batch));
    let config = SpagConfig {
        eta_ft: params.eta_ft,
        tau: scenario.tau,
        eta_safe: params.eta_ft,
        max_steps: params.max_steps,
        seed,
    };
    let report = spag_train(&utility, &safety, &config, &scenario.theta0)?;
    let pool_oracle = LogisticOracle::new(&scenario.dataset.safe_pool, None);
    let pool_safety_loss = pool_oracle.mean_loss(report.final_theta.as_slice());
    Ok(PipelineOutcome {
        selected,
        stopped_early,
        report,
        pool_safety_loss,
    })
}

fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    // Partial Fisher-Yates over the index range.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

// ---------------------------------------------------------------------------
// Comparison harness
// ---------------------------------------------------------------------------

/// Training method under comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MethodSpec {
    /// Projected alternating optimizer.
    Spag,
    /// Unconstrained gradient descent on the utility loss.
    Plain,
    /// Soft-constraint baseline with the given weight.
    Penalty { lambda: f64 },
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Spag => "spag".to_string(),
            MethodSpec::Plain => "plain".to_string(),
            MethodSpec::Penalty { lambda } => format!("penalty(lambda={lambda})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub final_utility_loss: f64,
    pub final_safety_loss: f64,
    pub feasible: bool,
}

/// Comparison results with csv and aligned-text renderings.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub tau: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,final_utility_loss,final_safety_loss,feasible\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.method, row.final_utility_loss, row.final_safety_loss, row.feasible
            ));
        }
        out
    }

    pub fn to_aligned_text(&self) -> String {
        let mut out = format!(
            "{:<24} {:>22} {:>22} {:>9}\n",
            "method", "utility_loss", "safety_loss", "feasible"
        );
        out.push_str(&"-".repeat(80));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>22.12e} {:>22.12e} {:>9}\n",
                row.method, row.final_utility_loss, row.final_safety_loss, row.feasible
            ));
        }
        out.push_str(&format!("tau = {}\n", self.tau));
        out
    }
}

/// Runs every requested method on one quadratic instance with shared
/// hyperparameters and reports final losses plus feasibility at
/// τ + [`FEASIBILITY_TOL`].
pub fn run_quadratic_comparison(
    problem: &QuadraticProblem,
    config: &SpagConfig,
    methods: &[MethodSpec],
) -> Result<(ComparisonTable, Vec<(String, TrainReport)>), BenchError> {
    let utility = problem.utility_oracle();
    let safety = problem.safety_oracle();
    let theta0 = ParamVector::zeros(problem.dim());
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for method in methods {
        let report = match method {
            MethodSpec::Spag => spag_train(&utility, &safety, config, &theta0)?,
            MethodSpec::Plain => penalty_train(
                &utility,
                &safety,
                0.0,
                config.eta_ft,
                config.max_steps,
                config.seed,
                &theta0,
            )?,
            MethodSpec::Penalty { lambda } => penalty_train(
                &utility,
                &safety,
                *lambda,
                config.eta_ft,
                config.max_steps,
                config.seed,
                &theta0,
            )?,
        };
        rows.push(ComparisonRow {
            method: method.name(),
            final_utility_loss: report.final_utility_loss,
            final_safety_loss: report.final_safety_loss,
            feasible: report.final_safety_loss <= config.tau + FEASIBILITY_TOL,
        });
        reports.push((method.name(), report));
    }
    Ok((
        ComparisonTable {
            tau: config.tau,
            rows,
        },
        reports,
    ))
}

/// Method comparison on the poisoned-logreg scenario. The two projected
/// runs use their own selected subsets; the penalty baseline and plain
/// descent share the diversity-selected subset. The safety column is the
/// full-pool mean loss at the final parameters (comparable across rows);
/// feasibility refers to each method's own training constraint.
pub fn run_logreg_comparison(
    scenario: &PoisonedScenario,
    params: &PipelineParams,
    seed: u64,
) -> Result<(ComparisonTable, Vec<(String, TrainReport)>), BenchError> {
    let pool_oracle = LogisticOracle::new(&scenario.dataset.safe_pool, None);
    let utility = LogisticOracle::new(&scenario.dataset.ft_points(), Some(params.utility_batch));

    let dpp = run_poisoned_pipeline(
        scenario,
        SelectionStrategy::Dpp {
            beta: 4.0,
            eps: 1e-8,
        },
        params,
        seed,
    )?;
    let random = run_poisoned_pipeline(scenario, SelectionStrategy::Random, params, seed)?;

    let dpp_subset: Vec<LabeledPoint> = dpp
        .selected
        .iter()
        .map(|&i| scenario.dataset.safe_pool[i])
        .collect();
    let safety = LogisticOracle::new(&dpp_subset, None);
    let penalty = penalty_train(
        &utility,
        &safety,
        1.0,
        params.eta_ft,
        params.max_steps,
        seed,
        &scenario.theta0,
    )?;
    let plain = penalty_train(
        &utility,
        &safety,
        0.0,
        params.eta_ft,
        params.max_steps,
        seed,
        &scenario.theta0,
    )?;

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (name, report) in [
        ("spag+dpp".to_string(), dpp.report),
        ("spag+random".to_string(), random.report),
        ("penalty(lambda=1)+dpp".to_string(), penalty),
        ("plain".to_string(), plain),
    ] {
        rows.push(ComparisonRow {
            method: name.clone(),
            final_utility_loss: report.final_utility_loss,
            final_safety_loss: pool_oracle.mean_loss(report.final_theta.as_slice()),
            feasible: report.final_safety_loss <= scenario.tau + FEASIBILITY_TOL,
        });
        reports.push((name, report));
    }
    Ok((
        ComparisonTable {
            tau: scenario.tau,
            rows,
        },
        reports,
    ))
}
