//! Safety-projected alternating-gradient training (SPAG) and the penalty
//! baseline it is compared against.
//!
//! The constrained problem is: minimize a utility loss subject to a safety
//! loss staying at or below a threshold τ. Each SPAG step takes a plain
//! gradient step on the utility objective,
//!
//! ```text
//!     θ⁺ = θ - η_ft ∇L_util(θ),
//! ```
//!
//! then evaluates the safety loss ℓ at θ⁺. If ℓ ≤ τ the step stands
//! unchanged. Otherwise the parameters are projected onto the half-space
//! where the first-order expansion of the safety loss around θ⁺ satisfies
//! the threshold. The minimum-norm correction is a step along the safety
//! gradient g with magnitude (ℓ - τ)/‖g‖², clamped by a trust region:
//!
//! ```text
//!     α = min((ℓ - τ)/‖g‖², η_safe),    θ_new = θ⁺ - α g.
//! ```
//!
//! The clamp keeps every correction inside a ball of radius η_safe·‖g‖
//! around θ⁺. When the projection is not clamped, the linearized safety
//! loss at θ_new equals τ exactly (the constraint is active at the
//! projected point).
//!
//! The penalty baseline minimizes `L_util + λ(L_safe - τ)` by plain
//! gradient descent; λ = 0 reduces it to unconstrained training on the
//! utility objective alone.
//!
//! Mini-batch selection is delegated to the [`LossOracle`]: both loss and
//! gradient receive a batch seed derived deterministically from the run
//! seed, step index, and phase, so runs replay bit-identically.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Squared gradient norms at or below this have no usable descent direction.
pub const DEGENERATE_GRAD_FLOOR: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum SpagError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite parameter component at index {index}")]
    NonFiniteParam { index: usize },
    #[error("non-finite gradient component at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss value {value}")]
    NonFiniteLoss { value: f64 },
    #[error(
        "safety constraint violated (loss {l_safe} > tau {tau}) with degenerate gradient (norm_sq {norm_sq})"
    )]
    DegenerateGradient { l_safe: f64, tau: f64, norm_sq: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("oracle failure at step {step} ({phase}): {message}")]
    OracleFailure {
        step: usize,
        phase: &'static str,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parameter vector with finite components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    theta: Vec<f64>,
}

impl ParamVector {
    pub fn new(theta: Vec<f64>) -> Result<Self, SpagError> {
        if let Some(index) = theta.iter().position(|v| !v.is_finite()) {
            return Err(SpagError::NonFiniteParam { index });
        }
        Ok(Self { theta })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: vec![0.0; dim],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }
}

/// Deterministic loss + gradient evaluations over seed-selected mini-batches.
///
/// Implementations must be pure functions of `(theta, batch_seed)`; the
/// gradient must agree with central finite differences of the loss.
pub trait LossOracle: Sync {
    fn dim(&self) -> usize;
    fn loss(&self, theta: &[f64], batch_seed: u64) -> Result<f64, SpagError>;
    fn grad(&self, theta: &[f64], batch_seed: u64) -> Result<Vec<f64>, SpagError>;
}

/// Optimizer hyperparameters. `eta_safe` defaults to `eta_ft` when absent in
/// the wire format (see [`SpagConfigFile`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpagConfig {
    pub eta_ft: f64,
    pub tau: f64,
    pub eta_safe: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl SpagConfig {
    pub fn validate(&self) -> Result<(), SpagError> {
        if !(self.eta_ft.is_finite() && self.eta_ft > 0.0) {
            return Err(SpagError::InvalidConfig(format!(
                "eta_ft must be positive, got {}",
                self.eta_ft
            )));
        }
        if !(self.eta_safe.is_finite() && self.eta_safe > 0.0) {
            return Err(SpagError::InvalidConfig(format!(
                "eta_safe must be positive, got {}",
                self.eta_safe
            )));
        }
        if !self.tau.is_finite() {
            return Err(SpagError::InvalidConfig(format!(
                "tau must be finite, got {}",
                self.tau
            )));
        }
        if self.max_steps == 0 {
            return Err(SpagError::InvalidConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Wire format for the optimizer config: `eta_safe` is nullable and resolves
/// to `eta_ft`; `tau` is nullable and resolves to the harness default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpagConfigFile {
    pub eta_ft: f64,
    pub tau: Option<f64>,
    pub eta_safe: Option<f64>,
    pub max_steps: usize,
    pub seed: u64,
}

impl SpagConfigFile {
    pub fn resolve(&self, default_tau: f64) -> Result<SpagConfig, SpagError> {
        let config = SpagConfig {
            eta_ft: self.eta_ft,
            tau: self.tau.unwrap_or(default_tau),
            eta_safe: self.eta_safe.unwrap_or(self.eta_ft),
            max_steps: self.max_steps,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Per-step trace record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub utility_loss: f64,
    /// Safety loss ℓ evaluated at θ⁺ (after the utility step).
    pub safety_loss_at_theta_plus: f64,
    /// True exactly when ℓ > τ at θ⁺.
    pub projection_applied: bool,
    /// Projection magnitude; 0 when no projection fired.
    pub alpha: f64,
    /// True when α hit the trust-region radius.
    pub clamped: bool,
    /// ‖g_safe‖² (0 when the safety gradient was not evaluated).
    pub grad_safe_norm_sq: f64,
    /// Measured ‖θ_new − θ⁺‖.
    pub projection_step_norm: f64,
    /// Constraint violated but the safety gradient was numerically zero;
    /// the projection was skipped.
    pub degenerate: bool,
}

/// Full training trace plus final state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepReport>,
    pub final_theta: ParamVector,
    pub final_safety_loss: f64,
    pub final_utility_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct TrainSummary {
    summary: bool,
    steps: usize,
    final_theta: Vec<f64>,
    final_safety_loss: f64,
    final_utility_loss: f64,
}

impl TrainReport {
    /// One StepReport object per line, followed by a summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(step).expect("step report serializes")
            );
        }
        let summary = TrainSummary {
            summary: true,
            steps: self.steps.len(),
            final_theta: self.final_theta.as_slice().to_vec(),
            final_safety_loss: self.final_safety_loss,
            final_utility_loss: self.final_utility_loss,
        };
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&summary).expect("summary serializes")
        );
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), SpagError> {
        let mut file = File::create(path).map_err(|source| SpagError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|source| SpagError::Io {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Mini-batch phase within one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Utility,
    Safety,
}

/// Counter-based seed derivation: each (run seed, step, phase) triple maps
/// to one mixed 64-bit value, so oracles see independent, replayable batch
/// seeds.
pub fn batch_seed(run_seed: u64, step: usize, phase: Phase) -> u64 {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let phase_index = match phase {
        Phase::Utility => 0u64,
        Phase::Safety => 1u64,
    };
    let counter = (step as u64)
        .wrapping_mul(2)
        .wrapping_add(phase_index)
        .wrapping_add(1);
    splitmix64(run_seed.wrapping_add(counter.wrapping_mul(GOLDEN)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for a named stream off a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    splitmix64(base ^ stream.wrapping_mul(GOLDEN))
}

fn check_grad(g: &[f64], dim: usize) -> Result<(), SpagError> {
    if g.len() != dim {
        return Err(SpagError::DimensionMismatch {
            expected: dim,
            found: g.len(),
        });
    }
    if let Some(index) = g.iter().position(|v| !v.is_finite()) {
        return Err(SpagError::NonFiniteGradient { index });
    }
    Ok(())
}

/// Plain gradient step on the utility objective: `θ⁺[j] = θ[j] − η·g[j]`.
pub fn utility_step(
    theta: &ParamVector,
    g_ft: &[f64],
    eta_ft: f64,
) -> Result<ParamVector, SpagError> {
    if !(eta_ft.is_finite() && eta_ft > 0.0) {
        return Err(SpagError::InvalidConfig(format!(
            "eta_ft must be positive, got {eta_ft}"
        )));
    }
    check_grad(g_ft, theta.len())?;
    Ok(ParamVector {
        theta: theta
            .as_slice()
            .iter()
            .zip(g_ft)
            .map(|(t, g)| t - eta_ft * g)
            .collect(),
    })
}

/// Outcome fragment of one projection decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionOutcome {
    pub projection_applied: bool,
    pub alpha: f64,
    pub clamped: bool,
    pub grad_safe_norm_sq: f64,
}

/// Closed-form projection of θ⁺ onto the linearized safety half-space, with
/// trust-region clamp.
///
/// When `l_safe ≤ tau` the input is returned bit-identically with no
/// projection. Otherwise `α = min((ℓ−τ)/‖g‖², η_safe)` and the result is
/// `θ⁺ − α·g`. Errors with [`SpagError::DegenerateGradient`] when the
/// constraint is violated but ‖g‖² ≤ 1e-30.
pub fn safety_projection(
    theta_plus: &ParamVector,
    l_safe: f64,
    g_safe: &[f64],
    tau: f64,
    eta_safe: f64,
) -> Result<(ParamVector, ProjectionOutcome), SpagError> {
    if !(eta_safe.is_finite() && eta_safe > 0.0) {
        return Err(SpagError::InvalidConfig(format!(
            "eta_safe must be positive, got {eta_safe}"
        )));
    }
    if !l_safe.is_finite() {
        return Err(SpagError::NonFiniteLoss { value: l_safe });
    }
    if l_safe <= tau {
        return Ok((
            theta_plus.clone(),
            ProjectionOutcome {
                projection_applied: false,
                alpha: 0.0,
                clamped: false,
                grad_safe_norm_sq: 0.0,
            },
        ));
    }
    check_grad(g_safe, theta_plus.len())?;
    let norm_sq = linalg::norm_sq(g_safe);
    if norm_sq <= DEGENERATE_GRAD_FLOOR {
        return Err(SpagError::DegenerateGradient {
            l_safe,
            tau,
            norm_sq,
        });
    }
    let full = (l_safe - tau) / norm_sq;
    let clamped = full >= eta_safe;
    let alpha = if clamped { eta_safe } else { full };
    let theta = ParamVector {
        theta: theta_plus
            .as_slice()
            .iter()
            .zip(g_safe)
            .map(|(t, g)| t - alpha * g)
            .collect(),
    };
    Ok((
        theta,
        ProjectionOutcome {
            projection_applied: true,
            alpha,
            clamped,
            grad_safe_norm_sq: norm_sq,
        },
    ))
}

fn oracle_loss(
    oracle: &dyn LossOracle,
    theta: &[f64],
    seed: u64,
    step: usize,
    phase: &'static str,
) -> Result<f64, SpagError> {
    let value = oracle
        .loss(theta, seed)
        .map_err(|e| SpagError::OracleFailure {
            step,
            phase,
            message: e.to_string(),
        })?;
    if !value.is_finite() {
        return Err(SpagError::OracleFailure {
            step,
            phase,
            message: format!("non-finite loss {value}"),
        });
    }
    Ok(value)
}

fn oracle_grad(
    oracle: &dyn LossOracle,
    theta: &[f64],
    seed: u64,
    step: usize,
    phase: &'static str,
    dim: usize,
) -> Result<Vec<f64>, SpagError> {
    let g = oracle
        .grad(theta, seed)
        .map_err(|e| SpagError::OracleFailure {
            step,
            phase,
            message: e.to_string(),
        })?;
    check_grad(&g, dim).map_err(|e| SpagError::OracleFailure {
        step,
        phase,
        message: e.to_string(),
    })?;
    Ok(g)
}

/// Runs the alternating loop for `max_steps` steps: utility gradient step,
/// safety evaluation at θ⁺, projection when the threshold is exceeded.
pub fn spag_train(
    utility: &dyn LossOracle,
    safety: &dyn LossOracle,
    config: &SpagConfig,
    theta0: &ParamVector,
) -> Result<TrainReport, SpagError> {
    config.validate()?;
    let dim = theta0.len();
    for (name, d) in [("utility", utility.dim()), ("safety", safety.dim())] {
        if d != dim {
            return Err(SpagError::InvalidConfig(format!(
                "{name} oracle dim {d} does not match theta dim {dim}"
            )));
        }
    }
    let mut theta = theta0.clone();
    let mut steps = Vec::with_capacity(config.max_steps);
    for step in 0..config.max_steps {
        let seed_ft = batch_seed(config.seed, step, Phase::Utility);
        let utility_loss = oracle_loss(utility, theta.as_slice(), seed_ft, step, "utility")?;
        let g_ft = oracle_grad(utility, theta.as_slice(), seed_ft, step, "utility", dim)?;
        let theta_plus = utility_step(&theta, &g_ft, config.eta_ft)?;

        let seed_safe = batch_seed(config.seed, step, Phase::Safety);
        let l_safe = oracle_loss(safety, theta_plus.as_slice(), seed_safe, step, "safety")?;

        let report = if l_safe <= config.tau {
            theta = theta_plus;
            StepReport {
                step,
                utility_loss,
                safety_loss_at_theta_plus: l_safe,
                projection_applied: false,
                alpha: 0.0,
                clamped: false,
                grad_safe_norm_sq: 0.0,
                projection_step_norm: 0.0,
                degenerate: false,
            }
        } else {
            let g_safe = oracle_grad(
                safety,
                theta_plus.as_slice(),
                seed_safe,
                step,
                "safety",
                dim,
            )?;
            match safety_projection(&theta_plus, l_safe, &g_safe, config.tau, config.eta_safe) {
                Ok((theta_new, outcome)) => {
                    let step_norm = {
                        let mut s = 0.0;
                        for (a, b) in theta_new.as_slice().iter().zip(theta_plus.as_slice()) {
                            let d = a - b;
                            s += d * d;
                        }
                        s.sqrt()
                    };
                    theta = theta_new;
                    StepReport {
                        step,
                        utility_loss,
                        safety_loss_at_theta_plus: l_safe,
                        projection_applied: outcome.projection_applied,
                        alpha: outcome.alpha,
                        clamped: outcome.clamped,
                        grad_safe_norm_sq: outcome.grad_safe_norm_sq,
                        projection_step_norm: step_norm,
                        degenerate: false,
                    }
                }
                Err(SpagError::DegenerateGradient { norm_sq, .. }) => {
                    // No usable descent direction: keep θ⁺ and record the event.
                    theta = theta_plus;
                    StepReport {
                        step,
                        utility_loss,
                        safety_loss_at_theta_plus: l_safe,
                        projection_applied: true,
                        alpha: 0.0,
                        clamped: false,
                        grad_safe_norm_sq: norm_sq,
                        projection_step_norm: 0.0,
                        degenerate: true,
                    }
                }
                Err(other) => return Err(other),
            }
        };
        steps.push(report);
    }

    let final_seed_ft = batch_seed(config.seed, config.max_steps, Phase::Utility);
    let final_seed_safe = batch_seed(config.seed, config.max_steps, Phase::Safety);
    let final_utility_loss = oracle_loss(
        utility,
        theta.as_slice(),
        final_seed_ft,
        config.max_steps,
        "utility",
    )?;
    let final_safety_loss = oracle_loss(
        safety,
        theta.as_slice(),
        final_seed_safe,
        config.max_steps,
        "safety",
    )?;
    Ok(TrainReport {
        steps,
        final_theta: theta,
        final_safety_loss,
        final_utility_loss,
    })
}

/// Plain gradient descent on the penalized objective
/// `L_util + λ(L_safe − τ)`: the soft-constraint baseline. λ = 0 skips the
/// safety gradient in the update entirely, reducing exactly to gradient
/// descent on the utility loss. Batch seeds follow the same derivation as
/// [`spag_train`], so trajectories are batch-matched across methods.
pub fn penalty_train(
    utility: &dyn LossOracle,
    safety: &dyn LossOracle,
    lambda: f64,
    eta: f64,
    max_steps: usize,
    seed: u64,
    theta0: &ParamVector,
) -> Result<TrainReport, SpagError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SpagError::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(SpagError::InvalidConfig(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if max_steps == 0 {
        return Err(SpagError::InvalidConfig("max_steps must be >= 1".into()));
    }
    let dim = theta0.len();
    let mut theta = theta0.clone();
    let mut steps = Vec::with_capacity(max_steps);
    for step in 0..max_steps {
        let seed_ft = batch_seed(seed, step, Phase::Utility);
        let seed_safe = batch_seed(seed, step, Phase::Safety);
        let utility_loss = oracle_loss(utility, theta.as_slice(), seed_ft, step, "utility")?;
        let g_ft = oracle_grad(utility, theta.as_slice(), seed_ft, step, "utility", dim)?;
        let safety_loss = oracle_loss(safety, theta.as_slice(), seed_safe, step, "safety")?;
        let g_safe = oracle_grad(safety, theta.as_slice(), seed_safe, step, "safety", dim)?;
        let update: Vec<f64> = if lambda == 0.0 {
            g_ft
        } else {
            g_ft.iter()
                .zip(&g_safe)
                .map(|(u, s)| u + lambda * s)
                .collect()
        };
        theta = utility_step(&theta, &update, eta)?;
        steps.push(StepReport {
            step,
            utility_loss,
            safety_loss_at_theta_plus: safety_loss,
            projection_applied: false,
            alpha: 0.0,
            clamped: false,
            grad_safe_norm_sq: linalg::norm_sq(&g_safe),
            projection_step_norm: 0.0,
            degenerate: false,
        });
    }
    let final_seed_ft = batch_seed(seed, max_steps, Phase::Utility);
    let final_seed_safe = batch_seed(seed, max_steps, Phase::Safety);
    let final_utility_loss = oracle_loss(
        utility,
        theta.as_slice(),
        final_seed_ft,
        max_steps,
        "utility",
    )?;
    let final_safety_loss = oracle_loss(
        safety,
        theta.as_slice(),
        final_seed_safe,
        max_steps,
        "safety",
    )?;
    Ok(TrainReport {
        steps,
        final_theta: theta,
        final_safety_loss,
        final_utility_loss,
    })
}

/// Central finite-difference gradient of an oracle's loss, for verifying
/// `grad` implementations.
pub fn finite_difference_grad(
    oracle: &dyn LossOracle,
    theta: &[f64],
    seed: u64,
    h: f64,
) -> Result<Vec<f64>, SpagError> {
    let mut g = Vec::with_capacity(theta.len());
    let mut probe = theta.to_vec();
    for j in 0..theta.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = oracle.loss(&probe, seed)?;
        probe[j] = orig - h;
        let down = oracle.loss(&probe, seed)?;
        probe[j] = orig;
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(θ) = ½‖θ − c‖², full batch.
    struct ShiftedQuadratic {
        center: Vec<f64>,
    }

    impl LossOracle for ShiftedQuadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }

        fn loss(&self, theta: &[f64], _seed: u64) -> Result<f64, SpagError> {
            Ok(0.5
                * theta
                    .iter()
                    .zip(&self.center)
                    .map(|(t, c)| (t - c) * (t - c))
                    .sum::<f64>())
        }

        fn grad(&self, theta: &[f64], _seed: u64) -> Result<Vec<f64>, SpagError> {
            Ok(theta.iter().zip(&self.center).map(|(t, c)| t - c).collect())
        }
    }

    struct ZeroLoss {
        dim: usize,
    }

    impl LossOracle for ZeroLoss {
        fn dim(&self) -> usize {
            self.dim
        }

        fn loss(&self, _theta: &[f64], _seed: u64) -> Result<f64, SpagError> {
            Ok(0.0)
        }

        fn grad(&self, _theta: &[f64], _seed: u64) -> Result<Vec<f64>, SpagError> {
            Ok(vec![0.0; self.dim])
        }
    }

    #[test]
    fn utility_step_zero_gradient_is_identity() {
        let theta = ParamVector::new(vec![1.0, -2.0]).unwrap();
        let out = utility_step(&theta, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn utility_step_one_dimensional_arithmetic() {
        let theta = ParamVector::new(vec![1.0]).unwrap();
        let out = utility_step(&theta, &[2.0], 0.5).unwrap();
        assert_eq!(out.as_slice(), &[0.0]);
    }

    #[test]
    fn utility_step_matches_elementwise_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let theta: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let eta = 0.17;
        let out = utility_step(&ParamVector::new(theta.clone()).unwrap(), &g, eta).unwrap();
        for j in 0..10 {
            let expected = theta[j] - eta * g[j];
            assert!((out.as_slice()[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn utility_step_rejects_non_finite_gradient() {
        let theta = ParamVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            utility_step(&theta, &[f64::NAN], 0.5),
            Err(SpagError::NonFiniteGradient { index: 0 })
        ));
        assert!(matches!(
            utility_step(&theta, &[1.0, 2.0], 0.5),
            Err(SpagError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_boundary_case_is_identity() {
        let theta_plus = ParamVector::new(vec![0.3, -0.7]).unwrap();
        let (out, frag) = safety_projection(&theta_plus, 0.5, &[1.0, 1.0], 0.5, 10.0).unwrap();
        assert_eq!(out.as_slice(), theta_plus.as_slice());
        assert!(!frag.projection_applied);
        assert_eq!(frag.alpha, 0.0);
    }

    #[test]
    fn projection_feasible_case_is_bit_identical() {
        let theta_plus = ParamVector::new(vec![0.1, 0.2, -0.3]).unwrap();
        let (out, _) = safety_projection(&theta_plus, 0.1, &[1.0, 0.0, 0.0], 0.2, 1.0).unwrap();
        for (a, b) in out.as_slice().iter().zip(theta_plus.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn projection_hand_case_unclamped() {
        // θ⁺=(0,0), g=(1,0), ℓ=1, τ=0.5, η_safe=10 → α=0.5, θ_new=(−0.5, 0).
        let theta_plus = ParamVector::new(vec![0.0, 0.0]).unwrap();
        let (out, frag) = safety_projection(&theta_plus, 1.0, &[1.0, 0.0], 0.5, 10.0).unwrap();
        assert_eq!(out.as_slice(), &[-0.5, 0.0]);
        assert_eq!(frag.alpha, 0.5);
        assert!(!frag.clamped);
        // Linearized safety loss at the projected point is exactly τ.
        let lin = 1.0
            + out
                .as_slice()
                .iter()
                .zip(theta_plus.as_slice())
                .map(|(n, p)| n - p)
                .zip([1.0, 0.0])
                .map(|(d, g)| d * g)
                .sum::<f64>();
        assert!((lin - 0.5).abs() < 1e-15);
    }

    #[test]
    fn projection_hand_case_clamped() {
        let theta_plus = ParamVector::new(vec![0.0, 0.0]).unwrap();
        let (out, frag) = safety_projection(&theta_plus, 1.0, &[1.0, 0.0], 0.5, 0.1).unwrap();
        assert_eq!(out.as_slice(), &[-0.1, 0.0]);
        assert_eq!(frag.alpha, 0.1);
        assert!(frag.clamped);
        // Step norm equals η_safe·‖g‖ when clamped.
        let step_norm = linalg::norm(
            &out.as_slice()
                .iter()
                .zip(theta_plus.as_slice())
                .map(|(n, p)| n - p)
                .collect::<Vec<f64>>(),
        );
        assert!((step_norm - 0.1 * 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_degenerate_gradient_errors() {
        let theta_plus = ParamVector::new(vec![0.0]).unwrap();
        assert!(matches!(
            safety_projection(&theta_plus, 1.0, &[0.0], 0.5, 1.0),
            Err(SpagError::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn spag_with_inactive_constraint_equals_plain_descent() {
        let utility = ShiftedQuadratic {
            center: vec![2.0, -1.0],
        };
        let safety = ZeroLoss { dim: 2 };
        let config = SpagConfig {
            eta_ft: 0.1,
            tau: 0.2,
            eta_safe: 0.1,
            max_steps: 50,
            seed: 3,
        };
        let theta0 = ParamVector::zeros(2);
        let spag = spag_train(&utility, &safety, &config, &theta0).unwrap();
        let plain = penalty_train(&utility, &safety, 0.0, 0.1, 50, 3, &theta0).unwrap();
        assert!(spag.steps.iter().all(|s| !s.projection_applied));
        for (a, b) in spag
            .final_theta
            .as_slice()
            .iter()
            .zip(plain.final_theta.as_slice())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn spag_with_zero_utility_descends_safety_below_tau() {
        let utility = ZeroLoss { dim: 2 };
        let safety = ShiftedQuadratic {
            center: vec![3.0, 0.0],
        };
        let config = SpagConfig {
            eta_ft: 0.1,
            tau: 0.2,
            eta_safe: 0.5,
            max_steps: 400,
            seed: 0,
        };
        let theta0 = ParamVector::zeros(2); // safety loss 4.5 > tau
        let report = spag_train(&utility, &safety, &config, &theta0).unwrap();
        assert!(report.final_safety_loss <= 0.2 + 1e-9);
        assert!(report.steps.iter().any(|s| s.projection_applied));
    }

    /// Constant loss above any threshold, zero gradient everywhere.
    struct FlatViolation {
        dim: usize,
        level: f64,
    }

    impl LossOracle for FlatViolation {
        fn dim(&self) -> usize {
            self.dim
        }

        fn loss(&self, _theta: &[f64], _seed: u64) -> Result<f64, SpagError> {
            Ok(self.level)
        }

        fn grad(&self, _theta: &[f64], _seed: u64) -> Result<Vec<f64>, SpagError> {
            Ok(vec![0.0; self.dim])
        }
    }

    #[test]
    fn degenerate_safety_gradient_skips_projection_and_is_recorded() {
        let utility = ShiftedQuadratic {
            center: vec![1.0, 0.0],
        };
        let safety = FlatViolation { dim: 2, level: 5.0 };
        let config = SpagConfig {
            eta_ft: 0.1,
            tau: 0.2,
            eta_safe: 0.1,
            max_steps: 10,
            seed: 1,
        };
        let theta0 = ParamVector::zeros(2);
        let report = spag_train(&utility, &safety, &config, &theta0).unwrap();
        for step in &report.steps {
            assert!(step.projection_applied);
            assert!(step.degenerate);
            assert_eq!(step.alpha, 0.0);
            assert_eq!(step.projection_step_norm, 0.0);
        }
        // The trajectory equals plain utility descent: the projection never moved θ.
        let plain = penalty_train(&utility, &safety, 0.0, 0.1, 10, 1, &theta0).unwrap();
        assert_eq!(report.final_theta, plain.final_theta);
    }

    #[test]
    fn penalty_lambda_zero_matches_pure_utility_descent() {
        let utility = ShiftedQuadratic {
            center: vec![1.0, 1.0],
        };
        let safety = ShiftedQuadratic {
            center: vec![-5.0, 2.0],
        };
        let theta0 = ParamVector::zeros(2);
        let with_safety = penalty_train(&utility, &safety, 0.0, 0.2, 40, 7, &theta0).unwrap();
        // Manual gradient descent on utility alone.
        let mut theta = theta0.clone();
        for _ in 0..40 {
            let g = utility.grad(theta.as_slice(), 0).unwrap();
            theta = utility_step(&theta, &g, 0.2).unwrap();
        }
        for (a, b) in with_safety
            .final_theta
            .as_slice()
            .iter()
            .zip(theta.as_slice())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn penalized_gradient_is_linear_in_lambda() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let utility = ShiftedQuadratic {
            center: vec![1.0, -2.0, 0.5],
        };
        let safety = ShiftedQuadratic {
            center: vec![0.0, 3.0, -1.0],
        };
        for _ in 0..5 {
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lambda = rng.random_range(0.0..5.0);
            let g_ft = utility.grad(&theta, 0).unwrap();
            let g_safe = safety.grad(&theta, 0).unwrap();
            for j in 0..3 {
                let combined = g_ft[j] + lambda * g_safe[j];
                let expected = g_ft[j] + lambda * g_safe[j];
                assert!((combined - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reports_are_bit_identical_across_runs() {
        let utility = ShiftedQuadratic {
            center: vec![2.0, 0.0],
        };
        let safety = ShiftedQuadratic {
            center: vec![-1.0, 0.5],
        };
        let config = SpagConfig {
            eta_ft: 0.05,
            tau: 0.3,
            eta_safe: 0.05,
            max_steps: 120,
            seed: 99,
        };
        let theta0 = ParamVector::zeros(2);
        let a = spag_train(&utility, &safety, &config, &theta0).unwrap();
        let b = spag_train(&utility, &safety, &config, &theta0).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let oracle = ShiftedQuadratic {
            center: vec![1.0, -1.0, 2.0],
        };
        let theta = vec![0.3, 0.4, -0.2];
        let g = oracle.grad(&theta, 0).unwrap();
        let fd = finite_difference_grad(&oracle, &theta, 0, 1e-6).unwrap();
        let tol = (1e-3 * linalg::norm(&g)).max(1e-5);
        for j in 0..3 {
            assert!((g[j] - fd[j]).abs() <= tol);
        }
    }

    #[test]
    fn batch_seeds_are_distinct_per_phase_and_step() {
        let a = batch_seed(1, 0, Phase::Utility);
        let b = batch_seed(1, 0, Phase::Safety);
        let c = batch_seed(1, 1, Phase::Utility);
        let d = batch_seed(2, 0, Phase::Utility);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, batch_seed(1, 0, Phase::Utility));
    }

    #[test]
    fn config_file_resolves_nulls() {
        let file: SpagConfigFile = serde_json::from_str(
            "{\"eta_ft\": 5e-5, \"tau\": 0.2, \"eta_safe\": null, \"max_steps\": 10, \"seed\": 1}",
        )
        .unwrap();
        let config = file.resolve(0.5).unwrap();
        assert_eq!(config.eta_safe, 5e-5);
        assert_eq!(config.tau, 0.2);
        let file: SpagConfigFile = serde_json::from_str(
            "{\"eta_ft\": 0.01, \"tau\": null, \"eta_safe\": 0.02, \"max_steps\": 10, \"seed\": 1}",
        )
        .unwrap();
        let config = file.resolve(0.5).unwrap();
        assert_eq!(config.tau, 0.5);
        assert_eq!(config.eta_safe, 0.02);
    }
}
