//! Safety-constrained training with curated safety data, at desk scale.
//!
//! Two pieces fit together:
//!
//! * [`spag`]: an alternating optimizer for `min L_util s.t. L_safe ≤ τ`,
//!   plain gradient steps on the utility objective, each followed by a
//!   closed-form projection onto the linearized safety constraint with a
//!   trust-region clamp, plus a soft-penalty baseline for comparison.
//! * [`selector`] + [`relevance`]: subset selection over a candidate pool
//!   under a determinantal kernel that multiplies cosine similarity by
//!   relevance weights `(q_i q_j)^β`, solved greedily with an incremental
//!   Cholesky factorization in O(N k²), with exhaustive oracles for
//!   verification.
//!
//! [`embedding`] handles file ingestion (jsonl/csv, token-state pooling),
//! and [`mod@bench`] provides seeded synthetic problems (constrained
//! quadratics with exact reference optima, and a poisoned
//! logistic-regression task) wired into a method-comparison harness.

pub mod bench;
pub mod embedding;
pub mod linalg;
pub mod relevance;
pub mod selector;
pub mod spag;
