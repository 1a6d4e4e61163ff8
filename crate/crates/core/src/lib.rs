//! Anomaly detection in network flows from incomplete link-load measurements.
//!
//! The library models normal flows as a low-rank CP decomposition and
//! anomalies as sparse, recovers both with block-successive convex
//! approximation solvers, unrolls the solvers into lightly parametrized
//! deep networks with adaptive per-flow/per-time regularization, and trains
//! those networks against AUC-based losses.
//!
//! Modules:
//! * [`tensor`] - dense 3-way tensors, unfoldings, Khatri-Rao products and
//!   the small SPD solves behind every block update.
//! * [`scenario`] - synthetic scenario generation (topology, flows,
//!   anomalies, masks, noise), time folding and real-trace ingestion.
//! * [`solvers`] - the iterative recovery algorithms and their block updates.
//! * [`unrolled`] - unrolled architectures, feature embeddings and adaptive
//!   parameter maps.
//! * [`metrics`] - score normalization, exact and soft AUC, ROC curves.
//! * [`training`] - AUC-driven empirical risk minimization, finite-difference
//!   gradients, AdamW, cross-validation and grid search.

pub mod error;
pub mod metrics;
pub mod scenario;
pub mod solvers;
pub mod tensor;
pub mod training;
pub mod unrolled;

pub use error::{Error, Result};
