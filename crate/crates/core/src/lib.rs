//! Plan-structured neural network models for query latency prediction.
//!
//! A query execution plan is a tree of operators. Instead of training one
//! monolithic regressor over hand-made plan summaries, this crate assembles a
//! small neural unit per *operator kind* into a network whose shape mirrors
//! the plan tree: each unit consumes the operator's featurized attributes
//! plus the output vectors of its children, and emits a predicted latency
//! together with an opaque data vector that flows upward to its parent. Units
//! are shared across every occurrence of their operator kind, so the model
//! trains on whole plans while remaining a fixed, small set of parameters.
//!
//! The crate is organized bottom-up:
//!
//! * [`graph`] — a minimal reverse-mode automatic differentiation engine and
//!   the SGD-with-momentum optimizer.
//! * [`plan`] — plan trees, operator schemas, `EXPLAIN (FORMAT JSON)`
//!   ingestion, a native corpus format, and a synthetic workload generator.
//! * [`encode`] — fitted feature encoders that turn operator attributes into
//!   fixed-width numeric vectors.
//! * [`net`] — the per-kind neural units and the plan-to-circuit assembly.
//! * [`train`] — structure-grouped batch training with subtree loss caching.
//! * [`eval`] — accuracy metrics and a calibrated-cost linear baseline.

pub mod encode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod net;
pub mod plan;
pub mod train;

pub use error::{Error, Result};
