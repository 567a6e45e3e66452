//! Demonstration selection and context assembly for long-context in-context
//! learning.
//!
//! The crate is organised as a pipeline:
//!
//! - [`dataset`] loads and validates task pools and test sets.
//! - [`retrieval`] ranks pool demonstrations for a query (random, TF-IDF,
//!   dense, multi-task) with an optional class-balancing pass.
//! - [`refract`] annotates demonstrations with zero-shot predictions, marks
//!   the challenging ones, and lays out the final context with those
//!   repeated at the end.
//! - [`prompt`] renders a context into a prompt under a token budget.
//! - [`model`] is the generation interface (HTTP backend, deterministic
//!   mock) plus the on-disk response cache.
//! - [`metrics`] scores predictions and builds delta-from-zero-shot tables.
//! - [`harness`] runs k-sweep experiments and writes reports.

pub mod dataset;
pub mod harness;
pub mod http;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod refract;
pub mod retrieval;
pub mod synthetic;
pub mod tokenize;

pub use dataset::{Dataset, Demonstration, Output, Span, TaskKind, TaskSpec};
pub use refract::{ContextEntry, IclContext, RefractOptions, ZeroShotRecord};
pub use retrieval::{RetrievalRequest, RetrieverKind, ScoredDemo};
