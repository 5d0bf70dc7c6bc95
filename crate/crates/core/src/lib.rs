//! Relational graph transformer.
//!
//! The pipeline turns a multi-table relational database into a temporal
//! entity graph (one node per row, one edge per foreign-key reference),
//! samples a fixed-size, leakage-free context of `K` nodes around each
//! prediction seed, encodes every context node as a mix of five elements
//! (features, table type, hop distance, relative time, subgraph positional
//! encoding) and runs a transformer that combines local attention over the
//! context with global attention to EMA K-Means centroids.
//!
//! Modules follow the pipeline order:
//!
//! - [`schema`]: JSON manifest and CSV ingestion into a columnar [`schema::Database`]
//! - [`graph`]: the [`graph::EntityGraph`] with CSR adjacency and binary snapshots
//! - [`sampler`]: temporal 2-hop context sampling with random fallback
//! - [`tokenizer`]: the five token encoders and their mixing matrix
//! - [`tensor`]: dense matrices with reverse-mode autodiff
//! - [`model`]: local/global transformer, centroids and checkpoints
//! - [`train`]: tasks, temporal splits, training, metrics and ablations
//! - [`synth`]: synthetic databases with planted signals
//! - [`toy`]: a tiny fixture and per-block gradient checks
//! - [`cli`]: the `relgt` command line
//!
//! See the crate's `examples/` directory for one runnable program per stage.

pub mod cli;
pub mod error;
pub mod graph;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod schema;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
