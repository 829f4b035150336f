//! Unsupervised graph representation learning by mutual-information
//! maximization.
//!
//! The pipeline: load a citation graph, run a graph-convolutional encoder over
//! it, and train the encoder (no labels) so that each node's embedding keeps
//! as much information as possible about the node's own neighborhood, both
//! its raw features and its edges. Trained embeddings are then scored with
//! ordinary downstream probes: logistic-regression node classification and
//! inner-product link prediction.
//!
//! Crate layout:
//! - [`diffmath`]: matrices, sparse matrices, and the gradient tape.
//! - [`graph`]: dataset loading, normalization, caching, edge splits.
//! - [`encoder`]: the graph-convolutional encoder.
//! - [`objective`]: the mutual-information training objective.
//! - [`trainer`]: Adam, the training loop, checkpoints.
//! - [`eval`]: downstream evaluation and reports.
//! - [`mioracle`]: exact discrete mutual-information oracle backing the
//!   decomposition bound tests.
//! - [`seeding`]: named deterministic RNG streams.
//! - [`synth`]: synthetic graph generators for tests and benches.

pub mod diffmath;
pub mod encoder;
pub mod eval;
pub mod graph;
pub mod mioracle;
pub mod objective;
pub mod trainer;
pub mod seeding;
pub mod synth;

pub use diffmath::{CsrMatrix, Matrix};
