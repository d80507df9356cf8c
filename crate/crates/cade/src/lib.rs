//! CADE: context-aware dual encoding for unsupervised, inductive node
//! embeddings.
//!
//! The crate learns node representations on attributed graphs without
//! labels. Positive pairs come from short random walks; each pair member is
//! encoded into several candidate embeddings (by resampling neighborhoods
//! or by parallel aggregator parameter sets), and a bi-attention layer over
//! the candidate-pair similarity matrix fuses them so each side is encoded
//! with awareness of the other. The base encoder samples fixed-size
//! neighborhood trees, aggregates bottom-up, and adds a trainable per-node
//! global bias on every hidden layer (never the last), giving training
//! nodes a persistent identity while unseen nodes still embed from
//! structure and features alone.
//!
//! Everything runs on a small reverse-mode tape over dense f64 matrices,
//! with finite-difference gradient verification as a first-class citizen.
//! See the `examples/` directory for a runnable tour: loading and
//! splitting graphs, sampling, gradient checking, training, embedding
//! generation, and the node-classification / link-prediction protocols.

// index loops mirror the math in the matrix kernels
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod dual;
pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod infer;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tape;
pub mod train;
pub mod verify;

pub mod cli;

pub use graph::{EdgeSplit, Graph, NodeSplit};
pub use matrix::Mat;
pub use model::{Model, ModelConfig};
pub use tape::{Tape, Value};
