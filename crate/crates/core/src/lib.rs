//! Data-efficient concept bottleneck models over precomputed embeddings.
//!
//! Concept proposals (image crops) are embedded elsewhere and handed over as
//! EMB1 matrices. From there this crate subsamples and filters them, clusters
//! them into a bank of visual concepts, scores images against the concepts
//! and fits a sparse linear classifier on those scores. Concepts can be named
//! from a text-embedding vocabulary or removed by a text query, and concept
//! localization is scored with the Grid Pointing Game metrics.

pub mod cbm;
pub mod concept_bank;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, ErrorClass, Result};
pub use tensor_io::{EmbeddingMatrix, LabelTable, ProposalRecord};
