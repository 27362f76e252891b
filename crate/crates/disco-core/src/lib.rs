//! Staged mixture-of-experts training at desk scale.
//!
//! The pipeline decomposes an MoE language model into single-expert dense
//! submodels, clusters the corpus into one shard per expert, trains the
//! submodels independently (no cross-worker communication), merges the
//! results back into a full MoE (expert concatenation plus weighted
//! averaging of the shared backbone), and fine-tunes globally. A cost
//! accountant turns measured phase times and device rates into dollar
//! reports.

pub mod checkpoint;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod merge;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod seeding;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
