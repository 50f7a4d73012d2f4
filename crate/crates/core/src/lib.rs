//! Open-set recognition for multi-class network intrusion detection.
//!
//! A small MLP maps flow features to an embedding. Each known class `k` owns a
//! learnable *reciprocal point* `P^k` that marks what the class is not; the
//! class logit grows with the hybrid distance from the embedding to `P^k`.
//! Training combines cross-entropy over those logits, a margin term bounding
//! each class's Euclidean distance to its point, and an optional Fisher
//! scatter-ratio term. At inference the largest distance is the "knownness"
//! score and samples scoring below a calibrated threshold are flagged unknown.

pub mod dataio;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numgrad;
pub mod openset;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{Dataset, ModelParams};
pub use numgrad::{Graph, NodeId, Tensor};
pub use train::TrainConfig;
