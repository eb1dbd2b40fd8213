//! Token-weighted action-prior denoising for chunked flow-matching policies
//! executed under inference delay.
//!
//! A policy emits chunks of `H` actions. While chunk `k+1` is being generated
//! the robot keeps executing chunk `k`, so the first `d` actions of the new
//! chunk are already committed. Generation conditions on those committed
//! actions through per-token weights `omega`: ones on the committed prefix, a
//! decaying soft window after it, and zeros on the free tail.

pub mod bench;
pub mod chunk;
pub mod cli;
pub mod envs;
pub mod error;
pub mod executor;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod train;
pub mod weights;

pub use chunk::{ActionChunk, PriorChunk};
pub use error::{Error, Result};
pub use infer::{generate_chunk, SolverConfig};
pub use model::{ModelConfig, ModelParams, VectorField};
pub use weights::{token_weights, Schedule, WeightProfile, WindowRule};
