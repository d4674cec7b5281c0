//! Next-POI recommendation from check-in sequences.
//!
//! The model maps the previous POI, the user and every candidate POI into
//! nonnegative intent vectors through one ReLU layer each, and scores a
//! candidate by the inner product of (user intent + POI intent) with the
//! candidate intent. The POI-side transition matrix is interpolated by the
//! time since the previous visit and biased by the hour-of-day slot of the
//! query. POI embeddings are initialized from SkipGram over random walks on
//! the POI transition graph.

pub mod data;
pub mod embedding;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod pretrain;
pub mod synth;
pub mod train;
pub mod error;

pub use error::{Error, Result};
