//! Training and evaluation engine for graph attention collaborative
//! similarity embedding (GACSE) recommenders.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: ingestion, k-core filtering, per-user splitting and the
//!   immutable bipartite [`graph::InteractionGraph`].
//! - [`sampling`]: BPR triples, fixed fan-in neighbor sets and 2-order
//!   random-walk similarity pairs.
//! - [`model`]: parameter tables, the warm-up and attention propagation
//!   layers, prediction and hand-derived reverse mode.
//! - [`objective`]: adaptive-margin BPR, similarity loss, L2 and the
//!   combined batch loss with gradients.
//! - [`optim`]: lazy (row-sparse) Adam.
//! - [`train`]: epochs, early stopping, checkpoints and ablations.
//! - [`eval`]: full-ranking Recall@K / NDCG@K.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optim;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
