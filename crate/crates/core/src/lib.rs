//! Transductive label propagation over sparse kNN similarity graphs.
//!
//! The engine takes a dense embedding matrix (one row per item) and a
//! manifest marking a small subset of items as labeled. It builds a
//! symmetric kNN affinity graph from sharpened dot-product similarities,
//! normalizes it as `S = D^{-1/2} W D^{-1/2}`, and spreads the seed labels
//! by solving `(I - alpha S) Z = Y` column by column with conjugate
//! gradient. Pseudo-labels are the row-wise argmax of `Z`.
//!
//! Around that core sit a small one-hidden-layer classifier used for the
//! train / re-embed / re-propagate loop, an evaluation harness that scores
//! predictions per item and per parent file (majority vote), and a
//! command-line front end.
//!
//! ```text
//! embeddings + manifest
//!        │
//!   graph::knn_search ─► graph::build_affinity ─► graph::normalize
//!        │
//!   propagation::propagate_cg ─► pseudo-labels + confidence
//!        │
//!   classifier::train ─► classifier::reembed ─► (next round)
//!        │
//!   evaluation::chunk_metrics / evaluation::file_metrics
//! ```
//!
//! Runnable walkthroughs live in `examples/` (`cargo run --example <name>`):
//! `generate_dataset`, `build_graph`, `spectral_radius`, `propagate`,
//! `train_classifier`, `pseudo_label_loop` and `evaluate_majority_vote`.

pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod io;
pub mod labels;
pub mod propagation;
pub mod sparse;

pub use error::{Error, Result};
