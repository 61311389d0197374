//! Unified semantic embeddings.
//!
//! Data points, leaf categories, supercategories and attributes are embedded
//! into one `d_e`-dimensional space. Training combines large-margin losses
//! (data vs. categories, data vs. supercategory siblings, data vs. attributes)
//! with a sparse-coding regularizer that asks every category embedding to be
//! its parent's embedding plus a sparse non-negative combination of attribute
//! embeddings. The learned combination weights double as a human-readable
//! description ("a feline that has stripes") and as a prior for learning
//! novel categories from a handful of examples.
//!
//! Module map:
//!
//! - [`data`]: taxonomy, attribute table, dataset, file ingestion.
//! - [`model`]: hyperparameters, the trained model, prediction, descriptions
//!   and the binary model format.
//! - [`objective`]: loss terms, the semantic regularizer and their subgradients.
//! - [`solver`]: alternating minimization, projections, the sparse-coding
//!   subproblem, ridge/LME baselines and few-shot transfer.
//! - [`metrics`]: flat hit@k and hierarchical precision@k.
//! - [`synth`]: planted-model data generator.

// `!(x > 0.0)` is how NaN gets rejected; index loops walk parallel arrays
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod data;
mod error;
pub(crate) mod linalg;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod solver;
pub mod synth;

pub use data::{AttributeTable, Dataset, NodeId, NodeKind, Taxonomy};
pub use error::{Error, ErrorKind, Result};
pub use model::{EmbeddingModel, Hyperparams, Params, Regularization};
