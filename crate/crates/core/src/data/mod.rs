//! Taxonomy, attribute table and dataset types, plus file ingestion.

mod attributes;
mod dataset;
pub mod io;
mod taxonomy;

pub use attributes::AttributeTable;
pub use dataset::Dataset;
pub use io::{load_dataset, save_dataset, Manifest};
pub use taxonomy::{NodeId, NodeKind, Taxonomy};
