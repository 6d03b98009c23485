//! Limit-order-book feature engineering and mid-price movement benchmarking.
//!
//! The pipeline runs quote ingestion and cleaning ([`ingest`]), event
//! windowing and labeling ([`windowing`]), feature construction
//! ([`features`], [`fpca`]), training-set preprocessing ([`preprocess`]),
//! base learners ([`learners`]) and sampling ensembles ([`ensemble`]), with
//! evaluation in [`stats`] and orchestration in [`harness`]. [`synth`]
//! produces synthetic quote streams for testing without market data.

pub mod ensemble;
pub mod error;
pub mod features;
pub mod fpca;
pub mod harness;
pub mod ingest;
pub mod learners;
pub mod preprocess;
pub mod stats;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
pub use features::{FeatureId, FeatureMatrix};
pub use ingest::QuoteEvent;
pub use windowing::Label;
