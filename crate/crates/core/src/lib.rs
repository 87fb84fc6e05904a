//! Probe-based chest X-ray findings agent: pathology detection from frozen
//! encoder embeddings, phrase-grounded lateralisation, uncertainty-aware
//! report generation, and the evaluation tooling around it.

pub mod embedding_store;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod grounding;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod probe;
pub mod report_text;
pub mod synthetic;
pub mod types;
pub mod uncertainty;

pub use error::{Error, Result};
