//! Temporal knowledge editing workbench.
//!
//! Fact chains are turned into single-edit, multi-edit and extending-edit
//! datasets; a linear associative memory stands in for the edited model; the
//! editors write new knowledge into it with or without preserving history;
//! and the evaluation module scores current and historical recall.

pub mod bench;
pub mod corpus;
pub mod editors;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod questions;
pub mod rng;
pub mod suite;
pub mod temporal_kb;

pub use bench::{BenchRecord, DatasetKind, EditOp, FactSpan};
pub use editors::{EditorConfig, Method};
pub use error::{Error, Result};
pub use evaluation::{AliasTable, Metric, MetricsReport};
pub use model::{LamModel, ModelConfig};
pub use questions::{QAItem, StructuredQuery, TemplatePack, TimeRef};
pub use temporal_kb::{FactChain, TemporalFact, Year, YearRange};
