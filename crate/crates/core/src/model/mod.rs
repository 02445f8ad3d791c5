//! Editable knowledge models and the reference linear associative memory.

pub mod codebook;
pub mod lam;
pub mod persist;

pub use codebook::{Codebook, Codebooks, SpanBoundary, TimeToken};
pub use lam::{Answer, Covariance, LamModel, ModelConfig, SpanPrediction};

use crate::error::Result;
use crate::questions::StructuredQuery;

/// Anything that can answer structured queries.
pub trait KnowledgeModel {
    fn query(&self, q: &StructuredQuery) -> Result<Answer>;
}
