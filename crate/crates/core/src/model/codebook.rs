use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::keyed_stream;
use crate::temporal_kb::{Year, YearRange};

/// Unit vectors keyed by id, stored as the columns of a `d × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    kind: &'static str,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: DMatrix<f64>,
}

/// The vector for `id` depends only on `(seed, kind, id)`.
pub fn unit_vector(seed: u64, kind: &str, id: &str, d: usize) -> DVector<f64> {
    let mut rng = keyed_stream(seed, &["codebook", kind, id]);
    let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    v / norm
}

impl Codebook {
    /// Build a codebook; repeated ids keep their first position.
    pub fn generate<I, S>(seed: u64, kind: &'static str, d: usize, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ordered = Vec::new();
        let mut index = HashMap::new();
        for id in ids {
            let id = id.into();
            if !index.contains_key(&id) {
                index.insert(id.clone(), ordered.len());
                ordered.push(id);
            }
        }
        let mut vectors = DMatrix::zeros(d, ordered.len());
        for (j, id) in ordered.iter().enumerate() {
            vectors.set_column(j, &unit_vector(seed, kind, id, d));
        }
        Self { kind, ids: ordered, index, vectors }
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Result<DVectorView<'_, f64>> {
        let j = self
            .index_of(id)
            .ok_or_else(|| Error::UnknownId { kind: self.kind, id: id.to_string() })?;
        Ok(self.vectors.column(j))
    }

    pub fn column(&self, j: usize) -> DVectorView<'_, f64> {
        self.vectors.column(j)
    }
}

pub const CURRENT: &str = "CURRENT";
pub const PREVIOUS: &str = "PREVIOUS";
pub const SPAN_START: &str = "SPAN_START";
pub const SPAN_END: &str = "SPAN_END";

/// Time component of a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimeToken {
    Year(Year),
    Current,
    Previous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanBoundary {
    Start,
    End,
}

impl SpanBoundary {
    fn token(self) -> &'static str {
        match self {
            SpanBoundary::Start => SPAN_START,
            SpanBoundary::End => SPAN_END,
        }
    }
}

/// All codebooks a model reads from. Shared read-only between model copies.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebooks {
    pub seed: u64,
    pub year_range: YearRange,
    pub entities: Codebook,
    pub relations: Codebook,
    pub years: Codebook,
    pub tokens: Codebook,
}

impl Codebooks {
    pub fn new<E, R>(seed: u64, d: usize, entities: E, relations: R, year_range: YearRange) -> Self
    where
        E: IntoIterator,
        E::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        Self {
            seed,
            year_range,
            entities: Codebook::generate(seed, "entity", d, entities),
            relations: Codebook::generate(seed, "relation", d, relations),
            years: Codebook::generate(seed, "year", d, year_range.years().map(|y| y.to_string())),
            tokens: Codebook::generate(seed, "token", d, [CURRENT, PREVIOUS, SPAN_START, SPAN_END]),
        }
    }

    pub fn dim(&self) -> usize {
        self.tokens.dim()
    }

    pub fn year_vector(&self, year: Year) -> Result<DVectorView<'_, f64>> {
        if !self.year_range.contains(year) {
            return Err(Error::UnknownId { kind: "year", id: year.to_string() });
        }
        Ok(self.years.column((year - self.year_range.first) as usize))
    }

    pub fn year_at(&self, column: usize) -> Year {
        self.year_range.first + column as Year
    }

    fn time_vector(&self, token: TimeToken) -> Result<DVectorView<'_, f64>> {
        match token {
            TimeToken::Year(y) => self.year_vector(y),
            TimeToken::Current => self.tokens.vector(CURRENT),
            TimeToken::Previous => self.tokens.vector(PREVIOUS),
        }
    }

    /// `normalize(e_s + e_r + e_t)`.
    pub fn obj_key(&self, subject: &str, relation: &str, time: TimeToken) -> Result<DVector<f64>> {
        let sum = self.entities.vector(subject)? + self.relations.vector(relation)? + self.time_vector(time)?;
        Ok(normalized(sum))
    }

    /// `normalize(e_s + e_r + e_o + e_boundary)`.
    pub fn span_key(&self, subject: &str, relation: &str, object: &str, boundary: SpanBoundary) -> Result<DVector<f64>> {
        let sum = self.entities.vector(subject)?
            + self.relations.vector(relation)?
            + self.entities.vector(object)?
            + self.tokens.vector(boundary.token())?;
        Ok(normalized(sum))
    }
}

fn normalized(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_are_unit_and_seeded() {
        let a = Codebook::generate(42, "entity", 64, ["x", "y", "x"]);
        let b = Codebook::generate(42, "entity", 64, ["y", "x"]);
        assert_eq!(a.len(), 2);
        assert_eq!(a.vector("x").unwrap(), b.vector("x").unwrap());
        for j in 0..a.len() {
            assert!((a.column(j).norm() - 1.0).abs() < 1e-9);
        }
        let c = Codebook::generate(43, "entity", 64, ["x"]);
        assert_ne!(a.vector("x").unwrap(), c.vector("x").unwrap());
    }

    #[test]
    fn unknown_id_is_an_error() {
        let books = Codebooks::new(1, 32, ["s"], ["r"], YearRange::new(2000, 2010).unwrap());
        assert!(matches!(books.obj_key("nope", "r", TimeToken::Current), Err(Error::UnknownId { kind: "entity", .. })));
        assert!(books.obj_key("s", "r", TimeToken::Year(2011)).is_err());
        assert!(books.span_key("s", "r", "nope", SpanBoundary::Start).is_err());
    }
}
