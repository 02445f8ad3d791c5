//! Seeded synthetic fact corpus.
//!
//! Each chain gets its own subject and a relation drawn from a fixed table;
//! objects come from a per-kind pool and never repeat inside a chain. Spans
//! abut, so every chain is already sorted and non-overlapping.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::temporal_kb::{TemporalFact, Year};

/// `(relation, subject kind, object kind)`.
pub const RELATIONS: [(&str, &str, &str); 13] = [
    ("head_of_government", "Country", "Politician"),
    ("head_of_state", "Country", "Politician"),
    ("plays_for", "Athlete", "Club"),
    ("head_coach", "Club", "Coach"),
    ("spouse", "Person", "Person"),
    ("member_of_party", "Politician", "Party"),
    ("employer", "Person", "Company"),
    ("chairperson", "Organization", "Executive"),
    ("residence", "Person", "City"),
    ("capital", "Country", "City"),
    ("owned_by", "Company", "Investor"),
    ("ceo", "Company", "Executive"),
    ("mayor", "City", "Politician"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub chains: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub first_year: Year,
    /// No generated fact ends after this year.
    pub last_end: Year,
    pub max_span: Year,
    /// Objects available per object kind.
    pub pool_size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { chains: 500, min_len: 2, max_len: 5, first_year: 1950, last_end: 2022, max_span: 8, pool_size: 120 }
    }
}

impl CorpusConfig {
    fn check(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("bad chain length range {}..={}", self.min_len, self.max_len)));
        }
        if self.max_len > self.pool_size {
            return Err(Error::Config("object pool smaller than the longest chain".into()));
        }
        if self.max_span < 1 || (self.max_len as Year) * self.max_span > self.last_end - self.first_year {
            return Err(Error::Config("year window too small for the requested chains".into()));
        }
        Ok(())
    }
}

/// Facts for `cfg.chains` chains, in chain order.
pub fn generate_corpus(seed: u64, cfg: &CorpusConfig) -> Result<Vec<TemporalFact>> {
    cfg.check()?;
    let mut rng = substream(seed, "corpus");
    let mut facts = Vec::new();
    for i in 0..cfg.chains {
        let (relation, subject_kind, object_kind) = RELATIONS[rng.random_range(0..RELATIONS.len())];
        let subject = format!("{subject_kind}_{i:04}");
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let spans: Vec<Year> = (0..len).map(|_| rng.random_range(1..=cfg.max_span)).collect();
        let total: Year = spans.iter().sum();
        let mut t = rng.random_range(cfg.first_year..=cfg.last_end - total);
        let objects = sample(&mut rng, cfg.pool_size, len);
        for (k, span) in objects.iter().zip(&spans) {
            let object = format!("{object_kind}_{k:03}");
            facts.push(TemporalFact::new(&subject, relation, object, t, Some(t + span))?);
            t += span;
        }
    }
    Ok(facts)
}
