//! Timestamped facts and per-(subject, relation) chains.
//!
//! Raw facts come in as tab-separated lines. [`build_chains`] groups them by
//! subject and relation, merges duplicate spans of the same object, and then
//! walks each group in `(t_start, object)` order clipping or dropping facts
//! until consecutive spans no longer overlap.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Year = i32;

/// Inclusive range of years the workbench knows about. `last` doubles as the
/// horizon year that open-ended spans are treated as ending at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct YearRange {
    pub first: Year,
    pub last: Year,
}

impl YearRange {
    pub fn new(first: Year, last: Year) -> Result<Self> {
        if first > last {
            return Err(Error::Config(format!("empty year range {first}..={last}")));
        }
        Ok(Self { first, last })
    }

    pub fn contains(&self, year: Year) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn horizon(&self) -> Year {
        self.last
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn years(&self) -> impl Iterator<Item = Year> {
        self.first..=self.last
    }
}

impl Default for YearRange {
    fn default() -> Self {
        Self { first: 1900, last: 2028 }
    }
}

/// One `(s, r, o, t_s, t_u)` fact. An absent `t_end` means still valid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalFact {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub t_start: Year,
    pub t_end: Option<Year>,
}

impl TemporalFact {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
        t_start: Year,
        t_end: Option<Year>,
    ) -> Result<Self> {
        let fact = Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            t_start,
            t_end,
        };
        fact.check()?;
        Ok(fact)
    }

    fn check(&self) -> Result<()> {
        if self.subject.is_empty() || self.relation.is_empty() || self.object.is_empty() {
            return Err(Error::Argument("subject, relation and object must be non-empty".into()));
        }
        if let Some(end) = self.t_end {
            if end < self.t_start {
                return Err(Error::Argument(format!(
                    "span {}..{} ends before it starts",
                    self.t_start, end
                )));
            }
        }
        Ok(())
    }

    /// End year with open spans closed at `horizon`.
    pub fn effective_end(&self, horizon: Year) -> Year {
        self.t_end.unwrap_or(horizon).max(self.t_start)
    }

    pub fn contains_year(&self, year: Year, horizon: Year) -> bool {
        self.t_start <= year && year <= self.effective_end(horizon)
    }

    /// Year used by explicit-time questions: the floor of the span midpoint.
    pub fn midpoint_year(&self, horizon: Year) -> Year {
        (self.t_start + self.effective_end(horizon)).div_euclid(2)
    }

    fn end_key(&self) -> Year {
        self.t_end.unwrap_or(Year::MAX)
    }
}

impl fmt::Display for TemporalFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.t_end {
            Some(end) => write!(
                f,
                "({}, {}, {}, {}, {})",
                self.subject, self.relation, self.object, self.t_start, end
            ),
            None => write!(
                f,
                "({}, {}, {}, {}, -)",
                self.subject, self.relation, self.object, self.t_start
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

impl From<ParseIssue> for Error {
    fn from(issue: ParseIssue) -> Self {
        Error::Parse { line: issue.line, message: issue.message }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParseOutcome {
    pub facts: Vec<TemporalFact>,
    pub errors: Vec<ParseIssue>,
}

/// Parse a year, truncating anything finer than a year (`2009-05-01` → 2009).
pub fn parse_year(raw: &str) -> std::result::Result<Year, String> {
    let raw = raw.trim();
    let (negative, body) = match raw.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, raw),
    };
    let digits = body.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return Err(format!("`{raw}` is not a year"));
    }
    let rest = &body[digits..];
    if !(rest.is_empty() || rest.starts_with(['-', '.', 'T', '/'])) {
        return Err(format!("`{raw}` is not a year"));
    }
    let value: Year = body[..digits].parse().map_err(|_| format!("`{raw}` is out of range"))?;
    Ok(if negative { -value } else { value })
}

fn parse_line(line: &str) -> std::result::Result<TemporalFact, String> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if !(fields.len() == 4 || fields.len() == 5) {
        return Err(format!("expected 4 or 5 tab-separated fields, found {}", fields.len()));
    }
    let t_start = parse_year(fields[3])?;
    let t_end = match fields.get(4) {
        Some(raw) if !raw.is_empty() => Some(parse_year(raw)?),
        _ => None,
    };
    TemporalFact::new(fields[0], fields[1], fields[2], t_start, t_end).map_err(|e| match e {
        Error::Argument(msg) => msg,
        other => other.to_string(),
    })
}

/// Parse a tab-separated fact stream. Malformed lines are collected with
/// their line number and parsing continues; only I/O failures abort.
pub fn parse_facts<R: BufRead>(reader: R) -> Result<ParseOutcome> {
    let mut outcome = ParseOutcome::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        match parse_line(trimmed) {
            Ok(fact) => outcome.facts.push(fact),
            Err(message) => outcome.errors.push(ParseIssue { line: idx + 1, message }),
        }
    }
    Ok(outcome)
}

pub fn parse_facts_str(text: &str) -> ParseOutcome {
    parse_facts(text.as_bytes()).expect("reading from memory cannot fail")
}

/// Serialize facts back to the tab-separated input format.
pub fn write_facts<W: Write>(mut out: W, facts: &[TemporalFact]) -> Result<()> {
    for f in facts {
        match f.t_end {
            Some(end) => writeln!(out, "{}\t{}\t{}\t{}\t{}", f.subject, f.relation, f.object, f.t_start, end)?,
            None => writeln!(out, "{}\t{}\t{}\t{}", f.subject, f.relation, f.object, f.t_start)?,
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

/// Time-ordered, non-overlapping facts for one (subject, relation).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ChainDoc", try_from = "ChainDoc")]
pub struct FactChain {
    pub subject: String,
    pub relation: String,
    pub facts: Vec<TemporalFact>,
}

impl FactChain {
    pub fn id(&self) -> String {
        format!("{}::{}", self.subject, self.relation)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &str> {
        self.facts.iter().map(|f| f.object.as_str())
    }

    /// Sub-chain starting at `index`.
    pub fn rerooted(&self, index: usize) -> FactChain {
        FactChain {
            subject: self.subject.clone(),
            relation: self.relation.clone(),
            facts: self.facts[index..].to_vec(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChainDoc {
    subject: String,
    relation: String,
    facts: Vec<ChainEntry>,
}

#[derive(Serialize, Deserialize)]
struct ChainEntry {
    object: String,
    t_start: Year,
    t_end: Option<Year>,
}

impl From<FactChain> for ChainDoc {
    fn from(chain: FactChain) -> Self {
        ChainDoc {
            subject: chain.subject,
            relation: chain.relation,
            facts: chain
                .facts
                .into_iter()
                .map(|f| ChainEntry { object: f.object, t_start: f.t_start, t_end: f.t_end })
                .collect(),
        }
    }
}

impl TryFrom<ChainDoc> for FactChain {
    type Error = String;

    fn try_from(doc: ChainDoc) -> std::result::Result<Self, String> {
        let facts = doc
            .facts
            .into_iter()
            .map(|e| {
                TemporalFact::new(doc.subject.clone(), doc.relation.clone(), e.object, e.t_start, e.t_end)
                    .map_err(|err| err.to_string())
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(FactChain { subject: doc.subject, relation: doc.relation, facts })
    }
}

/// What the chain builder did to a fact that did not survive unchanged.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Adjustment {
    /// Merged with another span of the same object.
    Merged { into: TemporalFact },
    /// Start moved forward to the previous fact's end.
    Clipped { from: Year, to: Year },
    /// Open span closed where the next fact starts.
    Closed { at: Year },
    /// Years outside the horizon range cut off.
    HorizonClipped,
    Dropped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLogEntry {
    pub chain_id: String,
    pub fact: TemporalFact,
    pub adjustment: Adjustment,
}

#[derive(Clone, Debug, Default)]
pub struct ChainBuild {
    pub chains: Vec<FactChain>,
    pub log: Vec<ChainLogEntry>,
}

/// Group, merge and de-overlap facts into chains, one per (subject, relation).
pub fn build_chains(facts: &[TemporalFact], horizon: &YearRange) -> ChainBuild {
    let mut groups: BTreeMap<(&str, &str), Vec<TemporalFact>> = BTreeMap::new();
    for f in facts {
        groups.entry((f.subject.as_str(), f.relation.as_str())).or_default().push(f.clone());
    }
    let mut out = ChainBuild::default();
    for ((subject, relation), group) in groups {
        let chain_id = format!("{subject}::{relation}");
        let mut log = |fact: &TemporalFact, adjustment: Adjustment| {
            out.log.push(ChainLogEntry { chain_id: chain_id.clone(), fact: fact.clone(), adjustment });
        };
        let clipped = clip_to_horizon(group, horizon, &mut log);
        let merged = merge_same_object(clipped, &mut log);
        let facts = remove_overlaps(merged, &mut log);
        if !facts.is_empty() {
            out.chains.push(FactChain { subject: subject.to_string(), relation: relation.to_string(), facts });
        }
    }
    out
}

fn clip_to_horizon(
    group: Vec<TemporalFact>,
    horizon: &YearRange,
    log: &mut impl FnMut(&TemporalFact, Adjustment),
) -> Vec<TemporalFact> {
    let mut kept = Vec::with_capacity(group.len());
    for f in group {
        let ends_before = f.t_end.is_some_and(|e| e < horizon.first);
        if f.t_start > horizon.last || ends_before {
            log(&f, Adjustment::Dropped { reason: "outside horizon".into() });
            continue;
        }
        let mut g = f.clone();
        g.t_start = g.t_start.max(horizon.first);
        g.t_end = g.t_end.map(|e| e.min(horizon.last));
        if g != f {
            log(&f, Adjustment::HorizonClipped);
        }
        kept.push(g);
    }
    kept
}

/// Spans of the same object that touch or overlap collapse into one.
fn merge_same_object(
    mut group: Vec<TemporalFact>,
    log: &mut impl FnMut(&TemporalFact, Adjustment),
) -> Vec<TemporalFact> {
    group.sort_by(|a, b| {
        (a.object.as_str(), a.t_start, a.end_key()).cmp(&(b.object.as_str(), b.t_start, b.end_key()))
    });
    let mut merged: Vec<TemporalFact> = Vec::with_capacity(group.len());
    let mut absorbed: Vec<(TemporalFact, usize)> = Vec::new();
    for f in group {
        if let Some(last) = merged.last_mut() {
            if last.object == f.object && f.t_start <= last.end_key() {
                last.t_end = match (last.t_end, f.t_end) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
                absorbed.push((f, merged.len() - 1));
                continue;
            }
        }
        merged.push(f);
    }
    for (fact, idx) in absorbed {
        log(&fact, Adjustment::Merged { into: merged[idx].clone() });
    }
    merged
}

fn remove_overlaps(
    mut group: Vec<TemporalFact>,
    log: &mut impl FnMut(&TemporalFact, Adjustment),
) -> Vec<TemporalFact> {
    group.sort_by(|a, b| {
        (a.t_start, a.object.as_str(), a.end_key()).cmp(&(b.t_start, b.object.as_str(), b.end_key()))
    });
    let mut kept: Vec<TemporalFact> = Vec::with_capacity(group.len());
    for mut f in group {
        let Some(prev) = kept.last_mut() else {
            kept.push(f);
            continue;
        };
        match prev.t_end {
            None => {
                // An open span followed by a later start was never closed in the source.
                if f.t_start > prev.t_start {
                    log(prev, Adjustment::Closed { at: f.t_start });
                    prev.t_end = Some(f.t_start);
                    kept.push(f);
                } else {
                    log(&f, Adjustment::Dropped { reason: "inside an open span".into() });
                }
            }
            Some(prev_end) if f.t_start < prev_end => {
                if f.t_end.is_some_and(|end| prev_end >= end) {
                    log(&f, Adjustment::Dropped { reason: "contained in previous fact".into() });
                } else {
                    log(&f, Adjustment::Clipped { from: f.t_start, to: prev_end });
                    f.t_start = prev_end;
                    kept.push(f);
                }
            }
            Some(_) => kept.push(f),
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChainViolation {
    Empty,
    MixedKey { index: usize },
    EmptyField { index: usize },
    InvertedSpan { index: usize },
    NotSorted { index: usize },
    Overlap { index: usize },
    OpenIntervalNotLast { index: usize },
}

impl fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainViolation::Empty => write!(f, "empty chain"),
            ChainViolation::MixedKey { index } => write!(f, "fact {index}: subject/relation differ from chain"),
            ChainViolation::EmptyField { index } => write!(f, "fact {index}: empty field"),
            ChainViolation::InvertedSpan { index } => write!(f, "fact {index}: t_end before t_start"),
            ChainViolation::NotSorted { index } => write!(f, "fact {index}: not sorted"),
            ChainViolation::Overlap { index } => write!(f, "fact {index}: overlaps the next fact"),
            ChainViolation::OpenIntervalNotLast { index } => write!(f, "fact {index}: open interval not last"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChainVerdict {
    pub violations: Vec<ChainViolation>,
}

impl ChainVerdict {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn describe(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

pub fn validate_chain(chain: &FactChain) -> ChainVerdict {
    let mut violations = Vec::new();
    if chain.facts.is_empty() {
        violations.push(ChainViolation::Empty);
    }
    let last = chain.facts.len().saturating_sub(1);
    for (i, f) in chain.facts.iter().enumerate() {
        if f.subject.is_empty() || f.relation.is_empty() || f.object.is_empty() {
            violations.push(ChainViolation::EmptyField { index: i });
        }
        if f.subject != chain.subject || f.relation != chain.relation {
            violations.push(ChainViolation::MixedKey { index: i });
        }
        if f.t_end.is_some_and(|e| e < f.t_start) {
            violations.push(ChainViolation::InvertedSpan { index: i });
        }
        if i < last && f.t_end.is_none() {
            violations.push(ChainViolation::OpenIntervalNotLast { index: i });
        }
        if let Some(next) = chain.facts.get(i + 1) {
            if next.t_start < f.t_start {
                violations.push(ChainViolation::NotSorted { index: i + 1 });
            }
            if f.t_end.is_some_and(|e| e > next.t_start) {
                violations.push(ChainViolation::Overlap { index: i });
            }
        }
    }
    ChainVerdict { violations }
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

pub fn write_chains<W: Write>(mut out: W, chains: &[FactChain]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, chains)?;
    writeln!(out)?;
    Ok(())
}

pub fn read_chains<R: Read>(reader: R) -> Result<Vec<FactChain>> {
    Ok(serde_json::from_reader(reader)?)
}
