//! SE / ME / EE dataset construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{match_answer, AliasTable};
use crate::model::KnowledgeModel;
use crate::questions::{
    current_questions, historical_explicit, make_question_set, QAItem, QuestionScope, StructuredQuery, TemplatePack,
    TimeRef,
};
use crate::rng::keyed_stream;
use crate::temporal_kb::{validate_chain, FactChain, TemporalFact, Year, YearRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    SE,
    ME,
    EE,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::SE, DatasetKind::ME, DatasetKind::EE];

    pub fn file_stem(self) -> &'static str {
        match self {
            DatasetKind::SE => "se",
            DatasetKind::ME => "me",
            DatasetKind::EE => "ee",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Object and span on one side of an edit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactSpan {
    #[serde(rename = "o")]
    pub object: String,
    #[serde(rename = "ts")]
    pub t_start: Year,
    #[serde(rename = "tu")]
    pub t_end: Option<Year>,
}

impl FactSpan {
    fn of(fact: &TemporalFact) -> Self {
        Self { object: fact.object.clone(), t_start: fact.t_start, t_end: fact.t_end }
    }
}

/// `(s, r, o, t_s, t_u) → (s, r, o*, t_s*, t_u*)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EditOp {
    pub subject: String,
    pub relation: String,
    pub old: FactSpan,
    pub new: FactSpan,
}

impl EditOp {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, old: FactSpan, new: FactSpan) -> Result<Self> {
        let op = Self { subject: subject.into(), relation: relation.into(), old, new };
        op.validate()?;
        Ok(op)
    }

    /// Edit from one chain fact to its successor.
    pub fn between(old: &TemporalFact, new: &TemporalFact) -> Result<Self> {
        if old.subject != new.subject || old.relation != new.relation {
            return Err(Error::Argument("edit facts belong to different chains".into()));
        }
        Self::new(&old.subject, &old.relation, FactSpan::of(old), FactSpan::of(new))
    }

    pub fn is_extending(&self) -> bool {
        self.old.object == self.new.object
            && self.old.t_start == self.new.t_start
            && matches!((self.old.t_end, self.new.t_end), (Some(a), Some(b)) if b > a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.new.t_end.is_none() {
            return Err(Error::Argument("edit target span must be closed".into()));
        }
        if self.new.t_end.is_some_and(|e| e < self.new.t_start) {
            return Err(Error::Argument("edit target span is inverted".into()));
        }
        let chronological = self.old.t_end.is_some_and(|e| e <= self.new.t_start && e >= self.old.t_start);
        if chronological || self.is_extending() {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "edit {}::{} is neither chronological nor extending",
                self.subject, self.relation
            )))
        }
    }

    pub fn old_fact(&self) -> TemporalFact {
        TemporalFact {
            subject: self.subject.clone(),
            relation: self.relation.clone(),
            object: self.old.object.clone(),
            t_start: self.old.t_start,
            t_end: self.old.t_end,
        }
    }

    pub fn new_fact(&self) -> TemporalFact {
        TemporalFact {
            subject: self.subject.clone(),
            relation: self.relation.clone(),
            object: self.new.object.clone(),
            t_start: self.new.t_start,
            t_end: self.new.t_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "RecordDoc", try_from = "RecordDoc")]
pub struct BenchRecord {
    pub chain_id: String,
    pub kind: DatasetKind,
    pub subject: String,
    pub relation: String,
    pub edits: Vec<EditOp>,
    pub questions_per_edit: Vec<Vec<QAItem>>,
    pub final_historical_questions: Vec<QAItem>,
}

impl BenchRecord {
    pub fn validate(&self) -> Result<()> {
        let expected = match self.kind {
            DatasetKind::SE | DatasetKind::EE => self.edits.len() == 1,
            DatasetKind::ME => self.edits.len() >= 2,
        };
        if !expected {
            return Err(Error::Argument(format!("{} record with {} edits", self.kind, self.edits.len())));
        }
        if self.questions_per_edit.len() != self.edits.len() {
            return Err(Error::Argument("one question set per edit required".into()));
        }
        for e in &self.edits {
            if e.subject != self.subject || e.relation != self.relation {
                return Err(Error::Argument("edit does not match record subject/relation".into()));
            }
            e.validate()?;
        }
        for pair in self.edits.windows(2) {
            if pair[1].old != pair[0].new {
                return Err(Error::Argument("consecutive edits are not chained".into()));
            }
        }
        Ok(())
    }

    /// All QA items in the record.
    pub fn items(&self) -> impl Iterator<Item = &QAItem> {
        self.questions_per_edit.iter().flatten().chain(self.final_historical_questions.iter())
    }
}

#[derive(Serialize, Deserialize)]
struct EditDoc {
    old: FactSpan,
    new: FactSpan,
}

#[derive(Serialize, Deserialize)]
struct RecordDoc {
    chain_id: String,
    kind: DatasetKind,
    subject: String,
    relation: String,
    edits: Vec<EditDoc>,
    questions_per_edit: Vec<Vec<QAItem>>,
    #[serde(default)]
    final_historical_questions: Vec<QAItem>,
}

impl From<BenchRecord> for RecordDoc {
    fn from(r: BenchRecord) -> Self {
        RecordDoc {
            chain_id: r.chain_id,
            kind: r.kind,
            subject: r.subject,
            relation: r.relation,
            edits: r.edits.into_iter().map(|e| EditDoc { old: e.old, new: e.new }).collect(),
            questions_per_edit: r.questions_per_edit,
            final_historical_questions: r.final_historical_questions,
        }
    }
}

impl TryFrom<RecordDoc> for BenchRecord {
    type Error = String;

    fn try_from(doc: RecordDoc) -> std::result::Result<Self, String> {
        let record = BenchRecord {
            edits: doc
                .edits
                .into_iter()
                .map(|e| EditOp { subject: doc.subject.clone(), relation: doc.relation.clone(), old: e.old, new: e.new })
                .collect(),
            chain_id: doc.chain_id,
            kind: doc.kind,
            subject: doc.subject,
            relation: doc.relation,
            questions_per_edit: doc.questions_per_edit,
            final_historical_questions: doc.final_historical_questions,
        };
        record.validate().map_err(|e| e.to_string())?;
        Ok(record)
    }
}

// ---------------------------------------------------------------------------
// Model time and fake facts
// ---------------------------------------------------------------------------

/// Index of the latest chain fact the model recalls at its span midpoint.
pub fn locate_model_time(
    model: &dyn KnowledgeModel,
    chain: &FactChain,
    aliases: &AliasTable,
    horizon: Year,
) -> Result<Option<usize>> {
    for (i, fact) in chain.facts.iter().enumerate().rev() {
        let q = StructuredQuery::new(&fact.subject, &fact.relation, TimeRef::Year(fact.midpoint_year(horizon)));
        let answer = model
            .query(&q)
            .map_err(|e| Error::ChainQuery { chain_id: chain.id(), source: Box::new(e) })?;
        if match_answer(&answer.object, &fact.object, aliases) {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Objects observed under each relation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObjectPools {
    pools: BTreeMap<String, BTreeSet<String>>,
}

impl ObjectPools {
    pub fn from_chains(chains: &[FactChain]) -> Self {
        let mut pools: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for chain in chains {
            pools.entry(chain.relation.clone()).or_default().extend(chain.objects().map(str::to_string));
        }
        Self { pools }
    }

    pub fn insert(&mut self, relation: &str, object: &str) {
        self.pools.entry(relation.to_string()).or_default().insert(object.to_string());
    }

    pub fn get(&self, relation: &str) -> Option<&BTreeSet<String>> {
        self.pools.get(relation)
    }
}

pub const FAKE_SPAN_YEARS: std::ops::RangeInclusive<Year> = 2..=6;

/// Counterfactual fact that continues `chain` past its last fact.
pub fn sample_fake_fact<R: Rng>(
    chain: &FactChain,
    pools: &ObjectPools,
    rng: &mut R,
    horizon: Year,
) -> Result<TemporalFact> {
    let last = chain
        .facts
        .last()
        .ok_or_else(|| Error::Precondition(format!("{}: empty chain", chain.id())))?;
    let used: BTreeSet<&str> = chain.objects().collect();
    let candidates: Vec<&String> = pools
        .get(&chain.relation)
        .into_iter()
        .flatten()
        .filter(|o| !used.contains(o.as_str()))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Sampling(format!("{}: pool exhausted", chain.id())));
    }
    let object = candidates[rng.random_range(0..candidates.len())].clone();
    let t_start = last.effective_end(horizon);
    let delta = rng.random_range(FAKE_SPAN_YEARS);
    let t_end = (t_start + delta).min(horizon).max(t_start);
    TemporalFact::new(&chain.subject, &chain.relation, object, t_start, Some(t_end))
}

/// Close an open last fact at the horizon and append `fake`.
pub fn append_fact(chain: &mut FactChain, fake: TemporalFact, horizon: Year) {
    if let Some(last) = chain.facts.last_mut() {
        last.t_end = Some(last.effective_end(horizon));
    }
    chain.facts.push(fake);
}

// ---------------------------------------------------------------------------
// Record builders
// ---------------------------------------------------------------------------

fn closed(fact: &TemporalFact, horizon: Year) -> TemporalFact {
    TemporalFact { t_end: Some(fact.effective_end(horizon)), ..fact.clone() }
}

fn closed_chain(chain: &FactChain, horizon: Year) -> FactChain {
    FactChain {
        subject: chain.subject.clone(),
        relation: chain.relation.clone(),
        facts: chain.facts.iter().map(|f| closed(f, horizon)).collect(),
    }
}

fn record(chain: &FactChain, kind: DatasetKind, edits: Vec<EditOp>, questions: Vec<Vec<QAItem>>) -> BenchRecord {
    BenchRecord {
        chain_id: chain.id(),
        kind,
        subject: chain.subject.clone(),
        relation: chain.relation.clone(),
        edits,
        questions_per_edit: questions,
        final_historical_questions: Vec::new(),
    }
}

/// Single edit from the first fact to the second.
pub fn build_se(chain: &FactChain, pack: &TemplatePack, aliases: &AliasTable, horizon: Year) -> Result<BenchRecord> {
    if chain.len() < 2 {
        return Err(Error::Precondition(format!("{}: SE needs two facts", chain.id())));
    }
    let chain = closed_chain(chain, horizon);
    let edit = EditOp::between(&chain.facts[0], &chain.facts[1])?;
    let questions = make_question_set(&chain, 1, pack, aliases, QuestionScope::Full, horizon)?;
    Ok(record(&chain, DatasetKind::SE, vec![edit], vec![questions]))
}

/// Consecutive edits through the whole chain.
pub fn build_me(chain: &FactChain, pack: &TemplatePack, aliases: &AliasTable, horizon: Year) -> Result<BenchRecord> {
    if chain.len() < 3 {
        return Err(Error::Precondition(format!("{}: ME needs three facts", chain.id())));
    }
    let chain = closed_chain(chain, horizon);
    let mut edits = Vec::new();
    let mut questions = Vec::new();
    for k in 1..chain.len() {
        edits.push(EditOp::between(&chain.facts[k - 1], &chain.facts[k])?);
        questions.push(make_question_set(&chain, k, pack, aliases, QuestionScope::Full, horizon)?);
    }
    let mut rec = record(&chain, DatasetKind::ME, edits, questions);
    rec.final_historical_questions = chain.facts[..chain.len() - 1]
        .iter()
        .map(|f| historical_explicit(f, pack, aliases, horizon))
        .collect::<Result<_>>()?;
    Ok(rec)
}

/// Extend the first fact's span by `extension` years.
pub fn build_ee(
    chain: &FactChain,
    pack: &TemplatePack,
    aliases: &AliasTable,
    extension: Year,
    horizon: Year,
) -> Result<BenchRecord> {
    if extension <= 0 {
        return Err(Error::Argument(format!("extension must be positive, got {extension}")));
    }
    let first = chain
        .facts
        .first()
        .ok_or_else(|| Error::Precondition(format!("{}: EE needs a fact", chain.id())))?;
    let old_end = first.effective_end(horizon);
    let new_end = old_end + extension;
    let old = FactSpan { object: first.object.clone(), t_start: first.t_start, t_end: Some(old_end) };
    let new = FactSpan { t_end: Some(new_end), ..old.clone() };
    let edit = EditOp::new(&chain.subject, &chain.relation, old, new)?;
    // Explicit questions ask about the added years (old_end, new_end].
    let year = (old_end + 1 + new_end).div_euclid(2);
    let questions = current_questions(&edit.new_fact(), pack, aliases, (old_end, new_end), year)?;
    Ok(record(chain, DatasetKind::EE, vec![edit], vec![questions]))
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub horizon: YearRange,
    pub seed: u64,
    pub fake_facts: bool,
    pub extension_years: Year,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { horizon: YearRange::default(), seed: 0, fake_facts: true, extension_years: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildLogEntry {
    pub chain_id: String,
    pub kind: Option<DatasetKind>,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct Datasets {
    pub se: Vec<BenchRecord>,
    pub me: Vec<BenchRecord>,
    pub ee: Vec<BenchRecord>,
    pub log: Vec<BuildLogEntry>,
}

impl Datasets {
    pub fn get(&self, kind: DatasetKind) -> &[BenchRecord] {
        match kind {
            DatasetKind::SE => &self.se,
            DatasetKind::ME => &self.me,
            DatasetKind::EE => &self.ee,
        }
    }
}

/// Build all three datasets. Each chain is re-rooted at model time (index 0
/// when no model is given) and, optionally, extended by one fake future fact.
pub fn build_datasets(
    chains: &[FactChain],
    pack: &TemplatePack,
    aliases: &AliasTable,
    options: &BuildOptions,
    model: Option<&dyn KnowledgeModel>,
) -> Result<Datasets> {
    let horizon = options.horizon.horizon();
    let pools = ObjectPools::from_chains(chains);
    let mut out = Datasets::default();
    let skip = |chain_id: &str, kind: Option<DatasetKind>, message: String| BuildLogEntry {
        chain_id: chain_id.to_string(),
        kind,
        message,
    };
    let mut log = Vec::new();
    for chain in chains {
        let chain_id = chain.id();
        let verdict = validate_chain(chain);
        if !verdict.is_ok() {
            log.push(skip(&chain_id, None, format!("invalid chain: {}", verdict.describe().join("; "))));
            continue;
        }
        let root = match model {
            Some(m) => match locate_model_time(m, chain, aliases, horizon)? {
                Some(i) => i,
                None => {
                    log.push(skip(&chain_id, None, "model recalls no fact of this chain".into()));
                    continue;
                }
            },
            None => 0,
        };
        let mut chain = chain.rerooted(root);
        if options.fake_facts {
            let mut rng = keyed_stream(options.seed, &["fake-facts", &chain_id]);
            match sample_fake_fact(&chain, &pools, &mut rng, horizon) {
                Ok(fake) => append_fact(&mut chain, fake, horizon),
                Err(e) => log.push(skip(&chain_id, None, e.to_string())),
            }
        }
        for kind in DatasetKind::ALL {
            let built = match kind {
                DatasetKind::SE => build_se(&chain, pack, aliases, horizon),
                DatasetKind::ME => build_me(&chain, pack, aliases, horizon),
                DatasetKind::EE => build_ee(&chain, pack, aliases, options.extension_years, horizon),
            };
            match built {
                Ok(rec) => match kind {
                    DatasetKind::SE => out.se.push(rec),
                    DatasetKind::ME => out.me.push(rec),
                    DatasetKind::EE => out.ee.push(rec),
                },
                Err(e @ (Error::Precondition(_) | Error::Template(_) | Error::Render(_))) => {
                    log.push(skip(&chain_id, Some(kind), e.to_string()))
                }
                Err(e) => return Err(e),
            }
        }
    }
    out.log = log;
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

pub fn write_dataset<W: Write>(mut out: W, records: &[BenchRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Dataset { line: idx + 1, message: e.to_string() })?;
        records.push(rec);
    }
    Ok(records)
}
