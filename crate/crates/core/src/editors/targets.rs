use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bench::{locate_model_time, EditOp};
use crate::error::{Error, Result};
use crate::evaluation::AliasTable;
use crate::model::{KnowledgeModel, LamModel, SpanBoundary, TimeToken};
use crate::temporal_kb::{FactChain, TemporalFact, Year};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTag {
    CurrentObject,
    HistoricalObject,
    CurrentRelative,
    PreviousRelative,
    SpanStart,
    SpanEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceTime {
    Year(Year),
    Current,
    Previous,
    Span { start: Year, end: Year },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub time: ProvenanceTime,
}

/// One key/value association to write into the memory.
#[derive(Clone, Debug, PartialEq)]
pub struct EditTarget {
    pub key: DVector<f64>,
    pub value: DVector<f64>,
    pub tag: TargetTag,
    pub provenance: Provenance,
}

struct Emitter<'a> {
    model: &'a LamModel,
    fact: &'a TemporalFact,
    out: Vec<EditTarget>,
}

impl<'a> Emitter<'a> {
    fn new(model: &'a LamModel, fact: &'a TemporalFact) -> Self {
        Self { model, fact, out: Vec::new() }
    }

    fn provenance(&self, time: ProvenanceTime) -> Provenance {
        Provenance {
            subject: self.fact.subject.clone(),
            relation: self.fact.relation.clone(),
            object: self.fact.object.clone(),
            time,
        }
    }

    fn object_value(&self) -> Result<DVector<f64>> {
        Ok(self.model.codebooks().entities.vector(&self.fact.object)?.into_owned())
    }

    fn object(&mut self, token: TimeToken, tag: TargetTag) -> Result<()> {
        let f = self.fact;
        let key = self.model.encode_obj_key(&f.subject, &f.relation, token)?;
        let time = match token {
            TimeToken::Year(y) => ProvenanceTime::Year(y),
            TimeToken::Current => ProvenanceTime::Current,
            TimeToken::Previous => ProvenanceTime::Previous,
        };
        self.out.push(EditTarget { key, value: self.object_value()?, tag, provenance: self.provenance(time) });
        Ok(())
    }

    fn years(&mut self, years: std::ops::RangeInclusive<Year>, tag: TargetTag) -> Result<()> {
        for y in years {
            self.object(TimeToken::Year(y), tag)?;
        }
        Ok(())
    }

    fn spans(&mut self, start: Year, end: Year) -> Result<()> {
        let f = self.fact;
        let books = self.model.codebooks();
        for (boundary, year, tag) in
            [(SpanBoundary::Start, start, TargetTag::SpanStart), (SpanBoundary::End, end, TargetTag::SpanEnd)]
        {
            let key = self.model.encode_span_key(&f.subject, &f.relation, &f.object, boundary)?;
            let value = books.year_vector(year)?.into_owned();
            self.out.push(EditTarget { key, value, tag, provenance: self.provenance(ProvenanceTime::Span { start, end }) });
        }
        Ok(())
    }
}

fn closed_end(fact: &TemporalFact, model: &LamModel) -> Year {
    fact.effective_end(model.horizon())
}

/// Targets that install `fact` as current knowledge over `years`.
fn current_targets(model: &LamModel, fact: &TemporalFact, years: std::ops::RangeInclusive<Year>) -> Result<Vec<EditTarget>> {
    let mut e = Emitter::new(model, fact);
    e.years(years, TargetTag::CurrentObject)?;
    e.object(TimeToken::Current, TargetTag::CurrentRelative)?;
    e.spans(fact.t_start, closed_end(fact, model))?;
    Ok(e.out)
}

/// Targets that keep `fact` as history once `successor` replaces it. Years
/// the successor also claims are left to the successor.
fn historical_targets(model: &LamModel, fact: &TemporalFact, successor: Option<&TemporalFact>) -> Result<Vec<EditTarget>> {
    let end = closed_end(fact, model);
    let mut last = end;
    if let Some(next) = successor {
        if next.t_start <= end && next.t_start > fact.t_start {
            last = next.t_start - 1;
        }
    }
    let mut e = Emitter::new(model, fact);
    e.years(fact.t_start..=last, TargetTag::HistoricalObject)?;
    if successor.is_some_and(|next| next.object != fact.object) {
        e.object(TimeToken::Previous, TargetTag::PreviousRelative)?;
    }
    e.spans(fact.t_start, end)?;
    Ok(e.out)
}

/// Baseline compilation: only the new knowledge. For an extending edit only
/// the added years are written.
pub fn compile_targets(edit: &EditOp, model: &LamModel) -> Result<Vec<EditTarget>> {
    edit.validate()?;
    let new = edit.new_fact();
    let end = closed_end(&new, model);
    let first = match (edit.is_extending(), edit.old.t_end) {
        (true, Some(old_end)) => old_end + 1,
        _ => new.t_start,
    };
    current_targets(model, &new, first..=end)
}

/// Model-time knowledge, knowledge to capture, and the compiled target set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetoTargets {
    pub c_m: Vec<TemporalFact>,
    pub c_m_plus: Vec<TemporalFact>,
    pub c_t: Vec<EditTarget>,
    /// Ranges of `c_t` applied as separate editing steps, one per chain step.
    pub steps: Vec<Range<usize>>,
}

/// Split `chain` at the model's current knowledge.
pub fn meto_extract(
    model: &dyn KnowledgeModel,
    chain: &FactChain,
    aliases: &AliasTable,
    horizon: Year,
) -> Result<MetoTargets> {
    let idx = locate_model_time(model, chain, aliases, horizon)?
        .ok_or_else(|| Error::Extraction(format!("{}: model recalls no fact of this chain", chain.id())))?;
    Ok(MetoTargets {
        c_m: vec![chain.facts[idx].clone()],
        c_m_plus: chain.facts[idx + 1..].to_vec(),
        ..Default::default()
    })
}

/// METO sets for a single edit: the old fact is model-time knowledge.
pub fn meto_for_edit(edit: &EditOp) -> MetoTargets {
    MetoTargets { c_m: vec![edit.old_fact()], c_m_plus: vec![edit.new_fact()], ..Default::default() }
}

/// Fill `c_t`. Step `k` keeps fact `k-1` as history (with PREVIOUS pointing at
/// it) and installs fact `k` as current; span targets are emitted for both.
pub fn meto_compile(mut targets: MetoTargets, model: &LamModel) -> Result<MetoTargets> {
    if targets.c_m.is_empty() {
        return Err(Error::Extraction("no model-time knowledge to preserve".into()));
    }
    let all: Vec<TemporalFact> = targets.c_m.iter().chain(&targets.c_m_plus).cloned().collect();
    let mut c_t = Vec::new();
    let mut steps = Vec::new();
    if targets.c_m_plus.is_empty() {
        for fact in &targets.c_m {
            c_t.extend(historical_targets(model, fact, None)?);
        }
        steps.push(0..c_t.len());
    }
    for k in targets.c_m.len()..all.len() {
        let begin = c_t.len();
        let (prev, cur) = (&all[k - 1], &all[k]);
        let history = historical_targets(model, prev, Some(cur))?;
        if prev.object == cur.object && cur.t_start == prev.t_start {
            // Same span keys as the extended fact: its span targets win.
            c_t.extend(history.into_iter().filter(|t| !matches!(t.tag, TargetTag::SpanStart | TargetTag::SpanEnd)));
            let end = closed_end(cur, model);
            let first = closed_end(prev, model) + 1;
            c_t.extend(current_targets(model, cur, first..=end)?);
        } else {
            c_t.extend(history);
            c_t.extend(current_targets(model, cur, cur.t_start..=closed_end(cur, model))?);
        }
        steps.push(begin..c_t.len());
    }
    targets.c_t = c_t;
    targets.steps = steps;
    Ok(targets)
}
