//! Question templates and rendered QA items.
//!
//! A template pack is a tab-separated document with one template per line:
//! `relation  mode  variant  pattern`. Patterns use the slots `{s}`, `{o}`,
//! `{ts}` and `{tu}`; entity ids are rendered with underscores as spaces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::AliasTable;
use crate::temporal_kb::{FactChain, TemporalFact, Year};

pub const DEFAULT_PACK: &str = include_str!("../data/templates/default.tsv");
pub const SYNTHETIC_PACK: &str = include_str!("../data/templates/synthetic.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    Explicit,
    RelativeCurrent,
    RelativePrevious,
}

impl TemplateMode {
    pub const ALL: [TemplateMode; 3] =
        [TemplateMode::Explicit, TemplateMode::RelativeCurrent, TemplateMode::RelativePrevious];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateMode::Explicit => "explicit",
            TemplateMode::RelativeCurrent => "relative_current",
            TemplateMode::RelativePrevious => "relative_previous",
        }
    }
}

impl FromStr for TemplateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Template(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub relation: String,
    pub mode: TemplateMode,
    pub variant: u32,
    pub pattern: String,
}

impl QuestionTemplate {
    fn check(&self) -> Result<()> {
        let timed = self.pattern.contains("{ts}") || self.pattern.contains("{tu}");
        match (self.mode, timed) {
            (TemplateMode::Explicit, false) => Err(Error::Template(format!(
                "{}: explicit pattern has no time slot: {}",
                self.relation, self.pattern
            ))),
            (TemplateMode::RelativeCurrent | TemplateMode::RelativePrevious, true) => Err(Error::Template(format!(
                "{}: relative pattern names a time: {}",
                self.relation, self.pattern
            ))),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Queries and QA items
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRef {
    Year(Year),
    Current,
    Previous,
}

impl fmt::Display for TimeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeRef::Year(y) => write!(f, "{y}"),
            TimeRef::Current => f.write_str("CURRENT"),
            TimeRef::Previous => f.write_str("PREVIOUS"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredQuery {
    #[serde(rename = "s")]
    pub subject: String,
    #[serde(rename = "r")]
    pub relation: String,
    pub time_ref: TimeRef,
}

impl StructuredQuery {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, time_ref: TimeRef) -> Self {
        Self { subject: subject.into(), relation: relation.into(), time_ref }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeTag {
    Current,
    Historical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionClass {
    #[serde(rename = "CES")]
    Ces,
    #[serde(rename = "CES-P")]
    CesP,
    #[serde(rename = "CRS")]
    Crs,
    #[serde(rename = "HES")]
    Hes,
    #[serde(rename = "HRS")]
    Hrs,
}

impl QuestionClass {
    pub const ALL: [QuestionClass; 5] =
        [QuestionClass::Ces, QuestionClass::CesP, QuestionClass::Crs, QuestionClass::Hes, QuestionClass::Hrs];

    /// Class implied by an item's tag, time reference and template variant.
    pub fn classify(tag: KnowledgeTag, time_ref: TimeRef, variant: u32) -> Option<Self> {
        match (tag, time_ref) {
            (KnowledgeTag::Current, TimeRef::Year(_)) if variant == 0 => Some(QuestionClass::Ces),
            (KnowledgeTag::Current, TimeRef::Year(_)) => Some(QuestionClass::CesP),
            (KnowledgeTag::Current, TimeRef::Current) => Some(QuestionClass::Crs),
            (KnowledgeTag::Historical, TimeRef::Year(_)) => Some(QuestionClass::Hes),
            (KnowledgeTag::Historical, TimeRef::Previous) => Some(QuestionClass::Hrs),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionClass::Ces => "CES",
            QuestionClass::CesP => "CES-P",
            QuestionClass::Crs => "CRS",
            QuestionClass::Hes => "HES",
            QuestionClass::Hrs => "HRS",
        }
    }
}

impl fmt::Display for QuestionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub text: String,
    pub query: StructuredQuery,
    pub gold: String,
    pub aliases: BTreeSet<String>,
    pub knowledge_tag: KnowledgeTag,
    pub question_class: QuestionClass,
    #[serde(default)]
    pub variant: u32,
}

impl QAItem {
    /// True when the stored class matches the one recomputed from the other fields.
    pub fn is_consistent(&self) -> bool {
        QuestionClass::classify(self.knowledge_tag, self.query.time_ref, self.variant) == Some(self.question_class)
    }
}

/// Human-readable form of an entity id.
pub fn display_name(id: &str) -> String {
    id.replace('_', " ")
}

// ---------------------------------------------------------------------------
// Template packs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct RelationTemplates {
    explicit: Vec<QuestionTemplate>,
    current: Vec<QuestionTemplate>,
    previous: Vec<QuestionTemplate>,
}

impl RelationTemplates {
    fn slot(&mut self, mode: TemplateMode) -> &mut Vec<QuestionTemplate> {
        match mode {
            TemplateMode::Explicit => &mut self.explicit,
            TemplateMode::RelativeCurrent => &mut self.current,
            TemplateMode::RelativePrevious => &mut self.previous,
        }
    }
}

/// Loaded templates, indexed by relation and mode, each list ordered by variant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TemplatePack {
    relations: BTreeMap<String, RelationTemplates>,
}

impl TemplatePack {
    pub fn parse(text: &str) -> Result<Self> {
        let mut relations: BTreeMap<String, RelationTemplates> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            let [relation, mode, variant, pattern] = fields[..] else {
                return Err(Error::Parse { line: idx + 1, message: "expected relation, mode, variant, pattern".into() });
            };
            let template = QuestionTemplate {
                relation: relation.trim().to_string(),
                mode: mode.trim().parse().map_err(|e: Error| Error::Parse { line: idx + 1, message: e.to_string() })?,
                variant: variant
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse { line: idx + 1, message: format!("bad variant `{variant}`") })?,
                pattern: pattern.trim().to_string(),
            };
            template.check()?;
            let list = relations.entry(template.relation.clone()).or_default().slot(template.mode);
            if list.iter().any(|t| t.variant == template.variant) {
                return Err(Error::Template(format!(
                    "{}: duplicate {} variant {}",
                    template.relation,
                    template.mode.as_str(),
                    template.variant
                )));
            }
            list.push(template);
        }
        for (relation, set) in relations.iter_mut() {
            for mode in TemplateMode::ALL {
                let list = set.slot(mode);
                if list.is_empty() {
                    return Err(Error::Template(format!("{relation}: missing mode {}", mode.as_str())));
                }
                list.sort_by_key(|t| t.variant);
            }
            if !set.explicit.iter().any(|t| t.variant >= 1) {
                return Err(Error::Template(format!("{relation}: explicit mode needs a paraphrase variant")));
            }
            if set.explicit[0].variant != 0 {
                return Err(Error::Template(format!("{relation}: explicit mode has no canonical variant 0")));
            }
        }
        Ok(Self { relations })
    }

    pub fn default_pack() -> Self {
        Self::parse(DEFAULT_PACK).expect("bundled template pack is valid")
    }

    pub fn synthetic_pack() -> Self {
        Self::parse(SYNTHETIC_PACK).expect("bundled template pack is valid")
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.relations.values().map(|r| r.explicit.len() + r.current.len() + r.previous.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn templates(&self, relation: &str, mode: TemplateMode) -> Result<&[QuestionTemplate]> {
        let set = self
            .relations
            .get(relation)
            .ok_or_else(|| Error::Template(format!("no templates for relation `{relation}`")))?;
        Ok(match mode {
            TemplateMode::Explicit => &set.explicit,
            TemplateMode::RelativeCurrent => &set.current,
            TemplateMode::RelativePrevious => &set.previous,
        })
    }

    pub fn canonical(&self, relation: &str, mode: TemplateMode) -> Result<&QuestionTemplate> {
        Ok(&self.templates(relation, mode)?[0])
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn fill(pattern: &str, slots: &[(&str, String)]) -> Result<String> {
    let mut text = pattern.to_string();
    for (name, value) in slots {
        let marker = format!("{{{name}}}");
        if text.contains(&marker) {
            if value.is_empty() {
                return Err(Error::Render(format!("slot {marker} has no value in `{pattern}`")));
            }
            text = text.replace(&marker, value);
        }
    }
    if text.contains('{') {
        return Err(Error::Render(format!("unfilled slot in `{text}`")));
    }
    Ok(text)
}

/// Render one template for `fact`.
///
/// Explicit templates ask about the whole span and query its midpoint year;
/// relative templates query CURRENT or PREVIOUS. The caller picks the tag and,
/// for `relative_previous`, passes the superseded fact.
pub fn render_question(
    template: &QuestionTemplate,
    fact: &TemporalFact,
    tag: KnowledgeTag,
    horizon: Year,
) -> Result<QAItem> {
    let span = (fact.t_start, fact.effective_end(horizon));
    render_over_span(template, fact, tag, span, fact.midpoint_year(horizon))
}

/// Render with explicit span slots and query year chosen by the caller.
pub fn render_over_span(
    template: &QuestionTemplate,
    fact: &TemporalFact,
    tag: KnowledgeTag,
    span: (Year, Year),
    year: Year,
) -> Result<QAItem> {
    if template.relation != fact.relation {
        return Err(Error::Render(format!(
            "template for `{}` used on relation `{}`",
            template.relation, fact.relation
        )));
    }
    let text = fill(
        &template.pattern,
        &[
            ("s", display_name(&fact.subject)),
            ("o", display_name(&fact.object)),
            ("ts", span.0.to_string()),
            ("tu", span.1.to_string()),
        ],
    )?;
    let time_ref = match template.mode {
        TemplateMode::Explicit => TimeRef::Year(year),
        TemplateMode::RelativeCurrent => TimeRef::Current,
        TemplateMode::RelativePrevious => TimeRef::Previous,
    };
    let question_class = QuestionClass::classify(tag, time_ref, template.variant).ok_or_else(|| {
        Error::Render(format!("{} template cannot ask about {:?} knowledge", template.mode.as_str(), tag))
    })?;
    Ok(QAItem {
        text,
        query: StructuredQuery::new(&fact.subject, &fact.relation, time_ref),
        gold: fact.object.clone(),
        aliases: BTreeSet::new(),
        knowledge_tag: tag,
        question_class,
        variant: template.variant,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuestionScope {
    /// Current and historical questions.
    Full,
    /// Current questions only, as used for extending edits.
    CurrentOnly,
}

fn with_aliases(mut item: QAItem, aliases: &AliasTable) -> QAItem {
    item.aliases = aliases.aliases_for(&item.gold);
    item
}

/// Current-knowledge items about `fact`: every explicit variant plus every
/// relative_current template.
pub fn current_questions(
    fact: &TemporalFact,
    pack: &TemplatePack,
    aliases: &AliasTable,
    span: (Year, Year),
    year: Year,
) -> Result<Vec<QAItem>> {
    let mut items = Vec::new();
    for t in pack.templates(&fact.relation, TemplateMode::Explicit)? {
        items.push(with_aliases(render_over_span(t, fact, KnowledgeTag::Current, span, year)?, aliases));
    }
    for t in pack.templates(&fact.relation, TemplateMode::RelativeCurrent)? {
        items.push(with_aliases(render_over_span(t, fact, KnowledgeTag::Current, span, year)?, aliases));
    }
    Ok(items)
}

/// Canonical explicit question about a superseded fact.
pub fn historical_explicit(
    fact: &TemporalFact,
    pack: &TemplatePack,
    aliases: &AliasTable,
    horizon: Year,
) -> Result<QAItem> {
    let t = pack.canonical(&fact.relation, TemplateMode::Explicit)?;
    Ok(with_aliases(render_question(t, fact, KnowledgeTag::Historical, horizon)?, aliases))
}

/// Questions for the edit that installs `chain.facts[edit_index]`.
pub fn make_question_set(
    chain: &FactChain,
    edit_index: usize,
    pack: &TemplatePack,
    aliases: &AliasTable,
    scope: QuestionScope,
    horizon: Year,
) -> Result<Vec<QAItem>> {
    if edit_index == 0 || edit_index >= chain.facts.len() {
        return Err(Error::Precondition(format!(
            "{}: edit index {edit_index} needs a preceding fact in a chain of length {}",
            chain.id(),
            chain.facts.len()
        )));
    }
    let current = &chain.facts[edit_index];
    let span = (current.t_start, current.effective_end(horizon));
    let mut items = current_questions(current, pack, aliases, span, current.midpoint_year(horizon))?;
    if scope == QuestionScope::Full {
        let historical = &chain.facts[edit_index - 1];
        items.push(historical_explicit(historical, pack, aliases, horizon)?);
        for t in pack.templates(&historical.relation, TemplateMode::RelativePrevious)? {
            items.push(with_aliases(render_question(t, historical, KnowledgeTag::Historical, horizon)?, aliases));
        }
    }
    Ok(items)
}
