//! Answer matching, per-class accuracy and report comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::bench::{BenchRecord, DatasetKind, EditOp};
use crate::error::{Error, Result};
use crate::model::KnowledgeModel;
use crate::questions::{QAItem, QuestionClass};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Lowercase and collapse whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Extra answer strings per entity id, stored normalized.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl AliasTable {
    /// Two tab-separated columns: entity id, alias.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (entity, alias) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse { line: idx + 1, message: "expected entity<TAB>alias".into() })?;
            table.insert(entity.trim(), alias);
        }
        Ok(table)
    }

    pub fn insert(&mut self, entity: &str, alias: &str) {
        let alias = normalize(alias);
        if !alias.is_empty() {
            self.map.entry(entity.to_string()).or_default().insert(alias);
        }
    }

    /// Default aliases for `gold` (lowercased id, id with spaces) plus table entries.
    pub fn aliases_for(&self, gold: &str) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = [normalize(gold), normalize(&gold.replace('_', " "))].into_iter().collect();
        if let Some(extra) = self.map.get(gold) {
            set.extend(extra.iter().cloned());
        }
        set
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn match_answer(predicted: &str, gold: &str, aliases: &AliasTable) -> bool {
    let p = normalize(predicted);
    p == normalize(gold) || aliases.aliases_for(gold).contains(&p)
}

fn match_item(predicted: &str, item: &QAItem, aliases: &AliasTable) -> bool {
    item.aliases.contains(&normalize(predicted)) || match_answer(predicted, &item.gold, aliases)
}

// ---------------------------------------------------------------------------
// Counting
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
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
    #[serde(rename = "HES*")]
    HesStar,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::Ces, Metric::CesP, Metric::Crs, Metric::Hes, Metric::Hrs, Metric::HesStar];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ces => "CES",
            Metric::CesP => "CES-P",
            Metric::Crs => "CRS",
            Metric::Hes => "HES",
            Metric::Hrs => "HRS",
            Metric::HesStar => "HES*",
        }
    }

    /// Metrics reported for a dataset kind.
    pub fn reported_for(kind: DatasetKind) -> &'static [Metric] {
        match kind {
            DatasetKind::SE => &Metric::ALL[..5],
            DatasetKind::ME => &Metric::ALL,
            DatasetKind::EE => &Metric::ALL[..3],
        }
    }
}

impl From<QuestionClass> for Metric {
    fn from(c: QuestionClass) -> Self {
        match c {
            QuestionClass::Ces => Metric::Ces,
            QuestionClass::CesP => Metric::CesP,
            QuestionClass::Crs => Metric::Crs,
            QuestionClass::Hes => Metric::Hes,
            QuestionClass::Hrs => Metric::Hrs,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub asked: u64,
    pub correct: u64,
}

impl Count {
    pub fn record(&mut self, ok: bool) {
        self.asked += 1;
        self.correct += u64::from(ok);
    }

    pub fn add(&mut self, other: Count) {
        self.asked += other.asked;
        self.correct += other.correct;
    }

    pub fn percent(&self) -> Option<f64> {
        (self.asked > 0).then(|| 100.0 * self.correct as f64 / self.asked as f64)
    }
}

pub type Counts = BTreeMap<Metric, Count>;

fn merge(into: &mut Counts, from: &Counts) {
    for (m, c) in from {
        into.entry(*m).or_default().add(*c);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub chain_id: String,
    pub kind: Option<DatasetKind>,
    pub counts: Counts,
    pub per_edit: Vec<Counts>,
    pub query_errors: Vec<String>,
}

fn score_items<M: KnowledgeModel + ?Sized>(
    model: &M,
    items: &[QAItem],
    metric_of: impl Fn(&QAItem) -> Metric,
    aliases: &AliasTable,
    counts: &mut Counts,
    errors: &mut Vec<String>,
) {
    for item in items {
        let ok = match model.query(&item.query) {
            Ok(answer) => match_item(&answer.object, item, aliases),
            Err(e) => {
                // A failed query is a wrong answer, never a skipped one.
                errors.push(format!("{}: {e}", item.text));
                false
            }
        };
        counts.entry(metric_of(item)).or_default().record(ok);
    }
}

/// Score a record, calling `apply` to install edit `k` before its questions
/// are asked. HES* questions are asked after the last edit.
pub fn eval_record<M, F>(model: &mut M, record: &BenchRecord, aliases: &AliasTable, mut apply: F) -> Result<RecordCounts>
where
    M: KnowledgeModel,
    F: FnMut(&mut M, usize, &EditOp) -> Result<()>,
{
    let mut out = RecordCounts { chain_id: record.chain_id.clone(), kind: Some(record.kind), ..Default::default() };
    for (k, edit) in record.edits.iter().enumerate() {
        apply(model, k, edit)?;
        let mut per = Counts::new();
        let items = record.questions_per_edit.get(k).map_or(&[][..], Vec::as_slice);
        score_items(&*model, items, |i| i.question_class.into(), aliases, &mut per, &mut out.query_errors);
        merge(&mut out.counts, &per);
        out.per_edit.push(per);
    }
    if record.kind == DatasetKind::ME {
        score_items(
            &*model,
            &record.final_historical_questions,
            |_| Metric::HesStar,
            aliases,
            &mut out.counts,
            &mut out.query_errors,
        );
    }
    Ok(out)
}

/// Score a record against a model that already carries all of its edits.
pub fn score_record<M: KnowledgeModel + Clone>(model: &M, record: &BenchRecord, aliases: &AliasTable) -> RecordCounts {
    let mut m = model.clone();
    eval_record(&mut m, record, aliases, |_, _, _| Ok(())).expect("no-op apply cannot fail")
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditBreakdown {
    pub edit_index: usize,
    pub metrics: BTreeMap<Metric, f64>,
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset_kind: DatasetKind,
    pub metrics: BTreeMap<Metric, f64>,
    pub counts: Counts,
    pub per_edit_breakdown: Vec<EditBreakdown>,
    pub config_fingerprint: String,
    #[serde(default)]
    pub edit_log_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub tool_version: String,
    pub records: usize,
    pub query_errors: usize,
}

fn percentages(counts: &Counts, kind: DatasetKind) -> BTreeMap<Metric, f64> {
    Metric::reported_for(kind)
        .iter()
        .filter_map(|m| counts.get(m).and_then(Count::percent).map(|p| (*m, p)))
        .collect()
}

/// Micro-average counts over all question instances of all records.
pub fn aggregate(records: &[RecordCounts], config_fingerprint: &str) -> Result<MetricsReport> {
    let kind = records
        .first()
        .and_then(|r| r.kind)
        .ok_or_else(|| Error::Precondition("nothing to aggregate".into()))?;
    if records.iter().any(|r| r.kind != Some(kind)) {
        return Err(Error::ReportMismatch("records of different dataset kinds".into()));
    }
    let mut counts = Counts::new();
    let mut by_edit: Vec<Counts> = Vec::new();
    for r in records {
        merge(&mut counts, &r.counts);
        for (k, per) in r.per_edit.iter().enumerate() {
            if by_edit.len() <= k {
                by_edit.push(Counts::new());
            }
            merge(&mut by_edit[k], per);
        }
    }
    counts.retain(|m, _| Metric::reported_for(kind).contains(m));
    let per_edit_breakdown = if kind == DatasetKind::ME {
        by_edit
            .into_iter()
            .enumerate()
            .map(|(edit_index, counts)| EditBreakdown { edit_index, metrics: percentages(&counts, kind), counts })
            .collect()
    } else {
        Vec::new()
    };
    Ok(MetricsReport {
        dataset_kind: kind,
        metrics: percentages(&counts, kind),
        counts,
        per_edit_breakdown,
        config_fingerprint: config_fingerprint.to_string(),
        edit_log_hash: None,
        seed: None,
        tool_version: TOOL_VERSION.to_string(),
        records: records.len(),
        query_errors: records.iter().map(|r| r.query_errors.len()).sum(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl MetricsReport {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        self.metrics.get(&m).copied()
    }

    pub fn to_markdown(&self) -> String {
        let metrics = Metric::reported_for(self.dataset_kind);
        let mut s = String::new();
        let header: Vec<&str> = metrics.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(s, "| Dataset | {} |", header.join(" | "));
        let _ = writeln!(s, "|---|{}", "---:|".repeat(metrics.len()));
        let values: Vec<String> = metrics.iter().map(|m| cell(self.metric(*m))).collect();
        let _ = writeln!(s, "| {} | {} |", self.dataset_kind, values.join(" | "));
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: Metric,
    pub baseline: f64,
    pub enhanced: f64,
    pub delta: f64,
}

impl MetricDelta {
    /// `20.25↑17.84` style cell.
    pub fn labeled(&self) -> String {
        let arrow = if self.delta >= 0.0 { '↑' } else { '↓' };
        format!("{:.2}{arrow}{:.2}", self.enhanced, self.delta.abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub dataset_kind: DatasetKind,
    pub rows: Vec<MetricDelta>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn compare_reports(baseline: &MetricsReport, enhanced: &MetricsReport) -> Result<ReportDelta> {
    if baseline.dataset_kind != enhanced.dataset_kind {
        return Err(Error::ReportMismatch(format!(
            "cannot compare {} with {}",
            baseline.dataset_kind, enhanced.dataset_kind
        )));
    }
    let rows = Metric::ALL
        .iter()
        .filter_map(|m| {
            let (b, e) = (baseline.metric(*m)?, enhanced.metric(*m)?);
            Some(MetricDelta { metric: *m, baseline: b, enhanced: e, delta: round2(e - b) })
        })
        .collect();
    Ok(ReportDelta { dataset_kind: baseline.dataset_kind, rows })
}

impl ReportDelta {
    pub fn delta(&self, m: Metric) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == m).map(|r| r.delta)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} | Baseline | Enhanced | Change |", self.dataset_kind);
        let _ = writeln!(s, "|---|---:|---:|---:|");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {:.2} | {:.2} | {} |", r.metric, r.baseline, r.enhanced, r.labeled());
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(kind: DatasetKind, values: &[(Metric, f64)]) -> MetricsReport {
        MetricsReport {
            dataset_kind: kind,
            metrics: values.iter().copied().collect(),
            counts: Counts::new(),
            per_edit_breakdown: Vec::new(),
            config_fingerprint: String::new(),
            edit_log_hash: None,
            seed: None,
            tool_version: TOOL_VERSION.into(),
            records: 1,
            query_errors: 0,
        }
    }

    #[test]
    fn alias_matching() {
        let mut table = AliasTable::default();
        table.insert("Barack_Obama", "Barack   Obama");
        assert!(match_answer("Barack Obama", "Barack_Obama", &table));
        assert!(match_answer("Barack_Obama", "Barack_Obama", &AliasTable::default()));
        assert!(match_answer("barack obama", "Barack_Obama", &AliasTable::default()));
        assert!(!match_answer("Biden", "Barack_Obama", &table));
        let parsed = AliasTable::parse("Joseph_Biden\tJoe Biden\n").unwrap();
        assert!(match_answer("JOE  biden", "Joseph_Biden", &parsed));
        assert!(AliasTable::parse("no tab here\n").is_err());
    }

    #[test]
    fn micro_average_over_records() {
        let mk = |c: u64| RecordCounts {
            kind: Some(DatasetKind::SE),
            counts: [(Metric::Ces, Count { asked: 1, correct: c })].into_iter().collect(),
            ..Default::default()
        };
        let rep = aggregate(&[mk(1), mk(0)], "fp").unwrap();
        assert_eq!(rep.metric(Metric::Ces), Some(50.0));
        assert_eq!(rep.metric(Metric::Hes), None);
        assert!(aggregate(&[], "fp").is_err());
    }

    #[test]
    fn ee_reports_current_metrics_only() {
        let rc = RecordCounts {
            kind: Some(DatasetKind::EE),
            counts: [(Metric::Crs, Count { asked: 2, correct: 2 }), (Metric::Hes, Count { asked: 1, correct: 1 })]
                .into_iter()
                .collect(),
            ..Default::default()
        };
        let rep = aggregate(&[rc], "fp").unwrap();
        assert_eq!(rep.metric(Metric::Crs), Some(100.0));
        assert_eq!(rep.metric(Metric::Hes), None);
    }

    #[test]
    fn deltas_are_signed_and_labeled() {
        let base = report(DatasetKind::SE, &[(Metric::Hes, 2.41), (Metric::Ces, 99.99)]);
        let plus = report(DatasetKind::SE, &[(Metric::Hes, 20.25), (Metric::Ces, 99.95)]);
        let d = compare_reports(&base, &plus).unwrap();
        assert_eq!(d.delta(Metric::Hes), Some(17.84));
        assert_eq!(d.delta(Metric::Ces), Some(-0.04));
        assert!(d.to_markdown().contains("20.25↑17.84"));
        assert!(d.to_markdown().contains("99.95↓0.04"));
        let same = compare_reports(&base, &base).unwrap();
        assert!(same.rows.iter().all(|r| r.delta == 0.0));
        assert!(compare_reports(&base, &report(DatasetKind::ME, &[])).is_err());
    }
}
