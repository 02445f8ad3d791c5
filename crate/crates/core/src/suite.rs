//! End-to-end suite: corpus, datasets, and every (editor, METO) cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bench::{build_datasets, BenchRecord, BuildOptions, DatasetKind, Datasets};
use crate::corpus::{generate_corpus, CorpusConfig};
use crate::editors::{apply_edits, EditorConfig, Method};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, compare_reports, eval_record, AliasTable, Metric, MetricsReport, ReportDelta};
use crate::model::{Codebooks, LamModel, ModelConfig};
use crate::questions::TemplatePack;
use crate::rng::sha256_hex;
use crate::temporal_kb::build_chains;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathConfig {
    pub facts: Option<String>,
    pub templates: Option<String>,
    pub aliases: Option<String>,
    pub model: Option<String>,
    pub datasets: Option<String>,
    pub reports: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub build: BuildOptions,
    /// Hyperparameters shared by all cells; method and METO flag are set per cell.
    pub editor: EditorConfig,
    pub methods: Vec<Method>,
    pub paths: PathConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            model: ModelConfig::default(),
            corpus: CorpusConfig::default(),
            build: BuildOptions::default(),
            editor: EditorConfig::default(),
            methods: Method::ALL.to_vec(),
            paths: PathConfig::default(),
        }
    }
}

impl RunConfig {
    /// Copy with the run seed pushed into every seeded component.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.model.seed = c.seed;
        c.build.seed = c.seed;
        c.model.horizon_range = c.build.horizon;
        c
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.resolved()).expect("config serializes");
        sha256_hex(&json)
    }
}

/// Codebooks covering every id the datasets mention.
pub fn codebooks_for(records: &[&BenchRecord], config: &ModelConfig) -> Codebooks {
    let mut entities = BTreeSet::new();
    let mut relations = BTreeSet::new();
    for r in records {
        entities.insert(r.subject.clone());
        relations.insert(r.relation.clone());
        for e in &r.edits {
            entities.insert(e.old.object.clone());
            entities.insert(e.new.object.clone());
        }
    }
    Codebooks::new(config.seed, config.d, entities, relations, config.horizon_range)
}

/// Evaluate one dataset with one editor. Every record gets a fresh model that
/// knows only the record's starting fact, and its edits are applied between
/// question sets.
pub fn evaluate_dataset(
    records: &[BenchRecord],
    books: &Arc<Codebooks>,
    model_config: &ModelConfig,
    editor: &EditorConfig,
    aliases: &AliasTable,
    fingerprint: &str,
) -> Result<MetricsReport> {
    let mut counts = Vec::with_capacity(records.len());
    let mut log_hashes = String::new();
    for rec in records {
        let mut model = LamModel::with_codebooks(*model_config, Arc::clone(books))?;
        let start = rec
            .edits
            .first()
            .ok_or_else(|| Error::Precondition(format!("{}: record without edits", rec.chain_id)))?
            .old_fact();
        model.initialize_from_facts(&[(start, None)])?;
        let rc = eval_record(&mut model, rec, aliases, |m, _, edit| {
            let log = apply_edits(m, std::slice::from_ref(edit), editor)?;
            log_hashes.push_str(&log.hash());
            Ok(())
        })?;
        counts.push(rc);
    }
    let mut report = aggregate(&counts, fingerprint)?;
    report.edit_log_hash = Some(sha256_hex(log_hashes.as_bytes()));
    report.seed = Some(model_config.seed);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub meto: bool,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub method: Method,
    pub delta: ReportDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub seed: u64,
    pub config_fingerprint: String,
    pub tool_version: String,
    pub dataset_sizes: BTreeMap<DatasetKind, usize>,
    pub cells: Vec<CellReport>,
    pub deltas: Vec<CellDelta>,
}

/// Datasets reported for a cell: METO cells cover SE and ME only.
pub fn cell_kinds(meto: bool) -> &'static [DatasetKind] {
    if meto {
        &[DatasetKind::SE, DatasetKind::ME]
    } else {
        &DatasetKind::ALL
    }
}

/// Generate the corpus and build datasets as configured.
pub fn prepare_datasets(config: &RunConfig, pack: &TemplatePack, aliases: &AliasTable) -> Result<Datasets> {
    let config = config.resolved();
    let facts = generate_corpus(config.seed, &config.corpus)?;
    let chains = build_chains(&facts, &config.build.horizon).chains;
    build_datasets(&chains, pack, aliases, &config.build, None)
}

pub fn run_suite(config: &RunConfig) -> Result<SuiteOutput> {
    let pack = TemplatePack::default_pack();
    let aliases = AliasTable::default();
    let datasets = prepare_datasets(config, &pack, &aliases)?;
    run_suite_on(config, &datasets, &aliases)
}

pub fn run_suite_on(config: &RunConfig, datasets: &Datasets, aliases: &AliasTable) -> Result<SuiteOutput> {
    run_suite_with(config, datasets, aliases, |_| Ok(()))
}

/// Like [`run_suite_on`], calling `on_cell` as soon as each cell finishes so
/// callers can keep partial results when a later cell fails.
pub fn run_suite_with<F>(config: &RunConfig, datasets: &Datasets, aliases: &AliasTable, mut on_cell: F) -> Result<SuiteOutput>
where
    F: FnMut(&CellReport) -> Result<()>,
{
    let resolved = config.resolved();
    let fingerprint = config.fingerprint();
    let all: Vec<&BenchRecord> = DatasetKind::ALL.iter().flat_map(|k| datasets.get(*k)).collect();
    let books = Arc::new(codebooks_for(&all, &resolved.model));
    let mut cells = Vec::new();
    for &method in &resolved.methods {
        for meto in [false, true] {
            let mut editor = resolved.editor.clone();
            editor.method = method;
            editor.meto = meto;
            for &kind in cell_kinds(meto) {
                let records = datasets.get(kind);
                if records.is_empty() {
                    continue;
                }
                let report = evaluate_dataset(records, &books, &resolved.model, &editor, aliases, &fingerprint)?;
                let cell = CellReport { method, meto, report };
                on_cell(&cell)?;
                cells.push(cell);
            }
        }
    }
    let mut deltas = Vec::new();
    for &method in &resolved.methods {
        for &kind in cell_kinds(true) {
            let find = |meto: bool| {
                cells.iter().find(|c| c.method == method && c.meto == meto && c.report.dataset_kind == kind)
            };
            if let (Some(base), Some(plus)) = (find(false), find(true)) {
                deltas.push(CellDelta { method, delta: compare_reports(&base.report, &plus.report)? });
            }
        }
    }
    Ok(SuiteOutput {
        seed: resolved.seed,
        config_fingerprint: fingerprint,
        tool_version: crate::evaluation::TOOL_VERSION.to_string(),
        dataset_sizes: DatasetKind::ALL.iter().map(|k| (*k, datasets.get(*k).len())).collect(),
        cells,
        deltas,
    })
}

impl SuiteOutput {
    pub fn report(&self, method: Method, meto: bool, kind: DatasetKind) -> Option<&MetricsReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.meto == meto && c.report.dataset_kind == kind)
            .map(|c| &c.report)
    }

    pub fn metric(&self, method: Method, meto: bool, kind: DatasetKind, metric: Metric) -> Option<f64> {
        self.report(method, meto, kind).and_then(|r| r.metric(metric))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per editor and METO flag; METO cells carry their change from
    /// the baseline row.
    pub fn to_markdown(&self) -> String {
        let columns: Vec<(DatasetKind, Metric)> = DatasetKind::ALL
            .iter()
            .flat_map(|k| Metric::reported_for(*k).iter().map(move |m| (*k, *m)))
            .collect();
        let mut s = String::new();
        let _ = writeln!(s, "seed {} | config {} | version {}\n", self.seed, self.config_fingerprint, self.tool_version);
        let header: Vec<String> = columns.iter().map(|(k, m)| format!("{k} {m}")).collect();
        let _ = writeln!(s, "| Method | {} |", header.join(" | "));
        let _ = writeln!(s, "|---|{}", "---:|".repeat(columns.len()));
        let methods: BTreeSet<Method> = self.cells.iter().map(|c| c.method).collect();
        for method in &methods {
            for meto in [false, true] {
                if !self.cells.iter().any(|c| c.method == *method && c.meto == meto) {
                    continue;
                }
                let name = if meto { format!("{method}+") } else { method.to_string() };
                let values: Vec<String> = columns
                    .iter()
                    .map(|(k, m)| {
                        let base = self.metric(*method, false, *k, *m);
                        match (meto, self.metric(*method, meto, *k, *m)) {
                            (_, None) => "-".to_string(),
                            (false, Some(v)) => format!("{v:.2}"),
                            (true, Some(v)) => {
                                let d = v - base.unwrap_or(v);
                                let arrow = if d >= 0.0 { '↑' } else { '↓' };
                                format!("{v:.2}{arrow}{:.2}", d.abs())
                            }
                        }
                    })
                    .collect();
                let _ = writeln!(s, "| {name} | {} |", values.join(" | "));
            }
        }
        s
    }
}
