//! Editing methods, target compilation and the METO wrapper.

mod solvers;
mod targets;

pub use solvers::{edit_batch, edit_cft, edit_r1, BatchConfig, CftConfig, R1Config, SolveReport};
pub use targets::{
    compile_targets, meto_compile, meto_extract, meto_for_edit, EditTarget, MetoTargets, Provenance, ProvenanceTime,
    TargetTag,
};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::EditOp;
use crate::error::{Error, Result};
use crate::evaluation::AliasTable;
use crate::model::LamModel;
use crate::rng::sha256_hex;
use crate::temporal_kb::FactChain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cft,
    R1,
    Batch,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cft, Method::R1, Method::Batch];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cft => "cft",
            Method::R1 => "r1",
            Method::Batch => "batch",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown method `{s}` (expected cft, r1 or batch)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditorConfig {
    pub method: Method,
    pub meto: bool,
    #[serde(default)]
    pub cft: CftConfig,
    #[serde(default)]
    pub r1: R1Config,
    #[serde(default)]
    pub batch: BatchConfig,
}

impl EditorConfig {
    pub fn new(method: Method, meto: bool) -> Self {
        Self { method, meto, cft: CftConfig::default(), r1: R1Config::default(), batch: BatchConfig::default() }
    }
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self::new(Method::R1, false)
    }
}

// ---------------------------------------------------------------------------
// Edit log
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditLogEntry {
    pub step: usize,
    pub target_tag: TargetTag,
    pub provenance: Provenance,
    pub pre_residual: f64,
    pub post_residual: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditLog {
    pub entries: Vec<EditLogEntry>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    steps: usize,
}

impl EditLog {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: EditLog) {
        let offset = self.steps;
        self.entries.extend(other.entries.into_iter().map(|mut e| {
            e.step += offset;
            e
        }));
        self.warnings.extend(other.warnings);
        self.steps += other.steps;
    }

    fn record(&mut self, targets: &[EditTarget], report: SolveReport) {
        for (i, t) in targets.iter().enumerate() {
            self.entries.push(EditLogEntry {
                step: self.steps,
                target_tag: t.tag,
                provenance: t.provenance.clone(),
                pre_residual: report.pre_residual[i],
                post_residual: report.post_residual[i],
                skipped: report.skipped[i],
            });
        }
        self.warnings.extend(report.warnings.into_iter().map(|w| format!("step {}: {w}", self.steps)));
        self.steps += 1;
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }
}

// ---------------------------------------------------------------------------
// Applying edits
// ---------------------------------------------------------------------------

/// Run the configured update rule over one target set.
pub fn run_editor(model: &mut LamModel, targets: &[EditTarget], config: &EditorConfig) -> Result<SolveReport> {
    match config.method {
        Method::Cft => edit_cft(model, targets, &config.cft),
        Method::R1 => edit_r1(model, targets, &config.r1),
        Method::Batch => edit_batch(model, targets, &config.batch),
    }
}

fn apply_steps(model: &mut LamModel, steps: &[Vec<EditTarget>], config: &EditorConfig) -> Result<EditLog> {
    let backup = model.clone();
    let mut log = EditLog::default();
    for targets in steps {
        if targets.is_empty() {
            continue;
        }
        match run_editor(model, targets, config) {
            Ok(report) => log.record(targets, report),
            Err(e) => {
                *model = backup;
                return Err(e);
            }
        }
    }
    Ok(log)
}

fn step_targets(edit: &EditOp, model: &LamModel, config: &EditorConfig) -> Result<Vec<EditTarget>> {
    if config.meto {
        Ok(meto_compile(meto_for_edit(edit), model)?.c_t)
    } else {
        compile_targets(edit, model)
    }
}

/// Apply edits one after another. Under METO each edit keeps its old fact as
/// history while installing the new one. On any failure the model is restored.
pub fn apply_edits(model: &mut LamModel, edits: &[EditOp], config: &EditorConfig) -> Result<EditLog> {
    let backup = model.clone();
    let mut log = EditLog::default();
    for edit in edits {
        let result = step_targets(edit, model, config)
            .and_then(|targets| apply_steps(model, std::slice::from_ref(&targets), config));
        match result {
            Ok(step_log) => log.extend(step_log),
            Err(e) => {
                *model = backup;
                return Err(e);
            }
        }
    }
    Ok(log)
}

/// Bring the model up to the end of `chain`, starting from the fact it
/// currently recalls.
pub fn apply_chain(
    model: &mut LamModel,
    chain: &FactChain,
    config: &EditorConfig,
    aliases: &AliasTable,
) -> Result<EditLog> {
    let horizon = model.horizon();
    let extracted = meto_extract(&*model, chain, aliases, horizon)?;
    if config.meto {
        let compiled = meto_compile(extracted, model)?;
        let steps: Vec<Vec<EditTarget>> = compiled.steps.iter().map(|r| compiled.c_t[r.clone()].to_vec()).collect();
        // A lone model-time fact with nothing after it needs no edit.
        if compiled.c_m_plus.is_empty() {
            return Ok(EditLog::default());
        }
        return apply_steps(model, &steps, config);
    }
    let facts: Vec<_> = extracted.c_m.iter().chain(&extracted.c_m_plus).cloned().collect();
    let edits = facts
        .windows(2)
        .map(|w| {
            let mut old = w[0].clone();
            old.t_end = Some(old.effective_end(horizon));
            let mut new = w[1].clone();
            new.t_end = Some(new.effective_end(horizon));
            EditOp::between(&old, &new)
        })
        .collect::<Result<Vec<_>>>()?;
    apply_edits(model, &edits, config)
}
