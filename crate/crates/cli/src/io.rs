use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tke_core::evaluation::TOOL_VERSION;
use tke_core::suite::RunConfig;
use tke_core::temporal_kb::{ChainLogEntry, FactChain, ParseIssue};
use tke_core::{AliasTable, Error, TemplatePack};

/// Exit code for unreadable or malformed input.
pub const BAD_INPUT: u8 = 2;
/// Exit code for a failure while running a stage.
pub const FAILED: u8 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: BAD_INPUT, message: message.into() }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self { code: FAILED, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::Template(_)
            | Error::Config(_)
            | Error::Argument(_)
            | Error::Dataset { .. }
            | Error::Format(_)
            | Error::ReportMismatch(_) => BAD_INPUT,
            _ => FAILED,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn context(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

/// Wrap a core error with the file it came from, keeping its exit code.
pub fn at(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        err.message = context(path, err.message);
        err
    }
}

/// Seed, config fingerprint and tool version, embedded in every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    pub config_fingerprint: String,
    pub tool_version: String,
}

impl Meta {
    pub fn of(config: &RunConfig) -> Self {
        Self {
            seed: config.seed,
            config_fingerprint: config.fingerprint(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut config = match path {
        Some(p) => {
            let text = read_text(p)?;
            serde_json::from_str(&text).map_err(|e| CliError::input(context(p, e)))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(context(path, e)))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::input(context(path, e)))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::failed(context(dir, e)))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::failed(context(path, e)))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut out = create(path)?;
    out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::failed(context(path, e)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::failed(e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// Output of `ingest`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ChainsFile {
    pub meta: Meta,
    pub chains: Vec<FactChain>,
    #[serde(default)]
    pub adjustments: Vec<ChainLogEntry>,
    #[serde(default)]
    pub parse_errors: Vec<ParseIssue>,
}

/// Chains from an `ingest` file or a bare JSON array of chains.
pub fn read_chains_file(path: &Path) -> CliResult<Vec<FactChain>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        Wrapped(ChainsFile),
        Bare(Vec<FactChain>),
    }
    let text = read_text(path)?;
    match serde_json::from_str(&text).map_err(|e| CliError::input(context(path, e)))? {
        Doc::Wrapped(f) => Ok(f.chains),
        Doc::Bare(chains) => Ok(chains),
    }
}

pub fn template_pack(path: Option<&Path>) -> CliResult<TemplatePack> {
    match path {
        Some(p) => TemplatePack::parse(&read_text(p)?).map_err(at(p)),
        None => Ok(TemplatePack::default_pack()),
    }
}

pub fn alias_table(path: Option<&Path>) -> CliResult<AliasTable> {
    match path {
        Some(p) => AliasTable::parse(&read_text(p)?).map_err(at(p)),
        None => Ok(AliasTable::default()),
    }
}
