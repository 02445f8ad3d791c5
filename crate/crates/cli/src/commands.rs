use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tke_core::bench::{build_datasets, read_dataset, write_dataset, BuildLogEntry, DatasetKind, Datasets};
use tke_core::corpus::generate_corpus;
use tke_core::editors::{apply_edits, EditLog, EditorConfig};
use tke_core::evaluation::{aggregate, compare_reports, eval_record, score_record, MetricsReport};
use tke_core::model::persist::{load_file, save_file};
use tke_core::model::KnowledgeModel;
use tke_core::rng::sha256_hex;
use tke_core::suite::{prepare_datasets, run_suite_with, CellReport, RunConfig};
use tke_core::temporal_kb::{build_chains, parse_facts_str, write_facts, FactChain, ParseIssue, Year, YearRange};
use tke_core::{AliasTable, BenchRecord, LamModel, ModelConfig, TemplatePack};

use crate::io::{
    alias_table, at, create, load_config, open, read_chains_file, read_text, template_pack, write_bytes, write_json,
    ChainsFile, CliError, CliResult, Meta,
};
use crate::{BuildArgs, Cli, Command, EditorArgs, HyperArgs};

pub fn run(cli: Cli) -> CliResult<()> {
    let mut config = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest { facts, out, horizon } => {
            set_horizon(&mut config, horizon)?;
            ingest(&config, &facts, &out)
        }
        Command::GenCorpus { out, chains } => {
            if let Some(n) = chains {
                config.corpus.chains = n;
            }
            gen_corpus(&config, &out)
        }
        Command::Build(args) => build(config, args),
        Command::InitModel { chains, out, dim } => {
            if let Some(d) = dim {
                config.model = ModelConfig { alpha: config.model.alpha, ..ModelConfig::with_dim(d) };
            }
            init_model(&config, &chains, &out)
        }
        Command::Edit { model, dataset, out, log, editor } => {
            config.editor = editor_config(&config, &editor);
            edit(&config, &model, &dataset, &out, &log)
        }
        Command::Eval { model, dataset, out, aliases, method, meto, hyper } => {
            let editor = method.map(|method| editor_config(&config, &EditorArgs { method, meto, hyper }));
            if let Some(e) = &editor {
                config.editor = e.clone();
            }
            eval(&config, &model, &dataset, &out, aliases.as_deref(), editor.as_ref())
        }
        Command::RunSuite { out_dir, chains, methods } => {
            if let Some(n) = chains {
                config.corpus.chains = n;
            }
            if let Some(m) = methods {
                config.methods = m;
            }
            let out_dir = out_dir
                .or_else(|| config.paths.reports.as_ref().map(PathBuf::from))
                .ok_or_else(|| CliError::input("run-suite needs --out-dir or paths.reports in the config"))?;
            run_suite(&config, &out_dir)
        }
        Command::Compare { baseline, enhanced, out } => compare(&baseline, &enhanced, out.as_deref()),
    }
}

fn set_horizon(config: &mut RunConfig, horizon: Option<Year>) -> CliResult<()> {
    if let Some(last) = horizon {
        config.build.horizon = YearRange::new(config.build.horizon.first, last)?;
    }
    Ok(())
}

fn editor_config(config: &RunConfig, args: &EditorArgs) -> EditorConfig {
    let mut e = config.editor.clone();
    e.method = args.method;
    e.meto = args.meto;
    let HyperArgs { cft_steps, cft_learning_rate, cft_norm_budget, r1_max_sweeps, batch_ridge, batch_cov_weight } =
        args.hyper;
    e.cft.steps = cft_steps.unwrap_or(e.cft.steps);
    e.cft.learning_rate = cft_learning_rate.unwrap_or(e.cft.learning_rate);
    e.cft.norm_budget = cft_norm_budget.unwrap_or(e.cft.norm_budget);
    e.r1.max_sweeps = r1_max_sweeps.unwrap_or(e.r1.max_sweeps);
    e.batch.ridge = batch_ridge.unwrap_or(e.batch.ridge);
    e.batch.cov_weight = batch_cov_weight.unwrap_or(e.batch.cov_weight);
    e
}

fn report_issues(path: &Path, issues: &[ParseIssue]) {
    for issue in issues {
        eprintln!("{}:{}: {}", path.display(), issue.line, issue.message);
    }
}

/// Parse and chain a fact file. Bad lines are reported and skipped; a file
/// with content but no usable line is treated as garbage.
fn load_facts(config: &RunConfig, path: &Path) -> CliResult<(Vec<FactChain>, ChainsFile)> {
    let text = read_text(path)?;
    let parsed = parse_facts_str(&text);
    report_issues(path, &parsed.errors);
    if parsed.facts.is_empty() && !parsed.errors.is_empty() {
        return Err(CliError::input(format!("{}: no valid fact lines", path.display())));
    }
    let built = build_chains(&parsed.facts, &config.build.horizon);
    let file = ChainsFile {
        meta: Meta::of(config),
        chains: built.chains.clone(),
        adjustments: built.log,
        parse_errors: parsed.errors,
    };
    Ok((built.chains, file))
}

fn ingest(config: &RunConfig, facts: &Path, out: &Path) -> CliResult<()> {
    let (chains, file) = load_facts(config, facts)?;
    write_json(out, &file)?;
    eprintln!(
        "{} chains, {} adjusted facts, {} bad lines -> {}",
        chains.len(),
        file.adjustments.len(),
        file.parse_errors.len(),
        out.display()
    );
    Ok(())
}

fn gen_corpus(config: &RunConfig, out: &Path) -> CliResult<()> {
    let config = config.resolved();
    let facts = generate_corpus(config.seed, &config.corpus)?;
    let meta = Meta::of(&config);
    let mut buf = format!(
        "# tke gen-corpus seed={} config={} version={}\n",
        meta.seed, meta.config_fingerprint, meta.tool_version
    )
    .into_bytes();
    write_facts(&mut buf, &facts)?;
    write_bytes(out, &buf)?;
    eprintln!("{} facts -> {}", facts.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    meta: Meta,
    sizes: Vec<(DatasetKind, usize)>,
    options: &'a tke_core::bench::BuildOptions,
    skipped: &'a [BuildLogEntry],
}

fn write_datasets(dir: &Path, datasets: &Datasets) -> CliResult<()> {
    for kind in DatasetKind::ALL {
        let path = dir.join(format!("{}.jsonl", kind.file_stem()));
        let mut out = create(&path)?;
        write_dataset(&mut out, datasets.get(kind)).map_err(at(&path))?;
    }
    Ok(())
}

fn build(mut config: RunConfig, args: BuildArgs) -> CliResult<()> {
    set_horizon(&mut config, args.horizon)?;
    if args.no_fake_facts {
        config.build.fake_facts = false;
    }
    if let Some(n) = args.extension_years {
        config.build.extension_years = n;
    }
    let config = config.resolved();
    let chains = read_chains_file(&args.chains)?;
    let pack = template_pack(args.templates.as_deref())?;
    let aliases = alias_table(args.aliases.as_deref())?;
    let model = args.model.as_deref().map(|p| load_file(p).map_err(at(p))).transpose()?;
    let datasets = build_datasets(
        &chains,
        &pack,
        &aliases,
        &config.build,
        model.as_ref().map(|m| m as &dyn KnowledgeModel),
    )?;
    write_datasets(&args.out_dir, &datasets)?;
    let manifest = Manifest {
        meta: Meta::of(&config),
        sizes: DatasetKind::ALL.iter().map(|k| (*k, datasets.get(*k).len())).collect(),
        options: &config.build,
        skipped: &datasets.log,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    for entry in &datasets.log {
        let kind = entry.kind.map_or_else(|| "all".to_string(), |k| k.to_string());
        eprintln!("skipped {} ({kind}): {}", entry.chain_id, entry.message);
    }
    eprintln!(
        "SE {} | ME {} | EE {} | {} skipped -> {}",
        datasets.se.len(),
        datasets.me.len(),
        datasets.ee.len(),
        datasets.log.len(),
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ModelMeta {
    meta: Meta,
    d: usize,
    facts: usize,
    state_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    edit_log_hash: Option<String>,
}

fn sidecar(model_path: &Path) -> PathBuf {
    let mut name = model_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn save_model(config: &RunConfig, model: &LamModel, path: &Path, facts: usize, log: Option<&EditLog>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::failed(format!("{}: {e}", dir.display())))?;
    }
    save_file(model, path).map_err(|e| CliError::failed(format!("{}: {e}", path.display())))?;
    let meta = ModelMeta {
        meta: Meta::of(config),
        d: model.config().d,
        facts,
        state_hash: model.state_hash(),
        edit_log_hash: log.map(EditLog::hash),
    };
    write_json(&sidecar(path), &meta)
}

fn init_model(config: &RunConfig, chains_path: &Path, out: &Path) -> CliResult<()> {
    let config = config.resolved();
    let chains = read_chains_file(chains_path)?;
    let mut entities = BTreeSet::new();
    let mut relations = BTreeSet::new();
    for c in &chains {
        entities.insert(c.subject.clone());
        entities.extend(c.objects().map(str::to_string));
        relations.insert(c.relation.clone());
    }
    let mut model = LamModel::new(config.model, entities, relations)?;
    let facts: Vec<_> = chains.iter().filter_map(|c| c.facts.first().cloned()).map(|f| (f, None)).collect();
    if !facts.is_empty() {
        model.initialize_from_facts(&facts)?;
    }
    save_model(&config, &model, out, facts.len(), None)?;
    eprintln!("model d={} with {} facts -> {}", config.model.d, facts.len(), out.display());
    Ok(())
}

fn read_records(path: &Path) -> CliResult<Vec<BenchRecord>> {
    read_dataset(open(path)?).map_err(at(path))
}

fn edit(config: &RunConfig, model_path: &Path, dataset: &Path, out: &Path, log_path: &Path) -> CliResult<()> {
    let mut model = load_file(model_path).map_err(at(model_path))?;
    let records = read_records(dataset)?;
    let mut log = EditLog::default();
    let mut edits = 0;
    for rec in &records {
        let step = apply_edits(&mut model, &rec.edits, &config.editor)
            .map_err(|e| CliError::failed(format!("{}: {e}", rec.chain_id)))?;
        edits += rec.edits.len();
        log.extend(step);
    }
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    write_bytes(log_path, log.to_jsonl().as_bytes())?;
    save_model(config, &model, out, edits, Some(&log))?;
    eprintln!("{} edits from {} records ({}) -> {}", edits, records.len(), config.editor.method, out.display());
    Ok(())
}

fn eval(
    config: &RunConfig,
    model_path: &Path,
    dataset: &Path,
    out: &Path,
    aliases: Option<&Path>,
    editor: Option<&EditorConfig>,
) -> CliResult<()> {
    let model = load_file(model_path).map_err(at(model_path))?;
    let records = read_records(dataset)?;
    let aliases = alias_table(aliases)?;
    let mut counts = Vec::with_capacity(records.len());
    let mut log_hashes = String::new();
    for rec in &records {
        let rc = match editor {
            Some(editor) => {
                let mut m = model.clone();
                eval_record(&mut m, rec, &aliases, |m, _, edit| {
                    let log = apply_edits(m, std::slice::from_ref(edit), editor)?;
                    log_hashes.push_str(&log.hash());
                    Ok(())
                })
                .map_err(|e| CliError::failed(format!("{}: {e}", rec.chain_id)))?
            }
            None => score_record(&model, rec, &aliases),
        };
        counts.push(rc);
    }
    let mut report = aggregate(&counts, &config.fingerprint())?;
    report.seed = Some(config.seed);
    if editor.is_some() {
        report.edit_log_hash = Some(sha256_hex(log_hashes.as_bytes()));
    }
    write_json(out, &report)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn suite_inputs(config: &RunConfig) -> CliResult<(Datasets, AliasTable)> {
    let path = |p: &Option<String>| p.as_ref().map(PathBuf::from);
    let pack: TemplatePack = template_pack(path(&config.paths.templates).as_deref())?;
    let aliases = alias_table(path(&config.paths.aliases).as_deref())?;
    let datasets = match path(&config.paths.facts) {
        Some(facts) => {
            let resolved = config.resolved();
            let (chains, _) = load_facts(&resolved, &facts)?;
            build_datasets(&chains, &pack, &aliases, &resolved.build, None)?
        }
        None => prepare_datasets(config, &pack, &aliases)?,
    };
    Ok((datasets, aliases))
}

fn cell_file(cell: &CellReport) -> String {
    let meto = if cell.meto { "-meto" } else { "" };
    format!("{}{meto}-{}.json", cell.method, cell.report.dataset_kind.file_stem())
}

#[derive(Serialize)]
struct Partial<'a> {
    meta: Meta,
    error: String,
    cells: &'a [CellReport],
}

fn run_suite(config: &RunConfig, out_dir: &Path) -> CliResult<()> {
    let (datasets, aliases) = suite_inputs(config)?;
    if let Some(dir) = config.paths.datasets.as_ref().map(PathBuf::from) {
        write_datasets(&dir, &datasets)?;
    }
    let cells_dir = out_dir.join("cells");
    let mut done: Vec<CellReport> = Vec::new();
    let result = run_suite_with(config, &datasets, &aliases, |cell| {
        let path = cells_dir.join(cell_file(cell));
        let bytes = serde_json::to_vec_pretty(&cell.report)?;
        std::fs::create_dir_all(&cells_dir)?;
        std::fs::write(&path, [bytes, b"\n".to_vec()].concat())?;
        eprintln!("{}: {} records", cell_file(cell), cell.report.records);
        done.push(cell.clone());
        Ok(())
    });
    let suite = match result {
        Ok(s) => s,
        Err(e) => {
            let partial = Partial { meta: Meta::of(config), error: e.to_string(), cells: &done };
            write_json(&out_dir.join("suite.partial.json"), &partial)?;
            return Err(CliError::failed(format!("suite stopped after {} cells: {e}", done.len())));
        }
    };
    write_bytes(&out_dir.join("suite.json"), suite.to_json()?.as_bytes())?;
    write_bytes(&out_dir.join("suite.md"), suite.to_markdown().as_bytes())?;
    let mut deltas = String::new();
    for d in &suite.deltas {
        deltas.push_str(&format!("## {} {}\n\n{}\n", d.method, d.delta.dataset_kind, d.delta.to_markdown()));
    }
    write_bytes(&out_dir.join("deltas.md"), deltas.as_bytes())?;
    print!("{}", suite.to_markdown());
    Ok(())
}

fn read_report(path: &Path) -> CliResult<MetricsReport> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn compare(baseline: &Path, enhanced: &Path, out: Option<&Path>) -> CliResult<()> {
    let delta = compare_reports(&read_report(baseline)?, &read_report(enhanced)?)?;
    if let Some(out) = out {
        write_bytes(out, delta.to_json()?.as_bytes())?;
    }
    print!("{}", delta.to_markdown());
    Ok(())
}
