//! Command-line front end.
//!
//! Settings come from an optional TOML file, then `PERSONA_PROBE_*`
//! environment variables, then flags; later sources win. Model passes
//! (`assess`, `grid`, `corpus --backend`) are the only commands that build a
//! gateway; `analyze`, `features` and `report` read files only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assessment::{AssessmentRecord, Assessor, BatteryOutcome, ContextSpec, RunMeta};
use crate::context::{apply_filters, build_grid, read_corpus, truncate, CorpusDoc, FilterSpec};
use crate::error::{Error, Result};
use crate::features::{attribute_all, Loss, NgramSpec, RegressionConfig};
use crate::gateway::{BackendSpec, Gateway, GatewayConfig, MockScorerSpec};
use crate::item_bank::{ItemBank, NameList, PercentileModel, ResponseChoice, Trait};
use crate::prompt::{Persona, RenderMode, RenderOptions, Renderer};
use crate::records::{read_jsonl, read_records, write_csv, write_json, write_jsonl};
use crate::stats::{
    copy_bias_adjust, deltas, per_item_rho, per_trait_correlation, pooled_correlation, range_report, rcm_summary,
    survey_correlation_table, CorrelationReport, DeltaRecord, PerItemRho,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

const ENV_PREFIX: &str = "PERSONA_PROBE_";

#[derive(Debug, Parser)]
#[command(
    name = "persona-probe",
    version,
    about = "Big Five questionnaires for language models"
)]
pub struct Cli {
    /// TOML file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run complete assessments for one or more personas and contexts.
    Assess(AssessArgs),
    /// Run the item-context grid for one or all traits, then analyse it.
    Grid(GridArgs),
    /// Ingest, truncate and filter a corpus; optionally assess under each document.
    Corpus(CorpusArgs),
    /// Deltas, correlations, copy-bias adjustment and r_cm summaries from record files.
    Analyze(AnalyzeArgs),
    /// Regress free-text deltas on n-gram features.
    Features(FeatureArgs),
    /// Range tables and plot data from record files.
    Report(ReportArgs),
}

/// Settings shared by commands that talk to a scorer.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    /// `mock:<uniform|copycat|lexicon>[:seed]` or an http(s) endpoint.
    #[arg(long)]
    pub backend: Option<String>,
    /// `masked` or `sequence`; defaults to what the backend supports.
    #[arg(long)]
    pub mode: Option<String>,
    /// `first` or `name:<Name>`.
    #[arg(long)]
    pub persona: Option<String>,
    /// Item bank TOML; the shipped 50-item bank when absent.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Directory for the persistent score cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Root seed; mock backends without an explicit seed use it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `normal_at_median` or `normal_at_mean`.
    #[arg(long)]
    pub percentile_model: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Text between a context and the item; `\n` and `\t` are unescaped. Default: one space.
    #[arg(long)]
    pub separator: Option<String>,
}

impl RunSettings {
    fn overlay(self, top: RunSettings) -> RunSettings {
        RunSettings {
            backend: top.backend.or(self.backend),
            mode: top.mode.or(self.mode),
            persona: top.persona.or(self.persona),
            bank: top.bank.or(self.bank),
            cache_dir: top.cache_dir.or(self.cache_dir),
            concurrency: top.concurrency.or(self.concurrency),
            seed: top.seed.or(self.seed),
            percentile_model: top.percentile_model.or(self.percentile_model),
            timeout_secs: top.timeout_secs.or(self.timeout_secs),
            separator: top.separator.or(self.separator),
        }
    }

    fn from_env(vars: &BTreeMap<String, String>) -> Result<RunSettings> {
        let get = |k: &str| vars.get(&format!("{ENV_PREFIX}{k}")).cloned();
        let num = |k: &str| -> Result<Option<u64>> {
            get(k)
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Config(format!("{ENV_PREFIX}{k}: expected an integer, got {v:?}")))
                })
                .transpose()
        };
        Ok(RunSettings {
            backend: get("BACKEND"),
            mode: get("MODE"),
            persona: get("PERSONA"),
            bank: get("BANK").map(PathBuf::from),
            cache_dir: get("CACHE_DIR").map(PathBuf::from),
            concurrency: num("CONCURRENCY")?.map(|n| n as usize),
            seed: num("SEED")?,
            percentile_model: get("PERCENTILE_MODEL"),
            timeout_secs: num("TIMEOUT_SECS")?,
            separator: get("SEPARATOR"),
        })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    run: RunSettings,
}

/// Settings after merging and validation.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub backend: Option<BackendSpec>,
    pub mode: Option<RenderMode>,
    pub persona: Persona,
    pub bank_path: Option<PathBuf>,
    #[serde(skip)]
    pub bank: ItemBank,
    pub cache_dir: Option<PathBuf>,
    pub concurrency: usize,
    pub seed: u64,
    pub percentile_model: PercentileModel,
    pub timeout_secs: u64,
    pub render: RenderOptions,
}

impl Resolved {
    pub fn resolve(settings: &RunSettings) -> Result<Resolved> {
        let seed = settings.seed.unwrap_or(0);
        let backend = settings
            .backend
            .as_deref()
            .map(|raw| {
                let spec: BackendSpec = raw.parse().map_err(|e| field_error("backend", e))?;
                Ok::<_, Error>(match spec {
                    // A mock without an explicit seed draws from the root seed.
                    BackendSpec::Mock(m) if raw.trim().split(':').count() == 2 => {
                        BackendSpec::Mock(MockScorerSpec { seed, ..m })
                    }
                    other => other,
                })
            })
            .transpose()?;
        let mode = settings
            .mode
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(|e| field_error("mode", e))?;
        let persona = settings
            .persona
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(|e| field_error("persona", e))?
            .unwrap_or_default();
        let bank = match &settings.bank {
            Some(path) => ItemBank::load(path).map_err(|e| field_error("bank", e))?,
            None => ItemBank::ipip50(),
        };
        let concurrency = settings.concurrency.unwrap_or(8);
        if concurrency == 0 {
            return Err(Error::Config("concurrency: must be at least 1".into()));
        }
        let percentile_model = match settings.percentile_model.as_deref() {
            None => PercentileModel::default(),
            Some(raw) => serde_json::from_value(serde_json::Value::String(raw.to_string()))
                .map_err(|_| Error::Config(format!("percentile_model: unknown model {raw:?}")))?,
        };
        let mut render = RenderOptions::default();
        if let Some(raw) = &settings.separator {
            render.separator = raw.replace("\\n", "\n").replace("\\t", "\t");
        }
        Ok(Resolved {
            backend,
            mode,
            persona,
            bank_path: settings.bank.clone(),
            bank,
            cache_dir: settings.cache_dir.clone(),
            concurrency,
            seed,
            percentile_model,
            timeout_secs: settings.timeout_secs.unwrap_or(60),
            render,
        })
    }

    /// Stable digest of everything that shapes model outputs.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    fn meta(&self) -> RunMeta {
        RunMeta::now(self.config_hash(), Some(self.seed))
    }

    pub fn gateway(&self) -> Result<Gateway> {
        let spec = self
            .backend
            .as_ref()
            .ok_or_else(|| Error::Config("backend: required for this command".into()))?;
        let backend = spec.build(&self.bank, Duration::from_secs(self.timeout_secs))?;
        let config = GatewayConfig {
            concurrency: self.concurrency,
            cache_path: self.cache_dir.as_ref().map(|d| d.join("scores.jsonl")),
            timeout_secs: self.timeout_secs,
            ..GatewayConfig::default()
        };
        Gateway::new(backend, &config)
    }

    fn assessor<'a>(&'a self, gateway: &'a Gateway) -> Assessor<'a> {
        Assessor::new(&self.bank, gateway)
            .with_renderer(Renderer::with_options(&self.bank, self.render.clone()))
            .with_percentile_model(self.percentile_model)
            .with_meta(self.meta())
    }

    fn mode_for(&self, gateway: &Gateway) -> RenderMode {
        self.mode.unwrap_or_else(|| gateway.native_mode())
    }
}

fn field_error(field: &str, e: Error) -> Error {
    Error::Config(format!("{field}: {e}"))
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[command(flatten)]
    pub run: RunSettings,
    /// JSONL of contexts (`{"kind":"none"}`, `{"kind":"item",...}`, ...); no context when absent.
    #[arg(long)]
    pub context_file: Option<PathBuf>,
    /// Additional personas, e.g. `--personas name:Mary --personas first`.
    #[arg(long)]
    pub personas: Vec<String>,
    /// Run the male and female name battery instead of a single persona.
    #[arg(long)]
    pub names: bool,
    /// Name list TOML with `male` and `female` arrays.
    #[arg(long)]
    pub names_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunSettings,
    /// Trait code (E, A, C, ES, OE) or `all`.
    #[arg(long = "trait", default_value = "all")]
    pub r#trait: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[command(flatten)]
    pub run: RunSettings,
    /// Corpus JSONL (`doc_id`, `source`, `text`, optional `subject_responses`).
    #[arg(long)]
    pub input: PathBuf,
    /// Token budget for each document.
    #[arg(long, default_value_t = 512)]
    pub limit: usize,
    /// `min-words:<n>`, `iqr`, `iqr:score:<trait>`; repeatable.
    #[arg(long = "filter")]
    pub filters: Vec<String>,
    /// Output directory: `docs.jsonl`, plus `records.jsonl` when a backend is set.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Record files; base records (no context) are matched by persona, mode and model.
    #[arg(long, num_args = 1.., required = true)]
    pub records: Vec<PathBuf>,
    /// Prepared documents (from `corpus`) for survey correlations.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Survey filter configurations as `label=filter,filter`; repeatable.
    #[arg(long = "survey-filter")]
    pub survey_filters: Vec<String>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub docs: PathBuf,
    /// Comma-separated n-gram orders.
    #[arg(long, default_value = "1,2,3")]
    pub orders: String,
    /// Also fit one model per order.
    #[arg(long)]
    pub per_order: bool,
    #[arg(long, default_value_t = 1)]
    pub min_df: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Logistic regression on the sign of the delta instead of ridge.
    #[arg(long)]
    pub logistic: bool,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub records: Vec<PathBuf>,
    /// Min/median/max table per trait and context kind.
    #[arg(long)]
    pub ranges: bool,
    /// Scatter and histogram tables for plotting.
    #[arg(long)]
    pub plots: bool,
    /// Name list used to split name personas by gender.
    #[arg(long)]
    pub names_file: Option<PathBuf>,
    #[arg(long)]
    pub percentile_model: Option<String>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Outcome of a command: the JSON summary and the exit status.
#[derive(Debug)]
pub struct Outcome {
    pub summary: serde_json::Value,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(summary: serde_json::Value) -> Outcome {
        Outcome {
            summary,
            exit_code: EXIT_OK,
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    if e.is_backend() {
        EXIT_BACKEND
    } else {
        EXIT_VALIDATION
    }
}

/// Parses arguments and runs; returns the exit status after printing the summary.
pub fn main_with_args<I, T>(args: I, env: &BTreeMap<String, String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let command = command_name(&cli.command);
    match run(cli, env) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome.summary).unwrap_or_default());
            outcome.exit_code
        }
        Err(e) => {
            let code = exit_code_for(&e);
            eprintln!("error: {e}");
            let summary = serde_json::json!({"command": command, "status": "error", "error": e.to_string()});
            println!("{summary}");
            code
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Assess(_) => "assess",
        Command::Grid(_) => "grid",
        Command::Corpus(_) => "corpus",
        Command::Analyze(_) => "analyze",
        Command::Features(_) => "features",
        Command::Report(_) => "report",
    }
}

pub fn run(cli: Cli, env: &BTreeMap<String, String>) -> Result<Outcome> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            toml::from_str::<ConfigFile>(&text).map_err(|e| Error::Parse {
                origin: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => ConfigFile::default(),
    };
    let layered = |flags: &RunSettings| -> Result<Resolved> {
        let merged = file
            .run
            .clone()
            .overlay(RunSettings::from_env(env)?)
            .overlay(flags.clone());
        Resolved::resolve(&merged)
    };
    let bank_only = |path: &Option<PathBuf>| -> Result<ItemBank> {
        let flags = RunSettings {
            bank: path.clone(),
            ..RunSettings::default()
        };
        Ok(layered(&flags)?.bank)
    };
    match cli.command {
        Command::Assess(args) => cmd_assess(&layered(&args.run)?, &args),
        Command::Grid(args) => cmd_grid(&layered(&args.run)?, &args),
        Command::Corpus(args) => cmd_corpus(&layered(&args.run)?, &args),
        Command::Analyze(args) => cmd_analyze(&bank_only(&args.bank)?, &args),
        Command::Features(args) => cmd_features(&bank_only(&args.bank)?, &args),
        Command::Report(args) => {
            let flags = RunSettings {
                bank: args.bank.clone(),
                percentile_model: args.percentile_model.clone(),
                ..RunSettings::default()
            };
            let resolved = layered(&flags)?;
            cmd_report(&resolved.bank, resolved.percentile_model, &args)
        }
    }
}

fn require_file(path: &Path, field: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: {} does not exist", path.display())))
    }
}

/// Writes whatever completed, plus a manifest when anything failed.
fn finish_battery(
    command: &str,
    outcome: BatteryOutcome,
    records_path: &Path,
    extra: serde_json::Value,
) -> Result<Outcome> {
    write_jsonl(records_path, &outcome.records)?;
    let mut summary = serde_json::json!({
        "command": command,
        "records": records_path,
        "completed": outcome.records.len(),
        "failed": outcome.failures.len(),
        "details": extra,
    });
    if outcome.is_complete() {
        summary["status"] = "ok".into();
        return Ok(Outcome::ok(summary));
    }
    let manifest = records_path.with_extension("manifest.json");
    write_json(&manifest, &outcome.manifest())?;
    summary["status"] = "partial".into();
    summary["manifest"] = serde_json::json!(manifest);
    let backend = outcome.failures.iter().any(|f| f.backend);
    Ok(Outcome {
        summary,
        exit_code: if backend { EXIT_BACKEND } else { EXIT_VALIDATION },
    })
}

fn cmd_assess(cfg: &Resolved, args: &AssessArgs) -> Result<Outcome> {
    let contexts: Vec<ContextSpec> = match &args.context_file {
        Some(path) => {
            require_file(path, "context_file")?;
            read_jsonl(path)?
        }
        None => vec![ContextSpec::None],
    };
    for c in &contexts {
        c.validate(&cfg.bank).map_err(|e| field_error("context_file", e))?;
    }
    let mut personas: Vec<Persona> = if args.names {
        let names = match &args.names_file {
            Some(p) => NameList::load(p).map_err(|e| field_error("names_file", e))?,
            None => NameList::default_us(),
        };
        names.male.iter().chain(&names.female).map(Persona::named).collect()
    } else {
        vec![cfg.persona.clone()]
    };
    for p in &args.personas {
        personas.push(p.parse().map_err(|e| field_error("personas", e))?);
    }
    let gateway = cfg.gateway()?;
    let mode = cfg.mode_for(&gateway);
    let assessor = cfg.assessor(&gateway);
    let mut outcome = BatteryOutcome::default();
    for persona in &personas {
        let part = assessor.run_battery(&contexts, persona, mode)?;
        outcome.records.extend(part.records);
        outcome.failures.extend(part.failures);
    }
    let extra = serde_json::json!({"mode": mode, "model_id": gateway.model_id(), "personas": personas.len()});
    finish_battery("assess", outcome, &args.out, extra)
}

fn cmd_grid(cfg: &Resolved, args: &GridArgs) -> Result<Outcome> {
    let traits: Vec<Trait> = if args.r#trait.eq_ignore_ascii_case("all") {
        Trait::ALL.to_vec()
    } else {
        vec![Trait::from_code(&args.r#trait.to_ascii_uppercase())
            .ok_or_else(|| Error::Config(format!("trait: unknown trait {:?}", args.r#trait)))?]
    };
    let gateway = cfg.gateway()?;
    let mode = cfg.mode_for(&gateway);
    let assessor = cfg.assessor(&gateway);
    let base = assessor.run_assessment(&ContextSpec::None, &cfg.persona, mode)?;
    let contexts: Vec<ContextSpec> = traits
        .iter()
        .flat_map(|&t| build_grid(&cfg.bank, t))
        .map(|c| c.context())
        .collect();
    let outcome = assessor.run_battery(&contexts, &cfg.persona, mode)?;
    write_jsonl(args.out.join("base.jsonl"), std::slice::from_ref(&base))?;
    let complete = outcome.is_complete();
    let mut records = vec![base];
    records.extend(outcome.records.iter().cloned());
    let result = finish_battery(
        "grid",
        outcome,
        &args.out.join("grid.jsonl"),
        serde_json::json!({"mode": mode, "model_id": gateway.model_id(), "traits": traits}),
    )?;
    if !complete {
        return Ok(result);
    }
    let analysis = analyze_records(&cfg.bank, &records, None, &[], &args.out)?;
    let mut summary = result.summary;
    summary["analysis"] = analysis;
    Ok(Outcome::ok(summary))
}

fn cmd_corpus(cfg: &Resolved, args: &CorpusArgs) -> Result<Outcome> {
    require_file(&args.input, "input")?;
    if args.limit == 0 {
        return Err(Error::Config("limit: must be positive".into()));
    }
    let filters: Vec<FilterSpec> = args
        .filters
        .iter()
        .map(|f| f.parse().map_err(|e| field_error("filter", e)))
        .collect::<Result<_>>()?;
    let docs = read_corpus(&args.input, &cfg.bank)?;
    let read = docs.len();
    let docs: Vec<CorpusDoc> = docs.iter().map(|d| truncate(d, args.limit)).collect();
    let truncated = docs.iter().filter(|d| d.truncated).count();
    let docs = apply_filters(&docs, &filters)?;
    let docs_path = args.out.join("docs.jsonl");
    write_jsonl(&docs_path, &docs)?;
    let details = serde_json::json!({
        "read": read, "kept": docs.len(), "truncated": truncated,
        "filters": filters.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "docs": docs_path,
    });
    if cfg.backend.is_none() {
        return Ok(Outcome::ok(
            serde_json::json!({"command": "corpus", "status": "ok", "details": details}),
        ));
    }
    let gateway = cfg.gateway()?;
    let mode = cfg.mode_for(&gateway);
    let assessor = cfg.assessor(&gateway);
    let mut contexts = vec![ContextSpec::None];
    contexts.extend(docs.iter().map(CorpusDoc::context));
    let outcome = assessor.run_battery(&contexts, &cfg.persona, mode)?;
    finish_battery("corpus", outcome, &args.out.join("records.jsonl"), details)
}

fn load_all_records(paths: &[PathBuf], bank: &ItemBank) -> Result<Vec<AssessmentRecord>> {
    let mut records = Vec::new();
    for p in paths {
        require_file(p, "records")?;
        records.extend(read_records(p, bank)?);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("record files contain no records".into()));
    }
    Ok(records)
}

fn parse_survey_configs(raw: &[String]) -> Result<Vec<(String, Vec<FilterSpec>)>> {
    if raw.is_empty() {
        return Ok(vec![
            ("all".into(), vec![]),
            ("no-outlier".into(), vec![FilterSpec::iqr()]),
            ("c>=75".into(), vec![FilterSpec::iqr(), FilterSpec::min_words(75)]),
            ("c>=100".into(), vec![FilterSpec::iqr(), FilterSpec::min_words(100)]),
        ]);
    }
    raw.iter()
        .map(|entry| {
            let (label, list) = entry
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("survey-filter: expected label=filters, got {entry:?}")))?;
            let filters = list
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|f| f.parse().map_err(|e| field_error("survey-filter", e)))
                .collect::<Result<_>>()?;
            Ok((label.to_string(), filters))
        })
        .collect()
}

/// Records grouped under the base record with the same persona, mode and model.
struct Group<'a> {
    label: String,
    base: &'a AssessmentRecord,
    records: Vec<&'a AssessmentRecord>,
}

fn group_by_base(records: &[AssessmentRecord]) -> Result<Vec<Group<'_>>> {
    let mut groups: Vec<Group> = records
        .iter()
        .filter(|r| r.context == ContextSpec::None)
        .map(|base| Group {
            label: format!("{}/{}/{}", base.persona, base.mode, base.model_id),
            base,
            records: Vec::new(),
        })
        .collect();
    for r in records.iter().filter(|r| r.context != ContextSpec::None) {
        let group = groups.iter_mut().find(|g| r.comparable_with(g.base)).ok_or_else(|| {
            Error::BaseMismatch(format!(
                "no base record for {}/{}/{} (needed by {})",
                r.persona,
                r.mode,
                r.model_id,
                r.context.label()
            ))
        })?;
        group.records.push(r);
    }
    groups.retain(|g| !g.records.is_empty());
    Ok(groups)
}

#[derive(Serialize)]
struct DeltaRow<'a> {
    group: &'a str,
    #[serde(rename = "trait")]
    r#trait: Trait,
    context: &'a str,
    context_kind: &'a str,
    context_item_id: Option<u32>,
    modifier: Option<ResponseChoice>,
    doc_id: Option<&'a str>,
    delta: i32,
    r_cm: Option<i32>,
}

#[derive(Serialize)]
struct CorrelationRow {
    group: String,
    variant: &'static str,
    scope: String,
    rho: Option<f64>,
    n: usize,
    p_value: Option<f64>,
    mean_item_rho: Option<f64>,
    median_item_rho: Option<f64>,
    undefined_items: Option<usize>,
}

#[derive(Serialize)]
struct ItemRhoRow {
    group: String,
    variant: &'static str,
    #[serde(rename = "trait")]
    r#trait: Trait,
    item_id: u32,
    rho: Option<f64>,
}

#[derive(Serialize)]
struct RcmCsvRow {
    group: String,
    variant: &'static str,
    r_cm: i32,
    n: usize,
    mean: f64,
    median: f64,
    sd: f64,
    ci_low: f64,
    ci_high: f64,
}

#[derive(Serialize)]
struct SurveyRow {
    group: String,
    filter: String,
    n_docs: usize,
    scope: String,
    rho: Option<f64>,
    n: usize,
    p_value: Option<f64>,
}

fn item_stats_for(items: &PerItemRho, t: Option<Trait>) -> (Option<f64>, Option<f64>, usize) {
    let selected: Vec<_> = items
        .items
        .iter()
        .filter(|i| t.is_none_or(|t| i.r#trait == t))
        .collect();
    let rhos: Vec<f64> = selected.iter().filter_map(|i| i.rho).collect();
    (
        crate::stats::mean(&rhos),
        crate::stats::median(&rhos),
        selected.len() - rhos.len(),
    )
}

/// Full analysis of a record set into `out`; returns the JSON summary.
pub fn analyze_records(
    bank: &ItemBank,
    records: &[AssessmentRecord],
    docs: Option<&[CorpusDoc]>,
    survey_configs: &[(String, Vec<FilterSpec>)],
    out: &Path,
) -> Result<serde_json::Value> {
    let groups = group_by_base(records)?;
    let mut delta_rows_owned: Vec<(String, DeltaRecord)> = Vec::new();
    let mut corr_rows = Vec::new();
    let mut item_rows = Vec::new();
    let mut rcm_rows = Vec::new();
    let mut survey_rows = Vec::new();
    let mut notes = Vec::new();
    let mut summary_groups = Vec::new();

    for g in &groups {
        let owned: Vec<AssessmentRecord> = g.records.iter().map(|r| (*r).clone()).collect();
        let raw = deltas(bank, &owned, g.base)?;
        delta_rows_owned.extend(raw.iter().map(|d| (g.label.clone(), d.clone())));
        let mut group_summary = serde_json::json!({"group": g.label, "records": owned.len()});

        let item_records: Vec<AssessmentRecord> = owned
            .iter()
            .filter(|r| r.context.item_context().is_some())
            .cloned()
            .collect();
        if !item_records.is_empty() {
            let adjusted: Vec<AssessmentRecord> = item_records
                .iter()
                .map(|r| copy_bias_adjust(bank, r, g.base))
                .collect::<Result<_>>()?;
            for (variant, recs) in [("unadjusted", &item_records), ("copy_adjusted", &adjusted)] {
                let d = deltas(bank, recs, g.base)?;
                let pooled = pooled_correlation(&d);
                let per_item = per_item_rho(&d).ok();
                let mut push = |report: &CorrelationReport, t: Option<Trait>| {
                    let (mean, median, undefined) = per_item
                        .as_ref()
                        .map(|p| item_stats_for(p, t))
                        .map_or((None, None, None), |(a, b, c)| (a, b, Some(c)));
                    corr_rows.push(CorrelationRow {
                        group: g.label.clone(),
                        variant,
                        scope: report.scope.clone(),
                        rho: report.rho,
                        n: report.n,
                        p_value: report.p_value,
                        mean_item_rho: mean,
                        median_item_rho: median,
                        undefined_items: undefined,
                    });
                };
                push(&pooled, None);
                for (t, report) in Trait::ALL.iter().zip(per_trait_correlation(&d)) {
                    if report.n > 0 {
                        push(&report, Some(*t));
                    }
                }
                match &per_item {
                    Some(p) => item_rows.extend(p.items.iter().map(|i| ItemRhoRow {
                        group: g.label.clone(),
                        variant,
                        r#trait: i.r#trait,
                        item_id: i.item_id,
                        rho: i.rho,
                    })),
                    None => notes.push(format!(
                        "{} {variant}: incomplete modifier sets, per-item rho skipped",
                        g.label
                    )),
                }
                match rcm_summary(&d) {
                    Ok(rows) => rcm_rows.extend(rows.into_iter().map(|r| RcmCsvRow {
                        group: g.label.clone(),
                        variant,
                        r_cm: r.r_cm,
                        n: r.n,
                        mean: r.mean,
                        median: r.median,
                        sd: r.sd,
                        ci_low: r.ci_low,
                        ci_high: r.ci_high,
                    })),
                    Err(e) => notes.push(format!("{} {variant}: r_cm summary skipped: {e}", g.label)),
                }
                group_summary[variant] = serde_json::json!({
                    "pooled_rho": pooled.rho,
                    "n": pooled.n,
                    "mean_item_rho": per_item.as_ref().and_then(|p| p.mean),
                    "median_item_rho": per_item.as_ref().and_then(|p| p.median),
                });
            }
        }

        if let Some(docs) = docs {
            let survey: Vec<AssessmentRecord> = owned
                .iter()
                .filter(|r| matches!(&r.context, ContextSpec::FreeText { source, .. } if source.is_survey()))
                .cloned()
                .collect();
            if !survey.is_empty() {
                for s in survey_correlation_table(&survey, docs, survey_configs)? {
                    for report in std::iter::once(&s.pooled).chain(&s.per_trait) {
                        survey_rows.push(SurveyRow {
                            group: g.label.clone(),
                            filter: s.label.clone(),
                            n_docs: s.n_docs,
                            scope: report.scope.clone(),
                            rho: report.rho,
                            n: report.n,
                            p_value: report.p_value,
                        });
                    }
                }
            }
        }
        summary_groups.push(group_summary);
    }

    let delta_rows: Vec<DeltaRow> = delta_rows_owned
        .iter()
        .map(|(group, d)| DeltaRow {
            group,
            r#trait: d.r#trait,
            context: &d.context,
            context_kind: d.context_kind.as_str(),
            context_item_id: d.context_item_id,
            modifier: d.modifier,
            doc_id: d.doc_id.as_deref(),
            delta: d.delta,
            r_cm: d.r_cm,
        })
        .collect();
    // File names relative to `out`, so the summary does not depend on where it was written.
    let mut artifacts = vec!["deltas.csv"];
    write_csv(out.join("deltas.csv"), &delta_rows)?;
    if !corr_rows.is_empty() {
        artifacts.extend(["correlations.csv", "item_rho.csv"]);
        write_csv(out.join("correlations.csv"), &corr_rows)?;
        write_csv(out.join("item_rho.csv"), &item_rows)?;
    }
    if !rcm_rows.is_empty() {
        artifacts.push("rcm_summary.csv");
        write_csv(out.join("rcm_summary.csv"), &rcm_rows)?;
    }
    if !survey_rows.is_empty() {
        artifacts.push("survey.csv");
        write_csv(out.join("survey.csv"), &survey_rows)?;
    }
    let mut summary = serde_json::json!({"groups": summary_groups, "notes": notes, "artifacts": artifacts});
    write_json(out.join("analysis.json"), &summary)?;
    summary["out"] = serde_json::json!(out);
    Ok(summary)
}

fn cmd_analyze(bank: &ItemBank, args: &AnalyzeArgs) -> Result<Outcome> {
    let records = load_all_records(&args.records, bank)?;
    let docs = match &args.docs {
        Some(p) => {
            require_file(p, "docs")?;
            Some(read_jsonl::<CorpusDoc>(p)?)
        }
        None => None,
    };
    let configs = parse_survey_configs(&args.survey_filters)?;
    let analysis = analyze_records(bank, &records, docs.as_deref(), &configs, &args.out)?;
    Ok(Outcome::ok(
        serde_json::json!({"command": "analyze", "status": "ok", "analysis": analysis}),
    ))
}

fn parse_orders(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| (1..=3).contains(n))
                .ok_or_else(|| Error::Config(format!("orders: expected values in 1..=3, got {s:?}")))
        })
        .collect()
}

fn cmd_features(bank: &ItemBank, args: &FeatureArgs) -> Result<Outcome> {
    let records = load_all_records(&args.records, bank)?;
    require_file(&args.docs, "docs")?;
    let docs: Vec<CorpusDoc> = read_jsonl(&args.docs)?;
    let orders = parse_orders(&args.orders)?;
    let config = RegressionConfig {
        lambda: args.lambda,
        loss: if args.logistic { Loss::Logistic } else { Loss::Squared },
        ..RegressionConfig::default()
    };
    let mut runs = vec![("union".to_string(), orders.clone())];
    if args.per_order {
        runs.extend(orders.iter().map(|n| (format!("n{n}"), vec![*n])));
    }
    let mut csv_rows = Vec::new();
    let mut text = String::new();
    let mut summary = Vec::new();
    for g in group_by_base(&records)? {
        let owned: Vec<AssessmentRecord> = g
            .records
            .iter()
            .filter(|r| r.context.doc_id().is_some())
            .map(|r| (*r).clone())
            .collect();
        if owned.is_empty() {
            continue;
        }
        let d = deltas(bank, &owned, g.base)?;
        for (run, orders) in &runs {
            let spec = NgramSpec {
                orders: orders.clone(),
                min_df: args.min_df,
            };
            for (t, result) in attribute_all(&docs, &d, &spec, &config, args.k) {
                match result {
                    Ok(report) => {
                        text.push_str(&format!("[{} / {run}]\n", g.label));
                        text.push_str(&report.to_text());
                        text.push('\n');
                        csv_rows.extend(report.csv_rows().into_iter().map(|r| FeatureRow {
                            group: g.label.clone(),
                            run: run.clone(),
                            r#trait: r.r#trait,
                            direction: r.direction,
                            rank: r.rank,
                            ngram: r.ngram,
                            weight: r.weight,
                        }));
                        summary.push(serde_json::json!({
                            "group": g.label, "run": run, "trait": t, "docs": report.n_docs,
                            "vocabulary": report.vocabulary_size, "iterations": report.iterations, "solver": report.solver,
                        }));
                    }
                    Err(Error::EmptyInput(msg)) => {
                        summary.push(serde_json::json!({"group": g.label, "run": run, "trait": t, "skipped": msg}))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if csv_rows.is_empty() && summary.is_empty() {
        return Err(Error::EmptyInput("no free-text records with a matching base".into()));
    }
    write_csv(args.out.join("features.csv"), &csv_rows)?;
    crate::records::write_bytes(args.out.join("features.txt"), text.as_bytes())?;
    Ok(Outcome::ok(serde_json::json!({
        "command": "features", "status": "ok", "config": config, "fits": summary,
        "artifacts": [args.out.join("features.csv"), args.out.join("features.txt")],
    })))
}

#[derive(Serialize)]
struct FeatureRow {
    group: String,
    run: String,
    #[serde(rename = "trait")]
    r#trait: String,
    direction: &'static str,
    rank: usize,
    ngram: String,
    weight: f64,
}

#[derive(Serialize)]
struct RangeCsvRow {
    context_kind: &'static str,
    #[serde(rename = "trait")]
    r#trait: Trait,
    n: usize,
    base: Option<i32>,
    min: f64,
    median: f64,
    max: f64,
    base_percentile: Option<f64>,
    min_percentile: f64,
    median_percentile: f64,
    max_percentile: f64,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    group: &'a str,
    #[serde(rename = "trait")]
    r#trait: Trait,
    context: &'a str,
    r_cm: i32,
    delta: i32,
}

#[derive(Serialize)]
struct HistogramRow {
    group: String,
    #[serde(rename = "trait")]
    r#trait: Trait,
    bin_low: f64,
    bin_high: f64,
    count: usize,
}

#[derive(Serialize)]
struct NameRow {
    #[serde(rename = "trait")]
    r#trait: Trait,
    male_n: usize,
    male_mean: Option<f64>,
    female_n: usize,
    female_mean: Option<f64>,
    difference: Option<f64>,
}

fn cmd_report(bank: &ItemBank, model: PercentileModel, args: &ReportArgs) -> Result<Outcome> {
    let records = load_all_records(&args.records, bank)?;
    let mut artifacts = Vec::new();
    if args.ranges {
        let report = range_report(bank, &records, model)?;
        let rows: Vec<RangeCsvRow> = report
            .rows
            .iter()
            .map(|r| RangeCsvRow {
                context_kind: r.context_kind.as_str(),
                r#trait: r.r#trait,
                n: r.n,
                base: r.base,
                min: r.min,
                median: r.median,
                max: r.max,
                base_percentile: r.base_percentile,
                min_percentile: r.min_percentile,
                median_percentile: r.median_percentile,
                max_percentile: r.max_percentile,
            })
            .collect();
        let path = args.out.join("ranges.csv");
        write_csv(&path, &rows)?;
        artifacts.push(path);
    }
    if args.plots {
        let mut scatter = Vec::new();
        let mut hist = Vec::new();
        for g in group_by_base(&records)? {
            let owned: Vec<AssessmentRecord> = g
                .records
                .iter()
                .filter(|r| r.context.item_context().is_some())
                .map(|r| (*r).clone())
                .collect();
            if owned.is_empty() {
                continue;
            }
            let d = deltas(bank, &owned, g.base)?;
            scatter.extend(d.iter().filter_map(|x| {
                x.r_cm
                    .map(|r| (g.label.clone(), x.r#trait, x.context.clone(), r, x.delta))
            }));
            if let Ok(p) = per_item_rho(&d) {
                for (t, h) in &p.histograms {
                    for (i, count) in h.counts.iter().enumerate() {
                        hist.push(HistogramRow {
                            group: g.label.clone(),
                            r#trait: *t,
                            bin_low: h.edges[i],
                            bin_high: h.edges[i + 1],
                            count: *count,
                        });
                    }
                }
            }
        }
        let rows: Vec<ScatterRow> = scatter
            .iter()
            .map(|(group, t, context, r, delta)| ScatterRow {
                group,
                r#trait: *t,
                context,
                r_cm: *r,
                delta: *delta,
            })
            .collect();
        write_csv(args.out.join("scatter.csv"), &rows)?;
        write_csv(args.out.join("rho_histogram.csv"), &hist)?;
        artifacts.push(args.out.join("scatter.csv"));
        artifacts.push(args.out.join("rho_histogram.csv"));
    }
    let named: Vec<&AssessmentRecord> = records
        .iter()
        .filter(|r| r.context == ContextSpec::None && matches!(r.persona, Persona::Named { .. }))
        .collect();
    if !named.is_empty() {
        let names = match &args.names_file {
            Some(p) => NameList::load(p)?,
            None => NameList::default_us(),
        };
        let of = |list: &[String], t: Trait| -> Vec<f64> {
            named
                .iter()
                .filter(|r| matches!(&r.persona, Persona::Named { name } if list.contains(name)))
                .map(|r| f64::from(r.scores.get(t)))
                .collect()
        };
        let rows: Vec<NameRow> = Trait::ALL
            .iter()
            .map(|&t| {
                let m = of(&names.male, t);
                let f = of(&names.female, t);
                let (mm, fm) = (crate::stats::mean(&m), crate::stats::mean(&f));
                NameRow {
                    r#trait: t,
                    male_n: m.len(),
                    male_mean: mm,
                    female_n: f.len(),
                    female_mean: fm,
                    difference: mm.zip(fm).map(|(a, b)| a - b),
                }
            })
            .collect();
        let path = args.out.join("names.csv");
        write_csv(&path, &rows)?;
        artifacts.push(path);
    }
    if artifacts.is_empty() {
        return Err(Error::Config(
            "report: nothing to do (pass --ranges and/or --plots)".into(),
        ));
    }
    Ok(Outcome::ok(
        serde_json::json!({"command": "report", "status": "ok", "artifacts": artifacts}),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn layering_flags_over_env_over_file() {
        let file = RunSettings {
            backend: Some("mock:uniform".into()),
            concurrency: Some(2),
            seed: Some(1),
            ..RunSettings::default()
        };
        let from_env =
            RunSettings::from_env(&env(&[("PERSONA_PROBE_CONCURRENCY", "4"), ("PERSONA_PROBE_SEED", "5")])).unwrap();
        let flags = RunSettings {
            seed: Some(9),
            ..RunSettings::default()
        };
        let merged = file.overlay(from_env).overlay(flags);
        assert_eq!(merged.backend.as_deref(), Some("mock:uniform"));
        assert_eq!(merged.concurrency, Some(4));
        assert_eq!(merged.seed, Some(9));
    }

    #[test]
    fn separator_is_unescaped_and_hashed() {
        let plain = Resolved::resolve(&RunSettings::default()).unwrap();
        assert_eq!(plain.render.separator, " ");
        let settings = RunSettings::from_env(&env(&[("PERSONA_PROBE_SEPARATOR", "\\n")])).unwrap();
        let newline = Resolved::resolve(&settings).unwrap();
        assert_eq!(newline.render.separator, "\n");
        assert_ne!(plain.config_hash(), newline.config_hash());
    }

    #[test]
    fn root_seed_reaches_unseeded_mocks() {
        let settings = |b: &str| RunSettings {
            backend: Some(b.into()),
            seed: Some(42),
            ..RunSettings::default()
        };
        let seed_of = |r: Resolved| match r.backend {
            Some(BackendSpec::Mock(m)) => m.seed,
            _ => unreachable!(),
        };
        assert_eq!(seed_of(Resolved::resolve(&settings("mock:lexicon")).unwrap()), 42);
        assert_eq!(seed_of(Resolved::resolve(&settings("mock:lexicon:3")).unwrap()), 3);
    }

    #[test]
    fn validation_errors_name_the_field() {
        let bad = RunSettings {
            concurrency: Some(0),
            ..RunSettings::default()
        };
        assert!(Resolved::resolve(&bad).unwrap_err().to_string().contains("concurrency"));
        let bad = RunSettings {
            mode: Some("sideways".into()),
            ..RunSettings::default()
        };
        assert!(Resolved::resolve(&bad).unwrap_err().to_string().contains("mode"));
        assert!(RunSettings::from_env(&env(&[("PERSONA_PROBE_SEED", "x")])).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["persona-probe", "bogus"], &BTreeMap::new()), EXIT_USAGE);
        assert_eq!(main_with_args(["persona-probe", "--help"], &BTreeMap::new()), EXIT_OK);
    }

    #[test]
    fn survey_config_parsing() {
        let c = parse_survey_configs(&["strict=iqr,min-words:100".into(), "all=".into()]).unwrap();
        assert_eq!(c[0].1, vec![FilterSpec::iqr(), FilterSpec::min_words(100)]);
        assert!(c[1].1.is_empty());
        assert!(parse_survey_configs(&["nolabel".into()]).is_err());
        assert_eq!(parse_survey_configs(&[]).unwrap().len(), 4);
        assert_eq!(parse_orders("1,2").unwrap(), [1, 2]);
        assert!(parse_orders("4").is_err());
    }
}
