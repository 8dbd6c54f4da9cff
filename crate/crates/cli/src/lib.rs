//! The `sdft` command line.
//!
//! Exit codes: 0 on success, 1 when validation or a run fails, 2 on usage
//! errors. With `--json` every subcommand prints one JSON document on stdout.

pub mod config;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sdft_core::curation::CurationStore;
use sdft_core::dataset::{self, manifest_path, DatasetManifest, LineViolation, ReviewInfo, TrainingRecord};
use sdft_core::eval::{
    qa_accuracy, recognition_eval, MetricsReport, ProbeSet, QaKind, RetentionScores, RetentionSummary, TokenF1,
};
use sdft_core::gateway::ModelRole;
use sdft_core::loss::{check_fixture, LossFixture};
use sdft_core::synthesis::{DirImages, Engine, ImageProvider, JobFile, SynthesisReport};
use sdft_core::templates::{self, sample_library, TemplateLibrary};
use sdft_core::{StructureMode, SynthesisJob};

pub use config::CliConfig;
use config::{build_gateway, env_value, layered};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    /// Details were already written to stdout.
    #[error("validation failed")]
    Reported,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) | CliError::Reported => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "sdft", version, about = "Structured dialogue synthesis, curation and evaluation")]
struct Cli {
    /// Print one JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate dialogue triplets for a job file.
    Synth(SynthArgs),
    /// Export a curation store as a JSONL training set.
    Export(ExportArgs),
    /// Check a JSONL training set.
    Validate {
        dataset: PathBuf,
    },
    /// Compute evaluation metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Weighted loss utilities.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Question template utilities.
    #[command(subcommand)]
    Templates(TemplatesCommand),
    /// Serve the review API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct MockArg {
    /// Use the scripted mock backend, optionally loading a script file.
    #[arg(long, num_args = 0..=1, value_name = "SCRIPT")]
    mock: Option<Option<PathBuf>>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    job: PathBuf,
    /// Write all produced records (pending review) as JSONL.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Record produced dialogues in this curation store.
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    #[arg(long)]
    mode: Option<StructureMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vote_m: Option<usize>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    /// Question template file; the built-in library otherwise.
    #[arg(long, value_name = "FILE")]
    templates: Option<PathBuf>,
    #[command(flatten)]
    mock: MockArg,
}

#[derive(Debug, Args)]
struct ExportArgs {
    store: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, default_value = "full")]
    mode: StructureMode,
    /// Keep only approved and edited records.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    approved_only: bool,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Yes/no recognition accuracy over positive and negative images.
    Recognition(RecognitionArgs),
    /// Closed or open QA accuracy from answer/key pairs.
    Qa(QaArgs),
    /// Average of POPE, MME and TextVQA scores.
    Retention(RetentionArgs),
}

#[derive(Debug, Args)]
struct RecognitionArgs {
    /// A probe set or an array of probe sets.
    probes: PathBuf,
    /// Directory image locators resolve against; the probe file's directory otherwise.
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    templates: Option<PathBuf>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[command(flatten)]
    mock: MockArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScorerName {
    TokenF1,
}

#[derive(Debug, Args)]
struct QaArgs {
    /// JSON array or JSONL of `{"answer", "key"}` objects.
    file: PathBuf,
    #[arg(long)]
    kind: QaKind,
    /// Similarity scorer for open answers.
    #[arg(long, value_enum)]
    scorer: Option<ScorerName>,
}

#[derive(Debug, Args)]
struct RetentionArgs {
    #[arg(long)]
    pope: Option<f64>,
    #[arg(long)]
    mme: Option<f64>,
    #[arg(long)]
    textvqa: Option<f64>,
    /// JSON `{"pope", "mme", "textvqa"}`.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["pope", "mme", "textvqa", "items"])]
    scores: Option<PathBuf>,
    /// Per-item CSV with columns `benchmark,item_id,correct`.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["pope", "mme", "textvqa"])]
    items: Option<PathBuf>,
    #[arg(long)]
    base_pope: Option<f64>,
    #[arg(long)]
    base_mme: Option<f64>,
    #[arg(long)]
    base_textvqa: Option<f64>,
    /// Base model scores as JSON, for the retention ratio.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["base_pope", "base_mme", "base_textvqa"])]
    base_scores: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum LossCommand {
    /// Per-turn cross-entropy and the weighted total for a logprob fixture.
    Check { fixture: PathBuf },
}

#[derive(Debug, Subcommand)]
enum TemplatesCommand {
    /// Report every problem in a template file.
    Lint { file: PathBuf },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Root for relative image paths in submitted jobs.
    #[arg(long, value_name = "DIR", default_value = ".")]
    images: PathBuf,
    #[arg(long, value_name = "FILE")]
    templates: Option<PathBuf>,
    #[command(flatten)]
    mock: MockArg,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            if !matches!(e, CliError::Reported) {
                let _ = writeln!(err, "error: {e}");
            }
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).try_init();
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let json = cli.json;
    match &cli.command {
        Command::Synth(args) => synth(&config, args, json, out),
        Command::Export(args) => export(args, json, out),
        Command::Validate { dataset } => validate(dataset, json, out),
        Command::Eval(EvalCommand::Recognition(args)) => eval_recognition(&config, args, json, out),
        Command::Eval(EvalCommand::Qa(args)) => eval_qa(args, json, out),
        Command::Eval(EvalCommand::Retention(args)) => eval_retention(args, json, out),
        Command::Loss(LossCommand::Check { fixture }) => loss_check(fixture, json, out),
        Command::Templates(TemplatesCommand::Lint { file }) => templates_lint(file, json, out),
        Command::Serve(args) => serve(&config, args, out),
    }
}

fn print(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| failed(format!("stdout: {e}")))
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(failed)?;
    print(out, &format!("{text}\n"))
}

/// Fixed 12 decimals with trailing zeros removed.
pub fn format_number(value: f64) -> String {
    let s = format!("{value:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| failed(format!("cannot read {}: {e}", path.display())))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(failed)
}

fn load_templates(path: Option<PathBuf>) -> Result<TemplateLibrary, CliError> {
    match path {
        Some(p) => TemplateLibrary::load(&p).map_err(|e| failed(format!("{}: {e}", p.display()))),
        None => Ok(sample_library()),
    }
}

/// Job file values win over config defaults; flags and then environment
/// variables win over both.
fn resolve_job(config: &CliConfig, args: &SynthArgs) -> Result<(SynthesisJob, PathBuf), CliError> {
    let text = read_text(&args.job)?;
    let mut file: JobFile =
        serde_json::from_str(&text).map_err(|e| failed(format!("invalid job file {}: {e}", args.job.display())))?;
    let d = &config.defaults;
    file.seed = file.seed.or(d.seed);
    file.vote_m = file.vote_m.or(d.vote_m);
    file.weights = file.weights.or(d.weights);
    file.temperatures = file.temperatures.or(d.temperatures);
    file.max_concurrency = file.max_concurrency.or(d.max_concurrency);
    file.structure_mode = file.structure_mode.or(d.structure_mode);

    let seed = layered(None, args.seed, env_value("SEED")?);
    let vote_m = layered(None, args.vote_m, env_value("VOTE_M")?);
    let concurrency = layered(None, args.max_concurrency, env_value("MAX_CONCURRENCY")?);
    let mode = layered(None, args.mode, env_value("STRUCTURE_MODE")?);
    file.seed = seed.or(file.seed);
    file.vote_m = vote_m.or(file.vote_m);
    file.max_concurrency = concurrency.or(file.max_concurrency);
    file.structure_mode = mode.or(file.structure_mode);

    let base_dir = args.job.parent().map(Path::to_path_buf).unwrap_or_default();
    let job = file.resolve(&base_dir).map_err(failed)?;
    Ok((job, base_dir))
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    report: &'a SynthesisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<&'a DatasetManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stored: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    store_errors: Vec<String>,
}

fn synth(config: &CliConfig, args: &SynthArgs, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let (job, base_dir) = resolve_job(config, args)?;
    let templates = load_templates(layered(config.templates.clone(), args.templates.clone(), env_value("TEMPLATES")?))?;
    let store_dir = layered(config.store_dir.clone(), args.store.clone(), env_value("STORE_DIR")?);
    let gateway = Arc::new(build_gateway(config, args.mock.mock.clone())?);
    let images: Arc<dyn ImageProvider> = Arc::new(DirImages::new(base_dir));
    let engine = Engine::new(gateway, images.clone()).with_templates(templates);

    let rt = runtime()?;
    let output = rt.block_on(engine.run_job(&job)).map_err(failed)?;
    tracing::info!(produced = output.report.produced, failed = output.report.failed, "job finished");

    let manifest = match &args.out {
        Some(path) => {
            let records: Vec<TrainingRecord> =
                output.triplets.iter().map(|t| TrainingRecord::from_triplet(t, ReviewInfo::pending())).collect();
            Some(dataset::export(&records, StructureMode::Full, false, path).map_err(failed)?)
        }
        None => None,
    };

    let mut store_errors = Vec::new();
    let mut stored = None;
    if let Some(dir) = store_dir {
        let store = CurationStore::open(&dir).map_err(failed)?;
        let mut seen = BTreeSet::new();
        let mut count = 0;
        for triplet in &output.triplets {
            if seen.insert(triplet.image.digest.clone()) {
                let put = rt.block_on(images.load(&triplet.image)).map_err(|e| e.to_string()).and_then(|loaded| {
                    store.images().put(&loaded).map_err(|e| e.to_string())
                });
                if let Err(e) = put {
                    store_errors.push(format!("image {}: {e}", triplet.image.digest));
                }
            }
            match store.record_dialogue(triplet.clone()) {
                Ok(_) => count += 1,
                Err(e) => store_errors.push(e.to_string()),
            }
        }
        stored = Some(count);
    }

    let report = &output.report;
    if json {
        print_json(out, &SynthSummary { report, out: manifest.as_ref(), stored, store_errors: store_errors.clone() })?;
    } else {
        let mut text = format!(
            "job {}: {} of {} triplets produced, {} failed, {} flagged\n",
            report.job_id, report.produced, report.requested, report.failed, report.flagged
        );
        for (concept, n) in &report.per_concept {
            text.push_str(&format!("  {concept}: {n}\n"));
        }
        for f in &report.failures {
            text.push_str(&format!("  failed {} image {}: {}\n", f.concept_id, f.image_index, f.error));
        }
        if let (Some(m), Some(path)) = (&manifest, &args.out) {
            text.push_str(&format!("wrote {} records to {} (sha256 {})\n", m.record_count, path.display(), m.digest));
        }
        if let Some(n) = stored {
            text.push_str(&format!("stored {n} dialogues\n"));
        }
        for e in &store_errors {
            text.push_str(&format!("  store: {e}\n"));
        }
        print(out, &text)?;
    }
    if report.requested > 0 && report.produced == 0 {
        return Err(CliError::Failed("no triplets were produced".into()));
    }
    if !store_errors.is_empty() {
        return Err(CliError::Failed(format!("{} dialogues could not be stored", store_errors.len())));
    }
    Ok(())
}

fn export(args: &ExportArgs, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if !args.store.is_dir() {
        return Err(failed(format!("store directory {} does not exist", args.store.display())));
    }
    let store = CurationStore::open(&args.store).map_err(failed)?;
    let manifest = dataset::export(&store.records(), args.mode, args.approved_only, &args.out).map_err(failed)?;
    if json {
        print_json(out, &manifest)
    } else {
        print(
            out,
            &format!(
                "wrote {} records ({} mode) to {}\nmanifest {} sha256 {}\n",
                manifest.record_count,
                manifest.structure_mode.as_str(),
                args.out.display(),
                manifest_path(&args.out).display(),
                manifest.digest
            ),
        )
    }
}

#[derive(Serialize)]
struct ValidateSummary {
    valid: bool,
    violations: Vec<LineViolation>,
    /// Whether the sidecar manifest digest matches, when a manifest exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest_matches: Option<bool>,
}

fn validate(path: &Path, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let violations =
        dataset::validate_file(path).map_err(|e| failed(format!("cannot read {}: {e}", path.display())))?;
    let manifest_matches = match std::fs::read_to_string(manifest_path(path)) {
        Ok(text) => {
            let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| failed(format!("manifest: {e}")))?;
            let bytes = std::fs::read(path).map_err(failed)?;
            Some(manifest.verify(&bytes))
        }
        Err(_) => None,
    };
    let valid = violations.is_empty() && manifest_matches != Some(false);
    if json {
        print_json(out, &ValidateSummary { valid, violations, manifest_matches })?;
    } else {
        let mut text = String::new();
        for v in &violations {
            text.push_str(&format!("{v}\n"));
        }
        if manifest_matches == Some(false) {
            text.push_str("manifest: digest does not match the dataset\n");
        }
        if valid {
            text.push_str(&format!("{}: ok\n", path.display()));
        }
        print(out, &text)?;
    }
    if valid { Ok(()) } else { Err(CliError::Reported) }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProbeInput {
    One(ProbeSet),
    Many(Vec<ProbeSet>),
}

fn eval_recognition(config: &CliConfig, args: &RecognitionArgs, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_text(&args.probes)?;
    let sets = match serde_json::from_str::<ProbeInput>(&text).map_err(|e| failed(format!("invalid probe file: {e}")))? {
        ProbeInput::One(p) => vec![p],
        ProbeInput::Many(p) => p,
    };
    let root = args.images.clone().unwrap_or_else(|| args.probes.parent().map(Path::to_path_buf).unwrap_or_default());
    let templates = load_templates(layered(config.templates.clone(), args.templates.clone(), env_value("TEMPLATES")?))?;
    let concurrency =
        layered(config.defaults.max_concurrency, args.max_concurrency, env_value("MAX_CONCURRENCY")?).unwrap_or(4);
    let gateway = build_gateway(config, args.mock.mock.clone())?;
    let images = DirImages::new(root);
    let rt = runtime()?;
    let mut report = MetricsReport::default();
    for set in &sets {
        let result = rt
            .block_on(recognition_eval(set, &gateway, &images, &templates, ModelRole::Base, concurrency))
            .map_err(|e| failed(format!("{}: {e}", set.concept_id)))?;
        report.recognition.push(result);
    }
    if json { print_json(out, &report) } else { print(out, &report.to_markdown()) }
}

#[derive(Deserialize)]
struct QaItem {
    answer: String,
    key: String,
}

fn parse_qa_items(text: &str) -> Result<Vec<QaItem>, CliError> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| failed(format!("invalid QA file: {e}")));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| failed(format!("line {}: {e}", i + 1))))
        .collect()
}

fn eval_qa(args: &QaArgs, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let items = parse_qa_items(&read_text(&args.file)?)?;
    let (answers, keys): (Vec<String>, Vec<String>) = items.into_iter().map(|i| (i.answer, i.key)).unzip();
    let scorer = args.scorer.map(|ScorerName::TokenF1| TokenF1);
    let result = qa_accuracy(&answers, &keys, args.kind, scorer.as_ref().map(|s| s as _)).map_err(failed)?;
    let report = MetricsReport { qa: Some(result), ..MetricsReport::default() };
    if json { print_json(out, &report) } else { print(out, &report.to_markdown()) }
}

fn scores_from(
    file: Option<&PathBuf>,
    items: Option<&PathBuf>,
    flags: [Option<f64>; 3],
    what: &str,
) -> Result<Option<RetentionScores>, CliError> {
    if let Some(path) = file {
        return RetentionScores::from_json(&read_text(path)?).map(Some).map_err(failed);
    }
    if let Some(path) = items {
        return RetentionScores::from_item_csv(&read_text(path)?).map(Some).map_err(failed);
    }
    match flags {
        [None, None, None] => Ok(None),
        [Some(pope), Some(mme), Some(textvqa)] => {
            RetentionScores { pope, mme, textvqa }.checked().map(Some).map_err(failed)
        }
        _ => Err(CliError::Usage(format!("{what}: give all three scores"))),
    }
}

fn eval_retention(args: &RetentionArgs, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let scores = scores_from(args.scores.as_ref(), args.items.as_ref(), [args.pope, args.mme, args.textvqa], "--pope/--mme/--textvqa")?
        .ok_or_else(|| CliError::Usage("give --pope/--mme/--textvqa, --scores or --items".into()))?;
    let base = scores_from(
        args.base_scores.as_ref(),
        None,
        [args.base_pope, args.base_mme, args.base_textvqa],
        "--base-pope/--base-mme/--base-textvqa",
    )?;
    let summary = RetentionSummary::new(scores, base);
    if json {
        return print_json(out, &json!({ "retention": summary }));
    }
    let mut text = format!(
        "pope     {:.3}\nmme      {:.3}\ntextvqa  {:.3}\naverage  {:.3}\n",
        summary.pope, summary.mme, summary.textvqa, summary.average
    );
    if let (Some(b), Some(r)) = (summary.base_average, summary.ratio_to_base) {
        text.push_str(&format!("base     {b:.3}\nratio    {r:.3}\n"));
    }
    print(out, &text)
}

fn loss_check(path: &Path, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let fixture: LossFixture =
        serde_json::from_str(&read_text(path)?).map_err(|e| failed(format!("invalid fixture {}: {e}", path.display())))?;
    let check = check_fixture(&fixture).map_err(failed)?;
    if json {
        return print_json(out, &check);
    }
    let mut text = String::new();
    for (phase, ce) in &check.per_turn {
        text.push_str(&format!("{:<12} {}\n", phase.to_string(), format_number(*ce)));
    }
    text.push_str(&format!("{:<12} {}\n", "total", format_number(check.total)));
    print(out, &text)
}

fn templates_lint(path: &Path, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let source = read_text(path)?;
    let errors: Vec<String> = templates::lint(&source).iter().map(ToString::to_string).collect();
    let count = if errors.is_empty() { TemplateLibrary::parse(&source).map(|l| l.len()).unwrap_or(0) } else { 0 };
    if json {
        print_json(out, &json!({ "valid": errors.is_empty(), "templates": count, "errors": errors }))?;
    } else if errors.is_empty() {
        print(out, &format!("{}: {count} templates ok\n", path.display()))?;
    } else {
        print(out, &errors.iter().map(|e| format!("{e}\n")).collect::<String>())?;
    }
    if errors.is_empty() { Ok(()) } else { Err(CliError::Reported) }
}

fn serve(config: &CliConfig, args: &ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store_dir = layered(config.store_dir.clone(), args.store.clone(), env_value("STORE_DIR")?)
        .ok_or_else(|| CliError::Usage("serve needs --store, store_dir in the config or SDFT_STORE_DIR".into()))?;
    let templates = load_templates(layered(config.templates.clone(), args.templates.clone(), env_value("TEMPLATES")?))?;
    let gateway = build_gateway(config, args.mock.mock.clone())?;
    let store = CurationStore::open(&store_dir).map_err(failed)?;
    let state = sdft_server::AppState::new(Arc::new(store), Arc::new(gateway), templates, args.images.clone());
    let rt = runtime()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .map_err(|e| failed(format!("cannot bind {}:{}: {e}", args.host, args.port)))?;
        let addr = listener.local_addr().map_err(failed)?;
        print(out, &format!("listening on http://{addr}/api/v1\n"))?;
        tokio::select! {
            served = sdft_server::serve(listener, state) => served.map_err(failed),
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
}
