//! Workflow glue behind the `modgate` binary: prepare a balanced corpus,
//! classify it through a provider, evaluate a finished run, and compare
//! runs across prompt versions and models.
//!
//! Every command is a plain function returning `Result<_, CliError>` so
//! integration tests can drive the exact code paths the binary uses.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use modgate_core::corpus::{balance_sample, corpus_stats, load_corpus, save_corpus};
use modgate_core::errlab::{
    compare_runs, misclassification_report, top_confusions, RunRecord,
};
use modgate_core::evalkit::percent;
use modgate_core::modelgw::{
    Gateway, GatewayError, ModelConfig, ProviderKind, ResponseCache,
};
use modgate_core::outparse::{
    parse_response, primary_label, CommentRecord, Flag, ScoredLabel,
};
use modgate_core::promptkit::{load_prompt_spec, PromptSpec};
use modgate_core::taxonomy::{Category, Taxonomy};

/// Errors split by exit code: user or data problems exit 1, provider and
/// transport failures exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Transport(_) => 2,
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> CliError {
        match e {
            GatewayError::Provider { .. } | GatewayError::Timeout(_) => {
                CliError::Transport(e.to_string())
            }
            other => CliError::User(other.to_string()),
        }
    }
}

/// Provenance sidecar written next to every run-record file. The corpus
/// digest is recorded before the first request goes out; `completed_at`
/// is filled in once and the file is never touched again.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub corpus_path: String,
    pub corpus_digest: String,
    pub prompt_version: String,
    pub model: ModelConfig,
    pub cache_path: Option<String>,
    pub seed: Option<u64>,
    pub started_at_unix: u64,
    pub completed_at_unix: Option<u64>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn manifest_path(run_path: &Path) -> PathBuf {
    let mut name = run_path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    run_path.with_file_name(name)
}

/// SHA-256 of a file's exact bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Reads a ModelConfig from a TOML file and validates it.
pub fn load_model_config(path: &Path) -> Result<ModelConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let config: ModelConfig =
        toml::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Resolves `--prompt`: a path to a spec file when one exists there,
/// otherwise a bundled version id such as "P19".
pub fn resolve_prompt(arg: &str, taxonomy: &Taxonomy) -> Result<PromptSpec, CliError> {
    let as_path = Path::new(arg);
    if as_path.is_file() {
        load_prompt_spec(as_path, taxonomy).map_err(user)
    } else {
        modgate_core::promptkit::bundled_spec(arg, taxonomy).map_err(user)
    }
}

pub fn write_run_records(records: &[CommentRecord], path: &Path) -> Result<(), CliError> {
    let mut file = fs::File::create(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    for record in records {
        let line = serde_json::to_string(record).map_err(user)?;
        file.write_all(line.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|e| user(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn read_run_records(path: &Path) -> Result<Vec<CommentRecord>, CliError> {
    let file = fs::File::open(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| user(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CommentRecord = serde_json::from_str(&line)
            .map_err(|e| user(format!("{} line {}: {e}", path.display(), i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub struct PrepareArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub per_category: usize,
    pub neutral: usize,
    pub seed: u64,
}

/// Balances a raw corpus and writes the sample. Returns per-category
/// counts of the output for the status line.
pub fn run_prepare(args: &PrepareArgs) -> Result<BTreeMap<Category, usize>, CliError> {
    let taxonomy = Taxonomy::bundled();
    let corpus = load_corpus(&args.corpus, &taxonomy).map_err(user)?;
    let balanced =
        balance_sample(&corpus, args.per_category, args.neutral, args.seed).map_err(user)?;
    save_corpus(&balanced, &args.out).map_err(user)?;
    Ok(corpus_stats(&balanced))
}

pub struct ClassifyArgs {
    pub corpus: PathBuf,
    pub prompt: String,
    pub model_config: PathBuf,
    pub cache: Option<PathBuf>,
    pub out: PathBuf,
    pub concurrency: Option<usize>,
}

pub struct ClassifySummary {
    pub run_id: String,
    pub records: usize,
    pub from_cache: usize,
    pub parse_failures: usize,
}

/// Runs the full classify step: render, dispatch (cache first), parse,
/// score, and write the run-record file plus its manifest.
pub fn run_classify(args: &ClassifyArgs) -> Result<ClassifySummary, CliError> {
    let taxonomy = Taxonomy::bundled();
    let corpus = load_corpus(&args.corpus, &taxonomy).map_err(user)?;
    if corpus.is_empty() {
        return Err(user("corpus is empty"));
    }
    let spec = resolve_prompt(&args.prompt, &taxonomy)?;
    let mut config = load_model_config(&args.model_config)?;
    if let Some(n) = args.concurrency {
        if n == 0 {
            return Err(user("concurrency must be >= 1"));
        }
        config.concurrency_limit = n;
    }

    let (gateway, cache) = build_gateway(&config, args.cache.as_deref())?;

    let run_id = format!(
        "{}-{}-{}",
        spec.version_id,
        config.model_id.replace(['/', ' '], "_"),
        &file_digest(&args.corpus)?[..8]
    );
    let manifest = RunManifest {
        run_id: run_id.clone(),
        corpus_path: args.corpus.display().to_string(),
        corpus_digest: file_digest(&args.corpus)?,
        prompt_version: spec.version_id.clone(),
        model: config.clone(),
        cache_path: args.cache.as_ref().map(|p| p.display().to_string()),
        seed: corpus.seed,
        started_at_unix: now_unix(),
        completed_at_unix: None,
    };
    let manifest_file = manifest_path(&args.out);
    write_manifest(&manifest, &manifest_file)?;

    let outcomes = gateway.classify_batch(&spec, &corpus, &cache);

    let mut records = Vec::with_capacity(corpus.len());
    let mut from_cache = 0;
    let mut parse_failures = 0;
    let mut first_error: Option<CliError> = None;
    for (comment, outcome) in corpus.comments.iter().zip(outcomes) {
        match outcome {
            Ok(raw) => {
                if raw.from_cache {
                    from_cache += 1;
                }
                let record = score_response(comment.id.clone(), comment.gold, &spec, &raw.content, &raw.model_id, raw.from_cache, &taxonomy);
                if record.flags.contains(&Flag::ParseFailed) {
                    parse_failures += 1;
                }
                records.push(record);
            }
            Err(e) => {
                eprintln!("comment {}: {e}", comment.id);
                if first_error.is_none() {
                    first_error = Some(e.into());
                }
            }
        }
    }
    if let Some(e) = first_error {
        // Completed responses are already in the cache; re-invoking the
        // command dispatches only what is still missing.
        return Err(e);
    }

    write_run_records(&records, &args.out)?;
    let manifest = RunManifest {
        completed_at_unix: Some(now_unix()),
        ..manifest
    };
    write_manifest(&manifest, &manifest_file)?;

    Ok(ClassifySummary {
        run_id,
        records: records.len(),
        from_cache,
        parse_failures,
    })
}

fn build_gateway<'a>(
    config: &ModelConfig,
    cache_path: Option<&Path>,
) -> Result<(Gateway<'a>, ResponseCache), CliError> {
    match config.provider {
        ProviderKind::LiveHttp => {
            let cache = match cache_path {
                Some(p) => ResponseCache::open(p)?,
                None => ResponseCache::in_memory(),
            };
            Ok((Gateway::live(config.clone())?, cache))
        }
        ProviderKind::Replay => {
            let path = cache_path
                .ok_or_else(|| user("replay provider requires --cache <recorded session>"))?;
            let store = ResponseCache::load_replay(path)?;
            // Replay never writes anything back; lookups hit the replay
            // store through the provider itself.
            Ok((Gateway::replay(config.clone(), store)?, ResponseCache::in_memory()))
        }
        ProviderKind::Scripted => Err(user(
            "scripted provider is for in-process tests; use replay or live-http",
        )),
    }
}

/// Turns one raw response into a scored record. Responses that never
/// parse are scored as a Neutral prediction and flagged, so downstream
/// metrics count them as misses on harmful gold labels.
pub fn score_response(
    id: String,
    gold: Category,
    spec: &PromptSpec,
    content: &str,
    model_id: &str,
    from_cache: bool,
    taxonomy: &Taxonomy,
) -> CommentRecord {
    match parse_response(content, taxonomy) {
        Ok(classification) => CommentRecord {
            id,
            gold,
            primary: primary_label(&classification),
            labels: classification.labels,
            reasoning: classification.reasoning,
            flags: classification.flags,
            prompt_version: spec.version_id.clone(),
            model_id: model_id.to_string(),
            from_cache,
            raw: content.to_string(),
        },
        Err(_) => CommentRecord {
            id,
            gold,
            primary: Category::Neutral,
            labels: vec![ScoredLabel {
                category: Category::Neutral,
                confidence: 0.0,
            }],
            reasoning: String::new(),
            flags: [Flag::ParseFailed].into_iter().collect(),
            prompt_version: spec.version_id.clone(),
            model_id: model_id.to_string(),
            from_cache,
            raw: content.to_string(),
        },
    }
}

fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).map_err(user)?;
    fs::write(path, text + "\n").map_err(|e| user(format!("{}: {e}", path.display())))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))
}

/// Loads a run-record file back into a RunRecord, taking identity from
/// the manifest sidecar when present and from the records otherwise.
pub fn load_run(path: &Path) -> Result<RunRecord, CliError> {
    let records = read_run_records(path)?;
    let (run_id, prompt_version, model_id) = match read_manifest(&manifest_path(path)) {
        Ok(m) => (m.run_id, m.prompt_version, m.model),
        Err(_) => {
            let first = records
                .first()
                .ok_or_else(|| user(format!("{}: empty run file", path.display())))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            return RunRecord::from_records(
                stem,
                first.prompt_version.clone(),
                first.model_id.clone(),
                records,
            )
            .map_err(user);
        }
    };
    RunRecord::from_records(run_id, prompt_version, model_id.model_id, records).map_err(user)
}

pub struct EvaluateArgs {
    pub run: PathBuf,
    pub out: PathBuf,
}

/// Renders the full report for one run: markdown document at `out`, JSON
/// twin at `out` + ".json". Both come from the same RunRecord.
pub fn run_evaluate(args: &EvaluateArgs) -> Result<RunRecord, CliError> {
    let run = load_run(&args.run)?;
    let markdown = render_report(&run);
    fs::write(&args.out, markdown).map_err(|e| user(format!("{}: {e}", args.out.display())))?;

    let mut json_path = args.out.clone().into_os_string();
    json_path.push(".json");
    let json = serde_json::to_string_pretty(&run.metrics).map_err(user)?;
    fs::write(&json_path, json + "\n")
        .map_err(|e| user(format!("{}: {e}", PathBuf::from(&json_path).display())))?;
    Ok(run)
}

fn render_report(run: &RunRecord) -> String {
    let m = &run.metrics;
    let confusion = run.confusion();
    let parse_failures = run
        .records
        .iter()
        .filter(|r| r.flags.contains(&Flag::ParseFailed))
        .count();

    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation report: {}\n", run.run_id);
    let _ = writeln!(
        s,
        "Prompt {} on model {}, {} comments.\n",
        run.prompt_version, run.model_id, m.total
    );
    let _ = writeln!(s, "## Summary\n");
    let _ = writeln!(s, "- Accuracy: {:.2}%", percent(m.accuracy));
    let _ = writeln!(s, "- Multiclass MCC: {:.3}", m.mcc);
    let _ = writeln!(s, "- Macro F1: {:.2}%", percent(m.macro_f1));
    let _ = writeln!(
        s,
        "- Binary collapse (harmful vs neutral): TP {} / FP {} / FN {} / TN {}",
        m.binary.tp, m.binary.fp, m.binary.fn_, m.binary.tn
    );
    let _ = writeln!(
        s,
        "- Binary precision {:.2}%, recall {:.2}%, F1 {:.2}%, MCC {:.3}",
        percent(m.binary.precision),
        percent(m.binary.recall),
        percent(m.binary.f1),
        m.binary.mcc
    );
    let _ = writeln!(
        s,
        "- Parse failures scored as Neutral: {parse_failures}\n"
    );

    let _ = writeln!(s, "## Per-class metrics\n");
    let _ = writeln!(s, "```\n{}```\n", m.to_table());

    let _ = writeln!(s, "## Top confusion pairs\n");
    let _ = writeln!(s, "| Gold | Predicted | Count |");
    let _ = writeln!(s, "|---|---|---:|");
    for (gold, predicted, count) in top_confusions(&confusion, 10) {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            gold.canonical_name(),
            predicted.canonical_name(),
            count
        );
    }
    s.push('\n');
    s.push_str(&misclassification_report(run).to_markdown());
    s
}

pub struct CompareArgs {
    pub runs: Vec<PathBuf>,
    pub out: PathBuf,
}

/// Builds the cross-run MCC table. Text table at `out`, CSV twin at
/// `out` + ".csv". Returns the text table for printing.
pub fn run_compare(args: &CompareArgs) -> Result<String, CliError> {
    let loaded: Vec<RunRecord> = args
        .runs
        .iter()
        .map(|p| load_run(p))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&RunRecord> = loaded.iter().collect();
    let table = compare_runs(&refs).map_err(user)?;

    let text = table.to_text();
    fs::write(&args.out, &text).map_err(|e| user(format!("{}: {e}", args.out.display())))?;
    let mut csv_path = args.out.clone().into_os_string();
    csv_path.push(".csv");
    fs::write(&csv_path, table.to_csv())
        .map_err(|e| user(format!("{}: {e}", PathBuf::from(&csv_path).display())))?;
    Ok(text)
}

/// Deterministic fixture-corpus text for one synthetic comment. Shared
/// with the fixture generator so tests can rebuild the corpus in memory.
pub fn fixture_text(category: Category, i: usize) -> String {
    format!(
        "synthetic {} sample {:04} covering routine review chatter for pipeline tests",
        category.canonical_name().to_lowercase(),
        i
    )
}
