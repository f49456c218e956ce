//! Subcommand implementations. Each returns the process exit code on completion; usage
//! problems surface as [`UsageError`] and everything else as a runtime error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use spectod_core::backend::{Backend, MockBackend};
use spectod_core::corpus::{Converter, SixRoleDialogue, SplitName};
use spectod_core::delex::lexicalize_with_entity;
use spectod_core::dialogue::{DiagnosticKind, DialogueSession, Entity, Observation, Stage};
use spectod_core::eval::{
    default_criteria, evaluate, judge_sessions, EvalReport, Grounding, JudgeReport,
};
use spectod_core::export::{
    export_corpus, ContextPolicy, FewShotRecord, Overflow, TrainingManifest,
};
use spectod_core::fewshot::{sample_fewshot, sample_size};
use spectod_core::orchestrator::{Mode, Pipeline};
use spectod_core::prompt::CharHeuristic;

use crate::cli::{
    BackendArgs, ChatArgs, Cli, Command, EvalArgs, ExportArgs, IngestArgs, ResourceArgs, RunArgs,
};
use crate::config::{RunHeader, Settings, Source};
use crate::http::{completions_url, HttpBackend, HttpConfig};
use crate::ingest::{ingest, Version};
use crate::resources::{ResourcePaths, Resources};
use crate::trace::TracingBackend;
use crate::transcript::{
    read_dialogues, read_sessions, session_lines, write_dialogues, write_json, write_lines,
    SessionWriter,
};

/// Bad arguments or settings; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.to_string()))
}

pub fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    let mut settings = Settings::load(cli.config.as_deref()).map_err(usage)?;
    match cli.command {
        Command::Ingest(a) => run_ingest(&mut settings, a),
        Command::Export(a) => run_export(&mut settings, a),
        Command::Run(a) => run_pipeline(&mut settings, a),
        Command::Eval(a) => run_eval(&mut settings, a),
        Command::Chat(a) => run_chat(&mut settings, a),
    }
}

fn parsed<T: std::str::FromStr>(
    s: &mut Settings,
    key: &str,
    flag: Option<String>,
    default: &str,
) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    Ok(s.parse(key, flag, Some(default))
        .map_err(usage)?
        .expect("default given"))
}

fn default_workers() -> String {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .to_string()
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(usage("workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")
}

fn resource_paths(
    s: &mut Settings,
    r: &ResourceArgs,
    db_default: Option<&Path>,
) -> anyhow::Result<ResourcePaths> {
    let schema = s.path("schema", r.schema.clone());
    let normalization = s.path("normalization", r.normalization.clone());
    let templates = s.path("templates", r.templates.clone());
    let db = match s.path("db", r.db.clone()) {
        Some(db) => db,
        None => {
            let d = db_default
                .ok_or_else(|| usage("no database directory: pass --db or set SPECTOD_DB"))?;
            s.record("db", d.display(), Source::Default);
            d.to_path_buf()
        }
    };
    Ok(ResourcePaths {
        schema,
        normalization,
        templates,
        db,
    })
}

fn write_header(dir: &Path, header: &RunHeader) -> anyhow::Result<()> {
    write_json(&dir.join("run_header.json"), header)?;
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct SplitReport {
    dialogues: usize,
    turns: usize,
    multi_domain_turns: usize,
    dropped_values: usize,
    skipped: Vec<String>,
}

fn run_ingest(s: &mut Settings, a: IngestArgs) -> anyhow::Result<u8> {
    let version: Version = parsed(s, "corpus-version", a.corpus_version, "2.1")?;
    let workers: usize = parsed(s, "workers", a.workers, &default_workers())?;
    let paths = resource_paths(s, &a.resources, Some(&a.raw))?;
    let res = Resources::load(&paths)?;
    let raw = ingest(&a.raw, version)?;
    let converter = Converter {
        registry: &res.registry,
        db: &res.db,
        normalizer: &res.normalizer,
        placeholders: &res.placeholders,
        acts: &res.acts,
        samples: spectod_core::db::DEFAULT_SAMPLES,
    };
    let pool = pool(workers)?;
    let mut report = BTreeMap::new();
    for split in SplitName::ALL {
        let results: Vec<_> = pool.install(|| {
            raw.get(split)
                .par_iter()
                .map(|d| converter.convert(d))
                .collect()
        });
        let mut rep = SplitReport::default();
        let mut dialogues = Vec::new();
        for r in results {
            match r {
                Ok(d) => dialogues.push(d),
                Err(e) => rep.skipped.push(e.to_string()),
            }
        }
        rep.dialogues = dialogues.len();
        rep.turns = dialogues.iter().map(|d| d.turns.len()).sum();
        rep.multi_domain_turns = dialogues
            .iter()
            .map(|d| d.notes.multi_domain_turns.len())
            .sum();
        rep.dropped_values = dialogues.iter().map(|d| d.notes.dropped.len()).sum();
        write_dialogues(&a.out.join(format!("{split}.jsonl")), &dialogues)?;
        println!(
            "{split}: {} dialogues, {} turns, {} skipped",
            rep.dialogues,
            rep.turns,
            rep.skipped.len()
        );
        for e in &rep.skipped {
            eprintln!("skipped {e}");
        }
        report.insert(split.as_str(), rep);
    }
    s.record("raw", a.raw.display(), Source::Flag);
    write_json(&a.out.join("ingest_report.json"), &report)?;
    write_header(&a.out, &s.header("ingest"))?;
    Ok(0)
}

fn run_export(s: &mut Settings, a: ExportArgs) -> anyhow::Result<u8> {
    let fraction: f64 = parsed(s, "fraction", a.fraction, "1.0")?;
    let seed: u64 = parsed(s, "seed", a.seed, "42")?;
    let limit: usize = parsed(s, "context-limit", a.context_limit.clone(), "4096")?;
    let overflow = match s.get("overflow", a.overflow, Some("split")).as_deref() {
        Some("split") => Overflow::Split,
        Some("skip") => Overflow::Skip,
        Some(other) => {
            return Err(usage(format!(
                "unknown overflow `{other}` (expected split or skip)"
            )))
        }
        None => unreachable!("default given"),
    };
    let stratified =
        a.stratified || s.get("stratified", None, Some("false")).as_deref() == Some("true");
    let registry = crate::resources::load_registry(s.path("schema", a.schema).as_deref())?;

    let mut dialogues = read_dialogues(&a.corpus)?;
    dialogues.sort_by(|x, y| x.id.cmp(&y.id));
    sample_size(fraction, dialogues.len()).map_err(usage)?;
    let picked = sample_fewshot(&dialogues, fraction, seed, stratified).map_err(usage)?;

    let mut manifest = TrainingManifest::default();
    let limit_source = s.header("export").settings["context-limit"].source;
    if limit_source != Source::Default {
        manifest
            .apply_override(
                "context_length",
                &limit.to_string(),
                &format!("{limit_source:?}").to_lowercase(),
            )
            .map_err(usage)?;
    }
    for (field, value) in s.file_table("manifest") {
        manifest
            .apply_override(&field, &value, "file")
            .map_err(usage)?;
    }
    for o in &a.overrides {
        let (field, value) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects FIELD=VALUE, got `{o}`")))?;
        manifest
            .apply_override(field.trim(), value, "flag")
            .map_err(usage)?;
    }

    let (samples, report) = export_corpus(
        &registry,
        &picked,
        ContextPolicy { limit, overflow },
        &CharHeuristic,
    );
    manifest.samples = samples.len();
    if fraction < 1.0 {
        manifest.fewshot = Some(FewShotRecord {
            fraction,
            seed,
            stratified,
        });
    }
    write_lines(
        &a.out.join(&manifest.train_file),
        samples.iter().map(|x| x.to_json()),
    )?;
    write_lines(&a.out.join("manifest.json"), [manifest.to_json()])?;
    write_json(&a.out.join("export_report.json"), &report)?;
    s.record("corpus", a.corpus.display(), Source::Flag);
    write_header(&a.out, &s.header("export"))?;
    println!(
        "exported {} samples from {} of {} dialogues ({} split, {} skipped)",
        report.samples,
        picked.len(),
        dialogues.len(),
        report.split_dialogues,
        report.skipped.len()
    );
    Ok(0)
}

type DynBackend = Box<dyn Backend + Sync>;

fn build_backend(
    s: &mut Settings,
    a: &BackendArgs,
    gold: Option<&[SixRoleDialogue]>,
) -> anyhow::Result<DynBackend> {
    let inner: DynBackend = match &a.mock {
        Some(file) if file.is_empty() => {
            let gold = gold.ok_or_else(|| usage("--mock needs a fixture file here"))?;
            s.record("backend", "mock:gold", Source::Flag);
            Box::new(MockBackend::from_gold(gold))
        }
        Some(file) => {
            let text = crate::resources::read(Path::new(file))?;
            let fixtures: BTreeMap<String, String> = serde_json::from_str(&text)
                .with_context(|| format!("{file}: expected an object of tag to text"))?;
            let mut mock = MockBackend::new();
            for (tag, text) in fixtures {
                mock.insert(tag, text);
            }
            s.record("backend", format!("mock:{file}"), Source::Flag);
            Box::new(mock)
        }
        None => {
            let endpoint = s
                .get("endpoint", a.endpoint.clone(), None)
                .ok_or_else(|| usage("no backend: pass --endpoint or --mock"))?;
            let url = completions_url(&endpoint).map_err(usage)?;
            let mut config = HttpConfig::new(url);
            config.model = s
                .get("model", a.model.clone(), Some("default"))
                .expect("default given");
            config.api_key = s.get("api-key", a.api_key.clone(), None);
            if config.api_key.is_some() {
                let source = s.header("").settings["api-key"].source;
                s.record("api-key", "<redacted>", source);
            }
            config.max_attempts = parsed(s, "max-attempts", a.max_attempts.clone(), "4")?;
            config.concurrency = parsed(s, "concurrency", a.concurrency.clone(), "4")?;
            Box::new(HttpBackend::new(config))
        }
    };
    match &a.trace {
        Some(path) => {
            s.record("trace", path.display(), Source::Flag);
            let traced = TracingBackend::open(inner, path)
                .with_context(|| format!("opening {}", path.display()))?;
            Ok(Box::new(traced))
        }
        None => Ok(inner),
    }
}

fn pipeline<'a>(
    s: &mut Settings,
    a: &BackendArgs,
    res: &'a Resources,
    backend: &'a DynBackend,
) -> anyhow::Result<Pipeline<'a>> {
    let mut p = Pipeline::new(
        &res.registry,
        &res.db,
        &res.normalizer,
        &res.templates,
        backend.as_ref(),
    );
    p.config.decoding.max_new_tokens =
        parsed(s, "max-new-tokens", a.max_new_tokens.clone(), "256")?;
    p.config.context_tokens = parsed(s, "context-tokens", a.context_tokens.clone(), "4096")?;
    p.config.timeout =
        Duration::from_secs(parsed(s, "timeout-secs", a.timeout_secs.clone(), "60")?);
    Ok(p)
}

#[derive(Debug, Serialize)]
struct FailedDialogue {
    dialogue_id: String,
    turn: usize,
    stage: Stage,
    error: String,
}

#[derive(Debug, Serialize)]
struct DiagnosticsReport {
    dialogues: usize,
    completed: usize,
    turns: usize,
    counts: BTreeMap<String, usize>,
    failed: Vec<FailedDialogue>,
    entries: Vec<serde_json::Value>,
}

fn run_pipeline(s: &mut Settings, a: RunArgs) -> anyhow::Result<u8> {
    let mode: Mode = parsed(s, "mode", a.mode, "policy")?;
    let workers: usize = parsed(s, "workers", a.workers, &default_workers())?;
    let paths = resource_paths(s, &a.resources, None)?;
    let mut gold = read_dialogues(&a.corpus)?;
    gold.sort_by(|x, y| x.id.cmp(&y.id));
    if let Some(n) = a.limit {
        gold.truncate(n);
        s.record("limit", n, Source::Flag);
    }
    let backend = build_backend(s, &a.backend, Some(&gold))?;
    let res = Resources::load(&paths)?;
    let pipeline = pipeline(s, &a.backend, &res, &backend)?;
    let writer = SessionWriter::new(&a.out.join("sessions"))?;
    s.record("corpus", a.corpus.display(), Source::Flag);
    write_header(&a.out, &s.header("run"))?;

    let pool = pool(workers)?;
    let results: Vec<_> = pool.install(|| {
        gold.par_iter()
            .map(|d| {
                let mut persist = Ok(());
                let r = pipeline.run_dialogue(d, mode, &mut |session| {
                    if persist.is_ok() {
                        persist = writer.append_last(session);
                    }
                });
                (r, persist)
            })
            .collect()
    });

    let mut sessions = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (r, persist) in results {
        persist?;
        match r {
            Ok(session) => sessions.push(session),
            Err((session, e)) => {
                eprintln!("{e}");
                failed.push(FailedDialogue {
                    dialogue_id: e.dialogue_id.clone(),
                    turn: e.turn,
                    stage: e.stage,
                    error: e.failure.to_string(),
                });
                sessions.push(session);
            }
        }
    }
    write_lines(
        &a.out.join("transcripts.jsonl"),
        sessions.iter().flat_map(session_lines),
    )?;

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut entries = Vec::new();
    for session in &sessions {
        for t in &session.turns {
            for d in &t.outcome.diagnostics.entries {
                let kind = serde_json::to_value(d.kind).expect("kind serializes");
                *counts
                    .entry(kind.as_str().unwrap_or_default().to_string())
                    .or_default() += 1;
                entries.push(serde_json::json!({ "dialogue_id": session.dialogue_id, "turn": t.turn, "diagnostic": d }));
            }
        }
    }
    let kind_name = |k: DiagnosticKind| {
        serde_json::to_value(k)
            .expect("kind serializes")
            .as_str()
            .unwrap_or_default()
            .to_string()
    };
    *counts
        .entry(kind_name(DiagnosticKind::BackendError))
        .or_default() += failed.len();
    let report = DiagnosticsReport {
        dialogues: gold.len(),
        completed: gold.len() - failed.len(),
        turns: sessions.iter().map(|x| x.turns.len()).sum(),
        counts,
        failed,
        entries,
    };
    write_json(&a.out.join("diagnostics.json"), &report)?;
    println!(
        "ran {} dialogues ({} turns): {} completed, {} failed",
        report.dialogues,
        report.turns,
        report.completed,
        report.failed.len()
    );
    Ok(if report.failed.is_empty() { 0 } else { 1 })
}

const CORE_METRICS: [&str; 7] = [
    "inform", "success", "bleu", "combined", "jga", "jga_raw", "fn_se",
];

#[derive(Debug, Serialize)]
struct EvalOutput {
    header: RunHeader,
    metrics: Vec<String>,
    report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    judge: Option<JudgeReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    judge_errors: Vec<String>,
}

fn metric_value(r: &EvalReport, name: &str) -> f64 {
    match name {
        "inform" => r.inform,
        "success" => r.success,
        "bleu" => r.bleu,
        "combined" => r.combined,
        "jga" => r.jga,
        "jga_raw" => r.jga_raw,
        "fn_se" => r.fn_se,
        _ => unreachable!("metric names are validated"),
    }
}

fn run_eval(s: &mut Settings, a: EvalArgs) -> anyhow::Result<u8> {
    let metrics_text = s
        .get("metrics", a.metrics, Some(&CORE_METRICS.join(",")))
        .expect("default given");
    let metrics: Vec<String> = metrics_text
        .split(',')
        .map(|m| m.trim().to_lowercase())
        .filter(|m| !m.is_empty())
        .collect();
    if let Some(bad) = metrics
        .iter()
        .find(|m| !CORE_METRICS.contains(&m.as_str()) && *m != "gpt")
    {
        return Err(usage(format!("unknown metric `{bad}`")));
    }
    let paths = resource_paths(s, &a.resources, None)?;
    let res = Resources::load(&paths)?;
    let sessions = read_sessions(&a.transcripts)?;
    let mut gold = read_dialogues(&a.gold)?;
    if a.subset {
        let ids: BTreeSet<&str> = sessions.iter().map(|x| x.dialogue_id.as_str()).collect();
        gold.retain(|d| ids.contains(d.id.as_str()));
    }
    let grounding = Grounding {
        registry: &res.registry,
        db: &res.db,
        normalizer: &res.normalizer,
        placeholders: &res.placeholders,
    };
    let report = evaluate(&sessions, &gold, &grounding)?;

    let mut judge = None;
    let mut judge_errors = Vec::new();
    let mut code = 0;
    if metrics.iter().any(|m| m == "gpt") {
        let rate: f64 = parsed(s, "judge-max-failure-rate", a.judge_max_failure_rate, "0.1")?;
        let backend: DynBackend = if let Some(score) = a.judge_mock {
            s.record("judge", format!("mock:{score}"), Source::Flag);
            Box::new(MockBackend::new().with_judge_score(score))
        } else {
            let endpoint = s
                .get("judge-endpoint", a.judge_endpoint, None)
                .ok_or_else(|| usage("the gpt metric needs --judge-endpoint or --judge-mock"))?;
            let mut config = HttpConfig::new(completions_url(&endpoint).map_err(usage)?);
            config.model = s
                .get("judge-model", a.judge_model, Some("default"))
                .expect("default given");
            config.api_key = s.get("api-key", None, None);
            if config.api_key.is_some() {
                let source = s.header("").settings["api-key"].source;
                s.record("api-key", "<redacted>", source);
            }
            Box::new(HttpBackend::new(config))
        };
        match judge_sessions(&sessions, backend.as_ref(), &default_criteria(), rate) {
            Ok(r) => judge = Some(r),
            Err(abort) => {
                eprintln!("{abort}");
                judge_errors = abort.errors;
                judge = Some(abort.partial);
                code = 1;
            }
        }
    }

    println!("{:<10} {:>8}", "metric", "value");
    for m in metrics.iter().filter(|m| *m != "gpt") {
        println!("{:<10} {:>8.2}", m, metric_value(&report, m));
    }
    if let Some(j) = &judge {
        println!("{:<10} {:>8.2}", "gpt", j.overall);
        for (name, v) in &j.criteria {
            println!("  {:<12} {:>6.2}", name, v);
        }
    }
    println!("{} dialogues, {} turns", report.dialogues, report.turns);

    if let Some(out) = s.path("out", a.out) {
        let output = EvalOutput {
            header: s.header("eval"),
            metrics,
            report,
            judge,
            judge_errors,
        };
        write_json(&out, &output)?;
    }
    Ok(code)
}

fn run_chat(s: &mut Settings, a: ChatArgs) -> anyhow::Result<u8> {
    let paths = resource_paths(s, &a.resources, None)?;
    let backend = build_backend(s, &a.backend, None)?;
    let res = Resources::load(&paths)?;
    let pipeline = pipeline(s, &a.backend, &res, &backend)?;
    let mut session = DialogueSession::new("chat");
    let mut entity: Entity = Entity::new();
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    for line in stdin.lock().lines() {
        let line = line.context("reading stdin")?;
        let text = line.trim();
        if text.eq_ignore_ascii_case("quit") || text.eq_ignore_ascii_case("exit") {
            break;
        }
        if text.is_empty() {
            continue;
        }
        match pipeline.run_turn(&mut session, text, Mode::Policy, None) {
            Ok(t) => {
                if let Observation::EntityCount { samples, .. } = &t.outcome.observation {
                    if let Some(first) = samples.first() {
                        entity = first.clone();
                    }
                }
                let reply =
                    lexicalize_with_entity(&t.outcome.frame.response, &entity, &res.placeholders);
                writeln!(stdout, "{reply}")?;
            }
            Err(e) => eprintln!("{e}"),
        }
        stdout.flush()?;
    }
    write_lines(&a.transcript, session_lines(&session).collect::<Vec<_>>())?;
    eprintln!(
        "saved {} turns to {}",
        session.turns.len(),
        a.transcript.display()
    );
    Ok(0)
}

/// Maps an error from [`dispatch`] to an exit code.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}
