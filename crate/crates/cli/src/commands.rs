use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use refdial_core::chessboard::{self, ChessboardItem};
use refdial_core::coord::{BBox, Precision};
use refdial_core::dataset::{
    build_records, filter_leakage, import_source, write_records, AnnotationKind, ImageKey, InstructionRecord, Origin,
    Stage, StageSampler, StageTag,
};
use refdial_core::endpoint::HttpEndpoint;
use refdial_core::eval::{self, EvalReport, PredictionRecord, WhichBoxItem};
use refdial_core::fuzz::{self, FuzzConfig};
use refdial_core::templates::{expand_via_endpoint, write_sets, TemplateError, DEFAULT_EXPANSION_PROMPT};
use refdial_core::{jsonl, seed, TemplateRegistry, VERSION};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::fetch::{fetch_predictions, FetchError, FetchOptions, PromptItem};
use crate::{
    BuildDatasetArgs, Cli, CliError, CliResult, Command, EndpointArgs, EvalArgs, EvalChessboardArgs, ExpandArgs,
    FetchArgs, FuzzArgs, GenChessboardArgs, Metric,
};

pub fn run(cli: Cli) -> CliResult<()> {
    let mut config = RunConfig::load(cli.config.as_deref()).map_err(CliError::usage)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(p) = cli.precision {
        config.precision = p;
    }
    let name = cli.command.name();
    match cli.command {
        Command::BuildDataset(a) => build_dataset(a, config, name),
        Command::GenChessboard(a) => gen_chessboard(a, config, name),
        Command::EvalChessboard(a) => eval_chessboard(a, config),
        Command::Eval(a) => eval_metric(a, config),
        Command::FetchPredictions(a) => fetch(a, config, name),
        Command::ExpandTemplates(a) => expand(a, config, name),
        Command::FuzzRoundtrip(a) => fuzz_roundtrip(a, config),
    }
}

fn precision(config: &RunConfig) -> CliResult<Precision> {
    Precision::new(config.precision).map_err(CliError::usage)
}

/// `<path>.<suffix>`, keeping the original extension.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn manifest(command: &str, config: &RunConfig, body: Value) -> Value {
    let mut m = json!({
        "command": command,
        "toolkit_version": VERSION,
        "seed": config.seed,
        "config": config,
    });
    if let (Value::Object(m), Value::Object(b)) = (&mut m, body) {
        m.extend(b);
    }
    m
}

fn emit_report(report: &EvalReport, path: Option<&Path>, config: &RunConfig) -> CliResult<()> {
    for w in &report.warnings {
        log::warn!("{w}");
    }
    print!("{}", report.table());
    if let Some(p) = path {
        let mut v = serde_json::to_value(report)?;
        if let Value::Object(m) = &mut v {
            m.insert("toolkit_version".into(), json!(VERSION));
            m.insert("config".into(), serde_json::to_value(config)?);
        }
        write_json(p, &v)?;
    }
    Ok(())
}

// ---- build-dataset ----

#[derive(Deserialize)]
#[serde(untagged)]
enum HoldoutRow {
    Key(ImageKey),
    Wrapped { image: ImageKey },
}

fn read_holdout(path: &Path) -> CliResult<Vec<ImageKey>> {
    let rows: Vec<HoldoutRow> = jsonl::read(path)?;
    Ok(rows
        .into_iter()
        .map(|r| match r {
            HoldoutRow::Key(k) | HoldoutRow::Wrapped { image: k } => k,
        })
        .collect())
}

fn parse_source(s: &str) -> CliResult<(AnnotationKind, PathBuf)> {
    let (kind, path) = s
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--source expects KIND=PATH, got '{s}'")))?;
    let kind: AnnotationKind = kind.parse().map_err(CliError::usage)?;
    Ok((kind, PathBuf::from(path)))
}

fn build_dataset(a: BuildDatasetArgs, mut config: RunConfig, command: &str) -> CliResult<()> {
    if let Some(s) = a.stage {
        config.stage.stage = s;
    }
    if let Some(r) = a.ratio {
        config.stage.ratio = r;
    }
    if let Some(d) = a.draws {
        config.stage.draws = d;
    }
    let stage = match config.stage.stage {
        1 => Stage::One,
        2 => Stage::Two,
        s => return Err(CliError::usage(format!("stage must be 1 or 2, got {s}"))),
    };
    let prec = precision(&config)?;
    let sources = a.sources.iter().map(|s| parse_source(s)).collect::<CliResult<Vec<_>>>()?;
    for t in &a.tasks {
        if !sources.iter().any(|(k, _)| k.tasks().contains(t)) {
            return Err(CliError::usage(format!("no source can feed task {t}")));
        }
    }

    let registry = if a.no_starter_templates {
        TemplateRegistry::new()
    } else {
        TemplateRegistry::with_starter_sets()
    };
    if let Some(p) = &a.templates {
        registry.load_file(p)?;
    }
    let holdout = match &a.holdout {
        Some(p) => read_holdout(p)?,
        None => Vec::new(),
    };

    let mut records: Vec<InstructionRecord> = Vec::new();
    // record ranges per source, for the stage-2 sub-streams
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut rejected = BTreeMap::new();
    for (si, (kind, path)) in sources.iter().enumerate() {
        let outcome = import_source(path, *kind).with_context(|| format!("importing {}", path.display()))?;
        for d in &outcome.rejected {
            log::warn!("{}:{}: {}", path.display(), d.line, d.message);
        }
        for w in &outcome.warnings {
            log::warn!("{}: {w}", path.display());
        }
        rejected.insert(path.display().to_string(), outcome.rejected.len());
        let start = records.len();
        for (ti, task) in kind.tasks().iter().enumerate() {
            if !a.tasks.is_empty() && !a.tasks.contains(task) {
                continue;
            }
            let s = seed::derive(config.seed, (si * 64 + ti) as u64);
            let built = build_records(&outcome.annotations, *task, &registry, prec, s)
                .with_context(|| format!("building {task} records from {}", path.display()))?;
            records.extend(built);
        }
        spans.push((start, records.len()));
    }

    // filter per source so the spans stay meaningful
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = 0;
    let mut kept_spans = Vec::new();
    for (s, e) in spans {
        let (k, d) = filter_leakage(records[s..e].to_vec(), &holdout);
        dropped += d;
        let start = kept.len();
        kept.extend(k);
        kept_spans.push((start, kept.len()));
    }
    write_records(&a.output, &kept)?;

    let mut per_task: BTreeMap<String, usize> = BTreeMap::new();
    for r in &kept {
        *per_task.entry(r.task.to_string()).or_default() += 1;
    }
    let mut body = json!({
        "output": a.output,
        "records": kept.len(),
        "per_task": per_task,
        "dropped_for_leakage": dropped,
        "rejected_rows": rejected,
        "sources": a.sources,
    });

    if config.stage.draws > 0 {
        let mix_path = a.mix_output.clone().unwrap_or_else(|| sibling(&a.output, "mix.jsonl"));
        let primary: Vec<InstructionRecord> = kept.iter().filter(|r| r.stage_tag == StageTag::Stage1).cloned().collect();
        let boosted: Vec<Vec<InstructionRecord>> = kept_spans
            .iter()
            .map(|&(s, e)| kept[s..e].iter().filter(|r| r.stage_tag == StageTag::Stage2).cloned().collect::<Vec<_>>())
            .filter(|v| !v.is_empty())
            .collect();
        let weights = if config.stage.weights.is_empty() {
            vec![1.0; boosted.len()]
        } else {
            config.stage.weights.clone()
        };
        let sampler = StageSampler::with_weights(
            &primary,
            boosted.iter().map(|v| v.as_slice()).collect(),
            weights,
            stage,
            config.stage.ratio,
            seed::derive(config.seed, u64::MAX),
        )?;
        let mut from_boosted = 0;
        let drawn: Vec<InstructionRecord> = sampler
            .take(config.stage.draws)
            .map(|d| {
                if matches!(d.origin, Origin::Boosted(_)) {
                    from_boosted += 1;
                }
                d.record.clone()
            })
            .collect();
        write_records(&mix_path, &drawn)?;
        body["mix"] = json!({
            "output": mix_path,
            "stage": config.stage.stage,
            "draws": drawn.len(),
            "boosted_draws": from_boosted,
        });
    }

    write_json(&sibling(&a.output, "manifest.json"), &manifest(command, &config, body))?;
    println!("{} records written to {} ({dropped} dropped for leakage)", kept.len(), a.output.display());
    Ok(())
}

// ---- chessboard ----

fn gen_chessboard(a: GenChessboardArgs, mut config: RunConfig, command: &str) -> CliResult<()> {
    if let Some(q) = a.quota {
        config.quota = q;
    }
    if let Some(e) = a.epsilon {
        config.epsilon = e;
    }
    let outcome = import_source(&a.input, AnnotationKind::Detection)?;
    for d in &outcome.rejected {
        log::warn!("{}:{}: {}", a.input.display(), d.line, d.message);
    }
    let candidates = chessboard::candidates_from_annotations(&outcome.annotations)?;
    let items = chessboard::build_set(&candidates, config.quota, config.seed, config.epsilon)?;
    jsonl::write(&a.output, &items)?;
    let mut per: BTreeMap<String, usize> = BTreeMap::new();
    for it in &items {
        *per.entry(format!("{:?}", it.answer)).or_default() += 1;
    }
    let body = json!({
        "output": a.output,
        "items": items.len(),
        "per_quadrant": per,
        "candidates": candidates.len(),
    });
    write_json(&sibling(&a.output, "manifest.json"), &manifest(command, &config, body))?;
    println!("{} chessboard items written to {}", items.len(), a.output.display());
    Ok(())
}

fn eval_chessboard(a: EvalChessboardArgs, config: RunConfig) -> CliResult<()> {
    let items: Vec<ChessboardItem> = jsonl::read(&a.items)?;
    let preds: Vec<PredictionRecord> = jsonl::read(&a.predictions)?;
    let report = chessboard::grade(&preds, &items);
    let unparseable = if report.n_items == 0 {
        0.0
    } else {
        100.0 * report.parse_failures.count as f64 / report.n_items as f64
    };
    let report = report.with_aggregate("unparseable_rate", unparseable);
    for id in &report.missing {
        log::warn!("no prediction for item {id}");
    }
    emit_report(&report, a.report.as_deref(), &config)
}

// ---- eval ----

#[derive(Deserialize)]
struct RecGt {
    item_id: String,
    #[serde(rename = "box")]
    bbox: BBox,
}

#[derive(Deserialize)]
struct AnswerGt {
    item_id: String,
    answer: String,
}

#[derive(Deserialize)]
struct VqaGt {
    item_id: String,
    answers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum YesNo {
    Bool(bool),
    Text(String),
}

#[derive(Deserialize)]
struct PopeGt {
    item_id: String,
    #[serde(alias = "label")]
    answer: YesNo,
}

#[derive(Deserialize)]
struct CaptionGt {
    item_id: String,
    references: Vec<String>,
}

fn eval_metric(a: EvalArgs, mut config: RunConfig) -> CliResult<()> {
    if let Some(t) = a.threshold {
        config.threshold = t;
    }
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(CliError::usage(format!("threshold must be in [0, 1], got {}", config.threshold)));
    }
    let preds: Vec<PredictionRecord> = jsonl::read(&a.predictions)?;
    let gt = a.ground_truth.as_path();
    let report = match a.metric {
        Metric::Rec => {
            let rows: Vec<RecGt> = jsonl::read(gt)?;
            let gts: Vec<(String, BBox)> = rows.into_iter().map(|r| (r.item_id, r.bbox)).collect();
            eval::eval_rec(&preds, &gts, config.threshold)
        }
        Metric::WhichBox => {
            let items: Vec<WhichBoxItem> = jsonl::read(gt)?;
            if let Some(bad) = items.iter().find(|it| it.correct > 3) {
                return Err(anyhow::anyhow!("item {}: correct index {} is not 0-3", bad.item_id, bad.correct).into());
            }
            eval::eval_which_box(&preds, &items)
        }
        Metric::Pointqa => {
            let rows: Vec<AnswerGt> = jsonl::read(gt)?;
            let gts: Vec<(String, String)> = rows.into_iter().map(|r| (r.item_id, r.answer)).collect();
            eval::eval_short_answer(&preds, &gts)
        }
        Metric::Vqa => {
            let rows: Vec<VqaGt> = jsonl::read(gt)?;
            let gts: Vec<(String, Vec<String>)> = rows.into_iter().map(|r| (r.item_id, r.answers)).collect();
            eval::eval_vqa(&preds, &gts)?
        }
        Metric::Pope => {
            let rows: Vec<PopeGt> = jsonl::read(gt)?;
            let gts = rows
                .into_iter()
                .map(|r| {
                    let truth = match &r.answer {
                        YesNo::Bool(b) => *b,
                        YesNo::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                            "yes" => true,
                            "no" => false,
                            other => anyhow::bail!("item {}: ground truth '{other}' is not yes/no", r.item_id),
                        },
                    };
                    Ok((r.item_id, truth))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            eval::eval_pope(&preds, &gts)
        }
        Metric::Caption => {
            let rows: Vec<CaptionGt> = jsonl::read(gt)?;
            let gts: Vec<(String, Vec<String>)> = rows.into_iter().map(|r| (r.item_id, r.references)).collect();
            eval::cider::eval_caption(&preds, &gts)?
        }
    };
    emit_report(&report, a.report.as_deref(), &config)
}

// ---- endpoints ----

fn apply_endpoint(config: &mut RunConfig, e: &EndpointArgs) {
    if let Some(x) = &e.address {
        config.endpoint.address = Some(x.clone());
    }
    if let Some(x) = &e.token {
        config.endpoint.token = Some(x.clone());
    }
    if let Some(x) = e.timeout {
        config.endpoint.timeout_secs = x;
    }
    if let Some(x) = e.max_retries {
        config.endpoint.max_retries = x;
    }
}

fn http_endpoint(config: &RunConfig) -> CliResult<HttpEndpoint> {
    let ep = &config.endpoint;
    let address = ep
        .address
        .clone()
        .ok_or_else(|| CliError::usage("an endpoint address is required (--address or [endpoint] address)"))?;
    if !(ep.timeout_secs.is_finite() && ep.timeout_secs > 0.0) {
        return Err(CliError::usage(format!("timeout must be positive, got {}", ep.timeout_secs)));
    }
    Ok(HttpEndpoint::new(address, ep.token.clone(), Duration::from_secs_f64(ep.timeout_secs)).with_batch_size(ep.batch_size))
}

fn fetch(a: FetchArgs, mut config: RunConfig, command: &str) -> CliResult<()> {
    apply_endpoint(&mut config, &a.endpoint);
    if let Some(c) = a.concurrency {
        config.endpoint.concurrency = c;
    }
    if let Some(b) = a.batch_size {
        config.endpoint.batch_size = b;
    }
    let service = http_endpoint(&config)?;
    let items: Vec<PromptItem> = jsonl::read(&a.items)?;
    let opts = FetchOptions {
        concurrency: config.endpoint.concurrency,
        max_retries: config.endpoint.max_retries,
        backoff: Duration::from_millis(config.endpoint.backoff_ms),
    };
    let summary = match fetch_predictions(&items, &a.output, &service, &opts) {
        Ok(s) => s,
        Err(FetchError::Endpoint { error, completed }) => {
            return Err(CliError::endpoint(anyhow::anyhow!(
                "{error}; {completed} of {} items saved, rerun to resume",
                items.len()
            )))
        }
        Err(FetchError::Data(e)) => return Err(e.into()),
    };
    let body = json!({ "items": a.items, "output": a.output, "summary": summary });
    write_json(&sibling(&a.output, "manifest.json"), &manifest(command, &config, body))?;
    println!(
        "{} predictions in {} ({} fetched now, {} timed out, {} retries)",
        summary.total,
        a.output.display(),
        summary.fetched,
        summary.timed_out,
        summary.retries
    );
    Ok(())
}

fn expand(a: ExpandArgs, mut config: RunConfig, command: &str) -> CliResult<()> {
    apply_endpoint(&mut config, &a.endpoint);
    let client = http_endpoint(&config)?;
    let registry = match &a.templates {
        Some(p) => {
            let r = TemplateRegistry::new();
            r.load_file(p)?;
            r
        }
        None => TemplateRegistry::with_starter_sets(),
    };
    let set = registry.get(a.task)?;
    let sample = match &a.template_id {
        Some(id) => set
            .variants()
            .iter()
            .find(|t| &t.id == id)
            .ok_or_else(|| CliError::usage(format!("no template '{id}' for {}", a.task)))?,
        None => &set.variants()[0],
    };
    let prompt = match &a.prompt_file {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEFAULT_EXPANSION_PROMPT.to_string(),
    };
    let (expanded, report) = match expand_via_endpoint(sample, &a.purpose, a.count, &client, &prompt) {
        Ok(x) => x,
        Err(TemplateError::EndpointUnavailable(e)) => return Err(CliError::endpoint(e)),
        Err(e) => return Err(e.into()),
    };
    write_sets(&a.output, &[expanded])?;
    let body = json!({ "output": a.output, "sample": sample.id, "expansion": report });
    write_json(&sibling(&a.output, "manifest.json"), &manifest(command, &config, body))?;
    println!(
        "{} of {} candidate templates accepted for {}; written to {}",
        report.accepted,
        report.returned,
        a.task,
        a.output.display()
    );
    Ok(())
}

// ---- fuzz ----

#[derive(Serialize)]
struct FuzzOutput<'a> {
    config: &'a FuzzConfig,
    report: &'a fuzz::FuzzReport,
}

fn fuzz_roundtrip(a: FuzzArgs, config: RunConfig) -> CliResult<()> {
    if a.min_precision < 1 || a.max_precision > 9 || a.min_precision > a.max_precision {
        return Err(CliError::usage(format!(
            "precision range {}..={} must lie within 1..=9",
            a.min_precision, a.max_precision
        )));
    }
    let cfg = FuzzConfig {
        cases: a.cases,
        seed: config.seed,
        min_precision: a.min_precision,
        max_precision: a.max_precision,
    };
    let report = fuzz::run(&cfg);
    println!(
        "{} of {} round trips passed (worst error {:.3} of the allowed half unit)",
        report.passed, report.cases, report.worst_relative_error
    );
    if let Some(p) = &a.report {
        write_json(p, &serde_json::to_value(FuzzOutput { config: &cfg, report: &report })?)?;
    }
    if let Some(f) = report.failures.first() {
        return Err(anyhow::anyhow!("{} failures; first at case {}: {} ({})", report.failures.len(), f.case, f.text, f.reason).into());
    }
    Ok(())
}
