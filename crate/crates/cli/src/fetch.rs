//! Pulls model outputs for a list of prompts from a prediction service.
//!
//! Results are appended to the output file strictly in item order, and a
//! `<output>.cursor` file records how many items are safely on disk. A later
//! run with the same items resumes from the cursor without re-sending
//! anything already written.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use anyhow::{bail, Context};
use refdial_core::endpoint::{EndpointError, PredictRequest, PredictionService};
use refdial_core::eval::PredictionRecord;
use refdial_core::jsonl;
use serde::{Deserialize, Serialize};

/// An item to send: stored as `{item_id, prompt}`; other fields are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptItem {
    pub item_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy)]
pub struct FetchOptions {
    pub concurrency: usize,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FetchSummary {
    pub total: usize,
    pub resumed_from: usize,
    pub fetched: usize,
    /// Items recorded with `failed: true` after timing out on every attempt.
    pub timed_out: usize,
    pub retries: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("{error} (resume cursor at {completed})")]
    Endpoint { error: EndpointError, completed: usize },
    #[error(transparent)]
    Data(#[from] anyhow::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Cursor {
    completed: usize,
}

pub fn cursor_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".cursor");
    PathBuf::from(s)
}

fn write_cursor(path: &Path, completed: usize) -> anyhow::Result<()> {
    let tmp = path.with_extension("cursor.tmp");
    std::fs::write(&tmp, serde_json::to_string(&Cursor { completed })?)?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

/// Validates existing output against the cursor and returns the resume point.
fn prepare(items: &[PromptItem], output: &Path, cursor: &Path) -> anyhow::Result<usize> {
    if !cursor.exists() {
        std::fs::write(output, b"").with_context(|| format!("creating {}", output.display()))?;
        write_cursor(cursor, 0)?;
        return Ok(0);
    }
    let c: Cursor = serde_json::from_str(&std::fs::read_to_string(cursor)?).context("reading resume cursor")?;
    if c.completed > items.len() {
        bail!("resume cursor {} is past the {} items", c.completed, items.len());
    }
    let done: Vec<PredictionRecord> = if output.exists() { jsonl::read(output)? } else { Vec::new() };
    if done.len() < c.completed {
        bail!("{} holds {} predictions but the cursor says {}", output.display(), done.len(), c.completed);
    }
    for (p, it) in done.iter().zip(&items[..c.completed]) {
        if p.item_id != it.item_id {
            bail!("{} does not belong to these items (found {}, expected {})", output.display(), p.item_id, it.item_id);
        }
    }
    if done.len() > c.completed {
        // written after the last cursor update; drop and fetch again
        jsonl::write(output, &done[..c.completed])?;
    }
    Ok(c.completed)
}

fn call_with_retry(
    service: &dyn PredictionService,
    chunk: &[PromptItem],
    opts: &FetchOptions,
    retries: &AtomicUsize,
) -> Result<Vec<PredictionRecord>, EndpointError> {
    let requests: Vec<PredictRequest> = chunk
        .iter()
        .map(|it| PredictRequest {
            id: it.item_id.clone(),
            prompt: it.prompt.clone(),
        })
        .collect();
    let mut attempt = 0;
    loop {
        let result = service.predict(&requests).and_then(|resps| {
            let mut by_id: HashMap<String, String> = resps.into_iter().map(|r| (r.id, r.text)).collect();
            chunk
                .iter()
                .map(|it| {
                    by_id
                        .remove(&it.item_id)
                        .map(|text| PredictionRecord::new(it.item_id.clone(), text))
                        .ok_or_else(|| EndpointError::BadResponse(format!("no response for item {}", it.item_id)))
                })
                .collect::<Result<Vec<_>, _>>()
        });
        match result {
            Ok(records) => return Ok(records),
            Err(e) if attempt < opts.max_retries => {
                attempt += 1;
                retries.fetch_add(1, Ordering::Relaxed);
                log::warn!("items {}..: attempt {attempt} failed ({e}); retrying", chunk[0].item_id);
                std::thread::sleep(opts.backoff.saturating_mul(1 << (attempt - 1).min(16)));
            }
            Err(EndpointError::Timeout) => {
                log::warn!("items {}..: timed out after {} retries; recorded as failed", chunk[0].item_id, attempt);
                return Ok(chunk
                    .iter()
                    .map(|it| PredictionRecord {
                        item_id: it.item_id.clone(),
                        raw_text: String::new(),
                        failed: true,
                    })
                    .collect());
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn fetch_predictions(
    items: &[PromptItem],
    output: &Path,
    service: &dyn PredictionService,
    opts: &FetchOptions,
) -> Result<FetchSummary, FetchError> {
    let mut seen = HashSet::new();
    if let Some(dup) = items.iter().find(|it| !seen.insert(it.item_id.as_str())) {
        return Err(anyhow::anyhow!("duplicate item id {}", dup.item_id).into());
    }
    let cursor = cursor_path(output);
    let start = prepare(items, output, &cursor)?;
    let batch = service.max_batch().max(1);
    let window = batch * opts.concurrency.max(1);
    let retries = AtomicUsize::new(0);
    let mut summary = FetchSummary {
        total: items.len(),
        resumed_from: start,
        ..Default::default()
    };
    if start > 0 {
        log::info!("resuming at item {start} of {}", items.len());
    }

    let mut pos = start;
    while pos < items.len() {
        let end = (pos + window).min(items.len());
        let results: Vec<Result<Vec<PredictionRecord>, EndpointError>> = std::thread::scope(|s| {
            let handles: Vec<_> = items[pos..end]
                .chunks(batch)
                .map(|chunk| s.spawn(|| call_with_retry(service, chunk, opts, &retries)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("fetch worker panicked")).collect()
        });
        // persist the successful prefix, in order
        let mut ready = Vec::new();
        let mut failure = None;
        for r in results {
            match r {
                Ok(recs) => ready.extend(recs),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        if !ready.is_empty() {
            let mut f = OpenOptions::new().append(true).open(output).context("opening predictions output")?;
            let mut buf = String::new();
            for r in &ready {
                buf.push_str(&jsonl::to_line(r));
                buf.push('\n');
            }
            f.write_all(buf.as_bytes()).context("appending predictions")?;
            f.sync_data().ok();
            summary.timed_out += ready.iter().filter(|r| r.failed).count();
            summary.fetched += ready.len();
            pos += ready.len();
            write_cursor(&cursor, pos)?;
        }
        if let Some(error) = failure {
            return Err(FetchError::Endpoint { error, completed: pos });
        }
    }
    summary.retries = retries.load(Ordering::Relaxed);
    Ok(summary)
}
