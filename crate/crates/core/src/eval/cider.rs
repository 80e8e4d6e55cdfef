//! CIDEr-D consensus score for captions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::report::{EvalReport, ItemVerdict, Outcome};
use super::{Aligned, PredictionRecord};
use crate::par;

pub const DEFAULT_N_MAX: usize = 4;
pub const DEFAULT_SIGMA: f64 = 6.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CiderError {
    #[error("item {index} has no reference captions")]
    MissingReferences { index: usize },
    #[error("{candidates} candidates for {references} reference sets")]
    LengthMismatch { candidates: usize, references: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiderScore {
    pub corpus: f64,
    pub per_item: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

type Ngram = Vec<String>;

fn ngram_counts(tokens: &[String], n_max: usize) -> HashMap<Ngram, f64> {
    let mut counts = HashMap::new();
    for n in 1..=n_max {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

struct Vector {
    by_order: Vec<HashMap<Ngram, f64>>,
    norms: Vec<f64>,
    len: f64,
}

fn tfidf(counts: &HashMap<Ngram, f64>, len: usize, df: &HashMap<Ngram, f64>, log_n: f64, n_max: usize) -> Vector {
    let mut by_order = vec![HashMap::new(); n_max];
    let mut norms = vec![0.0; n_max];
    for (g, tf) in counts {
        let idf = log_n - df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
        let w = tf * idf;
        let k = g.len() - 1;
        norms[k] += w * w;
        by_order[k].insert(g.clone(), w);
    }
    Vector {
        by_order,
        norms: norms.into_iter().map(f64::sqrt).collect(),
        len: len as f64,
    }
}

fn similarity(hyp: &Vector, r: &Vector, sigma: f64) -> f64 {
    let delta = hyp.len - r.len;
    let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
    let mut total = 0.0;
    for k in 0..hyp.by_order.len() {
        let mut v = 0.0;
        for (g, h) in &hyp.by_order[k] {
            if let Some(rw) = r.by_order[k].get(g) {
                v += h.min(*rw) * rw;
            }
        }
        if hyp.norms[k] != 0.0 && r.norms[k] != 0.0 {
            v /= hyp.norms[k] * r.norms[k];
        }
        total += v * penalty;
    }
    total / hyp.by_order.len() as f64
}

/// CIDEr-D with document frequencies taken over the reference sets of this
/// corpus. Item scores lie in [0, 10]; the corpus score is their mean.
pub fn cider(candidates: &[String], references: &[Vec<String>], n_max: usize, sigma: f64) -> Result<CiderScore, CiderError> {
    if candidates.len() != references.len() {
        return Err(CiderError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if let Some(index) = references.iter().position(|r| r.is_empty()) {
        return Err(CiderError::MissingReferences { index });
    }
    let refs: Vec<Vec<(HashMap<Ngram, f64>, usize)>> = par::map(references, |_, rs| {
        rs.iter()
            .map(|r| {
                let t = tokenize(r);
                (ngram_counts(&t, n_max), t.len())
            })
            .collect()
    });
    let mut df: HashMap<Ngram, f64> = HashMap::new();
    for item in &refs {
        let mut seen: Vec<&Ngram> = item.iter().flat_map(|(c, _)| c.keys()).collect();
        seen.sort_unstable();
        seen.dedup();
        for g in seen {
            *df.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (references.len() as f64).ln();

    let per_item = par::map(candidates, |i, cand| {
        let toks = tokenize(cand);
        if toks.is_empty() {
            return 0.0;
        }
        let hyp = tfidf(&ngram_counts(&toks, n_max), toks.len(), &df, log_n, n_max);
        let sum: f64 = refs[i]
            .iter()
            .map(|(c, len)| similarity(&hyp, &tfidf(c, *len, &df, log_n, n_max), sigma))
            .sum();
        10.0 * sum / refs[i].len() as f64
    });
    let warnings = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| tokenize(c).is_empty())
        .map(|(i, _)| format!("candidate {i} is empty; scored 0"))
        .collect();
    let corpus = if per_item.is_empty() {
        0.0
    } else {
        per_item.iter().sum::<f64>() / per_item.len() as f64
    };
    Ok(CiderScore { corpus, per_item, warnings })
}

/// Caption evaluation over aligned predictions. Missing predictions score 0
/// as empty candidates.
pub fn eval_caption(preds: &[PredictionRecord], gts: &[(String, Vec<String>)]) -> Result<EvalReport, CiderError> {
    let aligned = Aligned::new(preds, gts.iter().map(|(id, _)| id.as_str()));
    let candidates: Vec<String> = gts
        .iter()
        .map(|(id, _)| aligned.get(id).map(|p| p.raw_text.clone()).unwrap_or_default())
        .collect();
    let references: Vec<Vec<String>> = gts.iter().map(|(_, r)| r.clone()).collect();
    let score = cider(&candidates, &references, DEFAULT_N_MAX, DEFAULT_SIGMA)?;
    let verdicts = gts
        .iter()
        .zip(&score.per_item)
        .map(|((id, _), s)| {
            let outcome = match aligned.get(id) {
                None => Outcome::Missing,
                Some(_) if *s > 0.0 => Outcome::Correct,
                Some(_) => Outcome::Incorrect,
            };
            ItemVerdict::new(id.clone(), outcome).with_score(s / 10.0).value(*s)
        })
        .collect();
    Ok(EvalReport::from_verdicts("caption", verdicts)
        .with_warnings(aligned.warnings)
        .with_warnings(score.warnings)
        .with_aggregate("cider", score.corpus))
}
