use serde::{Deserialize, Serialize};

use super::answer::normalize_answer;
use super::report::{EvalReport, ItemVerdict, Outcome};
use super::{Aligned, PredictionRecord};
use crate::par;

/// Confusion counts. A response that cannot be read as yes or no is treated
/// as "no": for a "yes" item that is a false negative, for a "no" item it
/// lands in `unparsed_negative` (incorrect, but not a true negative).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(default)]
    pub unparsed_negative: usize,
}

/// Percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopeMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yes_rate: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl PopeCounts {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.unparsed_negative
    }

    /// Precision, recall and F1 are 0 when their denominators are.
    pub fn metrics(&self) -> PopeMetrics {
        let n = self.n();
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        PopeMetrics {
            accuracy: 100.0 * ratio(self.tp + self.tn, n),
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
            yes_rate: 100.0 * ratio(self.tp + self.fp, n),
        }
    }

    fn add(&mut self, truth: bool, answer: Option<bool>) {
        match (truth, answer) {
            (true, Some(true)) => self.tp += 1,
            (false, Some(true)) => self.fp += 1,
            (false, Some(false)) => self.tn += 1,
            (true, _) => self.fn_ += 1,
            (false, None) => self.unparsed_negative += 1,
        }
    }
}

/// Reads a yes/no answer: the first normalized token if it is one, else the
/// first whole word "yes" or "no" anywhere in the response.
pub fn parse_yes_no(response: &str) -> Option<bool> {
    let norm = normalize_answer(response);
    let word = |w: &str| match w {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    };
    let mut tokens = norm.split(' ');
    if let Some(first) = tokens.next().and_then(word) {
        return Some(first);
    }
    tokens.find_map(word)
}

pub fn eval_pope(preds: &[PredictionRecord], gts: &[(String, bool)]) -> EvalReport {
    let aligned = Aligned::new(preds, gts.iter().map(|(id, _)| id.as_str()));
    let yn = |b: bool| if b { "yes" } else { "no" };
    let graded = par::map(gts, |_, (id, truth)| {
        let Some(pred) = aligned.get(id) else {
            return (None, ItemVerdict::new(id.clone(), Outcome::Missing).expected(yn(*truth)));
        };
        match parse_yes_no(&pred.raw_text) {
            None => (None, ItemVerdict::new(id.clone(), Outcome::Unparseable).expected(yn(*truth))),
            Some(a) => (
                Some(a),
                ItemVerdict::binary(id.clone(), a == *truth).predicted(yn(a)).expected(yn(*truth)),
            ),
        }
    });
    let mut counts = PopeCounts::default();
    let mut verdicts = Vec::with_capacity(graded.len());
    for ((answer, v), (_, truth)) in graded.into_iter().zip(gts) {
        counts.add(*truth, answer);
        verdicts.push(v);
    }
    let m = counts.metrics();
    EvalReport::from_verdicts("pope", verdicts)
        .with_warnings(aligned.warnings)
        .with_aggregate("accuracy", m.accuracy)
        .with_aggregate("precision", m.precision)
        .with_aggregate("recall", m.recall)
        .with_aggregate("f1", m.f1)
        .with_aggregate("yes_rate", m.yes_rate)
        .with_aggregate("tp", counts.tp as f64)
        .with_aggregate("fp", counts.fp as f64)
        .with_aggregate("tn", counts.tn as f64)
        .with_aggregate("fn", counts.fn_ as f64)
        .with_aggregate("unparsed_negative", counts.unparsed_negative as f64)
}
