//! Metric computations for grounding, question answering, hallucination and
//! captioning benchmarks.
//!
//! Every evaluator aligns predictions to ground truth by item id, grades each
//! item independently (in parallel when enabled), and reduces the verdicts in
//! ground-truth order into an [`EvalReport`]. Rate aggregates are percentages.

pub mod answer;
pub mod cider;
pub mod iou;
pub mod pope;
pub mod rec;
pub mod report;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use answer::{eval_short_answer, eval_vqa, extract_final_answer, normalize_answer, vqa_accuracy, AnswerError, FinalAnswer};
pub use cider::{cider, eval_caption, CiderError, CiderScore};
pub use iou::iou;
pub use pope::{eval_pope, PopeCounts, PopeMetrics};
pub use rec::{eval_rec, eval_which_box, which_box_choice, NoBox, WhichBoxItem};
pub use report::{EvalReport, ItemVerdict, Outcome, ParseFailures};

/// One model output, stored as `{item_id, raw_text}` per line. `failed` marks
/// items the inference client gave up on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    #[serde(alias = "response")]
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl PredictionRecord {
    pub fn new(item_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        PredictionRecord {
            item_id: item_id.into(),
            raw_text: raw_text.into(),
            failed: false,
        }
    }
}

/// Predictions indexed by item id.
pub(crate) struct Aligned<'a> {
    by_id: HashMap<&'a str, &'a PredictionRecord>,
    pub warnings: Vec<String>,
}

impl<'a> Aligned<'a> {
    pub fn new<'g>(preds: &'a [PredictionRecord], gt_ids: impl Iterator<Item = &'g str>) -> Self {
        let mut by_id = HashMap::with_capacity(preds.len());
        let mut warnings = Vec::new();
        for p in preds {
            if by_id.insert(p.item_id.as_str(), p).is_some() {
                warnings.push(format!("duplicate prediction for item {}; keeping the last", p.item_id));
            }
        }
        let gt: std::collections::HashSet<&str> = gt_ids.collect();
        let mut extra: Vec<&str> = by_id.keys().copied().filter(|id| !gt.contains(id)).collect();
        extra.sort_unstable();
        for id in extra {
            warnings.push(format!("prediction for unknown item {id}"));
        }
        Aligned { by_id, warnings }
    }

    pub fn get(&self, id: &str) -> Option<&'a PredictionRecord> {
        self.by_id.get(id).copied()
    }
}
