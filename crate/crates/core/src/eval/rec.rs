use serde::{Deserialize, Serialize};

use super::iou::iou;
use super::report::{EvalReport, ItemVerdict, Outcome};
use super::{Aligned, PredictionRecord};
use crate::coord::{parse_regions, serialize_box, BBox, Precision};
use crate::par;

pub const DEFAULT_REC_THRESHOLD: f64 = 0.5;

/// Referring-expression accuracy: the first box in each prediction must reach
/// `threshold` IoU with the ground truth. Predictions without a valid box are
/// unparseable and count as incorrect.
pub fn eval_rec(preds: &[PredictionRecord], gts: &[(String, BBox)], threshold: f64) -> EvalReport {
    let aligned = Aligned::new(preds, gts.iter().map(|(id, _)| id.as_str()));
    let verdicts = par::map(gts, |_, (id, gt)| {
        let expected = serialize_box(*gt, Precision::default());
        let Some(pred) = aligned.get(id) else {
            return ItemVerdict::new(id.clone(), Outcome::Missing).expected(expected);
        };
        match parse_regions(&pred.raw_text).first_box() {
            None => ItemVerdict::new(id.clone(), Outcome::Unparseable).expected(expected),
            Some(b) => {
                let overlap = iou(b, *gt);
                ItemVerdict::binary(id.clone(), overlap >= threshold)
                    .predicted(serialize_box(b, Precision::default()))
                    .expected(expected)
                    .value(overlap)
            }
        }
    });
    let report = EvalReport::from_verdicts("rec", verdicts).with_warnings(aligned.warnings);
    let acc = report.mean_score_percent();
    report.with_aggregate("accuracy", acc).with_aggregate("threshold", threshold)
}

/// The answer text holds no valid box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no valid box in the answer")]
pub struct NoBox;

/// A four-way box choice, stored as `{item_id, options, correct}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhichBoxItem {
    pub item_id: String,
    pub options: [BBox; 4],
    /// Zero-based index of the right option.
    pub correct: usize,
}

/// The option with the highest IoU against the first predicted box, lowest
/// index on ties. `Ok(None)` when the box overlaps no option.
pub fn which_box_choice(raw_text: &str, options: &[BBox; 4]) -> Result<Option<usize>, NoBox> {
    let pred = parse_regions(raw_text).first_box().ok_or(NoBox)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in options.iter().enumerate() {
        let v = iou(pred, *o);
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    Ok(best.map(|(i, _)| i))
}

pub fn eval_which_box(preds: &[PredictionRecord], items: &[WhichBoxItem]) -> EvalReport {
    let aligned = Aligned::new(preds, items.iter().map(|it| it.item_id.as_str()));
    let verdicts = par::map(items, |_, item| {
        let id = item.item_id.clone();
        let Some(pred) = aligned.get(&item.item_id) else {
            return ItemVerdict::new(id, Outcome::Missing).expected(item.correct.to_string());
        };
        match which_box_choice(&pred.raw_text, &item.options) {
            Err(NoBox) => ItemVerdict::new(id, Outcome::Unparseable).expected(item.correct.to_string()),
            Ok(chosen) => ItemVerdict::binary(id, chosen == Some(item.correct))
                .predicted(chosen.map_or("none".to_string(), |c| c.to_string()))
                .expected(item.correct.to_string()),
        }
    });
    let report = EvalReport::from_verdicts("which_box", verdicts).with_warnings(aligned.warnings);
    let acc = report.mean_score_percent();
    report.with_aggregate("accuracy", acc)
}
