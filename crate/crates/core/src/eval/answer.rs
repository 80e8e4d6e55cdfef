use thiserror::Error;

use super::report::{EvalReport, ItemVerdict, Outcome};
use super::{Aligned, PredictionRecord};
use crate::coord::{parse_regions, RegionScan};
use crate::dataset::build::ANSWER_MARKER;
use crate::par;

pub const VQA_ANNOTATORS: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnswerError {
    #[error("expected {VQA_ANNOTATORS} human answers{}, got {count}", item.as_ref().map(|i| format!(" for item {i}")).unwrap_or_default())]
    WrongAnnotatorCount { item: Option<String>, count: usize },
}

const NUMBER_WORDS: [&str; 11] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];

/// Lowercase, strip punctuation around each token, collapse whitespace, drop
/// articles and spell small numbers as digits.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out: Vec<&str> = Vec::new();
    for raw in lower.split_whitespace() {
        let tok = raw.trim_matches(|c: char| !c.is_alphanumeric());
        match tok {
            "" | "a" | "an" | "the" => {}
            _ => match NUMBER_WORDS.iter().position(|w| *w == tok) {
                Some(n) => out.push(DIGITS[n]),
                None => out.push(tok),
            },
        }
    }
    out.join(" ")
}

const DIGITS: [&str; 11] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10"];

#[derive(Debug, Clone, PartialEq)]
pub struct FinalAnswer {
    pub answer: String,
    /// Every coordinate group in the full text, reasoning chain included.
    pub regions: RegionScan,
    pub marker_found: bool,
    /// True when no answer text could be read.
    pub empty: bool,
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

/// Byte offset just past the first sentence end in `s` (a terminator followed
/// by whitespace), or `s.len()`.
fn first_sentence_end(s: &str) -> usize {
    let mut it = s.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if c == '\n' {
            return i;
        }
        if is_terminator(c) && it.peek().is_some_and(|(_, n)| n.is_whitespace()) {
            return i;
        }
    }
    s.len()
}

fn trim_answer(s: &str) -> &str {
    s.trim().trim_end_matches(|c: char| matches!(c, '.' | '!' | '?' | ',' | ';' | ':') || c.is_whitespace())
}

fn last_sentence(text: &str) -> &str {
    let body = trim_answer(text);
    let mut start = 0;
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let boundary = c == '\n' || (is_terminator(c) && chars.peek().is_some_and(|(_, n)| n.is_whitespace()));
        if boundary {
            start = i + c.len_utf8();
        }
    }
    trim_answer(&body[start..])
}

/// Reads the final answer from a reply: the text after the last "So the
/// answer is", or the last sentence when the marker is absent.
pub fn extract_final_answer(raw_text: &str) -> FinalAnswer {
    let regions = parse_regions(raw_text);
    // ASCII lowercasing keeps byte offsets
    let lower = raw_text.to_ascii_lowercase();
    let marker = ANSWER_MARKER.to_ascii_lowercase();
    let (answer, marker_found) = match lower.rfind(&marker) {
        Some(pos) => {
            let rest = raw_text[pos + marker.len()..].trim_start();
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            (trim_answer(&rest[..first_sentence_end(rest)]), true)
        }
        None => (last_sentence(raw_text), false),
    };
    FinalAnswer {
        answer: answer.to_string(),
        empty: answer.is_empty(),
        regions,
        marker_found,
    }
}

/// Exact match after extraction and normalization.
pub fn eval_short_answer(preds: &[PredictionRecord], gts: &[(String, String)]) -> EvalReport {
    let aligned = Aligned::new(preds, gts.iter().map(|(id, _)| id.as_str()));
    let verdicts = par::map(gts, |_, (id, gt)| {
        let expected = normalize_answer(gt);
        let Some(pred) = aligned.get(id) else {
            return ItemVerdict::new(id.clone(), Outcome::Missing).expected(expected);
        };
        let fa = extract_final_answer(&pred.raw_text);
        let got = normalize_answer(&fa.answer);
        if got.is_empty() {
            return ItemVerdict::new(id.clone(), Outcome::Unparseable).expected(expected);
        }
        ItemVerdict::binary(id.clone(), got == expected).predicted(got).expected(expected)
    });
    let report = EvalReport::from_verdicts("short_answer", verdicts).with_warnings(aligned.warnings);
    let acc = report.mean_score_percent();
    report.with_aggregate("accuracy", acc)
}

/// Consensus accuracy against ten human answers: min(matches / 3, 1).
pub fn vqa_accuracy(pred_answer: &str, human_answers: &[String]) -> Result<f64, AnswerError> {
    if human_answers.len() != VQA_ANNOTATORS {
        return Err(AnswerError::WrongAnnotatorCount {
            item: None,
            count: human_answers.len(),
        });
    }
    let pred = normalize_answer(pred_answer);
    let matches = human_answers.iter().filter(|h| normalize_answer(h) == pred).count();
    Ok((matches as f64 / 3.0).min(1.0))
}

/// Items score their consensus accuracy; an item counts as correct when the
/// score is positive.
pub fn eval_vqa(preds: &[PredictionRecord], gts: &[(String, Vec<String>)]) -> Result<EvalReport, AnswerError> {
    if let Some((id, h)) = gts.iter().find(|(_, h)| h.len() != VQA_ANNOTATORS) {
        return Err(AnswerError::WrongAnnotatorCount {
            item: Some(id.clone()),
            count: h.len(),
        });
    }
    let aligned = Aligned::new(preds, gts.iter().map(|(id, _)| id.as_str()));
    let verdicts = par::map(gts, |_, (id, humans)| {
        let Some(pred) = aligned.get(id) else {
            return ItemVerdict::new(id.clone(), Outcome::Missing);
        };
        let fa = extract_final_answer(&pred.raw_text);
        let got = normalize_answer(&fa.answer);
        if got.is_empty() {
            return ItemVerdict::new(id.clone(), Outcome::Unparseable);
        }
        let score = vqa_accuracy(&got, humans).expect("annotator count checked above");
        ItemVerdict::binary(id.clone(), score > 0.0).predicted(got).with_score(score)
    });
    let report = EvalReport::from_verdicts("vqa", verdicts).with_warnings(aligned.warnings);
    let acc = report.mean_score_percent();
    Ok(report.with_aggregate("accuracy", acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::Point;
    use proptest::prelude::*;

    const REPLY: &str = "The jacket [0.268, 0.372] is green. We can find a T-shirt [0.653, 0.532] and cropped pants [0.569, 0.101] a with same green color. So the answer is two.";

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Apple."), "apple");
        assert_eq!(normalize_answer("Two"), "2");
        assert_eq!(normalize_answer("  a   red   Umbrella "), "red umbrella");
        assert_eq!(normalize_answer("..."), "");
    }

    #[test]
    fn worked_reply() {
        let fa = extract_final_answer(REPLY);
        assert_eq!(fa.answer, "two");
        assert!(fa.marker_found);
        let pts: Vec<Point> = fa.regions.points().collect();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2].to_array(), [0.569, 0.101]);
        assert_eq!(fa.regions.spans.len(), 3);
    }

    #[test]
    fn fallbacks() {
        assert_eq!(extract_final_answer("Paris.").answer, "Paris");
        assert_eq!(extract_final_answer("It is far away. Paris!").answer, "Paris");
        let e = extract_final_answer("");
        assert!(e.empty && !e.marker_found);
        assert_eq!(extract_final_answer("so the answer is: Yes. Anything else?").answer, "Yes");
        assert_eq!(extract_final_answer("So the answer is [0.1, 0.2].").answer, "[0.1, 0.2]");
    }

    #[test]
    fn short_answer_examples() {
        let gts = vec![("1".to_string(), "2".to_string()), ("2".into(), "2".into()), ("3".into(), "2".into())];
        let preds = [
            PredictionRecord::new("1", "So the answer is two."),
            PredictionRecord::new("2", "three"),
            PredictionRecord::new("3", ""),
        ];
        let r = eval_short_answer(&preds, &gts);
        let outcomes: Vec<_> = r.per_item.iter().map(|v| v.outcome).collect();
        assert_eq!(outcomes, [Outcome::Correct, Outcome::Incorrect, Outcome::Unparseable]);
        assert_eq!(r.parse_failures.ids, ["3"]);
    }

    #[test]
    fn vqa_examples() {
        let humans = |k: usize| -> Vec<String> { (0..10).map(|i| if i < k { "two".into() } else { "one".into() }).collect() };
        assert_eq!(vqa_accuracy("2", &humans(5)), Ok(1.0));
        assert_eq!(vqa_accuracy("3", &humans(5)), Ok(0.0));
        assert_eq!(vqa_accuracy("2", &humans(2)), Ok(2.0 / 3.0));
        assert!(matches!(
            vqa_accuracy("2", &humans(2)[..9]),
            Err(AnswerError::WrongAnnotatorCount { count: 9, .. })
        ));
        let gts = vec![("q".to_string(), humans(2))];
        let r = eval_vqa(&[PredictionRecord::new("q", "Two.")], &gts).unwrap();
        assert!((r.aggregate("accuracy").unwrap() - 200.0 / 3.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn normalize_is_idempotent_on_wordy_input(words in prop::collection::vec("(?i)(the|a|an|two|ten|[a-z]{1,5})[.,!?'\"]{0,2}", 0..8)) {
            let s = words.join(" ");
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }
    }
}
