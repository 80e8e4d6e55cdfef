//! 2x2 spatial grounding test: quadrant assignment, balanced item sampling,
//! the fixed multiple-choice question and grading of free-form answers.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coord::{BBox, CoordError};
use crate::dataset::{normalize_pixel_box, ImageKey, Payload, SourceAnnotation};
use crate::eval::report::{EvalReport, ItemVerdict, Outcome};
use crate::eval::{Aligned, PredictionRecord};
use crate::{par, seed};

pub const DEFAULT_QUOTA: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Ambiguous,
}

impl Quadrant {
    pub const PARTS: [Quadrant; 4] = [Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft, Quadrant::BottomRight];

    pub fn letter(self) -> Option<char> {
        match self {
            Quadrant::TopLeft => Some('A'),
            Quadrant::TopRight => Some('B'),
            Quadrant::BottomLeft => Some('C'),
            Quadrant::BottomRight => Some('D'),
            Quadrant::Ambiguous => None,
        }
    }

    pub fn from_letter(c: char) -> Option<Quadrant> {
        match c.to_ascii_uppercase() {
            'A' => Some(Quadrant::TopLeft),
            'B' => Some(Quadrant::TopRight),
            'C' => Some(Quadrant::BottomLeft),
            'D' => Some(Quadrant::BottomRight),
            _ => None,
        }
    }

    /// The option as written in the question, e.g. "(A) Top-left".
    pub fn option_label(self) -> &'static str {
        match self {
            Quadrant::TopLeft => "(A) Top-left",
            Quadrant::TopRight => "(B) Top-right",
            Quadrant::BottomLeft => "(C) Bottom-left",
            Quadrant::BottomRight => "(D) Bottom-right",
            Quadrant::Ambiguous => "Ambiguous",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.option_label())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChessboardError {
    #[error("class name is empty")]
    EmptyClassName,
    #[error("not enough candidates for {quadrant:?}: {available} available, {shortfall} short")]
    InsufficientCandidates { quadrant: Quadrant, available: usize, shortfall: usize },
    #[error("invalid epsilon {0}; must be finite and non-negative")]
    InvalidEpsilon(f64),
    #[error("annotation {index}: {source}")]
    Geometry { index: usize, source: CoordError },
}

/// The quadrant a box lies completely within, shrunk by `eps` around the
/// center lines. Boxes that fit none, or (zero-width on a center line) two,
/// are `Ambiguous`.
pub fn assign_quadrant(b: BBox, eps: f64) -> Quadrant {
    let lo = 0.5 - eps;
    let hi = 0.5 + eps;
    let left = b.x_max() <= lo;
    let right = b.x_min() >= hi;
    let top = b.y_max() <= lo;
    let bottom = b.y_min() >= hi;
    match (left, right, top, bottom) {
        (true, false, true, false) => Quadrant::TopLeft,
        (false, true, true, false) => Quadrant::TopRight,
        (true, false, false, true) => Quadrant::BottomLeft,
        (false, true, false, true) => Quadrant::BottomRight,
        _ => Quadrant::Ambiguous,
    }
}

/// The fixed question with `class_name` substituted literally.
pub fn format_question(class_name: &str) -> Result<String, ChessboardError> {
    if class_name.trim().is_empty() {
        return Err(ChessboardError::EmptyClassName);
    }
    Ok(format!(
        "Which part is {class_name} in if the picture is divided equally into four 2 by 2 parts? \
         Choose from: (A) Top-left (B) Top-right (C) Bottom-left (D) Bottom-right."
    ))
}

/// A detection usable as a chessboard item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub image: ImageKey,
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Normalized candidates from the detection annotations; other kinds are
/// skipped.
pub fn candidates_from_annotations(anns: &[SourceAnnotation]) -> Result<Vec<Candidate>, ChessboardError> {
    let mut out = Vec::new();
    for (index, ann) in anns.iter().enumerate() {
        if let Payload::Detection { class_name, bbox } = &ann.payload {
            let b = normalize_pixel_box(*bbox, ann.size).map_err(|source| ChessboardError::Geometry { index, source })?;
            out.push(Candidate {
                image: ann.image.clone(),
                class_name: class_name.trim().to_string(),
                bbox: b,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChessboardItem {
    pub item_id: String,
    pub image: ImageKey,
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub answer: Quadrant,
    pub question: String,
    /// The question as sent to a model, with the image marker.
    pub prompt: String,
}

/// Samples `quota` items per quadrant, at most one per image.
///
/// Images are visited in seeded random order. Quadrants are filled scarcest
/// first so that images able to serve several quadrants go where they are
/// most needed; within an image the candidate is drawn uniformly.
pub fn build_set(candidates: &[Candidate], quota: usize, seed_value: u64, eps: f64) -> Result<Vec<ChessboardItem>, ChessboardError> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(ChessboardError::InvalidEpsilon(eps));
    }
    let quadrants = par::map(candidates, |_, c| assign_quadrant(c.bbox, eps));
    // image -> quadrant -> candidate indices; BTreeMap keeps the order stable
    let mut by_image: BTreeMap<(&str, &str), BTreeMap<Quadrant, Vec<usize>>> = BTreeMap::new();
    for (i, (c, q)) in candidates.iter().zip(&quadrants).enumerate() {
        if *q == Quadrant::Ambiguous || c.class_name.trim().is_empty() {
            continue;
        }
        by_image
            .entry((c.image.collection.as_str(), c.image.image_id.as_str()))
            .or_default()
            .entry(*q)
            .or_default()
            .push(i);
    }
    let mut rng = seed::rng(seed_value);
    let mut images: Vec<_> = by_image.into_values().collect();
    images.shuffle(&mut rng);

    let mut order = Quadrant::PARTS;
    order.sort_by_key(|q| (images.iter().filter(|m| m.contains_key(q)).count(), *q));

    let mut used = vec![false; images.len()];
    let mut picked: Vec<(usize, Quadrant)> = Vec::with_capacity(4 * quota);
    for q in order {
        let mut n = 0;
        for (slot, m) in images.iter().enumerate() {
            if n == quota {
                break;
            }
            if used[slot] {
                continue;
            }
            if let Some(idx) = m.get(&q) {
                used[slot] = true;
                picked.push((idx[rng.gen_range(0..idx.len())], q));
                n += 1;
            }
        }
        if n < quota {
            return Err(ChessboardError::InsufficientCandidates {
                quadrant: q,
                available: n,
                shortfall: quota - n,
            });
        }
    }
    picked.shuffle(&mut rng);

    picked
        .into_iter()
        .enumerate()
        .map(|(i, (idx, q))| {
            let c = &candidates[idx];
            let question = format_question(&c.class_name)?;
            Ok(ChessboardItem {
                item_id: format!("chessboard-{i:05}"),
                image: c.image.clone(),
                class_name: c.class_name.clone(),
                bbox: c.bbox,
                answer: q,
                prompt: format!("<image> {question}"),
                question,
            })
        })
        .collect()
}

static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Da-d])\)|\b([A-D])\b").unwrap());
static NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(top|upper|bottom|lower)[\s-]?(left|right)\b").unwrap());
static LOWER_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s+[a-z]").unwrap());

/// Reads the chosen quadrant from a response: the first option letter, else
/// the first quadrant name.
///
/// Letters count when parenthesized in either case, or as a bare capital that
/// does not start a sentence ("A dog..." is an article, not option A).
pub fn parse_choice(response: &str) -> Option<Quadrant> {
    for caps in LETTER.captures_iter(response) {
        if let Some(m) = caps.get(1) {
            return Quadrant::from_letter(m.as_str().chars().next()?);
        }
        let m = caps.get(2)?;
        if LOWER_WORD.is_match(&response[m.end()..]) {
            continue;
        }
        return Quadrant::from_letter(m.as_str().chars().next()?);
    }
    let caps = NAME.captures(response)?;
    let top = matches!(caps[1].to_ascii_lowercase().as_str(), "top" | "upper");
    let left = caps[2].eq_ignore_ascii_case("left");
    Some(match (top, left) {
        (true, true) => Quadrant::TopLeft,
        (true, false) => Quadrant::TopRight,
        (false, true) => Quadrant::BottomLeft,
        (false, false) => Quadrant::BottomRight,
    })
}

pub fn grade(preds: &[PredictionRecord], items: &[ChessboardItem]) -> EvalReport {
    let aligned = Aligned::new(preds, items.iter().map(|it| it.item_id.as_str()));
    let verdicts = par::map(items, |_, item| {
        let id = item.item_id.clone();
        let expected = item.answer.option_label();
        let Some(pred) = aligned.get(&item.item_id) else {
            return ItemVerdict::new(id, Outcome::Missing).expected(expected);
        };
        match parse_choice(&pred.raw_text) {
            None => ItemVerdict::new(id, Outcome::Unparseable).expected(expected),
            Some(q) => ItemVerdict::binary(id, q == item.answer)
                .predicted(q.option_label())
                .expected(expected),
        }
    });
    let report = EvalReport::from_verdicts("chessboard", verdicts).with_warnings(aligned.warnings);
    let acc = report.mean_score_percent();
    report.with_aggregate("accuracy", acc)
}
