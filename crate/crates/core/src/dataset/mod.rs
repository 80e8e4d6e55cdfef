//! Instruction-record construction from grounding-style source annotations.
//!
//! Sources arrive in one canonical line-delimited schema with pixel geometry
//! ([`import`]). They are turned into [`InstructionRecord`]s by [`build`],
//! filtered against held-out images by [`leakage`], mixed for the two training
//! stages by [`sampler`], and written by [`records`].

pub mod build;
pub mod import;
pub mod leakage;
pub mod records;
pub mod sampler;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coord::{normalize_box, normalize_point, CoordError, Geometry, ImageSize, RegionSpan};
use crate::jsonl::JsonlError;
use crate::templates::{TaskKind, TemplateError};

pub use build::{build_gcot_records, build_records, GCoTMode, ANSWER_MARKER};
pub use import::{import_source, ImportOutcome, RowDiagnostic};
pub use leakage::{filter_leakage, LeakageIndex};
pub use records::{read_records, validate_record, write_records};
pub use sampler::{Draw, Origin, Stage, StageSampler};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: schema mismatch: {message}")]
    SchemaMismatch { line: usize, message: String },
    #[error("annotation kind {kind} cannot build {task} records")]
    IncompatibleKind { task: TaskKind, kind: AnnotationKind },
    #[error("{provenance}: object {object} has no {needed} geometry")]
    MissingGeometry {
        provenance: Provenance,
        object: usize,
        needed: &'static str,
    },
    #[error("{provenance}: {message}")]
    InvalidAnnotation { provenance: Provenance, message: String },
    #[error("{provenance}: built record is invalid: {message}")]
    InvalidRecord { provenance: Provenance, message: String },
    #[error("line {line}: corrupt record: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("stage 2 needs a non-empty boosted stream")]
    EmptyBoostedStream,
    #[error("the primary stream is empty")]
    EmptyPrimaryStream,
    #[error("sampling ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// Identifies an image across source collections.
///
/// Two keys are equal when both carry a content hash and the hashes match,
/// or otherwise when collection and image id both match.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
pub struct ImageKey {
    pub collection: String,
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
}

impl ImageKey {
    pub fn new(collection: impl Into<String>, image_id: impl Into<String>) -> Self {
        ImageKey {
            collection: collection.into(),
            image_id: image_id.into(),
            content_hash: None,
        }
    }

    pub fn with_hash(mut self, hash: impl Into<String>) -> Self {
        self.content_hash = Some(hash.into());
        self
    }
}

impl PartialEq for ImageKey {
    fn eq(&self, other: &Self) -> bool {
        match (&self.content_hash, &other.content_hash) {
            (Some(a), Some(b)) => a == b,
            _ => self.collection == other.collection && self.image_id == other.image_id,
        }
    }
}

/// Where a record came from: a file (or other source label) and a line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub line: usize,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.source, self.line)
    }
}

/// Pixel-space point `[x, y]` or box `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PixelGeometry {
    Point([i64; 2]),
    Box([i64; 4]),
}

impl PixelGeometry {
    pub fn normalize(&self, size: ImageSize) -> Result<Geometry, CoordError> {
        Ok(match *self {
            PixelGeometry::Point([x, y]) => Geometry::Point(normalize_point([x as f64, y as f64], size)?),
            PixelGeometry::Box(b) => Geometry::Box(normalize_pixel_box(b, size)?),
        })
    }
}

pub fn normalize_pixel_box(b: [i64; 4], size: ImageSize) -> Result<crate::coord::BBox, CoordError> {
    normalize_box(b.map(|v| v as f64), size)
}

/// A phrase in a text (byte range, end exclusive) and the region it names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub region: PixelGeometry,
}

/// An object mentioned in a reasoning chain. Either geometry may be absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainObject {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[i64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[i64; 2]>,
}

/// One question/answer pair of a generated referential dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub question_entities: Vec<Mention>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answer_entities: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Payload {
    #[serde(rename = "referring_expression")]
    ReferringExpression {
        expression: String,
        #[serde(rename = "box")]
        bbox: [i64; 4],
    },
    #[serde(rename = "region_caption")]
    RegionCaption {
        caption: String,
        #[serde(rename = "box")]
        bbox: [i64; 4],
    },
    #[serde(rename = "entity_caption")]
    EntityCaption { caption: String, entities: Vec<Mention> },
    #[serde(rename = "pointqa")]
    PointQa {
        question: String,
        answer: String,
        region: PixelGeometry,
    },
    #[serde(rename = "mc_boxqa")]
    McBoxQa {
        question: String,
        options: [[i64; 4]; 4],
        correct: usize,
    },
    #[serde(rename = "cot_qa")]
    CotQa {
        question: String,
        chain: String,
        objects: Vec<ChainObject>,
        answer: String,
    },
    #[serde(rename = "caption")]
    Caption { caption: String },
    #[serde(rename = "vqa")]
    Vqa { question: String, answers: Vec<String> },
    #[serde(rename = "dialogue")]
    Dialogue { exchanges: Vec<Exchange> },
    #[serde(rename = "detection")]
    Detection {
        class_name: String,
        #[serde(rename = "box")]
        bbox: [i64; 4],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    ReferringExpression,
    RegionCaption,
    EntityCaption,
    #[serde(rename = "pointqa")]
    PointQa,
    #[serde(rename = "mc_boxqa")]
    McBoxQa,
    CotQa,
    Caption,
    Vqa,
    Dialogue,
    Detection,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 10] = [
        AnnotationKind::ReferringExpression,
        AnnotationKind::RegionCaption,
        AnnotationKind::EntityCaption,
        AnnotationKind::PointQa,
        AnnotationKind::McBoxQa,
        AnnotationKind::CotQa,
        AnnotationKind::Caption,
        AnnotationKind::Vqa,
        AnnotationKind::Dialogue,
        AnnotationKind::Detection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnnotationKind::ReferringExpression => "referring_expression",
            AnnotationKind::RegionCaption => "region_caption",
            AnnotationKind::EntityCaption => "entity_caption",
            AnnotationKind::PointQa => "pointqa",
            AnnotationKind::McBoxQa => "mc_boxqa",
            AnnotationKind::CotQa => "cot_qa",
            AnnotationKind::Caption => "caption",
            AnnotationKind::Vqa => "vqa",
            AnnotationKind::Dialogue => "dialogue",
            AnnotationKind::Detection => "detection",
        }
    }

    /// Tasks an annotation of this kind can feed.
    pub fn tasks(self) -> &'static [TaskKind] {
        match self {
            AnnotationKind::ReferringExpression => &[TaskKind::Rec, TaskKind::Reg],
            AnnotationKind::RegionCaption => &[TaskKind::GroundingCaption],
            AnnotationKind::EntityCaption => &[TaskKind::SpottingCaption],
            AnnotationKind::PointQa => &[TaskKind::PointQA],
            AnnotationKind::McBoxQa => &[TaskKind::PointQaV7w],
            AnnotationKind::CotQa => &[
                TaskKind::VqaQa,
                TaskKind::VqaQca,
                TaskKind::VqaQcPointA,
                TaskKind::VqaQcBoxA,
            ],
            AnnotationKind::Caption => &[TaskKind::Captioning],
            AnnotationKind::Vqa => &[TaskKind::VqaQa],
            AnnotationKind::Dialogue => &[TaskKind::Rd],
            AnnotationKind::Detection => &[TaskKind::Chessboard],
        }
    }
}

impl std::fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AnnotationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnnotationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown annotation kind '{s}'"))
    }
}

impl Payload {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            Payload::ReferringExpression { .. } => AnnotationKind::ReferringExpression,
            Payload::RegionCaption { .. } => AnnotationKind::RegionCaption,
            Payload::EntityCaption { .. } => AnnotationKind::EntityCaption,
            Payload::PointQa { .. } => AnnotationKind::PointQa,
            Payload::McBoxQa { .. } => AnnotationKind::McBoxQa,
            Payload::CotQa { .. } => AnnotationKind::CotQa,
            Payload::Caption { .. } => AnnotationKind::Caption,
            Payload::Vqa { .. } => AnnotationKind::Vqa,
            Payload::Dialogue { .. } => AnnotationKind::Dialogue,
            Payload::Detection { .. } => AnnotationKind::Detection,
        }
    }
}

/// One source annotation with pixel-space geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAnnotation {
    pub image: ImageKey,
    pub size: ImageSize,
    #[serde(flatten)]
    pub payload: Payload,
    /// Set by the importer; not part of the file schema.
    #[serde(skip)]
    pub origin: Option<Provenance>,
}

impl SourceAnnotation {
    pub fn new(image: ImageKey, size: ImageSize, payload: Payload) -> Self {
        SourceAnnotation {
            image,
            size,
            payload,
            origin: None,
        }
    }

    pub fn kind(&self) -> AnnotationKind {
        self.payload.kind()
    }

    /// Checks geometry against the image extent and kind-specific fields.
    pub fn validate(&self) -> Result<(), String> {
        let size = self.size;
        let region = |g: &PixelGeometry| g.normalize(size).map(|_| ()).map_err(|e| e.to_string());
        let pbox = |b: &[i64; 4]| normalize_pixel_box(*b, size).map(|_| ()).map_err(|e| e.to_string());
        let non_empty = |field: &str, s: &str| {
            if s.trim().is_empty() {
                Err(format!("{field} is empty"))
            } else {
                Ok(())
            }
        };
        match &self.payload {
            Payload::ReferringExpression { expression, bbox } => {
                non_empty("expression", expression)?;
                pbox(bbox)
            }
            Payload::RegionCaption { caption, bbox } => {
                non_empty("caption", caption)?;
                pbox(bbox)
            }
            Payload::EntityCaption { caption, entities } => {
                non_empty("caption", caption)?;
                check_mentions(caption, entities.iter().map(|m| (m.start, m.end)))?;
                entities.iter().try_for_each(|m| region(&m.region))
            }
            Payload::PointQa { question, answer, region: g } => {
                non_empty("question", question)?;
                non_empty("answer", answer)?;
                region(g)
            }
            Payload::McBoxQa { question, options, correct } => {
                non_empty("question", question)?;
                if *correct >= 4 {
                    return Err(format!("correct index {correct} out of range 0..4"));
                }
                options.iter().try_for_each(pbox)
            }
            Payload::CotQa { question, chain, objects, answer } => {
                non_empty("question", question)?;
                non_empty("answer", answer)?;
                check_mentions(chain, objects.iter().map(|o| (o.start, o.end)))?;
                for o in objects {
                    if let Some(b) = &o.bbox {
                        pbox(b)?;
                    }
                    if let Some(p) = o.point {
                        region(&PixelGeometry::Point(p))?;
                    }
                }
                Ok(())
            }
            Payload::Caption { caption } => non_empty("caption", caption),
            Payload::Vqa { question, answers } => {
                non_empty("question", question)?;
                if answers.is_empty() {
                    return Err("no answers".into());
                }
                Ok(())
            }
            Payload::Dialogue { exchanges } => {
                if exchanges.is_empty() {
                    return Err("no exchanges".into());
                }
                for ex in exchanges {
                    non_empty("question", &ex.question)?;
                    non_empty("answer", &ex.answer)?;
                    check_mentions(&ex.question, ex.question_entities.iter().map(|m| (m.start, m.end)))?;
                    check_mentions(&ex.answer, ex.answer_entities.iter().map(|m| (m.start, m.end)))?;
                    for m in ex.question_entities.iter().chain(&ex.answer_entities) {
                        region(&m.region)?;
                    }
                }
                Ok(())
            }
            Payload::Detection { class_name, bbox } => {
                non_empty("class_name", class_name)?;
                pbox(bbox)
            }
        }
    }
}

/// Mentions must be ordered, non-overlapping, non-empty byte ranges on char
/// boundaries of `text`.
fn check_mentions(text: &str, spans: impl Iterator<Item = (usize, usize)>) -> Result<(), String> {
    let mut prev_end = 0;
    for (i, (start, end)) in spans.enumerate() {
        if start >= end || end > text.len() {
            return Err(format!("mention {i} has invalid range {start}..{end}"));
        }
        if !text.is_char_boundary(start) || !text.is_char_boundary(end) {
            return Err(format!("mention {i} range {start}..{end} splits a character"));
        }
        if start < prev_end {
            return Err(format!("mention {i} overlaps or precedes the previous one"));
        }
        prev_end = end;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Stage1,
    Stage2,
}

/// A coordinate span inside one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRegion {
    pub turn: usize,
    #[serde(flatten)]
    pub span: RegionSpan,
}

/// One conversation ready for training or evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub image: ImageKey,
    pub task: TaskKind,
    pub turns: Vec<Turn>,
    pub regions: Vec<TurnRegion>,
    pub stage_tag: StageTag,
    pub provenance: Provenance,
}
