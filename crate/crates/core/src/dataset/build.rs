use serde::{Deserialize, Serialize};

use super::records::{regions_for_turns, validate_record};
use super::{
    normalize_pixel_box, AnnotationKind, DatasetError, InstructionRecord, Mention, Payload, Provenance,
    SourceAnnotation, Speaker, StageTag, Turn,
};
use crate::chessboard::{assign_quadrant, Quadrant};
use crate::coord::{serialize_box, Geometry, ImageSize, Precision};
use crate::par;
use crate::seed;
use crate::templates::{instantiate, Bindings, Placeholder, TaskKind, TemplateRegistry, TemplateSet};

/// Fixed phrase that introduces the final answer of a reasoning chain.
pub const ANSWER_MARKER: &str = "So the answer is";

/// Answer formats for question answering with optional grounded reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GCoTMode {
    /// Question to answer.
    QA,
    /// Question to reasoning chain, then answer.
    QCA,
    /// Chain with a center point after each mentioned object.
    QCPointA,
    /// Chain with a box after each mentioned object.
    QCBoxA,
}

impl GCoTMode {
    pub fn task(self) -> TaskKind {
        match self {
            GCoTMode::QA => TaskKind::VqaQa,
            GCoTMode::QCA => TaskKind::VqaQca,
            GCoTMode::QCPointA => TaskKind::VqaQcPointA,
            GCoTMode::QCBoxA => TaskKind::VqaQcBoxA,
        }
    }

    pub fn from_task(task: TaskKind) -> Option<GCoTMode> {
        match task {
            TaskKind::VqaQa => Some(GCoTMode::QA),
            TaskKind::VqaQca => Some(GCoTMode::QCA),
            TaskKind::VqaQcPointA => Some(GCoTMode::QCPointA),
            TaskKind::VqaQcBoxA => Some(GCoTMode::QCBoxA),
            _ => None,
        }
    }
}

fn provenance(ann: &SourceAnnotation, index: usize) -> Provenance {
    ann.origin.clone().unwrap_or_else(|| Provenance {
        source: "<memory>".into(),
        line: index + 1,
    })
}

/// Inserts `" " + serialized geometry` right after each mention.
fn with_coordinates(text: &str, mentions: &[(usize, usize, Geometry)], prec: Precision) -> String {
    let mut out = String::with_capacity(text.len() + mentions.len() * 32);
    let mut last = 0;
    for (_, end, g) in mentions {
        out.push_str(&text[last..*end]);
        out.push(' ');
        out.push_str(&g.serialize(prec));
        last = *end;
    }
    out.push_str(&text[last..]);
    out
}

fn normalize_mentions(mentions: &[Mention], size: ImageSize) -> Result<Vec<(usize, usize, Geometry)>, DatasetError> {
    mentions
        .iter()
        .map(|m| Ok((m.start, m.end, m.region.normalize(size)?)))
        .collect()
}

fn final_answer(answer: &str) -> String {
    let answer = answer.trim();
    if answer.ends_with(['.', '!', '?']) {
        format!("{ANSWER_MARKER} {answer}")
    } else {
        format!("{ANSWER_MARKER} {answer}.")
    }
}

/// Most frequent answer; ties go to the earliest.
fn majority_answer(answers: &[String]) -> &str {
    let mut best: Option<(&str, usize)> = None;
    for a in answers {
        let a = a.trim();
        let n = answers.iter().filter(|b| b.trim() == a).count();
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((a, n));
        }
    }
    best.map(|(a, _)| a).unwrap_or_default()
}

fn gcot_assistant(
    ann: &SourceAnnotation,
    mode: GCoTMode,
    prec: Precision,
    prov: &Provenance,
) -> Result<String, DatasetError> {
    let Payload::CotQa { chain, objects, answer, .. } = &ann.payload else {
        return Err(DatasetError::IncompatibleKind {
            task: mode.task(),
            kind: ann.kind(),
        });
    };
    let chain = match mode {
        GCoTMode::QA => return Ok(final_answer(answer)),
        GCoTMode::QCA => chain.clone(),
        GCoTMode::QCPointA | GCoTMode::QCBoxA => {
            let mut mentions = Vec::with_capacity(objects.len());
            for (i, o) in objects.iter().enumerate() {
                let missing = |needed| DatasetError::MissingGeometry {
                    provenance: prov.clone(),
                    object: i,
                    needed,
                };
                let g = if mode == GCoTMode::QCBoxA {
                    let b = o.bbox.ok_or_else(|| missing("box"))?;
                    Geometry::Box(normalize_pixel_box(b, ann.size)?)
                } else if let Some(p) = o.point {
                    super::PixelGeometry::Point(p).normalize(ann.size)?
                } else {
                    let b = o.bbox.ok_or_else(|| missing("point"))?;
                    Geometry::Point(normalize_pixel_box(b, ann.size)?.center())
                };
                mentions.push((o.start, o.end, g));
            }
            with_coordinates(chain, &mentions, prec)
        }
    };
    Ok(format!("{} {}", chain.trim(), final_answer(answer)))
}

fn build_one(
    ann: &SourceAnnotation,
    index: usize,
    task: TaskKind,
    set: &TemplateSet,
    prec: Precision,
    base_seed: u64,
) -> Result<InstructionRecord, DatasetError> {
    let prov = provenance(ann, index);
    let template = set.sample(seed::derive(base_seed, index as u64));
    let size = ann.size;
    let image = Bindings::with_image();
    let ask = |b: Bindings| instantiate(template, &b);

    let exchanges: Vec<(String, String)> = match (&ann.payload, task) {
        (Payload::ReferringExpression { expression, bbox }, TaskKind::Rec) => {
            let b = normalize_pixel_box(*bbox, size)?;
            vec![(ask(image.with(Placeholder::Expr, expression.trim()))?, serialize_box(b, prec))]
        }
        (Payload::ReferringExpression { expression, bbox }, TaskKind::Reg) => {
            let b = normalize_pixel_box(*bbox, size)?;
            vec![(
                ask(image.with(Placeholder::Objs, serialize_box(b, prec)))?,
                expression.trim().to_string(),
            )]
        }
        (Payload::RegionCaption { caption, bbox }, TaskKind::GroundingCaption) => {
            let b = normalize_pixel_box(*bbox, size)?;
            vec![(
                ask(image.with(Placeholder::Objs, serialize_box(b, prec)))?,
                caption.trim().to_string(),
            )]
        }
        (Payload::EntityCaption { caption, entities }, TaskKind::SpottingCaption) => {
            let mentions = normalize_mentions(entities, size)?;
            vec![(ask(image)?, with_coordinates(caption, &mentions, prec))]
        }
        (Payload::PointQa { question, answer, region }, TaskKind::PointQA) => {
            let g = region.normalize(size)?;
            vec![(
                ask(image
                    .with(Placeholder::Objs, g.serialize(prec))
                    .with(Placeholder::Question, question.trim()))?,
                answer.trim().to_string(),
            )]
        }
        (Payload::McBoxQa { question, options, correct }, TaskKind::PointQaV7w) => {
            let boxes = options
                .iter()
                .map(|o| normalize_pixel_box(*o, size))
                .collect::<Result<Vec<_>, _>>()?;
            let listed: Vec<String> = boxes.iter().map(|b| serialize_box(*b, prec)).collect();
            vec![(
                ask(image
                    .with(Placeholder::Objs, listed.join(", "))
                    .with(Placeholder::Question, question.trim()))?,
                serialize_box(boxes[*correct], prec),
            )]
        }
        (Payload::CotQa { question, .. }, t) if GCoTMode::from_task(t).is_some() => {
            let mode = GCoTMode::from_task(t).unwrap();
            vec![(
                ask(image.with(Placeholder::Question, question.trim()))?,
                gcot_assistant(ann, mode, prec, &prov)?,
            )]
        }
        (Payload::Caption { caption }, TaskKind::Captioning) => vec![(ask(image)?, caption.trim().to_string())],
        (Payload::Vqa { question, answers }, TaskKind::VqaQa) => vec![(
            ask(image.with(Placeholder::Question, question.trim()))?,
            majority_answer(answers).to_string(),
        )],
        (Payload::Dialogue { exchanges }, TaskKind::Rd) => {
            let mut out = Vec::with_capacity(exchanges.len());
            for (i, ex) in exchanges.iter().enumerate() {
                let q = with_coordinates(&ex.question, &normalize_mentions(&ex.question_entities, size)?, prec);
                let a = with_coordinates(&ex.answer, &normalize_mentions(&ex.answer_entities, size)?, prec);
                let q = if i == 0 {
                    ask(image.clone().with(Placeholder::Question, q.trim()))?
                } else {
                    q
                };
                out.push((q, a));
            }
            out
        }
        (Payload::Detection { class_name, bbox }, TaskKind::Chessboard) => {
            let b = normalize_pixel_box(*bbox, size)?;
            let quadrant = assign_quadrant(b, 0.0);
            if quadrant == Quadrant::Ambiguous {
                return Err(DatasetError::InvalidAnnotation {
                    provenance: prov,
                    message: "box is not inside a single quadrant".into(),
                });
            }
            vec![(
                ask(image.with(Placeholder::Expr, class_name.trim()))?,
                quadrant.option_label().to_string(),
            )]
        }
        _ => {
            return Err(DatasetError::IncompatibleKind { task, kind: ann.kind() });
        }
    };

    let turns: Vec<Turn> = exchanges
        .into_iter()
        .flat_map(|(q, a)| {
            [
                Turn { speaker: Speaker::User, text: q },
                Turn { speaker: Speaker::Assistant, text: a },
            ]
        })
        .collect();
    let record = InstructionRecord {
        image: ann.image.clone(),
        task,
        regions: regions_for_turns(&turns),
        turns,
        stage_tag: if task == TaskKind::Rd { StageTag::Stage2 } else { StageTag::Stage1 },
        provenance: prov.clone(),
    };
    validate_record(&record).map_err(|message| DatasetError::InvalidRecord { provenance: prov, message })?;
    Ok(record)
}

fn check_kinds(annotations: &[SourceAnnotation], task: TaskKind, allowed: &[AnnotationKind]) -> Result<(), DatasetError> {
    match annotations.iter().find(|a| !allowed.contains(&a.kind()) || !a.kind().tasks().contains(&task)) {
        Some(a) => Err(DatasetError::IncompatibleKind { task, kind: a.kind() }),
        None => Ok(()),
    }
}

/// Builds one record per annotation. Templates are drawn from a per-record
/// seed derived from `seed` and the annotation's index, so the output does
/// not depend on thread scheduling.
pub fn build_records(
    annotations: &[SourceAnnotation],
    task: TaskKind,
    registry: &TemplateRegistry,
    prec: Precision,
    seed: u64,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    check_kinds(annotations, task, &AnnotationKind::ALL)?;
    let set = registry.get(task)?;
    par::try_map(annotations, |i, ann| build_one(ann, i, task, &set, prec, seed))
}

/// Builds question-answering records from `cot_qa` annotations in the given
/// answer format.
pub fn build_gcot_records(
    annotations: &[SourceAnnotation],
    mode: GCoTMode,
    registry: &TemplateRegistry,
    prec: Precision,
    seed: u64,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    let task = mode.task();
    check_kinds(annotations, task, &[AnnotationKind::CotQa])?;
    let set = registry.get(task)?;
    par::try_map(annotations, |i, ann| build_one(ann, i, task, &set, prec, seed))
}
