use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, InstructionRecord, Speaker, Turn, TurnRegion};
use crate::coord::parse_regions;
use crate::jsonl::{self, JsonlError};
use crate::templates::Placeholder;

pub const RECORDS_FORMAT: &str = "refdial.instruction_records";
pub const RECORDS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    format: String,
    version: u32,
}

/// Coordinate spans of every turn, in turn then byte order.
pub fn regions_for_turns(turns: &[Turn]) -> Vec<TurnRegion> {
    turns
        .iter()
        .enumerate()
        .flat_map(|(turn, t)| parse_regions(&t.text).spans.into_iter().map(move |span| TurnRegion { turn, span }))
        .collect()
}

/// Checks speaker alternation, the image marker, leftover placeholders, and
/// that `regions` lists exactly the coordinate spans found in the turns.
pub fn validate_record(record: &InstructionRecord) -> Result<(), String> {
    if record.turns.is_empty() {
        return Err("record has no turns".into());
    }
    for (i, t) in record.turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Speaker::User } else { Speaker::Assistant };
        if t.speaker != expected {
            return Err(format!("turn {i} should be spoken by {expected:?}"));
        }
        for p in [Placeholder::Expr, Placeholder::Objs, Placeholder::Question] {
            if t.text.contains(p.token()) {
                return Err(format!("turn {i} has residual placeholder {p}"));
            }
        }
        let scan = parse_regions(&t.text);
        if let Some(m) = scan.malformed.first() {
            return Err(format!("turn {i} has malformed coordinates {}: {}", m.raw_text, m.reason));
        }
    }
    let images = record.turns[0].text.matches(Placeholder::Image.token()).count();
    if images != 1 {
        return Err(format!("first user turn has {images} image markers, expected 1"));
    }
    let expected = regions_for_turns(&record.turns);
    if expected != record.regions {
        return Err(format!(
            "regions list {} spans but the turns contain {}",
            record.regions.len(),
            expected.len()
        ));
    }
    for r in &record.regions {
        let turn = &record.turns[r.turn].text;
        if turn.get(r.span.byte_start..r.span.byte_end) != Some(r.span.raw_text.as_str()) {
            return Err(format!("region at {}..{} does not match its turn text", r.span.byte_start, r.span.byte_end));
        }
    }
    Ok(())
}

/// Writes a header line followed by one record per line.
pub fn write_records(path: &Path, records: &[InstructionRecord]) -> Result<(), DatasetError> {
    let io = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        format: RECORDS_FORMAT.into(),
        version: RECORDS_VERSION,
    };
    writeln!(w, "{}", jsonl::to_line(&header)).map_err(io)?;
    for r in records {
        writeln!(w, "{}", jsonl::to_line(r)).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>, DatasetError> {
    let lines = jsonl::read_lines(path)?;
    let mut iter = lines.into_iter();
    let header_ok = iter
        .next()
        .and_then(|(_, text)| serde_json::from_str::<Header>(&text).ok())
        .is_some_and(|h| h.format == RECORDS_FORMAT && h.version == RECORDS_VERSION);
    if !header_ok {
        return Err(DatasetError::CorruptRecord {
            line: 1,
            message: format!("missing {RECORDS_FORMAT} v{RECORDS_VERSION} header"),
        });
    }
    iter.map(|(line, text)| {
        serde_json::from_str(&text).map_err(|e| DatasetError::CorruptRecord {
            line,
            message: e.to_string(),
        })
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::Precision;
    use crate::dataset::{build_records, ImageKey, Payload, Provenance, SourceAnnotation, StageTag};
    use crate::templates::{TaskKind, TemplateRegistry};
    use crate::ImageSize;

    fn sample_records(n: usize) -> Vec<InstructionRecord> {
        let anns: Vec<SourceAnnotation> = (0..n)
            .map(|i| {
                SourceAnnotation::new(
                    ImageKey::new("refcoco", i.to_string()),
                    ImageSize::new(640, 480).unwrap(),
                    Payload::ReferringExpression {
                        expression: format!("object number {i}"),
                        bbox: [(i % 300) as i64, 7, 333, 479],
                    },
                )
            })
            .collect();
        build_records(&anns, TaskKind::Rec, &TemplateRegistry::with_starter_sets(), Precision::default(), 5).unwrap()
    }

    #[test]
    fn round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let recs = sample_records(50);
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }

    #[test]
    fn empty_list_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_records(&path, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains(RECORDS_FORMAT));
        assert!(read_records(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_last_line_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_records(&path, &sample_records(3)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 20]).unwrap();
        assert!(matches!(read_records(&path), Err(DatasetError::CorruptRecord { line: 4, .. })));
    }

    #[test]
    fn validation_rejects_bad_records() {
        let good = InstructionRecord {
            image: ImageKey::new("c", "1"),
            task: TaskKind::Captioning,
            turns: vec![
                Turn { speaker: Speaker::User, text: "Describe <image>.".into() },
                Turn { speaker: Speaker::Assistant, text: "A cat.".into() },
            ],
            regions: vec![],
            stage_tag: StageTag::Stage1,
            provenance: Provenance { source: "x".into(), line: 1 },
        };
        validate_record(&good).unwrap();

        let mut r = good.clone();
        r.turns[1].speaker = Speaker::User;
        assert!(validate_record(&r).unwrap_err().contains("Assistant"));

        let mut r = good.clone();
        r.turns[0].text = "Describe <image> for <expr>.".into();
        assert!(validate_record(&r).unwrap_err().contains("<expr>"));

        let mut r = good.clone();
        r.turns[1].text = "A cat [0.1, 0.2].".into();
        assert!(validate_record(&r).unwrap_err().contains("regions"));

        let mut r = good.clone();
        r.turns[0].text = "Describe it.".into();
        assert!(validate_record(&r).unwrap_err().contains("image markers"));

        let mut r = good;
        r.turns[1].text = "A cat [1.1, 0.2].".into();
        assert!(validate_record(&r).unwrap_err().contains("malformed"));
    }
}
