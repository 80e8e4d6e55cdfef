use std::path::Path;

use serde::Serialize;

use super::{AnnotationKind, DatasetError, Provenance, SourceAnnotation};
use crate::{jsonl, par};

/// A row that parsed but was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ImportOutcome {
    pub annotations: Vec<SourceAnnotation>,
    pub rejected: Vec<RowDiagnostic>,
    pub warnings: Vec<String>,
}

enum Row {
    Valid(Box<SourceAnnotation>),
    Rejected(RowDiagnostic),
}

/// Reads a canonical annotation file whose rows are all of kind `expected`.
///
/// Rows that do not match the schema (or carry another kind) abort the import
/// with [`DatasetError::SchemaMismatch`]. Rows whose geometry or fields fail
/// validation are dropped and reported with their line numbers.
pub fn import_source(path: &Path, expected: AnnotationKind) -> Result<ImportOutcome, DatasetError> {
    let lines = jsonl::read_lines(path)?;
    let source = path.display().to_string();
    let rows = par::try_map(&lines, |_, (line, text)| {
        let mut ann: SourceAnnotation = serde_json::from_str(text).map_err(|e| DatasetError::SchemaMismatch {
            line: *line,
            message: e.to_string(),
        })?;
        if ann.kind() != expected {
            return Err(DatasetError::SchemaMismatch {
                line: *line,
                message: format!("expected kind {expected}, found {}", ann.kind()),
            });
        }
        ann.origin = Some(Provenance {
            source: source.clone(),
            line: *line,
        });
        Ok(match ann.validate() {
            Ok(()) => Row::Valid(Box::new(ann)),
            Err(message) => Row::Rejected(RowDiagnostic { line: *line, message }),
        })
    })?;

    let mut out = ImportOutcome::default();
    for row in rows {
        match row {
            Row::Valid(a) => out.annotations.push(*a),
            Row::Rejected(d) => {
                log::warn!("{source}:{}: rejected row: {}", d.line, d.message);
                out.rejected.push(d);
            }
        }
    }
    if lines.is_empty() {
        let w = format!("{source}: no annotations found");
        log::warn!("{w}");
        out.warnings.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const ROW_OK: &str = r#"{"image":{"collection":"refcoco","image_id":"1"},"size":{"width":640,"height":480},"kind":"referring_expression","expression":"left dog","box":[10,20,300,400]}"#;
    const ROW_OK2: &str = r#"{"image":{"collection":"refcoco","image_id":"2"},"size":{"width":640,"height":480},"kind":"referring_expression","expression":"man in red","box":[0,0,640,480]}"#;
    const ROW_WIDE: &str = r#"{"image":{"collection":"refcoco","image_id":"3"},"size":{"width":640,"height":480},"kind":"referring_expression","expression":"sky","box":[0,0,700,100]}"#;

    #[test]
    fn imports_valid_rows() {
        let f = write_file(&[ROW_OK, ROW_OK2]);
        let out = import_source(f.path(), AnnotationKind::ReferringExpression).unwrap();
        assert_eq!(out.annotations.len(), 2);
        assert!(out.rejected.is_empty());
        assert_eq!(out.annotations[1].origin.as_ref().unwrap().line, 2);
    }

    #[test]
    fn out_of_bounds_row_is_rejected_with_line() {
        let f = write_file(&[ROW_OK, ROW_WIDE]);
        let out = import_source(f.path(), AnnotationKind::ReferringExpression).unwrap();
        assert_eq!(out.annotations.len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 2);
        assert!(out.rejected[0].message.contains("exceeds"));
    }

    #[test]
    fn empty_file_warns() {
        let f = write_file(&[]);
        let out = import_source(f.path(), AnnotationKind::Caption).unwrap();
        assert!(out.annotations.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn wrong_kind_or_shape_is_schema_mismatch() {
        let f = write_file(&[ROW_OK]);
        assert!(matches!(
            import_source(f.path(), AnnotationKind::Caption),
            Err(DatasetError::SchemaMismatch { line: 1, .. })
        ));
        let g = write_file(&[ROW_OK, r#"{"image":"nope"}"#]);
        assert!(matches!(
            import_source(g.path(), AnnotationKind::ReferringExpression),
            Err(DatasetError::SchemaMismatch { line: 2, .. })
        ));
    }
}
