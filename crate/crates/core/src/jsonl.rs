//! Line-delimited JSON helpers shared by every file format in the toolkit.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl JsonlError {
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Parse { line, .. } => Some(*line),
            JsonlError::Io { .. } => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Non-empty lines of a file paired with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, JsonlError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Parses every non-empty line as `T`, failing on the first bad line.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| JsonlError::Parse {
                path: path.display().to_string(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("toolkit types always serialize")
}

pub fn write<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        writeln!(w, "{}", to_line(item)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Appends lines to a file, creating it if needed.
pub fn append<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        writeln!(w, "{}", to_line(item)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
