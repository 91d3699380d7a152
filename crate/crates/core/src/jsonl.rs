//! Line-delimited JSON helpers shared by every file format.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("file is empty")]
    Empty,
}

impl JsonlError {
    pub fn invalid(line: usize, message: impl Into<String>) -> Self {
        JsonlError::Invalid {
            line,
            message: message.into(),
        }
    }

    /// 1-based line the error refers to, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Parse { line, .. } | JsonlError::Invalid { line, .. } if *line > 0 => {
                Some(*line)
            }
            _ => None,
        }
    }
}

pub fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Parses each non-blank line as `T`, yielding `(line_number, value)`.
pub fn records<T, R>(r: R) -> impl Iterator<Item = Result<(usize, T), JsonlError>>
where
    T: DeserializeOwned,
    R: BufRead,
{
    r.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        match line {
            Err(e) => Some(Err(JsonlError::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(
                serde_json::from_str::<T>(&l)
                    .map(|v| (line_no, v))
                    .map_err(|e| JsonlError::Parse {
                        line: line_no,
                        message: e.to_string(),
                    }),
            ),
        }
    })
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(path: &std::path::Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = match dir {
        Some(d) => d.join(format!(".{file_name}.tmp")),
        None => std::path::PathBuf::from(format!(".{file_name}.tmp")),
    };
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
