//! Line-delimited JSON files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("encoding record: {0}")]
    Encode(#[source] serde_json::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io { path: path.to_owned(), source }
}

/// Reads every non-blank line of `path` as one record.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| JsonlError::Malformed {
            path: path.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A file opened for writing before any record is produced, so an
/// unwritable path fails early.
pub struct Writer {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Writer {
    pub fn create(path: &Path) -> Result<Self, JsonlError> {
        Self::open(path, false)
    }

    pub fn append(path: &Path) -> Result<Self, JsonlError> {
        Self::open(path, true)
    }

    fn open(path: &Path, append: bool) -> Result<Self, JsonlError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(io(path))?;
        Ok(Self { path: path.to_owned(), out: BufWriter::new(file) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), JsonlError> {
        let line = serde_json::to_string(record).map_err(JsonlError::Encode)?;
        writeln!(self.out, "{line}").map_err(io(&self.path))
    }

    pub fn finish(mut self) -> Result<(), JsonlError> {
        self.out.flush().map_err(io(&self.path))
    }
}

pub fn write<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let mut w = Writer::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}
