//! Append-only JSONL session log.

use crate::session::Sliders;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Created { id: String, seq: u64, age: f64 },
    Questionnaire { id: String, responses: Vec<i64> },
    Save { id: String, step: usize },
    Emotion {
        id: String,
        step: usize,
        sliders: Sliders,
        latency_ms: Option<f64>,
    },
}

impl Record {
    pub fn session_id(&self) -> &str {
        match self {
            Record::Created { id, .. }
            | Record::Questionnaire { id, .. }
            | Record::Save { id, .. }
            | Record::Emotion { id, .. } => id,
        }
    }
}

/// Without a path, records are kept only in memory.
#[derive(Debug)]
pub struct Store {
    path: Option<PathBuf>,
    file: Option<File>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Store {
    pub fn memory() -> Self {
        Store { path: None, file: None }
    }

    /// Opens (creating if needed) the log and returns the records already in it.
    /// A truncated final line, left by a crash mid-write, is dropped.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Record>), StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(io_err(&path))?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Record>(line) {
                    Ok(r) => records.push(r),
                    Err(e) if i + 1 == last => {
                        log::warn!("{}:{}: dropping incomplete record: {e}", path.display(), i + 1)
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok((
            Store {
                path: Some(path),
                file: Some(file),
            },
            records,
        ))
    }

    /// Each record is written with a single `write_all` and synced.
    pub fn append(&mut self, record: &Record) -> Result<(), StoreError> {
        let (Some(file), Some(path)) = (self.file.as_mut(), self.path.as_ref()) else {
            return Ok(());
        };
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io_err(path))?;
        file.sync_data().map_err(io_err(path))
    }
}
