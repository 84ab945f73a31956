//! Dataset records and JSON Lines helpers.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::ComplexQuestion;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_doc_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answerable: Option<bool>,
}

impl DatasetRecord {
    pub fn question(&self) -> ComplexQuestion {
        ComplexQuestion::new(self.id.clone(), self.question.clone())
    }

    /// Gold ids when present and non-empty.
    pub fn gold_ids(&self) -> Option<&[String]> {
        self.gold_doc_ids.as_deref().filter(|g| !g.is_empty())
    }
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Read one `T` per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(std::fs::File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optional_fields_roundtrip() {
        let line = r#"{"id":"q1","question":"Q?","answers":["a"]}"#;
        let rec: DatasetRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.gold_doc_ids, None);
        assert_eq!(rec.answerable, None);
        assert_eq!(serde_json::to_string(&rec).unwrap(), line);
        let rec = DatasetRecord {
            gold_doc_ids: Some(vec![]),
            ..rec
        };
        assert!(rec.gold_ids().is_none());
    }

    #[test]
    fn parse_error_carries_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"id\":\"a\",\"question\":\"q\",\"answers\":[]}\n\n{oops}\n").unwrap();
        let err = read_jsonl::<DatasetRecord>(&p).unwrap_err();
        assert!(matches!(err, JsonlError::Parse { line: 3, .. }));
    }
}
