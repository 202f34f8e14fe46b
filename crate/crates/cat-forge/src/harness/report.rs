//! Run persistence: an append-only JSONL event stream plus one summary JSON
//! per run. Summaries contain no wall-clock data, so runs with the same
//! config and seed produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One training-step event for one question. Carries enough to replay the
/// reward computation from the log alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub step: usize,
    pub question_id: String,
    pub rollout_texts: Vec<String>,
    pub rollout_hashes: Vec<String>,
    pub reference_text: String,
    pub reference_hash: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub teacher_correct: bool,
}

impl RunLogRecord {
    pub fn hash_texts(texts: &[String]) -> Vec<String> {
        texts.iter().map(|t| sha256_hex(t.as_bytes())).collect()
    }
}

pub struct JsonlWriter {
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(JsonlWriter { inner: BufWriter::new(File::create(path)?) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, record)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Serialize a summary to pretty JSON and return its content hash.
pub fn write_summary<T: Serialize>(path: &Path, summary: &T) -> Result<String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let bytes = serde_json::to_vec_pretty(summary)?;
    std::fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_appends_one_object_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut w = JsonlWriter::create(&path).unwrap();
        w.write(&serde_json::json!({"a": 1})).unwrap();
        w.write(&serde_json::json!({"b": 2})).unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(serde_json::from_str::<serde_json::Value>(lines[0]).is_ok());
    }

    #[test]
    fn summary_hash_is_content_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_summary(&dir.path().join("a.json"), &serde_json::json!({"x": 1})).unwrap();
        let b = write_summary(&dir.path().join("b.json"), &serde_json::json!({"x": 1})).unwrap();
        assert_eq!(a, b);
    }
}
