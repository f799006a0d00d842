//! One-record-per-line corpus files.
//!
//! Each line is a self-describing JSON object; sentences are stored as raw
//! strings and tokenized once at ingestion. See the repository README for the
//! record schema.

use super::{validate_document, CorpusError, DocumentSet, MultimodalDocument, Split};
use crate::text::tokenize;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    sentences: Vec<String>,
    image_features: Vec<Vec<f64>>,
    golden_summary: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    golden_captions: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    salient_image_refs: Option<Vec<usize>>,
}

/// A loaded set plus any non-fatal warnings.
#[derive(Debug)]
pub struct CorpusLoad {
    pub set: DocumentSet,
    pub warnings: Vec<String>,
}

/// Reads and validates a corpus file. Any invalid record aborts the load with
/// a diagnostic naming the line, doc_id and violated fields.
pub fn load_corpus(path: &Path, split: Split) -> Result<CorpusLoad, CorpusError> {
    let file = File::open(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::MalformedRecord { line: line_no, message: e.to_string() })?;
        let doc = MultimodalDocument {
            doc_id: record.doc_id,
            sentences: record.sentences.iter().map(|s| tokenize(s)).collect(),
            image_features: record.image_features,
            golden_summary: record.golden_summary.iter().map(|s| tokenize(s)).collect(),
            golden_captions: record
                .golden_captions
                .map(|caps| caps.iter().map(|s| tokenize(s)).collect()),
            salient_image_refs: record.salient_image_refs.map(|v| v.into_iter().collect()),
        };
        let violations = validate_document(&doc);
        if !violations.is_empty() {
            return Err(CorpusError::InvalidDocument {
                line: line_no,
                doc_id: doc.doc_id,
                violations,
            });
        }
        documents.push(doc);
    }
    if documents.is_empty() {
        warnings.push(format!("corpus file {} contains no records", path.display()));
    }
    Ok(CorpusLoad { set: DocumentSet::new(documents, split)?, warnings })
}

/// Writes a set in the record schema; inverse of [`load_corpus`] on
/// validated sets (tokens contain no whitespace or punctuation, so joining
/// with single spaces round-trips).
pub fn save_corpus(set: &DocumentSet, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let mut w = BufWriter::new(file);
    for doc in &set.documents {
        let record = DocRecord {
            doc_id: doc.doc_id.clone(),
            sentences: doc.sentences.iter().map(|s| s.join(" ")).collect(),
            image_features: doc.image_features.clone(),
            golden_summary: doc.golden_summary.iter().map(|s| s.join(" ")).collect(),
            golden_captions: doc
                .golden_captions
                .as_ref()
                .map(|caps| caps.iter().map(|s| s.join(" ")).collect()),
            salient_image_refs: doc
                .salient_image_refs
                .as_ref()
                .map(|r| r.iter().copied().collect()),
        };
        let json = serde_json::to_string(&record).expect("record serialization cannot fail");
        writeln!(w, "{json}")
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    }
    w.flush().map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};

    fn small_config() -> SyntheticConfig {
        SyntheticConfig {
            num_docs: 4,
            vocab_size: 60,
            sentences_per_doc: (5, 8),
            images_per_doc: (2, 3),
            feature_dim: 8,
            noise_level: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn round_trip_is_identity_on_validated_sets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let set = generate_synthetic(&small_config(), Split::Train).unwrap();
        save_corpus(&set, &path).unwrap();
        let loaded = load_corpus(&path, Split::Train).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.set, set);

        // Saving the loaded set again is byte-identical.
        let path2 = dir.path().join("again.jsonl");
        save_corpus(&loaded.set, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn well_formed_two_document_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.jsonl");
        let mut set = generate_synthetic(&small_config(), Split::Valid).unwrap();
        set.documents.truncate(2);
        save_corpus(&set, &path).unwrap();
        let loaded = load_corpus(&path, Split::Valid).unwrap();
        assert_eq!(loaded.set.len(), 2);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_corpus(Path::new("/nonexistent/nope.jsonl"), Split::Test).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
        assert!(err.to_string().contains("nope.jsonl"));
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"doc_id\": \"x\"\nnot json\n").unwrap();
        let err = load_corpus(&path, Split::Test).unwrap_err();
        match err {
            CorpusError::MalformedRecord { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn caption_count_mismatch_names_doc_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mismatch.jsonl");
        let record = serde_json::json!({
            "doc_id": "doc-7",
            "sentences": ["a b", "c d"],
            "image_features": [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]],
            "golden_summary": ["a b"],
            "golden_captions": ["a b", "c d"],
        });
        std::fs::write(&path, format!("{record}\n")).unwrap();
        let err = load_corpus(&path, Split::Test).unwrap_err();
        match &err {
            CorpusError::InvalidDocument { doc_id, violations, .. } => {
                assert_eq!(doc_id, "doc-7");
                assert_eq!(violations.len(), 1);
                assert_eq!(violations[0].field, "golden_captions");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("doc-7"));
        assert!(err.to_string().contains("golden_captions"));
    }

    #[test]
    fn zero_image_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noimg.jsonl");
        let record = serde_json::json!({
            "doc_id": "doc-0",
            "sentences": ["a b"],
            "image_features": [],
            "golden_summary": ["a"],
        });
        std::fs::write(&path, format!("{record}\n")).unwrap();
        let err = load_corpus(&path, Split::Test).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidDocument { .. }));
    }

    #[test]
    fn empty_file_yields_empty_set_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let loaded = load_corpus(&path, Split::Test).unwrap();
        assert!(loaded.set.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
    }
}
