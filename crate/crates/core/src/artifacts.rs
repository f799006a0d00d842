//! Stage artifact files: JSON-lines records behind a manifest header line.
//!
//! Every pipeline stage writes its outputs as one JSON object per line, with
//! the first line holding a manifest (kind, config hash, seed, code version).
//! The evaluate stage refuses to mix artifacts whose config hashes differ
//! unless explicitly overridden.

use crate::alignment::AlignmentAssignment;
use crate::eval::EvaluationSelection;
use crate::retrieval::ReferenceCaptionSet;
use crate::summarizer::SummaryOutput;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("cannot access artifact {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact {path} is missing its manifest header")]
    MissingManifest { path: String },
    #[error("malformed artifact record at {path}:{line}: {message}")]
    MalformedRecord { path: String, line: usize, message: String },
    #[error("artifact {path} has kind '{found}', expected '{expected}'")]
    KindMismatch { path: String, expected: String, found: String },
}

/// First line of every artifact file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

impl ArtifactManifest {
    pub fn new(kind: &str, config_hash: &str, seed: u64) -> Self {
        ArtifactManifest {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Per-document alignment output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub doc_id: String,
    pub alignments: Vec<AlignmentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub image: usize,
    pub sentence: usize,
    pub caption: Vec<String>,
    pub weight: f64,
}

impl AlignmentRecord {
    pub fn from_assignment(a: &AlignmentAssignment) -> Self {
        AlignmentRecord {
            doc_id: a.doc_id.clone(),
            alignments: (0..a.sentence_of_image.len())
                .map(|j| AlignmentEntry {
                    image: j,
                    sentence: a.sentence_of_image[j],
                    caption: a.pseudo_captions[j].clone(),
                    weight: a.weight_of_image[j],
                })
                .collect(),
        }
    }

    pub fn pseudo_captions(&self) -> Vec<Vec<String>> {
        self.alignments.iter().map(|e| e.caption.clone()).collect()
    }

    pub fn into_assignment(self) -> AlignmentAssignment {
        AlignmentAssignment {
            doc_id: self.doc_id,
            sentence_of_image: self.alignments.iter().map(|e| e.sentence).collect(),
            weight_of_image: self.alignments.iter().map(|e| e.weight).collect(),
            pseudo_captions: self.alignments.into_iter().map(|e| e.caption).collect(),
        }
    }
}

/// Per-document reference-caption labels record (supervision stage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub doc_id: String,
    pub references: Vec<ReferenceEntry>,
    /// Binary selection labels over the document sentences.
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub image: usize,
    pub summary_sentence: usize,
    pub score: f64,
    pub tokens: Vec<String>,
}

impl LabelRecord {
    pub fn reference_caption_set(&self) -> ReferenceCaptionSet {
        self.references
            .iter()
            .map(|r| crate::retrieval::ReferenceCaption {
                source_index: r.summary_sentence,
                score: r.score,
                tokens: r.tokens.clone(),
            })
            .collect()
    }
}

/// Per-document generated summary record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub token_ids: Vec<usize>,
    pub score: f64,
    pub reached_max_len: bool,
}

impl SummaryRecord {
    pub fn from_output(doc_id: &str, out: &SummaryOutput) -> Self {
        SummaryRecord {
            doc_id: doc_id.to_string(),
            sentences: out.sentences.clone(),
            token_ids: out.token_ids.clone(),
            score: out.score,
            reached_max_len: out.reached_max_len,
        }
    }

    pub fn into_output(self) -> SummaryOutput {
        SummaryOutput {
            sentences: self.sentences,
            token_ids: self.token_ids,
            score: self.score,
            reached_max_len: self.reached_max_len,
        }
    }
}

/// Per-document selection record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub doc_id: String,
    pub selection: EvaluationSelection,
}

/// Writes a manifest followed by one record per line.
pub fn write_artifact<T: Serialize>(
    path: &Path,
    manifest: &ArtifactManifest,
    records: &[T],
) -> Result<(), ArtifactError> {
    let io_err = |source| ArtifactError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_string(manifest).expect("manifest serialization cannot fail");
    writeln!(w, "{header}").map_err(io_err)?;
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a manifest header plus records, verifying the artifact kind.
pub fn read_artifact<T: DeserializeOwned>(
    path: &Path,
    expected_kind: &str,
) -> Result<(ArtifactManifest, Vec<T>), ArtifactError> {
    let io_err = |source| ArtifactError::Io { path: path.display().to_string(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| ArtifactError::MissingManifest { path: path.display().to_string() })?
        .map_err(io_err)?;
    let manifest: ArtifactManifest = serde_json::from_str(&header).map_err(|e| {
        ArtifactError::MalformedRecord {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        }
    })?;
    if manifest.kind != expected_kind {
        return Err(ArtifactError::KindMismatch {
            path: path.display().to_string(),
            expected: expected_kind.to_string(),
            found: manifest.kind,
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ArtifactError::MalformedRecord {
            path: path.display().to_string(),
            line: idx + 2,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((manifest, records))
}
