//! Corpus data model, validation, file ingestion and synthetic generation.

mod io;
mod synthetic;

pub use io::{load_corpus, save_corpus, CorpusLoad};
pub use synthetic::{generate_synthetic, generate_synthetic_with_plants, PlantMap};

use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Which portion of the corpus a set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train|valid|test)")),
        }
    }
}

/// One text document with its image collection and references.
///
/// Image pixels are out of scope; each image is represented by its
/// precomputed feature vector of length F.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDocument {
    pub doc_id: String,
    /// Tokenized document sentences, in order (length m).
    pub sentences: Vec<Vec<String>>,
    /// One feature vector per image, all of identical length F (length n).
    pub image_features: Vec<Vec<f64>>,
    /// Tokenized reference summary sentences.
    pub golden_summary: Vec<Vec<String>>,
    /// Original captions, evaluation only; exactly n entries when present.
    pub golden_captions: Option<Vec<Vec<String>>>,
    /// Reference salient image indices, test only.
    pub salient_image_refs: Option<BTreeSet<usize>>,
}

impl MultimodalDocument {
    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn image_count(&self) -> usize {
        self.image_features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.image_features.first().map_or(0, |f| f.len())
    }
}

/// A named invariant violation; violations are values, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every documented invariant; an empty result means the document is
/// valid.
pub fn validate_document(doc: &MultimodalDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.sentences.is_empty() {
        out.push(Violation { field: "sentences", rule: "document must contain at least one sentence".into() });
    }
    for (i, s) in doc.sentences.iter().enumerate() {
        if s.is_empty() {
            out.push(Violation {
                field: "sentences",
                rule: format!("sentence {i} is empty after tokenization"),
            });
        }
    }
    if doc.image_features.is_empty() {
        out.push(Violation { field: "image_features", rule: "document must contain at least one image".into() });
    }
    if let Some(first) = doc.image_features.first() {
        let f = first.len();
        for (j, feat) in doc.image_features.iter().enumerate() {
            if feat.len() != f {
                out.push(Violation {
                    field: "image_features",
                    rule: format!(
                        "feature vector {j} has length {} but vector 0 has length {f}",
                        feat.len()
                    ),
                });
            }
            if feat.iter().any(|v| !v.is_finite()) {
                out.push(Violation {
                    field: "image_features",
                    rule: format!("feature vector {j} contains a non-finite value"),
                });
            }
        }
    }
    if let Some(caps) = &doc.golden_captions {
        if caps.len() != doc.image_features.len() {
            out.push(Violation {
                field: "golden_captions",
                rule: format!(
                    "expected {} caption entries (one per image), got {}",
                    doc.image_features.len(),
                    caps.len()
                ),
            });
        }
    }
    if let Some(refs) = &doc.salient_image_refs {
        for &r in refs {
            if r >= doc.image_features.len() {
                out.push(Violation {
                    field: "salient_image_refs",
                    rule: format!("image index {r} out of range (n = {})", doc.image_features.len()),
                });
            }
        }
    }
    out
}

/// A validated collection of documents with a split tag.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentSet {
    pub documents: Vec<MultimodalDocument>,
    pub split: Split,
}

impl DocumentSet {
    /// Enforces doc_id uniqueness; per-document validation is the loader's
    /// and generator's job.
    pub fn new(documents: Vec<MultimodalDocument>, split: Split) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for d in &documents {
            if !seen.insert(d.doc_id.clone()) {
                return Err(CorpusError::DuplicateDocId { doc_id: d.doc_id.clone() });
            }
        }
        Ok(DocumentSet { documents, split })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&MultimodalDocument> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

/// Configuration for the planted-alignment synthetic corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub num_docs: usize,
    pub vocab_size: usize,
    /// Inclusive range of total sentences per document (raised to the image
    /// count when necessary so every image gets a planted sentence).
    pub sentences_per_doc: (usize, usize),
    /// Inclusive range of images per document.
    pub images_per_doc: (usize, usize),
    pub feature_dim: usize,
    /// Probability in [0,1] that a planted token is replaced by a random one.
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_docs == 0 {
            out.push("num_docs must be positive".into());
        }
        if self.vocab_size < 20 {
            out.push("vocab_size must be at least 20".into());
        }
        if self.sentences_per_doc.0 == 0 || self.sentences_per_doc.0 > self.sentences_per_doc.1 {
            out.push("sentences_per_doc range is empty".into());
        }
        if self.images_per_doc.0 == 0 || self.images_per_doc.0 > self.images_per_doc.1 {
            out.push("images_per_doc range is empty".into());
        }
        if self.feature_dim < 2 {
            out.push("feature_dim must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            out.push("noise_level must lie in [0, 1]".into());
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("invalid document '{doc_id}' at line {line}: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidDocument { line: usize, doc_id: String, violations: Vec<Violation> },
    #[error("duplicate doc_id '{doc_id}'")]
    DuplicateDocId { doc_id: String },
    #[error("invalid synthetic config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
}
