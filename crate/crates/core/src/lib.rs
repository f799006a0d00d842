//! Caption-bridged multimodal summarization at desk scale.
//!
//! Pipeline: a synthetic planted-alignment corpus feeds a contrastive
//! cross-modal retrieval model that mines reference captions from golden
//! summaries; those supervise a coarse-to-fine alignment model whose
//! cross-attention matrix is read off by exact bipartite matching to emit one
//! pseudo caption per image; a dual-source summarizer conditions on document
//! and captions; the salient image is the one whose caption best matches the
//! generated summary. Everything is deterministic under a fixed seed.

pub mod alignment;
pub mod artifacts;
pub mod checkpoint;
pub mod corpus;
pub mod encoders;
pub mod eval;
pub mod gradcheck;
pub mod mat;
pub mod matching;
pub mod nn;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod rouge;
pub mod summarizer;
pub mod text;

pub use corpus::{DocumentSet, MultimodalDocument, Split, SyntheticConfig};
pub use mat::Mat;
