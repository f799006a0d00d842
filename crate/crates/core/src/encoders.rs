//! Pluggable sentence and image encoders.
//!
//! Desk-scale stand-ins for the pretrained backbones: the sentence encoder is
//! a bag of fixed lexicon embeddings followed by one learned dense layer; the
//! image encoder is a learned input projection followed by transformer blocks
//! over the whole image collection, with no position embeddings (image order
//! carries no information, so the map is permutation-equivariant).
//!
//! One [`EncoderStack`] instance is threaded through retrieval and alignment
//! alike; the APIs take the stack as a parameter precisely so that both
//! consumers see the same sentence encoder.

use crate::mat::Mat;
use crate::nn::{EncoderBlock, EncoderBlockCache, Linear, Param};
use crate::rng::{fnv1a64, seeded};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("cannot encode an empty sentence list")]
    EmptySentenceList,
    #[error("cannot encode an empty image collection")]
    EmptyImageCollection,
    #[error("feature width {got} does not match encoder input width {expected}")]
    FeatureWidthMismatch { got: usize, expected: usize },
}

/// Row-per-sentence embedding matrix (m×D).
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbeddings {
    pub matrix: Mat,
}

/// Row-per-image contextual embedding matrix (n×D).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualImageEmbeddings {
    pub matrix: Mat,
}

/// Deterministic token → unit vector table, computed on the fly from a hash
/// of the token text. Stable across runs, platforms and vocabularies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lexicon {
    pub dim: usize,
}

const LEXICON_SALT: u64 = 0x5eed_1e1c_0de5_a17e;

impl Lexicon {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "lexicon dimension must be at least 2");
        Lexicon { dim }
    }

    pub fn embed(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()) ^ LEXICON_SALT);
        let v = Mat::randn(1, self.dim, 1.0, &mut rng);
        let norm = crate::mat::norm(v.row(0)).max(1e-12);
        v.row(0).iter().map(|x| x / norm).collect()
    }

    /// Mean of token embeddings; zero vector for an empty token list.
    pub fn bag_mean(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            for (a, b) in acc.iter_mut().zip(self.embed(t)) {
                *a += b;
            }
        }
        for a in &mut acc {
            *a /= tokens.len() as f64;
        }
        acc
    }
}

/// Bag-of-lexicon mean followed by one learned dense layer.
#[derive(Debug, Clone)]
pub struct SentenceEncoder {
    pub lexicon: Lexicon,
    pub dense: Linear,
}

impl SentenceEncoder {
    /// The dense layer starts at the rectangular identity (plus `jitter`
    /// noise), so with `model_dim >= feature_dim` and zero jitter the encoder
    /// preserves lexicon-space cosine exactly.
    pub fn new(feature_dim: usize, model_dim: usize, jitter: f64, seed: u64) -> Self {
        let mut rng = seeded(seed, "sentence-encoder");
        SentenceEncoder {
            lexicon: Lexicon::new(feature_dim),
            dense: Linear::near_identity(feature_dim, model_dim, jitter, true, &mut rng),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.dense.out_dim()
    }

    pub fn encode(&self, sentences: &[Vec<String>]) -> Result<SentenceEmbeddings, EncoderError> {
        Ok(self.encode_cached(sentences)?.0)
    }

    /// Also returns the bag means needed by the backward pass.
    pub fn encode_cached(
        &self,
        sentences: &[Vec<String>],
    ) -> Result<(SentenceEmbeddings, Mat), EncoderError> {
        if sentences.is_empty() {
            return Err(EncoderError::EmptySentenceList);
        }
        let means = Mat::from_rows(
            &sentences.iter().map(|s| self.lexicon.bag_mean(s)).collect::<Vec<_>>(),
        );
        let matrix = self.dense.forward(&means);
        Ok((SentenceEmbeddings { matrix }, means))
    }

    /// Accumulates dense-layer gradients given the cached bag means.
    pub fn backward(&mut self, means: &Mat, dmatrix: &Mat) {
        self.dense.backward(means, dmatrix);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.dense.params_mut()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageEncoderConfig {
    pub feature_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub seed: u64,
}

impl ImageEncoderConfig {
    pub fn new(feature_dim: usize, model_dim: usize, seed: u64) -> Self {
        ImageEncoderConfig {
            feature_dim,
            model_dim,
            layers: 2,
            heads: 2,
            ff_hidden: 2 * model_dim,
            seed,
        }
    }
}

/// Input projection F→D plus L transformer encoder blocks, no position
/// embeddings.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub input: Linear,
    pub blocks: Vec<EncoderBlock>,
    pub config: ImageEncoderConfig,
}

pub struct ImageEncoderCache {
    features: Mat,
    projected: Mat,
    block_caches: Vec<EncoderBlockCache>,
}

impl ImageEncoder {
    pub fn new(config: ImageEncoderConfig) -> Self {
        assert!(config.layers >= 1, "image encoder needs at least one block");
        let mut rng = seeded(config.seed, "image-encoder");
        let input =
            Linear::near_identity(config.feature_dim, config.model_dim, 0.02, true, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| {
                let mut block =
                    EncoderBlock::new(config.model_dim, config.heads, config.ff_hidden, &mut rng);
                // Residual-dominant start: sublayer outputs begin small so an
                // untrained stack stays close to a per-image pass-through and
                // keeps the input geometry readable downstream.
                block.attn.wo.weight.value = block.attn.wo.weight.value.scale(0.1);
                block.ff.lin2.weight.value = block.ff.lin2.weight.value.scale(0.1);
                block
            })
            .collect();
        ImageEncoder { input, blocks, config }
    }

    pub fn encode(&self, features: &Mat) -> Result<ContextualImageEmbeddings, EncoderError> {
        Ok(self.encode_cached(features)?.0)
    }

    pub fn encode_cached(
        &self,
        features: &Mat,
    ) -> Result<(ContextualImageEmbeddings, ImageEncoderCache), EncoderError> {
        if features.rows() == 0 {
            return Err(EncoderError::EmptyImageCollection);
        }
        if features.cols() != self.config.feature_dim {
            return Err(EncoderError::FeatureWidthMismatch {
                got: features.cols(),
                expected: self.config.feature_dim,
            });
        }
        let projected = self.input.forward(features);
        let mut x = projected.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&x);
            block_caches.push(cache);
            x = next;
        }
        Ok((
            ContextualImageEmbeddings { matrix: x },
            ImageEncoderCache { features: features.clone(), projected, block_caches },
        ))
    }

    /// Accumulates gradients through every block and the input projection.
    pub fn backward(&mut self, cache: &ImageEncoderCache, dmatrix: &Mat) {
        let mut grad = dmatrix.clone();
        for (block, bc) in self.blocks.iter_mut().zip(&cache.block_caches).rev() {
            grad = block.backward(bc, &grad);
        }
        let _ = cache.projected;
        self.input.backward(&cache.features, &grad);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.input.params_mut();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out
    }
}

/// The one sentence/image encoder pair shared by retrieval and alignment.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub sentence: SentenceEncoder,
    pub image: ImageEncoder,
}

impl EncoderStack {
    pub fn new(feature_dim: usize, model_dim: usize, layers: usize, heads: usize, seed: u64) -> Self {
        let mut image_config = ImageEncoderConfig::new(feature_dim, model_dim, seed);
        image_config.layers = layers;
        image_config.heads = heads;
        EncoderStack {
            sentence: SentenceEncoder::new(feature_dim, model_dim, 0.0, seed),
            image: ImageEncoder::new(image_config),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.sentence.model_dim()
    }
}
