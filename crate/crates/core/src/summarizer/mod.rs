//! Dual-source abstractive summarizer.
//!
//! One shared encoder runs separately over the document and over the
//! concatenated pseudo captions, producing representation sequences R and
//! R_s. Each decoder block carries two cross-attention paths (one over R, one
//! over R_s) whose outputs are summed; everything else is a standard
//! transformer block. Trained from scratch at desk scale with teacher
//! forcing; decoding is length-normalized beam search.

mod decode;
mod train;

pub use decode::{greedy_reference, summarize, DecodeError};
pub use train::{train_summarizer, SummarizerTrainReport, TrainingExample};

use crate::mat::Mat;
use crate::nn::{
    softmax_cross_entropy, AttentionCache, EncoderBlock, EncoderBlockCache, FeedForward,
    FeedForwardCache, LayerNorm, LayerNormCache, MultiHeadAttention, Param,
};
use crate::rng::seeded;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SummarizerError {
    #[error("cannot train on an empty example set")]
    EmptyCorpus,
    #[error("document tokens are empty after truncation")]
    EmptyDocument,
    #[error("caption tokens are empty after truncation")]
    EmptyCaptions,
}

/// Special token ids; the real vocabulary starts after them.
pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<sep>", "<unk>"];

/// Token ↔ id table; built deterministically from a corpus (sorted unique
/// tokens after the specials).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(sentences: impl Iterator<Item = &'a Vec<String>>) -> Self {
        let mut unique: Vec<String> = sentences
            .flat_map(|s| s.iter().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.append(&mut unique);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sentence list → id stream with `<sep>` between sentences.
    pub fn encode_sentences(&self, sentences: &[Vec<String>]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, s) in sentences.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            out.extend(s.iter().map(|t| self.id(t)));
        }
        out
    }

    /// Id stream → sentences, splitting on `<sep>` and dropping specials.
    pub fn decode_sentences(&self, ids: &[usize]) -> Vec<Vec<String>> {
        let mut sentences = vec![Vec::new()];
        for &id in ids {
            match id {
                SEP => sentences.push(Vec::new()),
                BOS | EOS => {}
                _ => sentences.last_mut().unwrap().push(self.token(id).to_string()),
            }
        }
        sentences.retain(|s| !s.is_empty());
        sentences
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizerConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_doc_len: usize,
    pub max_cap_len: usize,
    pub max_summary_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_docs: usize,
    pub seed: u64,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            model_dim: 32,
            heads: 2,
            ff_hidden: 64,
            enc_layers: 2,
            dec_layers: 2,
            max_doc_len: 128,
            max_cap_len: 32,
            max_summary_len: 56,
            lr: 3e-3,
            epochs: 30,
            batch_docs: 4,
            seed: 0,
        }
    }
}

/// Token ids of the two encoder inputs, truncated to the configured caps.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSourceInputs {
    pub doc_tokens: Vec<usize>,
    pub caption_tokens: Vec<usize>,
    pub doc_truncated: bool,
    pub captions_truncated: bool,
}

impl DualSourceInputs {
    pub fn new(
        doc_sentences: &[Vec<String>],
        captions: &[Vec<String>],
        vocab: &Vocab,
        config: &SummarizerConfig,
    ) -> Result<Self, SummarizerError> {
        let mut doc_tokens = vocab.encode_sentences(doc_sentences);
        let mut caption_tokens = vocab.encode_sentences(captions);
        let doc_truncated = doc_tokens.len() > config.max_doc_len;
        let captions_truncated = caption_tokens.len() > config.max_cap_len;
        doc_tokens.truncate(config.max_doc_len);
        caption_tokens.truncate(config.max_cap_len);
        if doc_tokens.is_empty() {
            return Err(SummarizerError::EmptyDocument);
        }
        if caption_tokens.is_empty() {
            return Err(SummarizerError::EmptyCaptions);
        }
        Ok(DualSourceInputs { doc_tokens, caption_tokens, doc_truncated, captions_truncated })
    }
}

/// A generated summary with its length-normalized log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOutput {
    pub sentences: Vec<Vec<String>>,
    /// Emitted decoder ids (separators included, trailing `<eos>` stripped).
    pub token_ids: Vec<usize>,
    pub score: f64,
    /// Set when decoding hit the length cap before emitting `<eos>`.
    pub reached_max_len: bool,
}

/// Decoder block with two summed cross-attention paths.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross_doc: MultiHeadAttention,
    pub cross_cap: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
}

pub struct DecoderBlockCache {
    input: Mat,
    self_attn: AttentionCache,
    ln1: LayerNormCache,
    h1: Mat,
    cross_doc: AttentionCache,
    cross_cap: Option<AttentionCache>,
    ln2: LayerNormCache,
    h2: Mat,
    ff: FeedForwardCache,
    ln3: LayerNormCache,
}

impl DecoderBlock {
    pub fn new(dim: usize, heads: usize, ff_hidden: usize, rng: &mut impl rand::Rng) -> Self {
        DecoderBlock {
            self_attn: MultiHeadAttention::new(dim, heads, rng),
            ln1: LayerNorm::new(dim),
            cross_doc: MultiHeadAttention::new(dim, heads, rng),
            cross_cap: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            ff: FeedForward::new(dim, ff_hidden, rng),
            ln3: LayerNorm::new(dim),
        }
    }

    /// `captions: None` runs the single-source form of the block (the caption
    /// path contributes an exact zero).
    pub fn forward(
        &self,
        x: &Mat,
        doc: &Mat,
        captions: Option<&Mat>,
    ) -> (Mat, DecoderBlockCache) {
        let (sa, self_cache) = self.self_attn.forward(x, x, true);
        let (h1, ln1_cache) = self.ln1.forward(&x.add(&sa));
        let (cd, cross_doc_cache) = self.cross_doc.forward(&h1, doc, false);
        let mut summed = h1.add(&cd);
        let cross_cap_cache = captions.map(|caps| {
            let (cc, cache) = self.cross_cap.forward(&h1, caps, false);
            summed.add_assign(&cc);
            cache
        });
        let (h2, ln2_cache) = self.ln2.forward(&summed);
        let (ff_out, ff_cache) = self.ff.forward(&h2);
        let (out, ln3_cache) = self.ln3.forward(&h2.add(&ff_out));
        (
            out,
            DecoderBlockCache {
                input: x.clone(),
                self_attn: self_cache,
                ln1: ln1_cache,
                h1,
                cross_doc: cross_doc_cache,
                cross_cap: cross_cap_cache,
                ln2: ln2_cache,
                h2,
                ff: ff_cache,
                ln3: ln3_cache,
            },
        )
    }

    /// Returns (dx, d_doc, d_captions).
    pub fn backward(
        &mut self,
        doc: &Mat,
        captions: Option<&Mat>,
        cache: &DecoderBlockCache,
        dy: &Mat,
    ) -> (Mat, Mat, Option<Mat>) {
        let dres3 = self.ln3.backward(&cache.ln3, dy);
        let dff_in = self.ff.backward(&cache.h2, &cache.ff, &dres3);
        let dh2 = dres3.add(&dff_in);
        let dsummed = self.ln2.backward(&cache.ln2, &dh2);
        // summed = h1 + cross_doc(h1) + cross_cap(h1).
        let mut dh1 = dsummed.clone();
        let (dq_doc, ddoc) =
            self.cross_doc.backward(&cache.h1, doc, &cache.cross_doc, &dsummed);
        dh1.add_assign(&dq_doc);
        let dcaps = match (&cache.cross_cap, captions) {
            (Some(cap_cache), Some(caps)) => {
                let (dq_cap, dcaps) = self.cross_cap.backward(&cache.h1, caps, cap_cache, &dsummed);
                dh1.add_assign(&dq_cap);
                Some(dcaps)
            }
            _ => None,
        };
        let dres1 = self.ln1.backward(&cache.ln1, &dh1);
        let (dq, dkv) =
            self.self_attn.backward(&cache.input, &cache.input, &cache.self_attn, &dres1);
        (dres1.add(&dq).add(&dkv), ddoc, dcaps)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.self_attn.params_mut();
        out.extend(self.ln1.params_mut());
        out.extend(self.cross_doc.params_mut());
        out.extend(self.cross_cap.params_mut());
        out.extend(self.ln2.params_mut());
        out.extend(self.ff.params_mut());
        out.extend(self.ln3.params_mut());
        out
    }
}

/// Token embeddings are tied to the output projection: the logit of token v
/// is the dot product of the decoder state with v's embedding (plus a learned
/// per-token bias). Tying makes copy behavior learnable at desk scale.
#[derive(Debug, Clone)]
pub struct SummarizerModel {
    pub vocab: Vocab,
    pub tok_emb: Param,
    pub pos_emb: Param,
    pub enc_blocks: Vec<EncoderBlock>,
    pub dec_blocks: Vec<DecoderBlock>,
    pub out_bias: Param,
    pub config: SummarizerConfig,
}

pub struct EncodeCache {
    ids: Vec<usize>,
    blocks: Vec<EncoderBlockCache>,
}

impl SummarizerModel {
    pub fn new(vocab: Vocab, config: SummarizerConfig) -> Self {
        let mut rng = seeded(config.seed, "summarizer-init");
        let d = config.model_dim;
        let max_pos = config.max_doc_len.max(config.max_cap_len).max(config.max_summary_len) + 2;
        let tok_emb = Param::new(Mat::randn(vocab.len(), d, 0.1, &mut rng));
        let pos_emb = Param::new(Mat::randn(max_pos, d, 0.1, &mut rng));
        let enc_blocks =
            (0..config.enc_layers).map(|_| EncoderBlock::new(d, config.heads, config.ff_hidden, &mut rng)).collect();
        let dec_blocks =
            (0..config.dec_layers).map(|_| DecoderBlock::new(d, config.heads, config.ff_hidden, &mut rng)).collect();
        let out_bias = Param::new(Mat::zeros(1, vocab.len()));
        SummarizerModel { vocab, tok_emb, pos_emb, enc_blocks, dec_blocks, out_bias, config }
    }

    /// Logits of every decoder state row against the tied embedding table.
    fn project_logits(&self, x: &Mat) -> Mat {
        let mut logits = x.matmul_nt(&self.tok_emb.value);
        logits.add_row_vec(self.out_bias.value.row(0));
        logits
    }

    /// Backward through the tied output head; accumulates tok_emb and bias
    /// gradients and returns d(decoder state).
    pub fn output_backward(&mut self, x: &Mat, dlogits: &Mat) -> Mat {
        self.tok_emb.grad.add_assign(&dlogits.matmul_tn(x));
        for i in 0..dlogits.rows() {
            for (v, &g) in dlogits.row(i).iter().enumerate() {
                self.out_bias.grad.add_at(0, v, g);
            }
        }
        dlogits.matmul(&self.tok_emb.value)
    }

    fn embed(&self, ids: &[usize]) -> Mat {
        let d = self.config.model_dim;
        let mut out = Mat::zeros(ids.len(), d);
        for (pos, &id) in ids.iter().enumerate() {
            for j in 0..d {
                out.set(pos, j, self.tok_emb.value.get(id, j) + self.pos_emb.value.get(pos, j));
            }
        }
        out
    }

    /// Runs the shared encoder over one id stream.
    pub fn encode(&self, ids: &[usize]) -> Mat {
        self.encode_cached(ids).0
    }

    pub fn encode_cached(&self, ids: &[usize]) -> (Mat, EncodeCache) {
        let mut x = self.embed(ids);
        let mut blocks = Vec::with_capacity(self.enc_blocks.len());
        for b in &self.enc_blocks {
            let (next, cache) = b.forward(&x);
            blocks.push(cache);
            x = next;
        }
        (x, EncodeCache { ids: ids.to_vec(), blocks })
    }

    /// Encodes document and captions separately with the same encoder.
    pub fn encode_dual(&self, inputs: &DualSourceInputs) -> (Mat, Mat) {
        (self.encode(&inputs.doc_tokens), self.encode(&inputs.caption_tokens))
    }

    /// Accumulates encoder + embedding gradients for one encoded stream.
    pub fn encoder_backward(&mut self, cache: &EncodeCache, dout: &Mat) {
        let mut grad = dout.clone();
        for (b, c) in self.enc_blocks.iter_mut().zip(&cache.blocks).rev() {
            grad = b.backward(c, &grad);
        }
        self.embed_backward(&cache.ids, &grad);
    }

    /// Accumulates token/position embedding gradients for one id stream.
    pub fn embed_backward(&mut self, ids: &[usize], dx: &Mat) {
        for (pos, &id) in ids.iter().enumerate() {
            for j in 0..dx.cols() {
                let g = dx.get(pos, j);
                self.tok_emb.grad.add_at(id, j, g);
                self.pos_emb.grad.add_at(pos, j, g);
            }
        }
    }

    /// Teacher-forced decoder pass over `prefix_ids`; returns logits rows for
    /// every position. `captions: None` is the single-source model.
    pub fn decode_logits(&self, prefix_ids: &[usize], doc: &Mat, captions: Option<&Mat>) -> Mat {
        let mut x = self.embed(prefix_ids);
        for b in &self.dec_blocks {
            let (next, _) = b.forward(&x, doc, captions);
            x = next;
        }
        self.project_logits(&x)
    }

    /// Full teacher-forced training step pieces: forward with caches.
    pub fn decode_cached(
        &self,
        prefix_ids: &[usize],
        doc: &Mat,
        captions: Option<&Mat>,
    ) -> (Mat, Vec<DecoderBlockCache>, Mat) {
        let mut x = self.embed(prefix_ids);
        let mut caches = Vec::with_capacity(self.dec_blocks.len());
        for b in &self.dec_blocks {
            let (next, cache) = b.forward(&x, doc, captions);
            caches.push(cache);
            x = next;
        }
        let logits = self.project_logits(&x);
        (logits, caches, x)
    }

    /// Mean teacher-forced cross-entropy of one example.
    pub fn example_loss(&self, ex: &TrainingExample) -> f64 {
        let (doc, caps) = self.encode_dual(&ex.inputs);
        let logits = self.decode_logits(&ex.decoder_input(), &doc, Some(&caps));
        softmax_cross_entropy(&logits, &ex.targets()).0
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.enc_blocks {
            out.extend(b.params_mut());
        }
        for b in &mut self.dec_blocks {
            out.extend(b.params_mut());
        }
        out.push(&mut self.out_bias);
        out
    }

    /// Clone with every caption-side value projection zeroed; with values
    /// zero the caption path contributes exactly nothing.
    pub fn with_zeroed_caption_values(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.dec_blocks {
            b.cross_cap.wv.weight.value.fill(0.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn tiny_model(seed: u64) -> SummarizerModel {
        let sentences = vec![toks("a b c d"), toks("e f g"), toks("h i")];
        let vocab = Vocab::build(sentences.iter());
        let config = SummarizerConfig {
            model_dim: 8,
            heads: 1,
            ff_hidden: 16,
            enc_layers: 1,
            dec_layers: 2,
            max_doc_len: 16,
            max_cap_len: 8,
            max_summary_len: 10,
            seed,
            ..Default::default()
        };
        SummarizerModel::new(vocab, config)
    }

    #[test]
    fn vocab_round_trips_and_handles_oov() {
        let sentences = vec![toks("b a"), toks("c a")];
        let vocab = Vocab::build(sentences.iter());
        assert_eq!(vocab.len(), 4 + 3);
        assert_eq!(vocab.id("a"), 4); // sorted after specials
        assert_eq!(vocab.id("zzz"), UNK);
        let ids = vocab.encode_sentences(&[toks("a b"), toks("c")]);
        assert_eq!(vocab.decode_sentences(&ids), vec![toks("a b"), toks("c")]);
    }

    #[test]
    fn encode_dual_shapes_and_identical_inputs() {
        let model = tiny_model(1);
        let inputs = DualSourceInputs {
            doc_tokens: vec![4, 5, 6, 7, 8],
            caption_tokens: vec![4, 5, 6],
            doc_truncated: false,
            captions_truncated: false,
        };
        let (r, r_s) = model.encode_dual(&inputs);
        assert_eq!(r.rows(), 5);
        assert_eq!(r_s.rows(), 3);
        // Same encoder, same input → identical outputs.
        let same = DualSourceInputs {
            doc_tokens: vec![4, 5, 6],
            caption_tokens: vec![4, 5, 6],
            doc_truncated: false,
            captions_truncated: false,
        };
        let (r1, r2) = model.encode_dual(&same);
        assert_eq!(r1, r2);
        // Determinism across calls.
        let (r1b, _) = model.encode_dual(&same);
        assert_eq!(r1, r1b);
    }

    #[test]
    fn truncation_caps_and_flags() {
        let sentences = vec![toks("a b c d"), toks("e f g")];
        let vocab = Vocab::build(sentences.iter());
        let config = SummarizerConfig { max_doc_len: 4, max_cap_len: 2, ..Default::default() };
        let inputs = DualSourceInputs::new(&sentences, &sentences, &vocab, &config).unwrap();
        assert_eq!(inputs.doc_tokens.len(), 4);
        assert_eq!(inputs.caption_tokens.len(), 2);
        assert!(inputs.doc_truncated);
        assert!(inputs.captions_truncated);
    }

    #[test]
    fn zeroed_caption_values_reduce_to_single_source_block() {
        let model = tiny_model(3);
        let zeroed = model.with_zeroed_caption_values();
        let doc = Mat::randn(6, 8, 1.0, &mut seeded(4, "doc"));
        let caps = Mat::randn(3, 8, 1.0, &mut seeded(5, "caps"));
        let prefix = vec![BOS, 4, 5];
        let dual = zeroed.decode_logits(&prefix, &doc, Some(&caps));
        let single = zeroed.decode_logits(&prefix, &doc, None);
        assert_eq!(dual, single);
    }

    #[test]
    fn swapping_the_two_sources_is_commutative_in_the_sum() {
        // The summed cross-attention outputs commute when both paths share
        // parameters; verify by cloning one projection set onto the other.
        let mut model = tiny_model(6);
        for b in &mut model.dec_blocks {
            b.cross_cap = b.cross_doc.clone();
        }
        let a = Mat::randn(4, 8, 1.0, &mut seeded(7, "a"));
        let b = Mat::randn(5, 8, 1.0, &mut seeded(8, "b"));
        let prefix = vec![BOS, 4];
        let ab = model.decode_logits(&prefix, &a, Some(&b));
        let ba = model.decode_logits(&prefix, &b, Some(&a));
        assert!(ab.max_abs_diff(&ba) < 1e-12);
    }

    #[test]
    fn decoder_block_matches_straight_line_recomputation() {
        // Independent scalar recomputation of one dual-source decoder block
        // at hidden 8, 1 head.
        let model = tiny_model(9);
        let block = &model.dec_blocks[0];
        let d = 8usize;
        let x = Mat::randn(3, d, 1.0, &mut seeded(10, "x"));
        let doc = Mat::randn(4, d, 1.0, &mut seeded(11, "d"));
        let caps = Mat::randn(2, d, 1.0, &mut seeded(12, "c"));
        let (got, _) = block.forward(&x, &doc, Some(&caps));

        // --- straight-line oracle ---
        let rows = |m: &Mat| -> Vec<Vec<f64>> { (0..m.rows()).map(|i| m.row(i).to_vec()).collect() };
        let lin = |w: &Linear, v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; w.out_dim()];
            for o in 0..w.out_dim() {
                let mut s = 0.0;
                for i in 0..w.in_dim() {
                    s += w.weight.value.get(o, i) * v[i];
                }
                if let Some(b) = &w.bias {
                    s += b.value.get(0, o);
                }
                out[o] = s;
            }
            out
        };
        let attn = |mha: &MultiHeadAttention, q_in: &[Vec<f64>], kv_in: &[Vec<f64>], causal: bool| -> Vec<Vec<f64>> {
            let scale = 1.0 / (d as f64).sqrt();
            let qs: Vec<Vec<f64>> = q_in.iter().map(|r| lin(&mha.wq, r)).collect();
            let ks: Vec<Vec<f64>> = kv_in.iter().map(|r| lin(&mha.wk, r)).collect();
            let vs: Vec<Vec<f64>> = kv_in.iter().map(|r| lin(&mha.wv, r)).collect();
            let mut out = Vec::new();
            for (i, q) in qs.iter().enumerate() {
                let mut scores: Vec<f64> = ks
                    .iter()
                    .enumerate()
                    .map(|(j, k)| {
                        if causal && j > i {
                            f64::NEG_INFINITY
                        } else {
                            q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
                        }
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in &mut scores {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let mut mixed = vec![0.0; d];
                for (j, v) in vs.iter().enumerate() {
                    for p in 0..d {
                        mixed[p] += scores[j] / z * v[p];
                    }
                }
                out.push(lin(&mha.wo, &mixed));
            }
            out
        };
        let layer_norm = |ln: &LayerNorm, v: &[f64]| -> Vec<f64> {
            let mean = v.iter().sum::<f64>() / d as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + ln.eps).sqrt();
            (0..d)
                .map(|j| ln.gamma.value.get(0, j) * (v[j] - mean) * istd + ln.beta.value.get(0, j))
                .collect()
        };

        let xr = rows(&x);
        let docr = rows(&doc);
        let capr = rows(&caps);
        let sa = attn(&block.self_attn, &xr, &xr, true);
        let h1: Vec<Vec<f64>> = xr
            .iter()
            .zip(&sa)
            .map(|(a, b)| layer_norm(&block.ln1, &a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>()))
            .collect();
        let cd = attn(&block.cross_doc, &h1, &docr, false);
        let cc = attn(&block.cross_cap, &h1, &capr, false);
        let h2: Vec<Vec<f64>> = h1
            .iter()
            .zip(cd.iter().zip(&cc))
            .map(|(h, (a, b))| {
                let summed: Vec<f64> =
                    (0..d).map(|j| h[j] + a[j] + b[j]).collect();
                layer_norm(&block.ln2, &summed)
            })
            .collect();
        for (i, h) in h2.iter().enumerate() {
            let ff1 = lin(&block.ff.lin1, h);
            let relu: Vec<f64> = ff1.iter().map(|v| v.max(0.0)).collect();
            let ff2 = lin(&block.ff.lin2, &relu);
            let out =
                layer_norm(&block.ln3, &(0..d).map(|j| h[j] + ff2[j]).collect::<Vec<_>>());
            for j in 0..d {
                assert!(
                    (got.get(i, j) - out[j]).abs() < 1e-8,
                    "mismatch at ({i},{j}): {} vs {}",
                    got.get(i, j),
                    out[j]
                );
            }
        }
    }

    #[test]
    fn dual_source_decoder_gradient_check() {
        use crate::gradcheck::check_params;
        let mut rng = seeded(20, "gradio");
        let sentences = vec![toks("a b c d e f")];
        let vocab = Vocab::build(sentences.iter());
        let config = SummarizerConfig {
            model_dim: 16,
            heads: 2,
            ff_hidden: 24,
            enc_layers: 1,
            dec_layers: 2,
            max_doc_len: 12,
            max_cap_len: 8,
            max_summary_len: 8,
            seed: 21,
            ..Default::default()
        };
        let mut model = SummarizerModel::new(vocab, config);
        let doc = Mat::randn(5, 16, 1.0, &mut rng);
        let caps = Mat::randn(3, 16, 1.0, &mut rng);
        let prefix = vec![BOS, 4, 5, 6];
        let targets = vec![4, 5, 6, EOS];

        // Analytic gradients through decoder blocks + output head + embeddings.
        {
            for p in model.params_mut() {
                p.zero_grad();
            }
            let (logits, caches, x_final) = model.decode_cached(&prefix, &doc, Some(&caps));
            let (_, dlogits) = softmax_cross_entropy(&logits, &targets);
            let mut grad = model.output_backward(&x_final, &dlogits);
            let mut saved_doc = Mat::zeros(doc.rows(), doc.cols());
            let mut saved_caps = Mat::zeros(caps.rows(), caps.cols());
            for (b, c) in model.dec_blocks.iter_mut().zip(&caches).rev() {
                let (dx, ddoc, dcaps) = b.backward(&doc, Some(&caps), c, &grad);
                grad = dx;
                saved_doc.add_assign(&ddoc);
                if let Some(dc) = dcaps {
                    saved_caps.add_assign(&dc);
                }
            }
            model.embed_backward(&prefix, &grad);
        }
        let report = check_params(
            &mut model,
            |m| {
                let mut ps = vec![&mut m.tok_emb, &mut m.pos_emb];
                for b in &mut m.dec_blocks {
                    ps.extend(b.params_mut());
                }
                ps.push(&mut m.out_bias);
                ps
            },
            |m| {
                let logits = m.decode_logits(&prefix, &doc, Some(&caps));
                softmax_cross_entropy(&logits, &targets).0
            },
            1e-5,
        );
        assert!(report.max_rel_err <= 1e-3, "rel err {}", report.max_rel_err);
    }
}
