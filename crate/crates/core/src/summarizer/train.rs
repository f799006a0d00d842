//! Teacher-forced summarizer training.

use super::{
    DualSourceInputs, SummarizerConfig, SummarizerError, SummarizerModel, Vocab, BOS, EOS,
};
use crate::nn::{softmax_cross_entropy, Adam};
use crate::rng::seeded;
use rand::seq::SliceRandom;

/// One teacher-forcing example: dual inputs plus the golden summary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub doc_id: String,
    pub inputs: DualSourceInputs,
    pub summary_ids: Vec<usize>,
}

impl TrainingExample {
    pub fn new(
        doc_id: &str,
        doc_sentences: &[Vec<String>],
        captions: &[Vec<String>],
        golden_summary: &[Vec<String>],
        vocab: &Vocab,
        config: &SummarizerConfig,
    ) -> Result<Self, SummarizerError> {
        let inputs = DualSourceInputs::new(doc_sentences, captions, vocab, config)?;
        let mut summary_ids = vocab.encode_sentences(golden_summary);
        summary_ids.truncate(config.max_summary_len.saturating_sub(1));
        Ok(TrainingExample { doc_id: doc_id.to_string(), inputs, summary_ids })
    }

    pub fn decoder_input(&self) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend_from_slice(&self.summary_ids);
        ids
    }

    pub fn targets(&self) -> Vec<usize> {
        let mut ids = self.summary_ids.clone();
        ids.push(EOS);
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizerTrainReport {
    pub initial_valid_ce: f64,
    pub best_valid_ce: f64,
    pub epochs_run: usize,
}

impl SummarizerTrainReport {
    pub fn initial_perplexity(&self) -> f64 {
        self.initial_valid_ce.exp()
    }

    pub fn best_perplexity(&self) -> f64 {
        self.best_valid_ce.exp()
    }
}

fn mean_ce(model: &SummarizerModel, examples: &[TrainingExample]) -> f64 {
    let total: f64 = examples.iter().map(|ex| model.example_loss(ex)).sum();
    total / examples.len().max(1) as f64
}

/// Trains on golden summaries with teacher forcing, keeping the checkpoint
/// with the lowest validation cross-entropy.
pub fn train_summarizer(
    vocab: Vocab,
    train: &[TrainingExample],
    valid: &[TrainingExample],
    config: &SummarizerConfig,
) -> Result<(SummarizerModel, SummarizerTrainReport), SummarizerError> {
    if train.is_empty() {
        return Err(SummarizerError::EmptyCorpus);
    }
    let mut model = SummarizerModel::new(vocab, config.clone());
    let mut opt = Adam::new(config.lr);
    let mut rng = seeded(config.seed, "summarizer-batches");

    let initial_valid_ce = mean_ce(&model, valid);
    let mut best_valid_ce = initial_valid_ce;
    let mut best = model.clone();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_docs.max(1)) {
            for p in model.params_mut() {
                p.zero_grad();
            }
            for &idx in chunk {
                let ex = &train[idx];
                let (doc, doc_cache) = model.encode_cached(&ex.inputs.doc_tokens);
                let (caps, caps_cache) = model.encode_cached(&ex.inputs.caption_tokens);
                let prefix = ex.decoder_input();
                let (logits, dec_caches, x_final) =
                    model.decode_cached(&prefix, &doc, Some(&caps));
                let (_, dlogits) = softmax_cross_entropy(&logits, &ex.targets());
                let mut grad = model.output_backward(&x_final, &dlogits);
                let mut ddoc = crate::mat::Mat::zeros(doc.rows(), doc.cols());
                let mut dcaps = crate::mat::Mat::zeros(caps.rows(), caps.cols());
                for (b, c) in model.dec_blocks.iter_mut().zip(&dec_caches).rev() {
                    let (dx, d_doc, d_caps) = b.backward(&doc, Some(&caps), c, &grad);
                    grad = dx;
                    ddoc.add_assign(&d_doc);
                    if let Some(dc) = d_caps {
                        dcaps.add_assign(&dc);
                    }
                }
                model.embed_backward(&prefix, &grad);
                model.encoder_backward(&doc_cache, &ddoc);
                model.encoder_backward(&caps_cache, &dcaps);
            }
            opt.step(model.params_mut());
        }
        let valid_ce = mean_ce(&model, valid);
        if valid_ce < best_valid_ce {
            best_valid_ce = valid_ce;
            best = model.clone();
        }
    }
    Ok((
        best,
        SummarizerTrainReport { initial_valid_ce, best_valid_ce, epochs_run: config.epochs },
    ))
}
