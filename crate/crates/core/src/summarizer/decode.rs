//! Length-normalized beam search with incremental decoder state.
//!
//! Each beam caches the per-layer input rows of its prefix, so one step only
//! computes the new position: self-attention over the cached rows, cross
//! attention over precomputed key/value projections of R and R_s. A separate
//! full-forward greedy loop ([`greedy_reference`]) exists as an independent
//! check that beam size 1 reproduces greedy decoding.

use super::{DualSourceInputs, SummaryOutput, SummarizerModel, BOS, EOS};
use crate::mat::Mat;
use crate::nn::{Linear, MultiHeadAttention};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("beam size must be at least 1")]
    ZeroBeam,
}

/// Per-source, per-layer key/value projections, computed once per document.
struct CrossContext {
    keys: Vec<Mat>,
    values: Vec<Mat>,
}

fn cross_context(blocks: &[super::DecoderBlock], source: &Mat, caption_side: bool) -> CrossContext {
    let mut keys = Vec::with_capacity(blocks.len());
    let mut values = Vec::with_capacity(blocks.len());
    for b in blocks {
        let attn = if caption_side { &b.cross_cap } else { &b.cross_doc };
        keys.push(attn.wk.forward(source));
        values.push(attn.wv.forward(source));
    }
    CrossContext { keys, values }
}

#[derive(Clone)]
struct Beam {
    /// Emitted token ids (excluding BOS).
    ids: Vec<usize>,
    logprob: f64,
    /// Per decoder layer: cached input rows, one per consumed position.
    layer_inputs: Vec<Vec<Vec<f64>>>,
    finished: bool,
}

impl Beam {
    fn normalized(&self) -> f64 {
        self.logprob / (self.ids.len().max(1) as f64)
    }
}

fn attention_row(
    attn: &MultiHeadAttention,
    query_row: &[f64],
    keys: &Mat,
    values: &Mat,
    heads: usize,
) -> Vec<f64> {
    let d = query_row.len();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = linear_row(&attn.wq, query_row);
    let mut mixed = vec![0.0; d];
    for h in 0..heads {
        let off = h * hd;
        let mut scores = Vec::with_capacity(keys.rows());
        let mut max = f64::NEG_INFINITY;
        for j in 0..keys.rows() {
            let mut s = 0.0;
            for p in 0..hd {
                s += q[off + p] * keys.get(j, off + p);
            }
            let s = s * scale;
            max = max.max(s);
            scores.push(s);
        }
        let mut z = 0.0;
        for s in &mut scores {
            *s = (*s - max).exp();
            z += *s;
        }
        for (j, s) in scores.iter().enumerate() {
            let w = s / z;
            for p in 0..hd {
                mixed[off + p] += w * values.get(j, off + p);
            }
        }
    }
    linear_row(&attn.wo, &mixed)
}

/// Self-attention for the newest position: projects cached input rows to
/// keys/values on the fly (prefixes are short at desk scale).
fn self_attention_row(attn: &MultiHeadAttention, rows: &[Vec<f64>], heads: usize) -> Vec<f64> {
    let keys = Mat::from_rows(&rows.iter().map(|r| linear_row(&attn.wk, r)).collect::<Vec<_>>());
    let values = Mat::from_rows(&rows.iter().map(|r| linear_row(&attn.wv, r)).collect::<Vec<_>>());
    let d = rows[0].len();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = linear_row(&attn.wq, rows.last().unwrap());
    let mut mixed = vec![0.0; d];
    for h in 0..heads {
        let off = h * hd;
        let mut scores = Vec::with_capacity(rows.len());
        let mut max = f64::NEG_INFINITY;
        for j in 0..rows.len() {
            let mut s = 0.0;
            for p in 0..hd {
                s += q[off + p] * keys.get(j, off + p);
            }
            let s = s * scale;
            max = max.max(s);
            scores.push(s);
        }
        let mut z = 0.0;
        for s in &mut scores {
            *s = (*s - max).exp();
            z += *s;
        }
        for (j, s) in scores.iter().enumerate() {
            let w = s / z;
            for p in 0..hd {
                mixed[off + p] += w * values.get(j, off + p);
            }
        }
    }
    linear_row(&attn.wo, &mixed)
}

fn linear_row(lin: &Linear, row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; lin.out_dim()];
    for (o, out_v) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (i, &v) in row.iter().enumerate() {
            s += lin.weight.value.get(o, i) * v;
        }
        if let Some(b) = &lin.bias {
            s += b.value.get(0, o);
        }
        *out_v = s;
    }
    out
}

fn layer_norm_row(ln: &crate::nn::LayerNorm, row: &[f64]) -> Vec<f64> {
    let d = row.len();
    let mean = row.iter().sum::<f64>() / d as f64;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let istd = 1.0 / (var + ln.eps).sqrt();
    (0..d)
        .map(|j| ln.gamma.value.get(0, j) * (row[j] - mean) * istd + ln.beta.value.get(0, j))
        .collect()
}

fn add_rows(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Advances one beam by one token; returns next-token log-probabilities.
fn step_beam(
    model: &SummarizerModel,
    beam: &mut Beam,
    token: usize,
    position: usize,
    doc_ctx: &CrossContext,
    cap_ctx: Option<&CrossContext>,
) -> Vec<f64> {
    let d = model.config.model_dim;
    let mut row: Vec<f64> = (0..d)
        .map(|j| model.tok_emb.value.get(token, j) + model.pos_emb.value.get(position, j))
        .collect();
    for (l, block) in model.dec_blocks.iter().enumerate() {
        beam.layer_inputs[l].push(row.clone());
        let sa = self_attention_row(&block.self_attn, &beam.layer_inputs[l], block.self_attn.heads);
        let h1 = layer_norm_row(&block.ln1, &add_rows(&row, &sa));
        let cd = attention_row(
            &block.cross_doc,
            &h1,
            &doc_ctx.keys[l],
            &doc_ctx.values[l],
            block.cross_doc.heads,
        );
        let mut summed = add_rows(&h1, &cd);
        if let Some(ctx) = cap_ctx {
            let cc = attention_row(
                &block.cross_cap,
                &h1,
                &ctx.keys[l],
                &ctx.values[l],
                block.cross_cap.heads,
            );
            summed = add_rows(&summed, &cc);
        }
        let h2 = layer_norm_row(&block.ln2, &summed);
        let ff1 = linear_row(&block.ff.lin1, &h2);
        let relu: Vec<f64> = ff1.iter().map(|v| v.max(0.0)).collect();
        let ff2 = linear_row(&block.ff.lin2, &relu);
        row = layer_norm_row(&block.ln3, &add_rows(&h2, &ff2));
    }
    let mut logits = vec![0.0; model.vocab.len()];
    for (v, logit) in logits.iter_mut().enumerate() {
        let mut s = model.out_bias.value.get(0, v);
        for (p, &x) in row.iter().enumerate() {
            s += model.tok_emb.value.get(v, p) * x;
        }
        *logit = s;
    }
    log_softmax(&logits)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + z.ln();
    logits.iter().map(|v| v - log_z).collect()
}

/// Beam-search decoding with per-length normalization; beam size 1 is greedy.
/// `captions: None` decodes the single-source model.
pub fn summarize(
    model: &SummarizerModel,
    inputs: &DualSourceInputs,
    beam_size: usize,
    use_captions: bool,
) -> Result<SummaryOutput, DecodeError> {
    if beam_size == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    let doc = model.encode(&inputs.doc_tokens);
    let doc_ctx = cross_context(&model.dec_blocks, &doc, false);
    let caps_enc;
    let cap_ctx = if use_captions {
        caps_enc = model.encode(&inputs.caption_tokens);
        Some(cross_context(&model.dec_blocks, &caps_enc, true))
    } else {
        None
    };
    let max_len = model.config.max_summary_len;

    // Seed beam: consume BOS.
    let mut seed = Beam {
        ids: Vec::new(),
        logprob: 0.0,
        layer_inputs: vec![Vec::new(); model.dec_blocks.len()],
        finished: false,
    };
    let first_logprobs = step_beam(model, &mut seed, BOS, 0, &doc_ctx, cap_ctx.as_ref());
    let mut live: Vec<(Beam, Vec<f64>)> = vec![(seed, first_logprobs)];
    let mut finished: Vec<Beam> = Vec::new();

    for _ in 0..max_len {
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new(); // (beam, token, logprob)
        for (b, (beam, logprobs)) in live.iter().enumerate() {
            for (t, &lp) in logprobs.iter().enumerate() {
                candidates.push((b, t, beam.logprob + lp));
            }
        }
        // Deterministic order: score desc, then token id, then beam index.
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0))
        });
        candidates.truncate(beam_size);

        let mut next_live: Vec<(Beam, Vec<f64>)> = Vec::new();
        for (b, token, logprob) in candidates {
            let mut beam = live[b].0.clone();
            beam.ids.push(token);
            beam.logprob = logprob;
            if token == EOS {
                beam.finished = true;
                finished.push(beam);
                continue;
            }
            let position = beam.ids.len(); // BOS sat at position 0
            let logprobs =
                step_beam(model, &mut beam, token, position, &doc_ctx, cap_ctx.as_ref());
            next_live.push((beam, logprobs));
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }

    let (best, reached_max_len) = if let Some(best) = finished
        .iter()
        .max_by(|a, b| a.normalized().partial_cmp(&b.normalized()).unwrap())
    {
        (best.clone(), false)
    } else {
        let best = live
            .iter()
            .map(|(b, _)| b)
            .max_by(|a, b| a.normalized().partial_cmp(&b.normalized()).unwrap())
            .expect("at least one beam survives")
            .clone();
        (best, true)
    };

    let mut token_ids = best.ids.clone();
    if token_ids.last() == Some(&EOS) {
        token_ids.pop();
    }
    Ok(SummaryOutput {
        sentences: model.vocab.decode_sentences(&best.ids),
        token_ids,
        score: best.normalized(),
        reached_max_len,
    })
}

/// Independent greedy decoder using the full-matrix forward path; test oracle
/// for `summarize(.., beam_size = 1, ..)`.
pub fn greedy_reference(
    model: &SummarizerModel,
    inputs: &DualSourceInputs,
    use_captions: bool,
) -> Vec<usize> {
    let doc = model.encode(&inputs.doc_tokens);
    let caps_enc;
    let caps = if use_captions {
        caps_enc = model.encode(&inputs.caption_tokens);
        Some(&caps_enc)
    } else {
        None
    };
    let mut ids = vec![BOS];
    for _ in 0..model.config.max_summary_len {
        let logits = model.decode_logits(&ids, &doc, caps);
        let last = logits.rows() - 1;
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (t, &v) in logits.row(last).iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = t;
            }
        }
        ids.push(best);
        if best == EOS {
            break;
        }
    }
    if ids.last() == Some(&EOS) {
        ids.pop();
    }
    ids[1..].to_vec()
}
