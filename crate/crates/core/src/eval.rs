//! Salient image selection and the evaluation harness.
//!
//! Selection follows the caption-overlap rule: the image whose pseudo caption
//! scores the highest ROUGE-L against the generated summary is the salient
//! one. The harness aggregates ROUGE-1/2/L, image precision, Caption-ROUGE-L
//! and M_sim into one deterministic, order-invariant report.

use crate::alignment::AlignmentAssignment;
use crate::corpus::MultimodalDocument;
use crate::encoders::EncoderStack;
use crate::mat::{cosine, Mat};
use crate::retrieval::RetrievalModel;
use crate::rouge::{rouge_l, rouge_l_multi, rouge_n, RougeScore};
use crate::summarizer::SummaryOutput;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cannot select an image from an empty caption list")]
    NoCaptions,
    #[error("cannot select an image against an empty summary")]
    EmptySummary,
    #[error("simple-summary experiment requires k >= 1")]
    ZeroK,
}

/// The selected image with its caption and selection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSelection {
    pub image: usize,
    pub caption: Vec<String>,
    pub rouge_l: f64,
}

/// Argmax of ROUGE-L(caption, summary); ties break to the lowest image
/// index. Empty captions score zero but still participate.
pub fn select_image(
    pseudo_captions: &[Vec<String>],
    summary: &SummaryOutput,
) -> Result<EvaluationSelection, EvalError> {
    if pseudo_captions.is_empty() {
        return Err(EvalError::NoCaptions);
    }
    let summary_tokens: Vec<String> =
        summary.sentences.iter().flat_map(|s| s.iter().cloned()).collect();
    if summary_tokens.is_empty() {
        return Err(EvalError::EmptySummary);
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, caption) in pseudo_captions.iter().enumerate() {
        let score = rouge_l(caption, &summary_tokens).f1;
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(EvaluationSelection {
        image: best,
        caption: pseudo_captions[best].clone(),
        rouge_l: best_score,
    })
}

/// A metric mean over the documents that could be scored, with exclusion
/// accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub docs_counted: usize,
    pub docs_skipped: usize,
}

impl MetricValue {
    fn from_values(values: &[f64], skipped: usize) -> Self {
        let value = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        MetricValue { value, docs_counted: values.len(), docs_skipped: skipped }
    }
}

/// Mean per-document |recommended ∩ reference| / |recommended|. Documents
/// with an empty recommendation set are skipped and counted.
pub fn image_precision(
    recommended: &[BTreeSet<usize>],
    references: &[BTreeSet<usize>],
) -> MetricValue {
    assert_eq!(recommended.len(), references.len(), "per-doc sets must align");
    let mut values = Vec::new();
    let mut skipped = 0usize;
    for (rec, reference) in recommended.iter().zip(references) {
        if rec.is_empty() {
            skipped += 1;
            continue;
        }
        let hit = rec.intersection(reference).count();
        values.push(hit as f64 / rec.len() as f64);
    }
    MetricValue::from_values(&values, skipped)
}

/// Mean ROUGE-L F between pseudo and golden captions, per image then per
/// document. Documents without golden captions are skipped and counted.
pub fn caption_rouge_l(
    per_doc: &[(Vec<Vec<String>>, Option<Vec<Vec<String>>>)],
) -> MetricValue {
    let mut values = Vec::new();
    let mut skipped = 0usize;
    for (pseudo, golden) in per_doc {
        match golden {
            None => skipped += 1,
            Some(golden) => {
                let per_image: Vec<f64> = pseudo
                    .iter()
                    .zip(golden)
                    .map(|(p, g)| rouge_l(p, g).f1)
                    .collect();
                if per_image.is_empty() {
                    skipped += 1;
                } else {
                    values.push(per_image.iter().sum::<f64>() / per_image.len() as f64);
                }
            }
        }
    }
    MetricValue::from_values(&values, skipped)
}

/// Maximum retrieval-space cosine between the selected image and any summary
/// sentence; `None` when the summary is empty.
pub fn m_sim_doc(
    image_feature: &[f64],
    summary: &SummaryOutput,
    retrieval: &RetrievalModel,
    encoders: &EncoderStack,
) -> Option<f64> {
    if summary.sentences.is_empty() {
        return None;
    }
    let feature = Mat::from_rows(&[image_feature.to_vec()]);
    let img = retrieval.project_images(&feature);
    let embeddings = encoders.sentence.encode(&summary.sentences).ok()?.matrix;
    let txt = retrieval.project_sentences(&embeddings);
    let best = (0..txt.rows())
        .map(|i| cosine(img.row(0), txt.row(i)))
        .fold(f64::NEG_INFINITY, f64::max);
    Some(best)
}

/// One row of the simple-summary experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleSummaryRow {
    pub k: usize,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    /// Documents with fewer than k images (they contribute all captions).
    pub docs_short: usize,
    pub docs_counted: usize,
}

/// Concatenates each document's first k captions as a summary and scores it
/// against the golden summary, for k in 1..=max_k.
pub fn simple_summary_experiment(
    docs: &[MultimodalDocument],
    captions_per_doc: &[Vec<Vec<String>>],
    max_k: usize,
) -> Result<Vec<SimpleSummaryRow>, EvalError> {
    if max_k == 0 {
        return Err(EvalError::ZeroK);
    }
    assert_eq!(docs.len(), captions_per_doc.len());
    let mut rows = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        let mut rl = Vec::new();
        let mut docs_short = 0usize;
        for (doc, captions) in docs.iter().zip(captions_per_doc) {
            if captions.is_empty() {
                continue;
            }
            if captions.len() < k {
                docs_short += 1;
            }
            let take = k.min(captions.len());
            let candidate: Vec<Vec<String>> = captions[..take].to_vec();
            let cand_flat: Vec<String> =
                candidate.iter().flat_map(|s| s.iter().cloned()).collect();
            let gold_flat: Vec<String> =
                doc.golden_summary.iter().flat_map(|s| s.iter().cloned()).collect();
            r1.push(rouge_n(&cand_flat, &gold_flat, 1));
            r2.push(rouge_n(&cand_flat, &gold_flat, 2));
            rl.push(rouge_l_multi(&candidate, &doc.golden_summary));
        }
        rows.push(SimpleSummaryRow {
            k,
            rouge1: mean_scores(&r1),
            rouge2: mean_scores(&r2),
            rouge_l: mean_scores(&rl),
            docs_short,
            docs_counted: r1.len(),
        });
    }
    Ok(rows)
}

fn mean_scores(scores: &[RougeScore]) -> RougeScore {
    if scores.is_empty() {
        return RougeScore::ZERO;
    }
    let n = scores.len() as f64;
    RougeScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

/// Per-document evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDocMetrics {
    pub doc_id: String,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub selected_image: usize,
    pub ip: Option<f64>,
    pub caption_rouge_l: Option<f64>,
    pub m_sim: Option<f64>,
}

/// Metrics from prior multimodal-summarization work that score outputs with
/// externally trained judge models. This artifact is self-contained and does
/// not ship those models, so the metrics are deliberately not computed;
/// fabricating stand-in values would be misleading.
pub const UNAVAILABLE_METRICS: &[(&str, &str)] = &[
    ("MR_max", "requires a pretrained joint multimodal representation model"),
    ("MMAE++", "requires a trained neural projection of candidate and reference summaries"),
];

/// Corpus-level evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub ip: MetricValue,
    pub caption_rouge_l: MetricValue,
    pub m_sim: MetricValue,
    pub docs_evaluated: usize,
    /// Documents missing one or more artifacts, excluded entirely.
    pub docs_excluded: usize,
    pub per_doc: Vec<PerDocMetrics>,
}

impl MetricsReport {
    /// Human-readable one-screen summary.
    pub fn human_summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "documents evaluated: {} (excluded: {})\n",
            self.docs_evaluated, self.docs_excluded
        ));
        out.push_str(&format!(
            "ROUGE-1 F: {:.4}   ROUGE-2 F: {:.4}   ROUGE-L F: {:.4}\n",
            self.rouge1.f1, self.rouge2.f1, self.rouge_l.f1
        ));
        out.push_str(&format!(
            "IP: {:.4} ({} docs, {} skipped)\n",
            self.ip.value, self.ip.docs_counted, self.ip.docs_skipped
        ));
        out.push_str(&format!(
            "Caption-ROUGE-L: {:.4} ({} docs, {} skipped)\n",
            self.caption_rouge_l.value,
            self.caption_rouge_l.docs_counted,
            self.caption_rouge_l.docs_skipped
        ));
        out.push_str(&format!(
            "M_sim: {:.4} ({} docs, {} skipped)\n",
            self.m_sim.value, self.m_sim.docs_counted, self.m_sim.docs_skipped
        ));
        for (name, why) in UNAVAILABLE_METRICS {
            out.push_str(&format!("{name}: not computed ({why})\n"));
        }
        out
    }
}

/// Joins per-document artifacts by doc_id and aggregates every metric.
/// Documents missing any artifact are excluded and counted. Iteration is in
/// doc_id order, so the report is independent of input ordering.
pub fn evaluate_run(
    docs: &[MultimodalDocument],
    alignments: &BTreeMap<String, AlignmentAssignment>,
    summaries: &BTreeMap<String, SummaryOutput>,
    selections: &BTreeMap<String, EvaluationSelection>,
    retrieval: &RetrievalModel,
    encoders: &EncoderStack,
) -> MetricsReport {
    let mut sorted: Vec<&MultimodalDocument> = docs.iter().collect();
    sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let mut per_doc = Vec::new();
    let mut excluded = 0usize;
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut rl = Vec::new();
    let mut ip_rec = Vec::new();
    let mut ip_ref = Vec::new();
    let mut crl_inputs = Vec::new();
    let mut msim_values = Vec::new();
    let mut msim_skipped = 0usize;

    for doc in sorted {
        let (Some(alignment), Some(summary), Some(selection)) = (
            alignments.get(&doc.doc_id),
            summaries.get(&doc.doc_id),
            selections.get(&doc.doc_id),
        ) else {
            excluded += 1;
            continue;
        };
        if selection.image >= doc.image_count() {
            // Artifact produced against a different corpus revision.
            excluded += 1;
            continue;
        }

        let cand_flat: Vec<String> =
            summary.sentences.iter().flat_map(|s| s.iter().cloned()).collect();
        let gold_flat: Vec<String> =
            doc.golden_summary.iter().flat_map(|s| s.iter().cloned()).collect();
        let s1 = rouge_n(&cand_flat, &gold_flat, 1);
        let s2 = rouge_n(&cand_flat, &gold_flat, 2);
        let sl = rouge_l_multi(&summary.sentences, &doc.golden_summary);
        r1.push(s1);
        r2.push(s2);
        rl.push(sl);

        let doc_ip = doc.salient_image_refs.as_ref().map(|refs| {
            let rec: BTreeSet<usize> = [selection.image].into_iter().collect();
            ip_rec.push(rec.clone());
            ip_ref.push(refs.clone());
            if refs.contains(&selection.image) { 1.0 } else { 0.0 }
        });

        let doc_crl = doc.golden_captions.as_ref().map(|golden| {
            let per_image: Vec<f64> = alignment
                .pseudo_captions
                .iter()
                .zip(golden)
                .map(|(p, g)| rouge_l(p, g).f1)
                .collect();
            per_image.iter().sum::<f64>() / per_image.len().max(1) as f64
        });
        crl_inputs.push((alignment.pseudo_captions.clone(), doc.golden_captions.clone()));

        let doc_msim = m_sim_doc(
            &doc.image_features[selection.image],
            summary,
            retrieval,
            encoders,
        );
        match doc_msim {
            Some(v) => msim_values.push(v),
            None => msim_skipped += 1,
        }

        per_doc.push(PerDocMetrics {
            doc_id: doc.doc_id.clone(),
            rouge1_f: s1.f1,
            rouge2_f: s2.f1,
            rouge_l_f: sl.f1,
            selected_image: selection.image,
            ip: doc_ip,
            caption_rouge_l: doc_crl,
            m_sim: doc_msim,
        });
    }

    MetricsReport {
        rouge1: mean_scores(&r1),
        rouge2: mean_scores(&r2),
        rouge_l: mean_scores(&rl),
        ip: image_precision(&ip_rec, &ip_ref),
        caption_rouge_l: caption_rouge_l(&crl_inputs),
        m_sim: MetricValue::from_values(&msim_values, msim_skipped),
        docs_evaluated: per_doc.len(),
        docs_excluded: excluded,
        per_doc,
    }
}
