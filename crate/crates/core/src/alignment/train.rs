//! Alignment model training (coarse-to-fine and one-pass) and inference.

use super::{
    bce_loss, build_labels, coarse_select, coarse_select_threshold, fine_align,
    AlignmentAssignment, AlignmentError, AttentionMode, CrossAttention, RougeVariant, Scorer,
    SelectionLabels,
};
use crate::corpus::{DocumentSet, MultimodalDocument};
use crate::encoders::EncoderStack;
use crate::mat::Mat;
use crate::nn::{Adam, Param};
use crate::retrieval::ReferenceCaptionSet;
use crate::rng::seeded;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub attention: AttentionMode,
    pub rouge_variant: RougeVariant,
    /// Learning rate of the selection scorer.
    pub lr: f64,
    /// Learning rate of the cross-attention projections and the image
    /// encoder. These start from geometry-preserving initializations that
    /// stand in for pretrained aligned encoders, so they move at the small
    /// fine-tuning rate while the freshly initialized scorer learns fast.
    pub backbone_lr: f64,
    pub epochs: usize,
    /// Documents per optimizer step (gradient accumulation).
    pub batch_docs: usize,
    /// Gaussian jitter added to the identity-initialized projections.
    pub init_jitter: f64,
    /// Coarse pass at inference: `None` takes the top-n sentences by
    /// probability; `Some(t)` takes sentences with p ≥ t, padded or truncated
    /// to min(n, m) by probability order.
    pub coarse_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            attention: AttentionMode::RowRatio,
            rouge_variant: RougeVariant::RougeL,
            lr: 1e-2,
            backbone_lr: 3e-5,
            epochs: 15,
            batch_docs: 2,
            init_jitter: 0.02,
            coarse_threshold: None,
            seed: 0,
        }
    }
}

/// Cross-attention plus scorer. The image encoder it was trained with lives
/// in the shared [`EncoderStack`]; the sentence encoder stays frozen, playing
/// the pretrained-backbone role.
#[derive(Debug, Clone)]
pub struct AlignmentModel {
    pub cross: CrossAttention,
    pub scorer: Scorer,
}

impl AlignmentModel {
    pub fn new(dim: usize, config: &AlignmentConfig) -> Self {
        let mut rng = seeded(config.seed, "alignment-model");
        AlignmentModel {
            cross: CrossAttention::new(dim, config.attention, config.init_jitter, &mut rng),
            scorer: Scorer::new(dim, &mut rng),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.cross.params_mut();
        ps.extend(self.scorer.params_mut());
        ps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_valid_bce: f64,
    pub best_valid_bce: f64,
    pub epochs_run: usize,
}

fn labels_for(
    docs: &[MultimodalDocument],
    refs: &[ReferenceCaptionSet],
    variant: RougeVariant,
) -> Result<Vec<SelectionLabels>, AlignmentError> {
    docs.iter().zip(refs).map(|(d, r)| build_labels(d, r, variant)).collect()
}

fn doc_bce(
    doc: &MultimodalDocument,
    labels: &SelectionLabels,
    model: &AlignmentModel,
    encoders: &EncoderStack,
) -> Result<f64, AlignmentError> {
    let g = encoders.sentence.encode(&doc.sentences)?;
    let feats = Mat::from_rows(&doc.image_features);
    let c = encoders.image.encode(&feats)?;
    let art = model.cross.forward(&g.matrix, &c.matrix)?;
    let p = model.scorer.forward(&art.refined);
    Ok(bce_loss(&p, labels))
}

fn mean_bce(
    docs: &[MultimodalDocument],
    labels: &[SelectionLabels],
    model: &AlignmentModel,
    encoders: &EncoderStack,
) -> Result<f64, AlignmentError> {
    let mut total = 0.0;
    for (doc, l) in docs.iter().zip(labels) {
        total += doc_bce(doc, l, model, encoders)?;
    }
    Ok(total / docs.len() as f64)
}

/// Trains the coarse pass (cross attention, scorer and the image encoder
/// inside `encoders`) with BCE against retrieval-derived labels. Keeps the
/// parameters of the epoch with the lowest validation BCE.
pub fn train_alignment(
    train: &DocumentSet,
    train_refs: &[ReferenceCaptionSet],
    valid: &DocumentSet,
    valid_refs: &[ReferenceCaptionSet],
    encoders: &mut EncoderStack,
    config: &AlignmentConfig,
) -> Result<(AlignmentModel, TrainReport), AlignmentError> {
    if train.is_empty() {
        return Err(AlignmentError::EmptyCorpus);
    }
    let train_labels = labels_for(&train.documents, train_refs, config.rouge_variant)?;
    let valid_labels = labels_for(&valid.documents, valid_refs, config.rouge_variant)?;

    let mut model = AlignmentModel::new(encoders.model_dim(), config);
    let mut scorer_opt = Adam::new(config.lr);
    let mut backbone_opt = Adam::new(config.backbone_lr);
    let mut rng = seeded(config.seed, "alignment-batches");

    let initial_valid_bce = mean_bce(&valid.documents, &valid_labels, &model, encoders)?;
    let mut best_valid_bce = initial_valid_bce;
    let mut best = (model.clone(), encoders.image.clone());

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_docs.max(1)) {
            for p in model.params_mut() {
                p.zero_grad();
            }
            for p in encoders.image.params_mut() {
                p.zero_grad();
            }
            for &idx in chunk {
                let doc = &train.documents[idx];
                let labels = &train_labels[idx];
                let g = encoders.sentence.encode(&doc.sentences)?;
                let feats = Mat::from_rows(&doc.image_features);
                let (c, img_cache) = encoders.image.encode_cached(&feats)?;
                let (art, cross_cache) = model.cross.forward_cached(&g.matrix, &c.matrix)?;
                let p = model.scorer.forward(&art.refined);
                let drefined = model.scorer.backward_bce(&art.refined, &p, labels);
                let (_dg, dc) = model.cross.backward(&g.matrix, &c.matrix, &cross_cache, &drefined);
                encoders.image.backward(&img_cache, &dc);
            }
            scorer_opt.step(model.scorer.params_mut());
            let mut backbone = model.cross.params_mut();
            backbone.extend(encoders.image.params_mut());
            backbone_opt.step(backbone);
        }
        let valid_bce = mean_bce(&valid.documents, &valid_labels, &model, encoders)?;
        if valid_bce < best_valid_bce {
            best_valid_bce = valid_bce;
            best = (model.clone(), encoders.image.clone());
        }
    }
    model = best.0;
    encoders.image = best.1;
    Ok((model, TrainReport { initial_valid_bce, best_valid_bce, epochs_run: config.epochs }))
}

/// Trains the same architecture one image at a time: for each (document,
/// image) pair the model sees a single-image collection and a one-hot label
/// at the best-ROUGE sentence for that image's reference caption.
pub fn train_one_pass(
    train: &DocumentSet,
    train_refs: &[ReferenceCaptionSet],
    valid: &DocumentSet,
    valid_refs: &[ReferenceCaptionSet],
    encoders: &mut EncoderStack,
    config: &AlignmentConfig,
) -> Result<(AlignmentModel, TrainReport), AlignmentError> {
    if train.is_empty() {
        return Err(AlignmentError::EmptyCorpus);
    }
    let train_examples = one_pass_examples(&train.documents, train_refs, config.rouge_variant)?;
    let valid_examples = one_pass_examples(&valid.documents, valid_refs, config.rouge_variant)?;

    let mut model = AlignmentModel::new(encoders.model_dim(), config);
    let mut scorer_opt = Adam::new(config.lr);
    let mut backbone_opt = Adam::new(config.backbone_lr);
    let mut rng = seeded(config.seed, "one-pass-batches");

    let eval = |model: &AlignmentModel, encoders: &EncoderStack| -> Result<f64, AlignmentError> {
        let mut total = 0.0;
        for (doc_idx, image_idx, labels) in &valid_examples {
            let doc = &valid.documents[*doc_idx];
            let g = encoders.sentence.encode(&doc.sentences)?;
            let feats = Mat::from_rows(&[doc.image_features[*image_idx].clone()]);
            let c = encoders.image.encode(&feats)?;
            let art = model.cross.forward(&g.matrix, &c.matrix)?;
            let p = model.scorer.forward(&art.refined);
            total += bce_loss(&p, labels);
        }
        Ok(total / valid_examples.len().max(1) as f64)
    };

    let initial_valid_bce = eval(&model, encoders)?;
    let mut best_valid_bce = initial_valid_bce;
    let mut best = (model.clone(), encoders.image.clone());

    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_docs.max(1)) {
            for p in model.params_mut() {
                p.zero_grad();
            }
            for p in encoders.image.params_mut() {
                p.zero_grad();
            }
            for &ex in chunk {
                let (doc_idx, image_idx, labels) = &train_examples[ex];
                let doc = &train.documents[*doc_idx];
                let g = encoders.sentence.encode(&doc.sentences)?;
                let feats = Mat::from_rows(&[doc.image_features[*image_idx].clone()]);
                let (c, img_cache) = encoders.image.encode_cached(&feats)?;
                let (art, cross_cache) = model.cross.forward_cached(&g.matrix, &c.matrix)?;
                let p = model.scorer.forward(&art.refined);
                let drefined = model.scorer.backward_bce(&art.refined, &p, labels);
                let (_dg, dc) = model.cross.backward(&g.matrix, &c.matrix, &cross_cache, &drefined);
                encoders.image.backward(&img_cache, &dc);
            }
            scorer_opt.step(model.scorer.params_mut());
            let mut backbone = model.cross.params_mut();
            backbone.extend(encoders.image.params_mut());
            backbone_opt.step(backbone);
        }
        let valid_bce = eval(&model, encoders)?;
        if valid_bce < best_valid_bce {
            best_valid_bce = valid_bce;
            best = (model.clone(), encoders.image.clone());
        }
    }
    model = best.0;
    encoders.image = best.1;
    Ok((model, TrainReport { initial_valid_bce, best_valid_bce, epochs_run: config.epochs }))
}

type OnePassExample = (usize, usize, SelectionLabels);

fn one_pass_examples(
    docs: &[MultimodalDocument],
    refs: &[ReferenceCaptionSet],
    variant: RougeVariant,
) -> Result<Vec<OnePassExample>, AlignmentError> {
    let mut out = Vec::new();
    for (doc_idx, (doc, doc_refs)) in docs.iter().zip(refs).enumerate() {
        if doc_refs.len() != doc.image_count() {
            return Err(AlignmentError::ReferenceCountMismatch {
                got: doc_refs.len(),
                expected: doc.image_count(),
            });
        }
        for (image_idx, reference) in doc_refs.iter().enumerate() {
            // Independent per-image argmax label; duplicates across images
            // are deliberate (no dedup in the one-pass variant).
            let scores: Vec<f64> =
                doc.sentences.iter().map(|s| variant.score(s, &reference.tokens).f1).collect();
            let best = (0..scores.len())
                .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(b.cmp(&a)))
                .expect("documents have at least one sentence");
            let mut y = vec![false; doc.sentence_count()];
            y[best] = true;
            out.push((doc_idx, image_idx, SelectionLabels { y }));
        }
    }
    Ok(out)
}

/// Full coarse-to-fine inference for one document.
pub fn align_document(
    doc: &MultimodalDocument,
    model: &AlignmentModel,
    encoders: &EncoderStack,
) -> Result<AlignmentAssignment, AlignmentError> {
    align_document_with(doc, model, encoders, None)
}

/// Coarse-to-fine inference with an optional probability threshold for the
/// coarse pass.
pub fn align_document_with(
    doc: &MultimodalDocument,
    model: &AlignmentModel,
    encoders: &EncoderStack,
    coarse_threshold: Option<f64>,
) -> Result<AlignmentAssignment, AlignmentError> {
    let g = encoders.sentence.encode(&doc.sentences)?;
    let feats = Mat::from_rows(&doc.image_features);
    let c = encoders.image.encode(&feats)?;
    let art = model.cross.forward(&g.matrix, &c.matrix)?;
    let p = model.scorer.forward(&art.refined);
    let z = match coarse_threshold {
        None => coarse_select(&p, doc.image_count()),
        Some(t) => coarse_select_threshold(&p, doc.image_count(), t),
    };
    let fine = fine_align(&art.attention, &z)?;
    // Images matched to padding rows (only when m < n) reuse the globally
    // highest-probability sentence.
    let fallback = coarse_select(&p, 1)[0];
    let sentence_of_image: Vec<usize> = fine
        .slot_of_image
        .iter()
        .map(|slot| slot.map_or(fallback, |s| z[s]))
        .collect();
    let pseudo_captions =
        sentence_of_image.iter().map(|&s| doc.sentences[s].clone()).collect();
    Ok(AlignmentAssignment {
        doc_id: doc.doc_id.clone(),
        sentence_of_image,
        weight_of_image: fine.weight_of_image,
        pseudo_captions,
    })
}

/// Per-image selection probabilities under the one-pass model (each image is
/// encoded alone).
pub fn one_pass_scores(
    doc: &MultimodalDocument,
    model: &AlignmentModel,
    encoders: &EncoderStack,
) -> Result<Vec<Vec<f64>>, AlignmentError> {
    let g = encoders.sentence.encode(&doc.sentences)?;
    let mut out = Vec::with_capacity(doc.image_count());
    for feature in &doc.image_features {
        let feats = Mat::from_rows(&[feature.clone()]);
        let c = encoders.image.encode(&feats)?;
        let art = model.cross.forward(&g.matrix, &c.matrix)?;
        out.push(model.scorer.forward(&art.refined));
    }
    Ok(out)
}

/// Independent per-image argmax; duplicate captions allowed.
pub fn one_pass_align(
    doc: &MultimodalDocument,
    model: &AlignmentModel,
    encoders: &EncoderStack,
) -> Result<AlignmentAssignment, AlignmentError> {
    let scores = one_pass_scores(doc, model, encoders)?;
    let sentence_of_image: Vec<usize> = scores.iter().map(|p| coarse_select(p, 1)[0]).collect();
    finish_one_pass(doc, sentence_of_image, &scores)
}

/// Greedy in image order, skipping sentences already chosen; once every
/// sentence is taken (n > m) remaining images fall back to their argmax.
pub fn one_pass_dedup_align(
    doc: &MultimodalDocument,
    model: &AlignmentModel,
    encoders: &EncoderStack,
) -> Result<AlignmentAssignment, AlignmentError> {
    let scores = one_pass_scores(doc, model, encoders)?;
    let mut taken = vec![false; doc.sentence_count()];
    let mut sentence_of_image = Vec::with_capacity(doc.image_count());
    for p in &scores {
        let ranked = coarse_select(p, p.len());
        let pick = ranked
            .iter()
            .copied()
            .find(|&s| !taken[s])
            .unwrap_or(ranked[0]);
        taken[pick] = true;
        sentence_of_image.push(pick);
    }
    finish_one_pass(doc, sentence_of_image, &scores)
}

fn finish_one_pass(
    doc: &MultimodalDocument,
    sentence_of_image: Vec<usize>,
    scores: &[Vec<f64>],
) -> Result<AlignmentAssignment, AlignmentError> {
    let weight_of_image: Vec<f64> = sentence_of_image
        .iter()
        .zip(scores)
        .map(|(&s, p)| p[s])
        .collect();
    let pseudo_captions =
        sentence_of_image.iter().map(|&s| doc.sentences[s].clone()).collect();
    Ok(AlignmentAssignment {
        doc_id: doc.doc_id.clone(),
        sentence_of_image,
        weight_of_image,
        pseudo_captions,
    })
}
