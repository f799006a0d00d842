//! Cross-modal retrieval: projection heads over the shared encoders, trained
//! with a max-margin triplet loss using the hardest in-batch negative.
//!
//! At pipeline time the trained model retrieves each image's reference
//! caption from the golden summary (the supervision source for alignment
//! training); the document-wide variant retrieves pseudo captions directly
//! from the document, skipping alignment entirely.

use crate::corpus::MultimodalDocument;
use crate::encoders::EncoderStack;
use crate::mat::{cosine, Mat};
use crate::nn::{Adam, Linear, Param};
use crate::rng::seeded;
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("need at least 2 training pairs so every anchor has a negative, got {0}")]
    NotEnoughPairs(usize),
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Encoder(#[from] crate::encoders::EncoderError),
}

/// Projection heads into the shared similarity space of dimension `dim_r`.
#[derive(Debug, Clone)]
pub struct RetrievalModel {
    pub image_head: Linear,
    pub text_head: Linear,
    pub margin: f64,
    pub dim_r: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub dim_r: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { dim_r: 16, margin: 0.2, lr: 1e-2, epochs: 30, batch_size: 32, seed: 0 }
    }
}

/// Per-image retrieved reference caption: source sentence index within the
/// candidate pool, similarity score, and the tokens themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCaption {
    pub source_index: usize,
    pub score: f64,
    pub tokens: Vec<String>,
}

/// Exactly one entry per image of a document.
pub type ReferenceCaptionSet = Vec<ReferenceCaption>;

/// Cosine similarity between two projected vectors; zero vectors score 0.
pub fn similarity(image_vec: &[f64], sentence_vec: &[f64]) -> Result<f64, RetrievalError> {
    if image_vec.len() != sentence_vec.len() {
        return Err(RetrievalError::DimMismatch(image_vec.len(), sentence_vec.len()));
    }
    Ok(cosine(image_vec, sentence_vec))
}

/// Max-margin triplet loss with the hardest in-batch negative, averaged over
/// pairs; `sims[i][j]` is the similarity of image i with caption j, diagonal
/// positive.
pub fn triplet_loss(sims: &Mat, margin: f64) -> f64 {
    let n = sims.rows();
    assert_eq!(n, sims.cols(), "similarity matrix must be square");
    assert!(n >= 2, "triplet loss needs at least one negative");
    let mut total = 0.0;
    for i in 0..n {
        let pos = sims.get(i, i);
        let hardest_caption = (0..n)
            .filter(|&j| j != i)
            .map(|j| sims.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let hardest_image = (0..n)
            .filter(|&j| j != i)
            .map(|j| sims.get(j, i))
            .fold(f64::NEG_INFINITY, f64::max);
        total += (margin + hardest_caption - pos).max(0.0);
        total += (margin + hardest_image - pos).max(0.0);
    }
    total / n as f64
}

impl RetrievalModel {
    pub fn new(feature_dim: usize, text_dim: usize, config: &RetrievalConfig) -> Self {
        let mut rng = seeded(config.seed, "retrieval-heads");
        let std_img = (1.0 / feature_dim as f64).sqrt();
        let std_txt = (1.0 / text_dim as f64).sqrt();
        RetrievalModel {
            image_head: Linear::new(feature_dim, config.dim_r, std_img, false, &mut rng),
            text_head: Linear::new(text_dim, config.dim_r, std_txt, false, &mut rng),
            margin: config.margin,
            dim_r: config.dim_r,
        }
    }

    /// Projects raw image features (rows) into the similarity space.
    pub fn project_images(&self, features: &Mat) -> Mat {
        self.image_head.forward(features)
    }

    /// Projects sentence-encoder outputs (rows) into the similarity space.
    pub fn project_sentences(&self, embeddings: &Mat) -> Mat {
        self.text_head.forward(embeddings)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.image_head.params_mut();
        ps.extend(self.text_head.params_mut());
        ps
    }

    /// Cosine similarity matrix between projected images and sentences.
    pub fn similarity_matrix(&self, features: &Mat, embeddings: &Mat) -> Mat {
        let imgs = self.project_images(features);
        let txts = self.project_sentences(embeddings);
        Mat::from_fn(imgs.rows(), txts.rows(), |i, j| cosine(imgs.row(i), txts.row(j)))
    }
}

/// One (image feature, caption tokens) training pair.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub feature: Vec<f64>,
    pub caption: Vec<String>,
}

/// Collects the generator's (image, planted caption) pairs, the desk-scale
/// stand-in for an external captioning corpus.
pub fn pairs_from_documents(docs: &[MultimodalDocument]) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    for doc in docs {
        if let Some(captions) = &doc.golden_captions {
            for (feature, caption) in doc.image_features.iter().zip(captions) {
                out.push(TrainingPair { feature: feature.clone(), caption: caption.clone() });
            }
        }
    }
    out
}

/// Trains the projection heads; the underlying encoders stay frozen, standing
/// in for the pretrained backbones.
pub fn train_retrieval(
    pairs: &[TrainingPair],
    encoders: &EncoderStack,
    config: &RetrievalConfig,
) -> Result<RetrievalModel, RetrievalError> {
    if pairs.len() < 2 {
        return Err(RetrievalError::NotEnoughPairs(pairs.len()));
    }
    let mut model = RetrievalModel::new(
        pairs[0].feature.len(),
        encoders.model_dim(),
        config,
    );
    // Precompute frozen encoder outputs once.
    let features = Mat::from_rows(&pairs.iter().map(|p| p.feature.clone()).collect::<Vec<_>>());
    let captions: Vec<Vec<String>> = pairs.iter().map(|p| p.caption.clone()).collect();
    let embeddings = encoders.sentence.encode(&captions)?.matrix;

    let mut opt = Adam::new(config.lr);
    let mut rng = seeded(config.seed, "retrieval-batches");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(2)) {
            if batch.len() < 2 {
                continue;
            }
            train_batch(&mut model, &features, &embeddings, batch, &mut opt);
        }
    }
    Ok(model)
}

fn train_batch(
    model: &mut RetrievalModel,
    features: &Mat,
    embeddings: &Mat,
    batch: &[usize],
    opt: &mut Adam,
) {
    let b = batch.len();
    let feat =
        Mat::from_rows(&batch.iter().map(|&i| features.row(i).to_vec()).collect::<Vec<_>>());
    let emb =
        Mat::from_rows(&batch.iter().map(|&i| embeddings.row(i).to_vec()).collect::<Vec<_>>());
    let img_proj = model.project_images(&feat);
    let txt_proj = model.project_sentences(&emb);
    let sims = Mat::from_fn(b, b, |i, j| cosine(img_proj.row(i), txt_proj.row(j)));

    // Subgradient of the hinge terms w.r.t. the similarity entries.
    let mut dsims = Mat::zeros(b, b);
    for i in 0..b {
        let pos = sims.get(i, i);
        let (mut best_j, mut best) = (usize::MAX, f64::NEG_INFINITY);
        let (mut best_i, mut best2) = (usize::MAX, f64::NEG_INFINITY);
        for j in 0..b {
            if j == i {
                continue;
            }
            if sims.get(i, j) > best {
                best = sims.get(i, j);
                best_j = j;
            }
            if sims.get(j, i) > best2 {
                best2 = sims.get(j, i);
                best_i = j;
            }
        }
        let scale = 1.0 / b as f64;
        if model.margin + best - pos > 0.0 {
            dsims.add_at(i, best_j, scale);
            dsims.add_at(i, i, -scale);
        }
        if model.margin + best2 - pos > 0.0 {
            dsims.add_at(best_i, i, scale);
            dsims.add_at(i, i, -scale);
        }
    }

    // Cosine backward into both projections.
    let mut dimg = Mat::zeros(b, img_proj.cols());
    let mut dtxt = Mat::zeros(b, txt_proj.cols());
    for i in 0..b {
        for j in 0..b {
            let g = dsims.get(i, j);
            if g == 0.0 {
                continue;
            }
            let u = img_proj.row(i);
            let v = txt_proj.row(j);
            let nu = crate::mat::norm(u).max(1e-12);
            let nv = crate::mat::norm(v).max(1e-12);
            let c = crate::mat::dot(u, v) / (nu * nv);
            for p in 0..u.len() {
                dimg.add_at(i, p, g * (v[p] / (nu * nv) - c * u[p] / (nu * nu)));
                dtxt.add_at(j, p, g * (u[p] / (nu * nv) - c * v[p] / (nv * nv)));
            }
        }
    }

    for p in model.params_mut() {
        p.zero_grad();
    }
    model.image_head.backward(&feat, &dimg);
    model.text_head.backward(&emb, &dtxt);
    opt.step(model.params_mut());
}

/// Mean triplet loss over a pair set, in one full batch. Used for held-out
/// monitoring and tests.
pub fn evaluate_loss(
    model: &RetrievalModel,
    pairs: &[TrainingPair],
    encoders: &EncoderStack,
) -> Result<f64, RetrievalError> {
    if pairs.len() < 2 {
        return Err(RetrievalError::NotEnoughPairs(pairs.len()));
    }
    let features = Mat::from_rows(&pairs.iter().map(|p| p.feature.clone()).collect::<Vec<_>>());
    let captions: Vec<Vec<String>> = pairs.iter().map(|p| p.caption.clone()).collect();
    let embeddings = encoders.sentence.encode(&captions)?.matrix;
    Ok(triplet_loss(&model.similarity_matrix(&features, &embeddings), model.margin))
}

/// Fraction of pairs whose own caption ranks first among all captions.
pub fn recall_at_1(
    model: &RetrievalModel,
    pairs: &[TrainingPair],
    encoders: &EncoderStack,
) -> Result<f64, RetrievalError> {
    if pairs.is_empty() {
        return Err(RetrievalError::NotEnoughPairs(0));
    }
    let features = Mat::from_rows(&pairs.iter().map(|p| p.feature.clone()).collect::<Vec<_>>());
    let captions: Vec<Vec<String>> = pairs.iter().map(|p| p.caption.clone()).collect();
    let embeddings = encoders.sentence.encode(&captions)?.matrix;
    let sims = model.similarity_matrix(&features, &embeddings);
    let mut hits = 0usize;
    for i in 0..pairs.len() {
        let best = (0..pairs.len())
            .max_by(|&a, &b| {
                sims.get(i, a)
                    .partial_cmp(&sims.get(i, b))
                    .unwrap()
                    .then(b.cmp(&a)) // ties go to the lower index
            })
            .unwrap();
        if best == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Argmax-similarity candidate for one image; ties break to the lowest index.
pub fn retrieve_reference_caption(
    image_feature: &[f64],
    candidates: &[Vec<String>],
    model: &RetrievalModel,
    encoders: &EncoderStack,
) -> Result<ReferenceCaption, RetrievalError> {
    if candidates.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let feature = Mat::from_rows(&[image_feature.to_vec()]);
    let img = model.project_images(&feature);
    let embeddings = encoders.sentence.encode(candidates)?.matrix;
    let txt = model.project_sentences(&embeddings);
    let mut best_idx = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (j, cand) in candidates.iter().enumerate() {
        let _ = cand;
        let score = cosine(img.row(0), txt.row(j));
        if score > best_score {
            best_score = score;
            best_idx = j;
        }
    }
    Ok(ReferenceCaption {
        source_index: best_idx,
        score: best_score,
        tokens: candidates[best_idx].clone(),
    })
}

/// Reference captions for every image of a document, retrieved from the
/// golden summary.
pub fn retrieve_reference_captions(
    doc: &MultimodalDocument,
    model: &RetrievalModel,
    encoders: &EncoderStack,
) -> Result<ReferenceCaptionSet, RetrievalError> {
    doc.image_features
        .iter()
        .map(|f| retrieve_reference_caption(f, &doc.golden_summary, model, encoders))
        .collect()
}

/// Retrieval-only ablation: pseudo captions straight from the document
/// sentences, duplicates permitted, no alignment model involved.
pub fn retrieve_from_document(
    doc: &MultimodalDocument,
    model: &RetrievalModel,
    encoders: &EncoderStack,
) -> Result<ReferenceCaptionSet, RetrievalError> {
    doc.image_features
        .iter()
        .map(|f| retrieve_reference_caption(f, &doc.sentences, model, encoders))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Split, SyntheticConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn stack(feature_dim: usize) -> EncoderStack {
        EncoderStack::new(feature_dim, feature_dim, 1, 2, 7)
    }

    fn synth_pairs(num_docs: usize, noise: f64, seed: u64) -> Vec<TrainingPair> {
        let cfg = SyntheticConfig {
            num_docs,
            vocab_size: 120,
            sentences_per_doc: (6, 9),
            images_per_doc: (2, 4),
            feature_dim: 16,
            noise_level: noise,
            seed,
        };
        let set = generate_synthetic(&cfg, Split::Train).unwrap();
        pairs_from_documents(&set.documents)
    }

    #[test]
    fn similarity_identity_and_antipode() {
        let v = vec![0.3, -0.5, 0.8];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn similarity_matches_naive_formula() {
        let mut rng = crate::rng::seeded(13, "sim");
        for _ in 0..50 {
            let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let naive = {
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                dot / (na * nb)
            };
            assert!((similarity(&a, &b).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn triplet_loss_margin_zero_hand_case() {
        // sims [[0.2, 0.6], [0.5, 0.4]]:
        //   i=0: caption-neg hinge max(0, 0.6-0.2)=0.4, image-neg max(0, 0.5-0.2)=0.3
        //   i=1: caption-neg max(0, 0.5-0.4)=0.1, image-neg max(0, 0.6-0.4)=0.2
        // mean over 2 pairs = (0.4+0.3+0.1+0.2)/2 = 0.5
        let sims = Mat::from_vec(2, 2, vec![0.2, 0.6, 0.5, 0.4]);
        assert!((triplet_loss(&sims, 0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn triplet_loss_zero_when_diagonal_dominates_by_margin() {
        let sims = Mat::from_vec(2, 2, vec![0.9, 0.1, 0.2, 0.8]);
        assert_eq!(triplet_loss(&sims, 0.2), 0.0);
    }

    #[test]
    fn training_needs_two_pairs() {
        let enc = stack(4);
        let one = vec![TrainingPair { feature: vec![1.0, 0.0, 0.0, 0.0], caption: vec!["a".into()] }];
        assert_eq!(
            train_retrieval(&one, &enc, &RetrievalConfig::default()).unwrap_err(),
            RetrievalError::NotEnoughPairs(1)
        );
    }

    #[test]
    fn untrained_model_is_near_chance_and_training_reaches_high_recall() {
        let enc = stack(16);
        // ~500 training pairs; held-out pool from the same generator seed
        // (the corpus-wide mark directions must match across splits).
        let train = synth_pairs(140, 0.0, 100);
        let held_out = {
            let cfg = SyntheticConfig {
                num_docs: 12,
                vocab_size: 120,
                sentences_per_doc: (6, 9),
                images_per_doc: (2, 4),
                feature_dim: 16,
                noise_level: 0.0,
                seed: 100,
            };
            let set = generate_synthetic(&cfg, Split::Valid).unwrap();
            pairs_from_documents(&set.documents)
        };
        let pool = held_out.len() as f64;

        // Chance level, averaged over seeds.
        let mut untrained_sum = 0.0;
        for seed in 0..5 {
            let cfg = RetrievalConfig { seed, ..Default::default() };
            let model = RetrievalModel::new(16, enc.model_dim(), &cfg);
            untrained_sum += recall_at_1(&model, &held_out, &enc).unwrap();
        }
        let untrained = untrained_sum / 5.0;
        assert!(
            untrained < 5.0 / pool,
            "untrained recall {untrained} not near chance 1/{pool}"
        );

        let cfg = RetrievalConfig { epochs: 30, ..Default::default() };
        let model = train_retrieval(&train, &enc, &cfg).unwrap();
        let recall = recall_at_1(&model, &held_out, &enc).unwrap();
        assert!(recall >= 0.8, "recall@1 {recall} after training");

        // Held-out loss decreased from initialization.
        let init = RetrievalModel::new(16, enc.model_dim(), &cfg);
        let loss_init = evaluate_loss(&init, &held_out, &enc).unwrap();
        let loss_trained = evaluate_loss(&model, &held_out, &enc).unwrap();
        assert!(loss_trained < loss_init, "{loss_trained} !< {loss_init}");
    }

    #[test]
    fn median_held_out_loss_decreases_over_seeds() {
        let enc = stack(16);
        let train = synth_pairs(40, 0.1, 71);
        let held_out = {
            let cfg = SyntheticConfig {
                num_docs: 10,
                vocab_size: 120,
                sentences_per_doc: (6, 9),
                images_per_doc: (2, 4),
                feature_dim: 16,
                noise_level: 0.1,
                seed: 71,
            };
            let set = generate_synthetic(&cfg, Split::Valid).unwrap();
            pairs_from_documents(&set.documents)
        };
        let mut first_epoch = Vec::new();
        let mut final_epoch = Vec::new();
        for seed in 0..5 {
            let early = RetrievalConfig { epochs: 1, seed, ..Default::default() };
            let late = RetrievalConfig { epochs: 20, seed, ..Default::default() };
            let m1 = train_retrieval(&train, &enc, &early).unwrap();
            let m2 = train_retrieval(&train, &enc, &late).unwrap();
            first_epoch.push(evaluate_loss(&m1, &held_out, &enc).unwrap());
            final_epoch.push(evaluate_loss(&m2, &held_out, &enc).unwrap());
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let early = median(&mut first_epoch);
        let late = median(&mut final_epoch);
        assert!(late < early, "median held-out loss {late} !< {early}");
    }

    #[test]
    fn training_is_deterministic() {
        let enc = stack(16);
        let train = synth_pairs(20, 0.1, 5);
        let cfg = RetrievalConfig { epochs: 3, ..Default::default() };
        let a = train_retrieval(&train, &enc, &cfg).unwrap();
        let b = train_retrieval(&train, &enc, &cfg).unwrap();
        assert_eq!(a.image_head.weight.value, b.image_head.weight.value);
        assert_eq!(a.text_head.weight.value, b.text_head.weight.value);
    }

    #[test]
    fn single_candidate_returns_index_zero() {
        let enc = stack(4);
        let model = RetrievalModel::new(4, enc.model_dim(), &RetrievalConfig::default());
        let got = retrieve_reference_caption(
            &[1.0, 0.0, 0.0, 0.0],
            &[vec!["only".to_string()]],
            &model,
            &enc,
        )
        .unwrap();
        assert_eq!(got.source_index, 0);
    }

    #[test]
    fn identical_candidates_tie_to_first() {
        let enc = stack(4);
        let model = RetrievalModel::new(4, enc.model_dim(), &RetrievalConfig::default());
        let cand = vec!["same same".to_string()];
        let cands: Vec<Vec<String>> = vec![
            cand[0].split_whitespace().map(String::from).collect(),
            cand[0].split_whitespace().map(String::from).collect(),
        ];
        let got =
            retrieve_reference_caption(&[1.0, 0.0, 0.0, 0.0], &cands, &model, &enc).unwrap();
        assert_eq!(got.source_index, 0);
    }

    #[test]
    fn appending_lower_scoring_candidates_keeps_the_argmax() {
        let enc = stack(16);
        let train = synth_pairs(30, 0.0, 77);
        let model = train_retrieval(&train, &enc, &RetrievalConfig::default()).unwrap();
        let probe = &train[0];
        let mut cands: Vec<Vec<String>> = vec![probe.caption.clone()];
        let base = retrieve_reference_caption(&probe.feature, &cands, &model, &enc).unwrap();
        // Keep only junk candidates verified to score strictly lower.
        for i in 0..20 {
            let junk: Vec<String> = vec![format!("zzz{i}"), "qqq".to_string()];
            let solo = retrieve_reference_caption(
                &probe.feature,
                std::slice::from_ref(&junk),
                &model,
                &enc,
            )
            .unwrap();
            if solo.score < base.score {
                cands.push(junk);
            }
        }
        assert!(cands.len() > 3, "expected some strictly lower candidates");
        let extended = retrieve_reference_caption(&probe.feature, &cands, &model, &enc).unwrap();
        assert_eq!(extended.source_index, base.source_index);
        assert!((extended.score - base.score).abs() < 1e-12);
    }

    #[test]
    fn document_retrieval_matches_brute_force_scan() {
        let enc = stack(16);
        let cfg = SyntheticConfig {
            num_docs: 6,
            vocab_size: 120,
            sentences_per_doc: (6, 9),
            images_per_doc: (2, 4),
            feature_dim: 16,
            noise_level: 0.0,
            seed: 55,
        };
        let set = generate_synthetic(&cfg, Split::Test).unwrap();
        let train = synth_pairs(30, 0.0, 56);
        let model = train_retrieval(&train, &enc, &RetrievalConfig::default()).unwrap();
        for doc in &set.documents {
            let refs = retrieve_from_document(doc, &model, &enc).unwrap();
            assert_eq!(refs.len(), doc.image_count());
            // Brute-force scan with the same scorer must agree exactly.
            let embeddings = enc.sentence.encode(&doc.sentences).unwrap().matrix;
            let txt = model.project_sentences(&embeddings);
            for (j, r) in refs.iter().enumerate() {
                let feature = Mat::from_rows(&[doc.image_features[j].clone()]);
                let img = model.project_images(&feature);
                let mut best = (0usize, f64::NEG_INFINITY);
                for s in 0..doc.sentence_count() {
                    let score = cosine(img.row(0), txt.row(s));
                    if score > best.1 {
                        best = (s, score);
                    }
                }
                assert_eq!(r.source_index, best.0);
                assert!((r.score - best.1).abs() < 1e-12);
            }
        }
    }

    proptest! {
        /// Cosine similarity is invariant under positive rescaling.
        #[test]
        fn rescaling_invariance(
            a in proptest::collection::vec(-1.0f64..1.0, 6),
            b in proptest::collection::vec(-1.0f64..1.0, 6),
            sa in 0.1f64..10.0,
            sb in 0.1f64..10.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-6));
            prop_assume!(b.iter().any(|v| v.abs() > 1e-6));
            let scaled_a: Vec<f64> = a.iter().map(|v| v * sa).collect();
            let scaled_b: Vec<f64> = b.iter().map(|v| v * sb).collect();
            let base = similarity(&a, &b).unwrap();
            let scaled = similarity(&scaled_a, &scaled_b).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }
}
