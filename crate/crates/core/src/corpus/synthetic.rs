//! Planted-alignment synthetic corpus.
//!
//! Every document plants, for each image, exactly one sentence whose tokens
//! are the vocabulary entries best aligned (in lexicon space) with that
//! image's feature direction blended with a per-document topic direction,
//! plus corpus-wide mark tokens (and, for salient images, salient marks). The
//! golden
//! summary is the concatenation of the salient images' planted sentences, so
//! retrieval, alignment, summarization and selection all have recoverable
//! ground truth. At noise 0 the planted sentence is the nearest sentence to
//! its image by construction, which is the oracle the alignment tests lean
//! on.

use super::{CorpusError, DocumentSet, MultimodalDocument, Split, SyntheticConfig};
use crate::encoders::Lexicon;
use crate::mat::{dot, norm};
use crate::rng::seeded;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;

/// Blend weight of the per-document topic direction in planted tokens; keeps
/// planted sentences of one document lexically related, so label overflow
/// cascades within the planted family instead of leaking onto fillers.
const TOPIC_WEIGHT: f64 = 0.35;
/// Fixed tokens appended to every planted sentence (corpus-wide): the
/// selectable class stays identifiable across documents.
const BASE_MARK_TOKENS: usize = 3;
/// Fixed tokens appended only to salient images' planted sentences:
/// summary-worthiness is readable from tokens alone.
const SALIENT_MARK_TOKENS: usize = 2;
/// Shared cross-modal component blended into every image feature, mirroring
/// the common subspace a jointly trained encoder pair settles into; keeps
/// sentence-image score rows away from sign-flipping territory.
const IMAGE_MARK_WEIGHT: f64 = 0.4;
/// Image features within a document are resampled above this pairwise |cos|.
const MAX_PAIRWISE_COS: f64 = 0.4;
const CAPTION_LEN: (usize, usize) = (9, 12);

/// Where each planted sentence landed: `sentence_for_image[j]` is the
/// document sentence index of image j's planted sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantMap {
    pub doc_id: String,
    pub sentence_for_image: Vec<usize>,
}

pub fn generate_synthetic(
    config: &SyntheticConfig,
    split: Split,
) -> Result<DocumentSet, CorpusError> {
    Ok(generate_synthetic_with_plants(config, split)?.0)
}

/// Also returns the plant map used by test oracles.
pub fn generate_synthetic_with_plants(
    config: &SyntheticConfig,
    split: Split,
) -> Result<(DocumentSet, Vec<PlantMap>), CorpusError> {
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(CorpusError::InvalidConfig(problems));
    }
    let lexicon = Lexicon::new(config.feature_dim);
    let vocab: Vec<String> = (0..config.vocab_size).map(|k| format!("w{k:04}")).collect();
    let vocab_embeds: Vec<Vec<f64>> = vocab.iter().map(|t| lexicon.embed(t)).collect();
    // Mark directions are shared across splits generated from the same seed,
    // so models trained on one split generalize to the others.
    let base_mark = unit_vector(config.feature_dim, &mut seeded(config.seed, "synth-base-mark"));
    let salient_mark =
        unit_vector(config.feature_dim, &mut seeded(config.seed, "synth-salient-mark"));
    let base_tokens = top_tokens(&vocab_embeds, &base_mark, BASE_MARK_TOKENS, &[]);
    let salient_tokens =
        top_tokens(&vocab_embeds, &salient_mark, SALIENT_MARK_TOKENS, &base_tokens);
    let filler_ids: Vec<usize> = (0..vocab.len())
        .filter(|k| !base_tokens.contains(k) && !salient_tokens.contains(k))
        .collect();

    let mut documents = Vec::with_capacity(config.num_docs);
    let mut plants = Vec::with_capacity(config.num_docs);
    for d in 0..config.num_docs {
        let mut rng = seeded(config.seed, &format!("synth-{split}-doc-{d}"));
        let n = rng.gen_range(config.images_per_doc.0..=config.images_per_doc.1);
        let m = rng
            .gen_range(config.sentences_per_doc.0..=config.sentences_per_doc.1)
            .max(n);
        let topic = unit_vector(config.feature_dim, &mut rng);

        // Mutually dissimilar base directions keep per-image argmaxes unique;
        // the shared mark component is added afterwards (a row-constant score
        // offset that cannot change any argmax).
        let mut bases: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = unit_vector(config.feature_dim, &mut rng);
            for _ in 0..80 {
                if bases.iter().all(|f| dot(f, &v).abs() <= MAX_PAIRWISE_COS) {
                    break;
                }
                v = unit_vector(config.feature_dim, &mut rng);
            }
            bases.push(v);
        }
        let features: Vec<Vec<f64>> = bases
            .iter()
            .map(|v| {
                let mut blended: Vec<f64> = v
                    .iter()
                    .zip(&base_mark)
                    .map(|(a, b)| a + IMAGE_MARK_WEIGHT * b)
                    .collect();
                let len = norm(&blended).max(1e-12);
                for x in &mut blended {
                    *x /= len;
                }
                blended
            })
            .collect();

        // Proper random salient subset (at least one, not all when n > 1).
        // Fixups pick by feature content, not index, so no image position is
        // systematically more likely to be salient.
        let mut salient: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if salient.is_empty() {
            let by_feature = (0..n)
                .max_by(|&a, &b| features[a][0].partial_cmp(&features[b][0]).unwrap())
                .unwrap();
            salient.insert(by_feature);
        }
        if salient.len() == n && n > 1 {
            let by_feature = (0..n)
                .min_by(|&a, &b| features[a][0].partial_cmp(&features[b][0]).unwrap())
                .unwrap();
            salient.remove(&by_feature);
        }

        let mut planted: Vec<Vec<String>> = Vec::with_capacity(n);
        for (j, feature) in features.iter().enumerate() {
            let is_salient = salient.contains(&j);
            let mut blend: Vec<f64> = (0..config.feature_dim)
                .map(|d| feature[d] + TOPIC_WEIGHT * topic[d])
                .collect();
            let len = norm(&blend).max(1e-12);
            for b in &mut blend {
                *b /= len;
            }
            let caption_len = rng.gen_range(CAPTION_LEN.0..=CAPTION_LEN.1);
            let mark_count =
                BASE_MARK_TOKENS + if is_salient { SALIENT_MARK_TOKENS } else { 0 };
            let skip: Vec<usize> = base_tokens.iter().chain(&salient_tokens).copied().collect();
            let blend_ranked = top_tokens(&vocab_embeds, &blend, caption_len - mark_count, &skip);
            let mut token_ids: Vec<usize> = blend_ranked;
            token_ids.extend_from_slice(&base_tokens);
            if is_salient {
                token_ids.extend_from_slice(&salient_tokens);
            }
            let mut tokens: Vec<String> = token_ids.iter().map(|&k| vocab[k].clone()).collect();
            for t in &mut tokens {
                if config.noise_level > 0.0 && rng.gen_bool(config.noise_level) {
                    *t = vocab[rng.gen_range(0..vocab.len())].clone();
                }
            }
            // Planted sentences must be pairwise distinct within a document;
            // perturb the leading blend token until they are.
            let mut bump = caption_len;
            while planted.contains(&tokens) {
                tokens[0] = vocab[bump % vocab.len()].clone();
                bump += 1;
            }
            planted.push(tokens);
        }

        // Fillers draw from the body vocabulary: mark tokens belong to the
        // summary register and never occur in filler text.
        let mut sentences: Vec<Vec<String>> = (0..m - n)
            .map(|_| {
                let len = rng.gen_range(CAPTION_LEN.0..=CAPTION_LEN.1);
                (0..len)
                    .map(|_| vocab[filler_ids[rng.gen_range(0..filler_ids.len())]].clone())
                    .collect()
            })
            .collect();
        // Choose distinct final positions for the planted sentences.
        // Inserting in ascending position order lands each sentence exactly
        // at its final index (the k-th smallest of n values below m is at
        // most m-n+k, so every insert is in range).
        let mut positions: Vec<usize> = (0..m).collect();
        positions.shuffle(&mut rng);
        let plant_positions: Vec<usize> = positions[..n].to_vec();
        let mut insertions: Vec<(usize, usize)> =
            plant_positions.iter().enumerate().map(|(image, &pos)| (pos, image)).collect();
        insertions.sort_unstable();
        for &(pos, image) in &insertions {
            sentences.insert(pos, planted[image].clone());
        }

        let golden_summary: Vec<Vec<String>> =
            salient.iter().map(|&j| planted[j].clone()).collect();

        let doc_id = format!("{split}-{d:04}");
        documents.push(MultimodalDocument {
            doc_id: doc_id.clone(),
            sentences,
            image_features: features,
            golden_summary,
            golden_captions: Some(planted),
            salient_image_refs: Some(salient),
        });
        plants.push(PlantMap { doc_id, sentence_for_image: plant_positions });
    }
    Ok((DocumentSet::new(documents, split)?, plants))
}

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let m = crate::mat::Mat::randn(1, dim, 1.0, rng);
    let len = norm(m.row(0)).max(1e-12);
    m.row(0).iter().map(|v| v / len).collect()
}

/// Vocabulary ids of the `count` best-aligned tokens with `direction`,
/// skipping any id in `exclude`; ties break to the lower id.
fn top_tokens(
    vocab_embeds: &[Vec<f64>],
    direction: &[f64],
    count: usize,
    exclude: &[usize],
) -> Vec<usize> {
    let mut ranked: Vec<usize> =
        (0..vocab_embeds.len()).filter(|k| !exclude.contains(k)).collect();
    ranked.sort_by(|&a, &b| {
        dot(&vocab_embeds[b], direction)
            .partial_cmp(&dot(&vocab_embeds[a], direction))
            .unwrap()
            .then(a.cmp(&b))
    });
    ranked.truncate(count);
    ranked
}
