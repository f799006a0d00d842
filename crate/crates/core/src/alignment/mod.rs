//! Coarse-to-fine image-text alignment.
//!
//! Coarse pass: cross attention between sentence and image representations
//! refines each sentence state, a sigmoid scorer picks the n most selectable
//! sentences, trained with binary cross-entropy against retrieval-derived
//! labels. Fine pass: the rows of the attention matrix belonging to the
//! selected sentences form a square weight matrix whose maximum-weight
//! perfect matching assigns exactly one sentence to each image.
//!
//! The attention normalization divides each raw score by its row sum before
//! the softmax (`AttentionMode::RowRatio`); rows whose sum is within 1e-6 of
//! zero skip the division so no forward pass can produce non-finite values.
//! `AttentionMode::ScaledDot` is the conventional `QK/√D` alternative.

mod train;

pub use train::{
    align_document, align_document_with, one_pass_align, one_pass_dedup_align, one_pass_scores,
    train_alignment, train_one_pass, AlignmentConfig, AlignmentModel, TrainReport,
};

use crate::corpus::MultimodalDocument;
use crate::mat::{softmax_rows, Mat};
use crate::matching::{kuhn_munkres, WeightMatrix};
use crate::nn::{sigmoid, Param};
use crate::retrieval::ReferenceCaptionSet;
use crate::rouge::{rouge_l, rouge_n, RougeScore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums with magnitude below this skip the ratio normalization.
pub const RATIO_GUARD_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("sentence and image embeddings have different widths: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("coarse selection produced {selected} sentences for {images} images")]
    SelectionSizeMismatch { selected: usize, images: usize },
    #[error("reference caption set has {got} entries for {expected} images")]
    ReferenceCountMismatch { got: usize, expected: usize },
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Encoder(#[from] crate::encoders::EncoderError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Raw score divided by its row sum, then row softmax.
    RowRatio,
    /// Raw score divided by sqrt(D), then row softmax.
    ScaledDot,
}

/// ROUGE flavor used when building selection labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    RougeL,
    Rouge1,
    Rouge2,
}

impl RougeVariant {
    pub fn score(&self, candidate: &[String], reference: &[String]) -> RougeScore {
        match self {
            RougeVariant::RougeL => rouge_l(candidate, reference),
            RougeVariant::Rouge1 => rouge_n(candidate, reference, 1),
            RougeVariant::Rouge2 => rouge_n(candidate, reference, 2),
        }
    }
}

/// Learnable cross-attention projections, all D×D.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub mode: AttentionMode,
}

/// Everything the coarse pass computes: pre-softmax scores `O`, the
/// row-stochastic attention matrix `A` and the refined sentence states.
#[derive(Debug, Clone)]
pub struct AttentionArtifacts {
    pub scores: Mat,
    pub attention: Mat,
    pub refined: Mat,
}

/// Intermediates needed by the backward pass.
pub struct CrossAttentionCache {
    q: Mat,
    k: Mat,
    v: Mat,
    raw: Mat,
    row_sums: Vec<f64>,
    attention: Mat,
}

impl CrossAttention {
    /// Near-identity initialization: with encoders that start out
    /// geometry-preserving, raw scores begin as sentence-image dot products,
    /// which is what the fine pass needs before any training happens. The
    /// value projection starts small so the image payload does not swamp the
    /// sentence state in the residual sum.
    pub fn new(dim: usize, mode: AttentionMode, jitter: f64, rng: &mut impl rand::Rng) -> Self {
        let mut init = |scale: f64| {
            let mut w = Mat::eye(dim, dim).scale(scale);
            if jitter > 0.0 {
                w.add_assign(&Mat::randn(dim, dim, jitter, rng));
            }
            Param::new(w)
        };
        let wq = init(1.0);
        let wk = init(1.0);
        let wv = init(0.1);
        CrossAttention { wq, wk, wv, mode }
    }

    pub fn dim(&self) -> usize {
        self.wq.value.rows()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv]
    }

    pub fn forward(&self, sentences: &Mat, images: &Mat) -> Result<AttentionArtifacts, AlignmentError> {
        Ok(self.forward_cached(sentences, images)?.0)
    }

    pub fn forward_cached(
        &self,
        sentences: &Mat,
        images: &Mat,
    ) -> Result<(AttentionArtifacts, CrossAttentionCache), AlignmentError> {
        if sentences.cols() != images.cols() {
            return Err(AlignmentError::DimMismatch(sentences.cols(), images.cols()));
        }
        let q = sentences.matmul_nt(&self.wq.value);
        let k = images.matmul_nt(&self.wk.value);
        let v = images.matmul_nt(&self.wv.value);
        let raw = q.matmul_nt(&k);
        let (m, n) = (raw.rows(), raw.cols());
        let mut scores = Mat::zeros(m, n);
        let mut row_sums = Vec::with_capacity(m);
        for i in 0..m {
            let sum: f64 = raw.row(i).iter().sum();
            row_sums.push(sum);
            if self.mode == AttentionMode::ScaledDot {
                let scale = 1.0 / (sentences.cols() as f64).sqrt();
                for j in 0..n {
                    scores.set(i, j, raw.get(i, j) * scale);
                }
            } else if sum.abs() < RATIO_GUARD_EPS {
                // Degenerate denominator: softmax the raw scores instead.
                for j in 0..n {
                    scores.set(i, j, raw.get(i, j));
                }
            } else {
                for j in 0..n {
                    scores.set(i, j, raw.get(i, j) / sum);
                }
            }
        }
        let mut attention = scores.clone();
        softmax_rows(&mut attention);
        let refined = q.add(&attention.matmul(&v));
        Ok((
            AttentionArtifacts { scores, attention: attention.clone(), refined },
            CrossAttentionCache { q, k, v, raw, row_sums, attention },
        ))
    }

    /// Backward from d(refined); accumulates projection gradients and returns
    /// (d_sentences, d_images).
    pub fn backward(
        &mut self,
        sentences: &Mat,
        images: &Mat,
        cache: &CrossAttentionCache,
        drefined: &Mat,
    ) -> (Mat, Mat) {
        let (m, n) = (cache.raw.rows(), cache.raw.cols());
        // refined = Q + A·V.
        let mut dq = drefined.clone();
        let da = drefined.matmul_nt(&cache.v);
        let dv = cache.attention.matmul_tn(drefined);
        // Softmax rows: dO_ij = A_ij (dA_ij − Σ_k dA_ik A_ik).
        let mut dscores = Mat::zeros(m, n);
        for i in 0..m {
            let a_row = cache.attention.row(i);
            let da_row = da.row(i);
            let inner: f64 = a_row.iter().zip(da_row).map(|(a, g)| a * g).sum();
            for j in 0..n {
                dscores.set(i, j, a_row[j] * (da_row[j] - inner));
            }
        }
        // Normalization backward into the raw dot products.
        let mut draw = Mat::zeros(m, n);
        for i in 0..m {
            match self.mode {
                AttentionMode::ScaledDot => {
                    let scale = 1.0 / (sentences.cols() as f64).sqrt();
                    for j in 0..n {
                        draw.set(i, j, dscores.get(i, j) * scale);
                    }
                }
                AttentionMode::RowRatio => {
                    let sum = cache.row_sums[i];
                    if sum.abs() < RATIO_GUARD_EPS {
                        for j in 0..n {
                            draw.set(i, j, dscores.get(i, j));
                        }
                    } else {
                        // o_ij = raw_ij / sum, with sum = Σ_k raw_ik.
                        let mut dsum = 0.0;
                        for j in 0..n {
                            dsum -= dscores.get(i, j) * cache.raw.get(i, j) / (sum * sum);
                        }
                        for j in 0..n {
                            draw.set(i, j, dscores.get(i, j) / sum + dsum);
                        }
                    }
                }
            }
        }
        // raw = Q Kᵀ.
        dq.add_assign(&draw.matmul(&cache.k));
        let dk = draw.matmul_tn(&cache.q);
        // Q = G Wqᵀ etc.
        self.wq.grad.add_assign(&dq.matmul_tn(sentences));
        self.wk.grad.add_assign(&dk.matmul_tn(images));
        self.wv.grad.add_assign(&dv.matmul_tn(images));
        let dsentences = dq.matmul(&self.wq.value);
        let dimages = dk.matmul(&self.wk.value).add(&dv.matmul(&self.wv.value));
        (dsentences, dimages)
    }
}

/// Sigmoid selection scorer: p_i = σ(w·ġ_i + b).
#[derive(Debug, Clone)]
pub struct Scorer {
    pub weight: Param,
    pub bias: Param,
}

impl Scorer {
    pub fn new(dim: usize, rng: &mut impl rand::Rng) -> Self {
        Scorer {
            weight: Param::new(Mat::randn(1, dim, (1.0 / dim as f64).sqrt(), rng)),
            bias: Param::new(Mat::zeros(1, 1)),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, refined: &Mat) -> Vec<f64> {
        (0..refined.rows())
            .map(|i| {
                sigmoid(crate::mat::dot(refined.row(i), self.weight.value.row(0))
                    + self.bias.value.get(0, 0))
            })
            .collect()
    }

    /// Fused sigmoid+BCE backward: dz_i = (p_i − y_i)/m. Accumulates scorer
    /// gradients and returns d(refined).
    pub fn backward_bce(&mut self, refined: &Mat, p: &[f64], labels: &SelectionLabels) -> Mat {
        let m = p.len() as f64;
        let mut drefined = Mat::zeros(refined.rows(), refined.cols());
        for i in 0..refined.rows() {
            let y = if labels.y[i] { 1.0 } else { 0.0 };
            let dz = (p[i] - y) / m;
            self.bias.grad.add_at(0, 0, dz);
            for (j, &g) in refined.row(i).iter().enumerate() {
                self.weight.grad.add_at(0, j, dz * g);
                drefined.set(i, j, dz * self.weight.value.get(0, j));
            }
        }
        drefined
    }
}

/// Computes p from refined states; standalone form of the scorer op.
pub fn score_sentences(refined: &Mat, scorer: &Scorer) -> Vec<f64> {
    scorer.forward(refined)
}

/// Binary selection labels; exactly min(n, m) ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionLabels {
    pub y: Vec<bool>,
}

impl SelectionLabels {
    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&b| b).count()
    }
}

/// Labels the best-ROUGE sentence for each image's reference caption, taking
/// the next-highest unlabeled sentence when the best is already taken; ties
/// break to the lowest sentence index. Stops early when every sentence is
/// labeled (m < n).
pub fn build_labels(
    doc: &MultimodalDocument,
    refs: &ReferenceCaptionSet,
    variant: RougeVariant,
) -> Result<SelectionLabels, AlignmentError> {
    if refs.len() != doc.image_count() {
        return Err(AlignmentError::ReferenceCountMismatch {
            got: refs.len(),
            expected: doc.image_count(),
        });
    }
    let m = doc.sentence_count();
    let mut y = vec![false; m];
    let mut labeled = 0usize;
    for reference in refs {
        if labeled == m {
            break;
        }
        let mut order: Vec<usize> = (0..m).collect();
        let scores: Vec<f64> =
            doc.sentences.iter().map(|s| variant.score(s, &reference.tokens).f1).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        if let Some(&pick) = order.iter().find(|&&i| !y[i]) {
            y[pick] = true;
            labeled += 1;
        }
    }
    Ok(SelectionLabels { y })
}

/// Mean binary cross-entropy with logs clamped at 1e-12.
pub fn bce_loss(p: &[f64], labels: &SelectionLabels) -> f64 {
    assert_eq!(p.len(), labels.y.len(), "probability/label length mismatch");
    let eps = 1e-12;
    let m = p.len() as f64;
    let mut total = 0.0;
    for (pi, &yi) in p.iter().zip(&labels.y) {
        let pi = pi.clamp(eps, 1.0 - eps);
        total -= if yi { pi.ln() } else { (1.0 - pi).ln() };
    }
    total / m
}

/// Indices of the min(n, m) highest-probability sentences, ordered by
/// descending probability; ties break to the lowest index.
pub fn coarse_select(p: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    order.truncate(n.min(p.len()));
    order
}

/// Alternative coarse pass: sentences whose probability clears `threshold`.
/// The fine pass needs exactly min(n, m) rows, so the thresholded set is
/// padded with the next-best sentences (or truncated) by probability order.
pub fn coarse_select_threshold(p: &[f64], n: usize, threshold: f64) -> Vec<usize> {
    let ranked = coarse_select(p, p.len());
    let want = n.min(p.len());
    let mut out: Vec<usize> = ranked.iter().copied().filter(|&i| p[i] >= threshold).collect();
    if out.len() > want {
        out.truncate(want);
    } else {
        for &i in &ranked {
            if out.len() == want {
                break;
            }
            if !out.contains(&i) {
                out.push(i);
            }
        }
    }
    out
}

/// Fine-grained one-to-one assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FineAssignment {
    /// Per image j: index into `z` of the assigned selected sentence, or
    /// `None` when the image was matched to a zero-weight padding row
    /// (only possible when |z| < n).
    pub slot_of_image: Vec<Option<usize>>,
    /// Attention weight of each matched pair (0 for padding rows).
    pub weight_of_image: Vec<f64>,
    pub total_weight: f64,
}

/// Stacks rows `z` of the attention matrix into Ȧ and solves the
/// maximum-weight perfect matching. When fewer sentences than images are
/// selected, Ȧ is padded with zero-weight rows so a perfect matching still
/// exists.
pub fn fine_align(attention: &Mat, z: &[usize]) -> Result<FineAssignment, AlignmentError> {
    let n = attention.cols();
    if z.len() > n {
        return Err(AlignmentError::SelectionSizeMismatch { selected: z.len(), images: n });
    }
    let mut rows: Vec<Vec<f64>> = z.iter().map(|&i| attention.row(i).to_vec()).collect();
    while rows.len() < n {
        rows.push(vec![0.0; n]);
    }
    let w = WeightMatrix::new(Mat::from_rows(&rows)).expect("attention weights are finite");
    let matching = kuhn_munkres(&w);
    let slot_of_image: Vec<Option<usize>> =
        matching.perm.iter().map(|&slot| if slot < z.len() { Some(slot) } else { None }).collect();
    let weight_of_image: Vec<f64> =
        matching.perm.iter().enumerate().map(|(j, &slot)| w.get(slot, j)).collect();
    Ok(FineAssignment { slot_of_image, weight_of_image, total_weight: matching.total_weight })
}

/// Final per-document alignment output: one pseudo caption per image.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentAssignment {
    pub doc_id: String,
    /// Per image: document sentence index of its pseudo caption.
    pub sentence_of_image: Vec<usize>,
    /// Attention weight of the matched pair (0 when the image fell on a
    /// padding row and reuses the highest-probability sentence).
    pub weight_of_image: Vec<f64>,
    pub pseudo_captions: Vec<Vec<String>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_params;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn hand_computed_row_ratio_attention() {
        // G = [[1,0],[0,2]], C = [[1,1],[1,-1]], Wq = Wk = I, Wv = 0.5 I.
        // Raw scores S = [[1,1],[2,-2]]; row 0 sum 2 → O₀ = [0.5, 0.5];
        // row 1 sum 0 → guard keeps O₁ = [2,-2].
        let mut rng = seeded(0, "unused");
        let mut cross = CrossAttention::new(2, AttentionMode::RowRatio, 0.0, &mut rng);
        cross.wv.value = Mat::from_vec(2, 2, vec![0.5, 0.0, 0.0, 0.5]);
        let g = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        let c = Mat::from_vec(2, 2, vec![1.0, 1.0, 1.0, -1.0]);
        let art = cross.forward(&g, &c).unwrap();

        assert!((art.scores.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((art.scores.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((art.scores.get(1, 0) - 2.0).abs() < 1e-12);
        assert!((art.scores.get(1, 1) + 2.0).abs() < 1e-12);

        // A row 0: softmax(0.5, 0.5) = (0.5, 0.5).
        assert!((art.attention.get(0, 0) - 0.5).abs() < 1e-10);
        // A row 1: softmax(2, -2).
        let e2 = (2.0f64).exp();
        let em2 = (-2.0f64).exp();
        let a10 = e2 / (e2 + em2);
        assert!((art.attention.get(1, 0) - a10).abs() < 1e-10);
        assert!((art.attention.get(1, 1) - (1.0 - a10)).abs() < 1e-10);

        // refined₀ = Q₀ + 0.5·V₁ + 0.5·V₂ = (1,0) + (0.5, 0) = (1.5, 0).
        assert!((art.refined.get(0, 0) - 1.5).abs() < 1e-10);
        assert!(art.refined.get(0, 1).abs() < 1e-10);
        // refined₁ = (0,2) + a10·(0.5,0.5) + (1-a10)·(0.5,-0.5).
        let r10 = 0.5;
        let r11 = 2.0 + 0.5 * a10 - 0.5 * (1.0 - a10);
        assert!((art.refined.get(1, 0) - r10).abs() < 1e-10);
        assert!((art.refined.get(1, 1) - r11).abs() < 1e-10);
        assert!((r11 - 2.4820137900379085).abs() < 1e-10);
    }

    #[test]
    fn single_image_attention_is_all_ones() {
        let mut rng = seeded(1, "n1");
        let cross = CrossAttention::new(3, AttentionMode::RowRatio, 0.05, &mut rng);
        let g = Mat::randn(4, 3, 1.0, &mut rng);
        let c = Mat::randn(1, 3, 1.0, &mut rng);
        let art = cross.forward(&g, &c).unwrap();
        for i in 0..4 {
            assert!((art.attention.get(i, 0) - 1.0).abs() < 1e-12);
        }
        // refined_i = Q_i + V_1.
        let q = g.matmul_nt(&cross.wq.value);
        let v = c.matmul_nt(&cross.wv.value);
        for i in 0..4 {
            for j in 0..3 {
                assert!((art.refined.get(i, j) - (q.get(i, j) + v.get(0, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic_and_finite_under_adversarial_inputs() {
        let mut rng = seeded(2, "adversarial");
        let cross = CrossAttention::new(4, AttentionMode::RowRatio, 0.0, &mut rng);
        // Zero sentence vectors, antipodal image pairs (row sums exactly 0),
        // and huge magnitudes.
        let g = Mat::from_rows(&[
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1e8, -1e8, 1e8, -1e8],
            vec![1.0, 1.0, 1.0, 1.0],
        ]);
        let c = Mat::from_rows(&[vec![1.0, 2.0, -1.0, 0.5], vec![-1.0, -2.0, 1.0, -0.5]]);
        let art = cross.forward(&g, &c).unwrap();
        assert!(art.scores.is_finite());
        assert!(art.attention.is_finite());
        assert!(art.refined.is_finite());
        for i in 0..3 {
            let sum: f64 = art.attention.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn cross_attention_gradient_check_both_modes() {
        for mode in [AttentionMode::RowRatio, AttentionMode::ScaledDot] {
            let mut rng = seeded(3, "crossgrad");
            let mut cross = CrossAttention::new(4, mode, 0.3, &mut rng);
            let g = Mat::randn(5, 4, 1.0, &mut rng);
            let c = Mat::randn(3, 4, 1.0, &mut rng);
            let target = Mat::randn(5, 4, 1.0, &mut rng);

            let (art, cache) = cross.forward_cached(&g, &c).unwrap();
            let diff = art.refined.add(&target.scale(-1.0));
            cross.backward(&g, &c, &cache, &diff);
            let report = check_params(
                &mut cross,
                |cr| cr.params_mut(),
                |cr| {
                    let art = cr.forward(&g, &c).unwrap();
                    let diff = art.refined.add(&target.scale(-1.0));
                    0.5 * diff.data().iter().map(|v| v * v).sum::<f64>()
                },
                1e-5,
            );
            assert!(report.max_rel_err < 1e-5, "{mode:?} rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn scorer_matches_independent_sigmoid_computation() {
        let mut rng = seeded(4, "scorer");
        let scorer = Scorer::new(4, &mut rng);
        let refined = Mat::randn(6, 4, 1.0, &mut rng);
        let p = score_sentences(&refined, &scorer);
        for i in 0..6 {
            let z: f64 = refined
                .row(i)
                .iter()
                .zip(scorer.weight.value.row(0))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + scorer.bias.value.get(0, 0);
            let expected = 1.0 / (1.0 + (-z).exp());
            assert!((p[i] - expected).abs() < 1e-12);
            assert!(p[i] > 0.0 && p[i] < 1.0);
        }
    }

    #[test]
    fn zero_scorer_outputs_half_and_saturates_at_large_bias() {
        let mut rng = seeded(5, "scorer2");
        let mut scorer = Scorer::new(3, &mut rng);
        scorer.weight.value.fill(0.0);
        let refined = Mat::randn(4, 3, 1.0, &mut rng);
        for p in score_sentences(&refined, &scorer) {
            assert!((p - 0.5).abs() < 1e-15);
        }
        scorer.bias.value.set(0, 0, 30.0);
        for p in score_sentences(&refined, &scorer) {
            assert!(p > 1.0 - 1e-9);
        }
    }

    #[test]
    fn bce_hand_values() {
        let labels = SelectionLabels { y: vec![true, false, true] };
        // p = y (with clamping) → loss ~ 0.
        assert!(bce_loss(&[1.0, 0.0, 1.0], &labels) <= 1e-11);
        // p = 0.5 → loss = ln 2.
        let uniform = bce_loss(&[0.5, 0.5, 0.5], &labels);
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_oracle_formula_on_random_case() {
        let mut rng = seeded(6, "bce");
        use rand::Rng;
        let p: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..0.99)).collect();
        let labels = SelectionLabels { y: vec![true, false, false] };
        let oracle = -(p[0].ln() + (1.0 - p[1]).ln() + (1.0 - p[2]).ln()) / 3.0;
        assert!((bce_loss(&p, &labels) - oracle).abs() < 1e-12);
    }

    #[test]
    fn labels_select_exact_match_then_next_best() {
        // Sentences: s0 "alpha beta gamma", s1 "alpha beta delta", s2 "zeta eta".
        // Both refs are "alpha beta gamma": image 0 labels s0 (self-match),
        // image 1 falls back to s1 (next-highest ROUGE-L).
        let doc = MultimodalDocument {
            doc_id: "t".into(),
            sentences: vec![toks("alpha beta gamma"), toks("alpha beta delta"), toks("zeta eta")],
            image_features: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            golden_summary: vec![toks("alpha beta gamma")],
            golden_captions: None,
            salient_image_refs: None,
        };
        let refs = vec![
            crate::retrieval::ReferenceCaption { source_index: 0, score: 1.0, tokens: toks("alpha beta gamma") },
            crate::retrieval::ReferenceCaption { source_index: 0, score: 1.0, tokens: toks("alpha beta gamma") },
        ];
        let labels = build_labels(&doc, &refs, RougeVariant::RougeL).unwrap();
        assert_eq!(labels.y, vec![true, true, false]);
    }

    #[test]
    fn labels_cap_at_sentence_count() {
        let doc = MultimodalDocument {
            doc_id: "t".into(),
            sentences: vec![toks("a b"), toks("c d")],
            image_features: vec![vec![1.0], vec![2.0], vec![3.0]],
            golden_summary: vec![toks("a b")],
            golden_captions: None,
            salient_image_refs: None,
        };
        let refs = vec![
            crate::retrieval::ReferenceCaption { source_index: 0, score: 0.0, tokens: toks("a b") },
            crate::retrieval::ReferenceCaption { source_index: 0, score: 0.0, tokens: toks("c d") },
            crate::retrieval::ReferenceCaption { source_index: 0, score: 0.0, tokens: toks("a d") },
        ];
        let labels = build_labels(&doc, &refs, RougeVariant::RougeL).unwrap();
        assert_eq!(labels.positives(), 2);
        // Idempotent.
        let again = build_labels(&doc, &refs, RougeVariant::RougeL).unwrap();
        assert_eq!(labels, again);
    }

    #[test]
    fn coarse_select_hand_cases() {
        // p = [0.9, 0.1, 0.8], n = 2 → [0, 2] (descending probability).
        assert_eq!(coarse_select(&[0.9, 0.1, 0.8], 2), vec![0, 2]);
        // All equal → lowest indices first.
        assert_eq!(coarse_select(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
        // n > m → every index.
        assert_eq!(coarse_select(&[0.3, 0.7], 5), vec![1, 0]);
    }

    #[test]
    fn coarse_threshold_pads_and_truncates() {
        let p = [0.9, 0.2, 0.8, 0.6];
        // Threshold keeps {0, 2}, padding brings in 3 to reach n = 3.
        assert_eq!(coarse_select_threshold(&p, 3, 0.7), vec![0, 2, 3]);
        // Threshold admits more than n → truncate to the top n.
        assert_eq!(coarse_select_threshold(&p, 2, 0.5), vec![0, 2]);
        // Nothing clears the bar → pure top-n fallback.
        assert_eq!(coarse_select_threshold(&p, 2, 0.99), vec![0, 2]);
    }

    #[test]
    fn fine_align_identity_dominant() {
        let a = Mat::from_rows(&[
            vec![0.9, 0.05, 0.05],
            vec![0.05, 0.9, 0.05],
            vec![0.05, 0.05, 0.9],
        ]);
        let fa = fine_align(&a, &[0, 1, 2]).unwrap();
        assert_eq!(fa.slot_of_image, vec![Some(0), Some(1), Some(2)]);
        assert!((fa.total_weight - 2.7).abs() < 1e-12);
    }

    #[test]
    fn fine_align_three_by_three_matches_enumeration() {
        // Same matrix as the matching oracle case: optimum 1.6 with
        // col0→row1, col1→row0, col2→row2.
        let a = Mat::from_rows(&[
            vec![0.5, 0.4, 0.1],
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.2, 0.6],
        ]);
        let fa = fine_align(&a, &[0, 1, 2]).unwrap();
        assert_eq!(fa.slot_of_image, vec![Some(1), Some(0), Some(2)]);
        assert!((fa.total_weight - 1.6).abs() < 1e-12);
    }

    #[test]
    fn fine_align_pads_when_fewer_sentences_than_images() {
        // m = 2 selected sentences, n = 3 images: one image lands on padding.
        let a = Mat::from_rows(&[vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1]]);
        let fa = fine_align(&a, &[0, 1]).unwrap();
        assert_eq!(fa.slot_of_image.iter().filter(|s| s.is_none()).count(), 1);
        assert_eq!(fa.slot_of_image[0], Some(0));
        assert_eq!(fa.slot_of_image[1], Some(1));
        assert_eq!(fa.slot_of_image[2], None);
    }

    #[test]
    fn fine_align_agrees_with_brute_force_on_random_matrices() {
        use rand::Rng;
        let mut rng = seeded(7, "finebf");
        for _ in 0..50 {
            let n = rng.gen_range(2..=5usize);
            let a = Mat::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
            let z: Vec<usize> = (0..n).collect();
            let fa = fine_align(&a, &z).unwrap();
            let w = WeightMatrix::new(a.clone()).unwrap();
            let bf = crate::matching::brute_force_matching(&w).unwrap();
            assert_eq!(fa.total_weight, bf.total_weight);
        }
    }

    proptest! {
        /// Every forward pass emits a row-stochastic attention matrix.
        #[test]
        fn attention_rows_always_sum_to_one(
            g_entries in proptest::collection::vec(-3.0f64..3.0, 12),
            c_entries in proptest::collection::vec(-3.0f64..3.0, 8),
        ) {
            let mut rng = seeded(8, "prop");
            let cross = CrossAttention::new(4, AttentionMode::RowRatio, 0.2, &mut rng);
            let g = Mat::from_vec(3, 4, g_entries);
            let c = Mat::from_vec(2, 4, c_entries);
            let art = cross.forward(&g, &c).unwrap();
            prop_assert!(art.attention.is_finite());
            for i in 0..3 {
                let sum: f64 = art.attention.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-6);
            }
        }

        /// Labels always contain exactly min(n, m) positives.
        #[test]
        fn labels_have_min_nm_positives(
            m in 1usize..6,
            n in 1usize..6,
        ) {
            let doc = MultimodalDocument {
                doc_id: "p".into(),
                sentences: (0..m).map(|i| vec![format!("tok{i}"), "x".to_string()]).collect(),
                image_features: (0..n).map(|j| vec![j as f64, 1.0]).collect(),
                golden_summary: vec![vec!["x".to_string()]],
                golden_captions: None,
                salient_image_refs: None,
            };
            let refs: ReferenceCaptionSet = (0..n)
                .map(|j| crate::retrieval::ReferenceCaption {
                    source_index: 0,
                    score: 0.0,
                    tokens: vec![format!("tok{}", j % m)],
                })
                .collect();
            let labels = build_labels(&doc, &refs, RougeVariant::RougeL).unwrap();
            prop_assert_eq!(labels.positives(), n.min(m));
        }
    }
}
