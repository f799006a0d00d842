//! Self-contained ROUGE-1/2/L scorers.
//!
//! Used for selection-label construction, salient-image selection and the
//! evaluation harness, all over the one token stream produced at ingestion.
//! No stemming, no stopword removal.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Precision / recall / balanced F for one candidate-reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore { precision: 0.0, recall: 0.0, f1: 0.0 };

    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore { precision, recall, f1 }
    }
}

/// Clipped n-gram overlap ROUGE-N for n in {1, 2}.
///
/// Empty candidate or reference scores zero.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n == 1 || n == 2, "rouge_n supports n = 1 or 2");
    if candidate.len() < n || reference.len() < n {
        return RougeScore::ZERO;
    }
    let cand_grams = ngram_counts(candidate, n);
    let ref_grams = ngram_counts(reference, n);
    let cand_total: usize = cand_grams.values().sum();
    let ref_total: usize = ref_grams.values().sum();
    let mut overlap = 0usize;
    for (gram, &c) in &cand_grams {
        if let Some(&r) = ref_grams.get(gram) {
            overlap += c.min(r);
        }
    }
    RougeScore::from_pr(overlap as f64 / cand_total as f64, overlap as f64 / ref_total as f64)
}

/// LCS-based ROUGE-L over single token sequences.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    RougeScore::from_pr(lcs / candidate.len() as f64, lcs / reference.len() as f64)
}

/// Summary-level ROUGE-L via union-LCS.
///
/// For each reference sentence r_i, the positions of r_i that participate in
/// an LCS with any candidate sentence are unioned; u_i is the union size.
/// Recall is Σ u_i over total reference tokens, precision is Σ u_i over total
/// candidate tokens, and F is their harmonic mean. A single-sentence pair
/// reduces exactly to [`rouge_l`]. Empty inputs score zero.
pub fn rouge_l_multi<S: AsRef<str>>(candidate: &[Vec<S>], reference: &[Vec<S>]) -> RougeScore {
    let cand_tokens: usize = candidate.iter().map(|s| s.len()).sum();
    let ref_tokens: usize = reference.iter().map(|s| s.len()).sum();
    if cand_tokens == 0 || ref_tokens == 0 {
        return RougeScore::ZERO;
    }
    let mut union_total = 0usize;
    for r in reference {
        if r.is_empty() {
            continue;
        }
        let mut hit = vec![false; r.len()];
        for c in candidate {
            if c.is_empty() {
                continue;
            }
            for pos in lcs_positions(r, c) {
                hit[pos] = true;
            }
        }
        union_total += hit.iter().filter(|&&h| h).count();
    }
    RougeScore::from_pr(
        union_total as f64 / cand_tokens as f64,
        union_total as f64 / ref_tokens as f64,
    )
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut map = HashMap::new();
    for window in tokens.windows(n) {
        let gram: Vec<&str> = window.iter().map(|t| t.as_ref()).collect();
        *map.entry(gram).or_insert(0) += 1;
    }
    map
}

/// Two-row LCS length DP, O(|a|·|b|).
fn lcs_len<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return 0;
    }
    let mut prev = vec![0usize; m + 1];
    let mut curr = vec![0usize; m + 1];
    for i in 1..=n {
        for j in 1..=m {
            curr[j] = if a[i - 1].as_ref() == b[j - 1].as_ref() {
                prev[j - 1] + 1
            } else {
                prev[j].max(curr[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Positions of `a` that belong to one LCS of (a, b), via full-table backtrace.
fn lcs_positions<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> Vec<usize> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            dp[i][j] = if a[i - 1].as_ref() == b[j - 1].as_ref() {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if a[i - 1].as_ref() == b[j - 1].as_ref() {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if dp[i - 1][j] >= dp[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    /// Independent recursive-memoized LCS used only as a test oracle.
    fn lcs_oracle(a: &[String], b: &[String]) -> usize {
        fn rec(
            a: &[String],
            b: &[String],
            i: usize,
            j: usize,
            memo: &mut HashMap<(usize, usize), usize>,
        ) -> usize {
            if i == 0 || j == 0 {
                return 0;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let v = if a[i - 1] == b[j - 1] {
                rec(a, b, i - 1, j - 1, memo) + 1
            } else {
                rec(a, b, i - 1, j, memo).max(rec(a, b, i, j - 1, memo))
            };
            memo.insert((i, j), v);
            v
        }
        rec(a, b, a.len(), b.len(), &mut HashMap::new())
    }

    #[test]
    fn rouge_n_identical_sequences() {
        let t = toks("a b c d");
        for n in [1, 2] {
            let s = rouge_n(&t, &t, n);
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn rouge_1_hand_count() {
        // cand "a b c" vs ref "a b d": unigram overlap 2 of 3 on both sides.
        let s = rouge_n(&toks("a b c"), &toks("a b d"), 1);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rouge_n_disjoint_vocabularies() {
        let s = rouge_n(&toks("a b"), &toks("x y"), 1);
        assert_eq!(s, RougeScore::ZERO);
    }

    #[test]
    fn rouge_n_clips_repeated_grams() {
        // cand has "a" twice, ref once: clipped overlap is 1.
        let s = rouge_n(&toks("a a"), &toks("a b"), 1);
        assert!((s.precision - 0.5).abs() < 1e-15);
        assert!((s.recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_hand_dp_case() {
        // LCS("a c b", "a b c") has length 2.
        let s = rouge_l(&toks("a c b"), &toks("a b c"));
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_empty_inputs_are_zero() {
        assert_eq!(rouge_l(&toks(""), &toks("a")), RougeScore::ZERO);
        assert_eq!(rouge_l(&toks("a"), &toks("")), RougeScore::ZERO);
    }

    #[test]
    fn rouge_l_matches_independent_oracle_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let vocab = ["a", "b", "c", "d", "e"];
        for _ in 0..200 {
            let len_a = rng.gen_range(1..=12);
            let len_b = rng.gen_range(1..=12);
            let a: Vec<String> =
                (0..len_a).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect();
            let b: Vec<String> =
                (0..len_b).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect();
            let got = rouge_l(&a, &b);
            let lcs = lcs_oracle(&a, &b) as f64;
            let want = RougeScore::from_pr(lcs / a.len() as f64, lcs / b.len() as f64);
            assert!((got.precision - want.precision).abs() < 1e-12);
            assert!((got.recall - want.recall).abs() < 1e-12);
            assert!((got.f1 - want.f1).abs() < 1e-12);
        }
    }

    #[test]
    fn rouge_l_multi_reduces_to_rouge_l_for_single_sentences() {
        let c = toks("a b c");
        let r = toks("a c d");
        let single = rouge_l(&c, &r);
        let multi = rouge_l_multi(&[c], &[r]);
        assert!((single.f1 - multi.f1).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_multi_identical_lists() {
        let s = rouge_l_multi(&[toks("a b"), toks("c d e")], &[toks("a b"), toks("c d e")]);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn rouge_l_multi_union_lcs_hand_case() {
        // cands: "a b c", "d e"; refs: "a b e", "c d", "z z".
        // union hits: r1 {a,b,e}=3, r2 {c,d}=2, r3 {}=0 → recall 5/7, precision 5/5.
        let cand = vec![toks("a b c"), toks("d e")];
        let refs = vec![toks("a b e"), toks("c d"), toks("z z")];
        let s = rouge_l_multi(&cand, &refs);
        assert!((s.precision - 1.0).abs() < 1e-15);
        assert!((s.recall - 5.0 / 7.0).abs() < 1e-15);
        assert!((s.f1 - 5.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        /// Swapping candidate and reference swaps precision and recall.
        #[test]
        fn symmetry_swaps_precision_and_recall(
            a in proptest::collection::vec("[a-e]", 1..15),
            b in proptest::collection::vec("[a-e]", 1..15),
        ) {
            let fwd = rouge_l(&a, &b);
            let rev = rouge_l(&b, &a);
            prop_assert!((fwd.precision - rev.recall).abs() < 1e-12);
            prop_assert!((fwd.recall - rev.precision).abs() < 1e-12);
            prop_assert!((fwd.f1 - rev.f1).abs() < 1e-12);

            let f1 = rouge_n(&a, &b, 1);
            let r1 = rouge_n(&b, &a, 1);
            prop_assert!((f1.precision - r1.recall).abs() < 1e-12);
            prop_assert!((f1.f1 - r1.f1).abs() < 1e-12);
        }

        /// Self-similarity is exactly 1 for non-empty input.
        #[test]
        fn self_similarity_is_one(a in proptest::collection::vec("[a-e]", 1..20)) {
            let s = rouge_l(&a, &a);
            prop_assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }

        /// Appending a token present in the reference never decreases recall.
        #[test]
        fn appending_reference_token_keeps_recall(
            a in proptest::collection::vec("[a-e]", 1..12),
            b in proptest::collection::vec("[a-e]", 1..12),
            pick in 0usize..12,
        ) {
            let before = rouge_l(&a, &b).recall;
            let mut extended = a.clone();
            extended.push(b[pick % b.len()].clone());
            let after = rouge_l(&extended, &b).recall;
            prop_assert!(after + 1e-12 >= before);

            let before1 = rouge_n(&a, &b, 1).recall;
            let after1 = rouge_n(&extended, &b, 1).recall;
            prop_assert!(after1 + 1e-12 >= before1);
        }
    }
}
