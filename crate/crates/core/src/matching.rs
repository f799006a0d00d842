//! Exact maximum-weight perfect matching on square weight matrices.
//!
//! The solver is the classical O(n³) potentials-and-augmenting-paths
//! formulation of the Kuhn-Munkres algorithm. Maximization is reduced to
//! minimization by negating weights; negative inputs are allowed since the
//! potentials absorb any constant shift. Ties are resolved by the fixed
//! ascending scan order, which biases optima toward low row indices; the
//! brute-force oracle returns the lexicographically smallest optimal
//! permutation outright.

use crate::mat::Mat;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatchingError {
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("weight matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("brute-force matching supports n <= {max}, got {n}")]
    TooLargeForBruteForce { n: usize, max: usize },
    #[error("weight matrix must be non-empty")]
    Empty,
}

/// A validated square, finite weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    weights: Mat,
}

impl WeightMatrix {
    pub fn new(weights: Mat) -> Result<Self, MatchingError> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(MatchingError::Empty);
        }
        if weights.rows() != weights.cols() {
            return Err(MatchingError::NotSquare { rows: weights.rows(), cols: weights.cols() });
        }
        for i in 0..weights.rows() {
            for j in 0..weights.cols() {
                if !weights.get(i, j).is_finite() {
                    return Err(MatchingError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(WeightMatrix { weights })
    }

    pub fn size(&self) -> usize {
        self.weights.rows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights.get(row, col)
    }
}

/// A perfect matching: `perm[j]` is the row assigned to column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub perm: Vec<usize>,
    pub total_weight: f64,
}

/// Exact maximum-weight perfect matching, O(n³).
pub fn kuhn_munkres(w: &WeightMatrix) -> Matching {
    let n = w.size();
    // Dual potentials over rows/columns; column 0 is a virtual source.
    let mut row_pot = vec![0.0f64; n + 1];
    let mut col_pot = vec![0.0f64; n + 1];
    // assigned_row[j]: 1-based row matched to column j (0 = unmatched).
    let mut assigned_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                // Minimize cost = -weight.
                let cur = -w.get(i0 - 1, j - 1) - row_pot[i0] - col_pot[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    row_pot[assigned_row[j]] += delta;
                    col_pot[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        // Unwind the augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
        }
    }

    let perm: Vec<usize> = (1..=n).map(|j| assigned_row[j] - 1).collect();
    let total_weight = matching_weight(w, &perm);
    Matching { perm, total_weight }
}

/// Exhaustive optimum over all n! permutations, lexicographically smallest
/// among ties. Test oracle; guarded to n ≤ 9.
pub fn brute_force_matching(w: &WeightMatrix) -> Result<Matching, MatchingError> {
    const MAX_N: usize = 9;
    let n = w.size();
    if n > MAX_N {
        return Err(MatchingError::TooLargeForBruteForce { n, max: MAX_N });
    }
    let mut best: Option<Matching> = None;
    let mut perm = Vec::with_capacity(n);
    let mut used = vec![false; n];
    // Ascending recursion enumerates permutations in lexicographic order, so
    // keeping only strict improvements retains the lexicographically smallest
    // optimum.
    fn rec(
        w: &WeightMatrix,
        perm: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut Option<Matching>,
    ) {
        let n = w.size();
        if perm.len() == n {
            let weight = matching_weight(w, perm);
            let better = match best {
                None => true,
                Some(b) => weight > b.total_weight,
            };
            if better {
                *best = Some(Matching { perm: perm.clone(), total_weight: weight });
            }
            return;
        }
        let col = perm.len();
        let _ = col;
        for row in 0..n {
            if !used[row] {
                used[row] = true;
                perm.push(row);
                rec(w, perm, used, best);
                perm.pop();
                used[row] = false;
            }
        }
    }
    rec(w, &mut perm, &mut used, &mut best);
    Ok(best.expect("n >= 1 guarantees at least one permutation"))
}

fn matching_weight(w: &WeightMatrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(j, &i)| w.get(i, j)).sum()
}
