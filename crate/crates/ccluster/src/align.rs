//! Label alignment between clusterer and classifier outputs: the confusion
//! cost matrix and its minimum-cost assignment, solved by the Hungarian
//! algorithm with a lexicographic tie-break.

use serde::{Deserialize, Serialize};

use crate::core::Labeling;
use crate::error::{Error, Result};

/// A bijection on `1..=K`; `map[k-1]` is the image of label `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let k = map.len();
        let mut seen = vec![false; k];
        for &v in &map {
            if v < 1 || v > k || seen[v - 1] {
                return Err(Error::InvalidArgument(format!(
                    "not a bijection on 1..={k}: {map:?}"
                )));
            }
            seen[v - 1] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(k: usize) -> Self {
        Permutation {
            map: (1..=k).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.map.len()
    }

    /// Image of `label` (1-based).
    pub fn apply(&self, label: usize) -> usize {
        self.map[label - 1]
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0usize; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v - 1] = i + 1;
        }
        Permutation { map: inv }
    }
}

/// K-by-K misclassification counts: entry `(k, j)` is the number of
/// calibration points with cluster label `k` whose classifier prediction is
/// not `j`, i.e. the cost of renaming cluster `k` to `j`. Integer counts keep
/// tie detection exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostMatrix {
    k: usize,
    entries: Vec<Vec<u64>>,
}

impl CostMatrix {
    pub fn new(entries: Vec<Vec<u64>>) -> Result<Self> {
        let k = entries.len();
        if k == 0 || entries.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidArgument(
                "cost matrix must be square and nonempty".into(),
            ));
        }
        Ok(CostMatrix { k, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cost(&self, k: usize, j: usize) -> u64 {
        self.entries[k - 1][j - 1]
    }

    /// Total cost of renaming each cluster `k` to `sigma(k)`.
    pub fn assignment_cost(&self, sigma: &Permutation) -> u64 {
        (1..=self.k).map(|k| self.cost(k, sigma.apply(k))).sum()
    }

    fn as_f64(&self) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .map(|row| row.iter().map(|&c| c as f64).collect())
            .collect()
    }
}

/// Builds the confusion cost of Algorithm 1 Step 5: the assignment cost of a
/// permutation equals the number of calibration points where the classifier
/// disagrees with the renamed cluster label.
pub fn build_confusion_cost(
    predicted: &Labeling,
    clustered: &Labeling,
    k: usize,
) -> Result<CostMatrix> {
    if predicted.n() != clustered.n() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} predictions vs {} cluster labels",
            predicted.n(),
            clustered.n()
        )));
    }
    if predicted.k() > k || clustered.k() > k {
        return Err(Error::InvalidArgument(format!(
            "labels exceed alphabet size {k}"
        )));
    }
    // counts[y][f]: points with cluster label y predicted f
    let mut counts = vec![vec![0u64; k]; k];
    for i in 0..predicted.n() {
        counts[clustered.label(i) - 1][predicted.label(i) - 1] += 1;
    }
    let totals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let entries = (0..k)
        .map(|y| (0..k).map(|j| totals[y] - counts[y][j]).collect())
        .collect();
    CostMatrix::new(entries)
}

/// Shortest-augmenting-path Hungarian algorithm, O(K^3). Returns the 0-based
/// row-to-column assignment and its total cost.
pub(crate) fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    const INF: f64 = f64::INFINITY;
    // 1-based potentials; way[j] tracks the augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    (assignment, total)
}

// Optimal cost of assigning the rows in `rows` to the columns in `cols`.
fn sub_optimum(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let sub: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
        .collect();
    min_cost_assignment(&sub).1
}

/// Minimum-cost assignment that is lexicographically smallest among all
/// optima (read as the sequence `sigma(1), ..., sigma(K)`). Requires costs on
/// which floating-point sums are exact (integer counts fit).
pub(crate) fn lex_min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let (_, optimum) = min_cost_assignment(cost);
    let mut assignment = vec![0usize; n];
    let mut used = vec![false; n];
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        for j in 0..n {
            if used[j] {
                continue;
            }
            let rest_cols: Vec<usize> =
                (0..n).filter(|&c| !used[c] && c != j).collect();
            let total = fixed_cost + cost[i][j] + sub_optimum(cost, &rest_rows, &rest_cols);
            if total == optimum {
                assignment[i] = j;
                used[j] = true;
                fixed_cost += cost[i][j];
                break;
            }
        }
    }
    assignment
}

/// Solves the label-alignment assignment problem exactly; among cost ties the
/// lexicographically smallest permutation is returned.
pub fn solve_assignment(cost: &CostMatrix) -> Permutation {
    let assignment = lex_min_cost_assignment(&cost.as_f64());
    Permutation {
        map: assignment.into_iter().map(|j| j + 1).collect(),
    }
}

/// Exhaustive assignment oracle with the same tie-break rule; limited to K <= 8.
pub fn brute_force_assignment(cost: &CostMatrix) -> Result<Permutation> {
    let k = cost.k();
    if k > 8 {
        return Err(Error::UnsupportedSize(format!(
            "brute-force assignment supports K <= 8, got {k}"
        )));
    }
    let mut best: Option<(u64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (1..=k).collect();
    // iterate permutations in lexicographic order; strict improvement keeps
    // the lexicographically smallest optimum
    loop {
        let candidate = Permutation { map: perm.clone() };
        let c = cost.assignment_cost(&candidate);
        match &best {
            Some((bc, _)) if *bc <= c => {}
            _ => best = Some((c, perm.clone())),
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let (_, map) = best.unwrap();
    Ok(Permutation { map })
}

// Standard next-permutation; returns false after the last (descending) one.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}
