//! Foundational types shared by every other module: points on the label
//! simplex, datasets, labelings, reproducible seeds, data splitting, and
//! categorical sampling.
//!
//! Cluster labels are 1-based throughout (`1..=K`), matching the usual
//! statistical convention and the on-disk label format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance within which a probability vector is renormalized on construction.
pub const SIMPLEX_SUM_TOL: f64 = 1e-6;

/// A point on the K-simplex: a soft cluster label or classifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    entries: Vec<f64>,
}

impl ProbVector {
    /// Builds a probability vector, renormalizing when the entries sum to 1
    /// within `1e-6` and rejecting otherwise.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument(
                "probability vector must have at least one entry".into(),
            ));
        }
        for (i, &e) in entries.iter().enumerate() {
            if !e.is_finite() || e < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "probability entry {} is {} (must be finite and nonnegative)",
                    i + 1,
                    e
                )));
            }
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "probability entries sum to {sum}, outside tolerance {SIMPLEX_SUM_TOL}"
            )));
        }
        let entries = entries.into_iter().map(|e| e / sum).collect();
        Ok(ProbVector { entries })
    }

    pub fn uniform(k: usize) -> Self {
        ProbVector {
            entries: vec![1.0 / k as f64; k],
        }
    }

    /// One-hot vector with mass on `label` (1-based).
    pub fn one_hot(k: usize, label: usize) -> Result<Self> {
        if label < 1 || label > k {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range 1..={k}"
            )));
        }
        let mut entries = vec![0.0; k];
        entries[label - 1] = 1.0;
        Ok(ProbVector { entries })
    }

    /// Normalizes arbitrary nonnegative weights (not all zero) to the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::Numeric(format!(
                "weights sum to {sum}; cannot normalize"
            )));
        }
        ProbVector::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Probability of `label` (1-based).
    pub fn prob(&self, label: usize) -> f64 {
        self.entries[label - 1]
    }

    /// Label (1-based) with the largest probability; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &e) in self.entries.iter().enumerate() {
            if e > self.entries[best] {
                best = i;
            }
        }
        best + 1
    }

    pub fn l1_distance(&self, other: &ProbVector) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// An n-by-p data matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
    p: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("dataset must be nonempty".into()));
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(Error::InvalidArgument(
                "dataset rows must have dimension >= 1".into(),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "row {} has dimension {}, expected {}",
                    i + 1,
                    row.len(),
                    p
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "row {} contains a non-finite entry",
                    i + 1
                )));
            }
        }
        Ok(Dataset { rows, p })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Sub-dataset at the given row indices (0-based).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            p: self.p,
        }
    }

    /// Reads a CSV file with a header row, one observation per line.
    /// Lines starting with `#` are treated as comments.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row: std::result::Result<Vec<f64>, _> =
                record.iter().map(|f| f.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| {
                Error::InvalidArgument(format!("non-numeric CSV field: {e}"))
            })?;
            rows.push(row);
        }
        Dataset::new(rows)
    }
}

/// Hard cluster labels in `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    labels: Vec<usize>,
    k: usize,
}

impl Labeling {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("labeling must be nonempty".into()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("label alphabet must be >= 1".into()));
        }
        for (i, &y) in labels.iter().enumerate() {
            if y < 1 || y > k {
                return Err(Error::InvalidArgument(format!(
                    "label {} at row {} out of range 1..={}",
                    y,
                    i + 1,
                    k
                )));
            }
        }
        Ok(Labeling { labels, k })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Labeling {
        Labeling {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }

    /// Reads a single-column CSV of 1-based integer labels (header row expected).
    pub fn from_csv(path: &Path, k: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record?;
            let field = record.get(0).ok_or_else(|| {
                Error::InvalidArgument("empty label record".into())
            })?;
            let y: usize = field.trim().parse().map_err(|e| {
                Error::InvalidArgument(format!("non-integer label field: {e}"))
            })?;
            labels.push(y);
        }
        Labeling::new(labels, k)
    }
}

/// A train/calibration partition of `{0..n-1}` (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
}

/// Reproducibility contract: a `(seed, stream)` pair fully determines every
/// downstream random draw. Sub-streams for independent components are derived
/// with [`RandomSeed::child`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSeed {
    pub seed: u64,
    pub stream: u64,
}

// splitmix64 finalizer, used to decorrelate derived stream ids.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RandomSeed {
    pub fn new(seed: u64) -> Self {
        RandomSeed { seed, stream: 0 }
    }

    /// Derives an independent sub-stream identified by `index`.
    pub fn child(&self, index: u64) -> RandomSeed {
        RandomSeed {
            seed: self.seed,
            stream: mix64(self.stream ^ mix64(index)),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Uniformly random train/calibration partition with
/// `|train| = round(train_fraction * n)`, via a seeded Fisher-Yates shuffle
/// followed by a prefix split.
pub fn split_indices(n: usize, train_fraction: f64, seed: RandomSeed) -> Result<SplitIndices> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} observations into two nonempty parts"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "fraction {train_fraction} yields an empty part for n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed.rng();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut calib: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    calib.sort_unstable();
    Ok(SplitIndices { train, calib })
}

/// Draws one label from `Cat(p)` via inverse-CDF on a single uniform variate.
pub fn sample_categorical(p: &ProbVector, seed: RandomSeed) -> usize {
    sample_categorical_with(p, &mut seed.rng())
}

/// Inverse-CDF draw consuming one uniform from `rng`. Zero-probability labels
/// are never returned.
pub fn sample_categorical_with<R: Rng>(p: &ProbVector, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &e) in p.entries().iter().enumerate() {
        if e > 0.0 {
            last_positive = i;
            cum += e;
            if u < cum {
                return i + 1;
            }
        }
    }
    // rounding slack at the top of the CDF
    last_positive + 1
}

/// Descending order statistics of a probability vector together with the rank
/// permutation: `rank[k-1]` is the 1-based position of label `k` in the sorted
/// order. Ties break by ascending label index.
pub fn simplex_ranks(p: &ProbVector) -> (Vec<f64>, Vec<usize>) {
    let k = p.dim();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        p.entries()[b]
            .partial_cmp(&p.entries()[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let sorted: Vec<f64> = order.iter().map(|&i| p.entries()[i]).collect();
    let mut rank = vec![0usize; k];
    for (pos, &label_idx) in order.iter().enumerate() {
        rank[label_idx] = pos + 1;
    }
    (sorted, rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prob_vector_renormalizes_within_tolerance() {
        let p = ProbVector::new(vec![0.5, 0.5 + 5e-7]).unwrap();
        let sum: f64 = p.entries().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn prob_vector_rejects_bad_sum() {
        assert!(ProbVector::new(vec![0.5, 0.4]).is_err());
        assert!(ProbVector::new(vec![0.5, -0.1, 0.6]).is_err());
    }

    #[test]
    fn split_covers_and_is_deterministic() {
        let seed = RandomSeed::new(7);
        let s1 = split_indices(4, 0.5, seed).unwrap();
        let s2 = split_indices(4, 0.5, seed).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.train.len(), 2);
        assert_eq!(s1.calib.len(), 2);
        let mut all: Vec<usize> = s1.train.iter().chain(&s1.calib).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn split_half_of_1000() {
        let s = split_indices(1000, 0.5, RandomSeed::new(3)).unwrap();
        assert_eq!(s.train.len(), 500);
        assert_eq!(s.calib.len(), 500);
    }

    #[test]
    fn split_rejects_degenerate() {
        assert!(split_indices(1, 0.5, RandomSeed::new(0)).is_err());
        assert!(split_indices(3, 0.01, RandomSeed::new(0)).is_err());
    }

    #[test]
    fn categorical_degenerate() {
        let p = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        for s in 0..20 {
            assert_eq!(sample_categorical(&p, RandomSeed::new(s)), 2);
        }
    }

    #[test]
    fn categorical_deterministic_per_stream() {
        let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let seed = RandomSeed::new(11);
        let a1 = sample_categorical(&p, seed.child(1));
        let a2 = sample_categorical(&p, seed.child(1));
        assert_eq!(a1, a2);
        // distinct streams are reproducible but need not agree
        let b = sample_categorical(&p, seed.child(2));
        assert_eq!(b, sample_categorical(&p, seed.child(2)));
    }

    #[test]
    fn categorical_frequencies_match_lln() {
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut rng = RandomSeed::new(42).rng();
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_categorical_with(&p, &mut rng) - 1] += 1;
        }
        for k in 0..3 {
            let freq = counts[k] as f64 / n as f64;
            assert!(
                (freq - p.entries()[k]).abs() < 0.01,
                "label {} frequency {} vs {}",
                k + 1,
                freq,
                p.entries()[k]
            );
        }
    }

    #[test]
    fn ranks_hand_example() {
        let p = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let (sorted, rank) = simplex_ranks(&p);
        assert_eq!(sorted, vec![0.5, 0.3, 0.2]);
        assert_eq!(rank, vec![3, 1, 2]);
    }

    #[test]
    fn ranks_degenerate_and_ties() {
        let p = ProbVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let (_, rank) = simplex_ranks(&p);
        assert_eq!(rank[0], 1);

        let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let (_, rank) = simplex_ranks(&p);
        assert_eq!(rank, vec![1, 2]);
    }

    proptest! {
        #[test]
        fn split_parts_disjoint_exhaustive(
            n in 2usize..200,
            frac in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            if let Ok(s) = split_indices(n, frac, RandomSeed::new(seed)) {
                let mut all: Vec<usize> = s.train.iter().chain(&s.calib).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }

        #[test]
        fn categorical_never_returns_zero_mass(
            raw in proptest::collection::vec(0.0f64..1.0, 2..6),
            seed in any::<u64>(),
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-6);
            let p = ProbVector::from_weights(raw).unwrap();
            let y = sample_categorical(&p, RandomSeed::new(seed));
            prop_assert!(p.prob(y) > 0.0);
        }

        #[test]
        fn rank_permutation_reproduces_sorted(
            raw in proptest::collection::vec(0.0f64..1.0, 1..8),
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-6);
            let p = ProbVector::from_weights(raw).unwrap();
            let (sorted, rank) = simplex_ranks(&p);
            for (k, &r) in rank.iter().enumerate() {
                prop_assert_eq!(sorted[r - 1], p.entries()[k]);
            }
            // bijection
            let mut seen = vec![false; p.dim()];
            for &r in &rank { seen[r - 1] = true; }
            prop_assert!(seen.iter().all(|&b| b));
        }
    }
}
