//! Soft classifiers fitted on cluster-labeled training data: ridge-penalized
//! multinomial logistic regression (optionally over random Fourier features as
//! an RBF surrogate) and a Laplace-smoothed soft k-nearest-neighbor baseline.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::core::{Dataset, Labeling, ProbVector, RandomSeed};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RffSpec {
    pub n_features: usize,
    /// RBF bandwidth; `None` uses the median pairwise distance heuristic on a
    /// 512-point subsample.
    pub bandwidth: Option<f64>,
}

impl Default for RffSpec {
    fn default() -> Self {
        RffSpec {
            n_features: 256,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClassifierSpec {
    /// Multinomial logistic regression, full-batch gradient descent with
    /// backtracking line search.
    MultinomialLogistic {
        #[serde(default)]
        rff: Option<RffSpec>,
        #[serde(default = "default_ridge")]
        ridge: f64,
        #[serde(default = "default_grad_tol")]
        tol: f64,
        #[serde(default = "default_logistic_max_iter")]
        max_iter: usize,
    },
    /// Soft kNN: Laplace-smoothed neighbor label frequencies.
    KnnSoft { k: usize },
}

fn default_ridge() -> f64 {
    1e-3
}

fn default_grad_tol() -> f64 {
    1e-4
}

fn default_logistic_max_iter() -> usize {
    500
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::MultinomialLogistic {
            rff: Some(RffSpec::default()),
            ridge: default_ridge(),
            tol: default_grad_tol(),
            max_iter: default_logistic_max_iter(),
        }
    }
}

/// A seeded random Fourier feature map approximating an RBF kernel:
/// `phi(x)_d = sqrt(2/D) * cos(w_d . x + b_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffMap {
    weights: Vec<Vec<f64>>, // D x p
    offsets: Vec<f64>,      // D
    bandwidth: f64,
}

impl RffMap {
    fn sample(p: usize, spec: &RffSpec, bandwidth: f64, seed: RandomSeed) -> Self {
        let mut rng = seed.rng();
        let normal = Normal::new(0.0, 1.0 / bandwidth).unwrap();
        let weights = (0..spec.n_features)
            .map(|_| (0..p).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let offsets = (0..spec.n_features)
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        RffMap {
            weights,
            offsets,
            bandwidth,
        }
    }

    fn transform(&self, x: &[f64]) -> Vec<f64> {
        let scale = (2.0 / self.weights.len() as f64).sqrt();
        self.weights
            .iter()
            .zip(&self.offsets)
            .map(|(w, &b)| {
                let dot: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
                scale * (dot + b).cos()
            })
            .collect()
    }
}

// Median pairwise distance on a subsample of at most 512 points.
fn median_pairwise_distance(x: &Dataset, seed: RandomSeed) -> f64 {
    let n = x.n();
    let mut rng = seed.rng();
    let indices: Vec<usize> = if n <= 512 {
        (0..n).collect()
    } else {
        let mut idx = sample(&mut rng, n, 512).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut dists = Vec::new();
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                .sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[dists.len() / 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// K rows of (D + 1) coefficients; the last column is the unpenalized bias.
    pub weights: Vec<Vec<f64>>,
    pub rff: Option<RffMap>,
    pub n_classes: usize,
    pub input_dim: usize,
}

impl LogisticModel {
    fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut f = match &self.rff {
            Some(map) => map.transform(x),
            None => x.to_vec(),
        };
        f.push(1.0);
        f
    }

    fn scores(&self, features: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(features).map(|(wi, fi)| wi * fi).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub x_train: Dataset,
    pub y_train: Labeling,
    pub k_neighbors: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifierModel {
    MultinomialLogistic(LogisticModel),
    KnnSoft(KnnModel),
}

impl ClassifierModel {
    pub fn n_classes(&self) -> usize {
        match self {
            ClassifierModel::MultinomialLogistic(m) => m.n_classes,
            ClassifierModel::KnnSoft(m) => m.n_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ClassifierModel::MultinomialLogistic(m) => m.input_dim,
            ClassifierModel::KnnSoft(m) => m.x_train.dim(),
        }
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

// Ridge-penalized mean cross-entropy and its gradient; the bias column is not
// penalized.
fn loss_and_gradient(
    features: &[Vec<f64>],
    labels: &[usize],
    weights: &[Vec<f64>],
    ridge: f64,
) -> (f64, Vec<Vec<f64>>) {
    let n = features.len();
    let k = weights.len();
    let d = weights[0].len();
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; d]; k];
    for (f, &y) in features.iter().zip(labels) {
        let scores: Vec<f64> = weights
            .iter()
            .map(|w| w.iter().zip(f).map(|(wi, fi)| wi * fi).sum())
            .collect();
        let probs = softmax(&scores);
        loss -= probs[y - 1].max(1e-300).ln();
        for kk in 0..k {
            let coef = probs[kk] - if kk == y - 1 { 1.0 } else { 0.0 };
            for (g, &fi) in grad[kk].iter_mut().zip(f) {
                *g += coef * fi;
            }
        }
    }
    loss /= n as f64;
    for row in grad.iter_mut() {
        for g in row.iter_mut() {
            *g /= n as f64;
        }
    }
    // ridge on non-bias coefficients
    for kk in 0..k {
        for j in 0..d - 1 {
            loss += 0.5 * ridge * weights[kk][j] * weights[kk][j];
            grad[kk][j] += ridge * weights[kk][j];
        }
    }
    (loss, grad)
}

fn fit_logistic(
    x: &Dataset,
    y: &Labeling,
    k: usize,
    rff: &Option<RffSpec>,
    ridge: f64,
    tol: f64,
    max_iter: usize,
    seed: RandomSeed,
) -> Result<LogisticModel> {
    let p = x.dim();
    let rff_map = match rff {
        Some(spec) => {
            let bandwidth = spec
                .bandwidth
                .unwrap_or_else(|| median_pairwise_distance(x, seed.child(0)));
            Some(RffMap::sample(p, spec, bandwidth, seed.child(1)))
        }
        None => None,
    };
    let features: Vec<Vec<f64>> = (0..x.n())
        .map(|i| {
            let mut f = match &rff_map {
                Some(map) => map.transform(x.row(i)),
                None => x.row(i).to_vec(),
            };
            f.push(1.0);
            f
        })
        .collect();
    let d = features[0].len();
    let mut weights = vec![vec![0.0; d]; k];
    let (mut loss, mut grad) = loss_and_gradient(&features, y.labels(), &weights, ridge);
    let mut step = 1.0;
    for _ in 0..max_iter {
        let grad_norm: f64 = grad
            .iter()
            .flat_map(|r| r.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if grad_norm < tol {
            break;
        }
        // backtracking line search with Armijo condition
        let mut t = step * 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<Vec<f64>> = weights
                .iter()
                .zip(&grad)
                .map(|(wr, gr)| wr.iter().zip(gr).map(|(w, g)| w - t * g).collect())
                .collect();
            let (new_loss, new_grad) =
                loss_and_gradient(&features, y.labels(), &candidate, ridge);
            if !new_loss.is_finite() {
                return Err(Error::Numeric(
                    "non-finite loss during logistic optimization".into(),
                ));
            }
            if new_loss <= loss - 0.5 * t * grad_norm * grad_norm {
                weights = candidate;
                loss = new_loss;
                grad = new_grad;
                step = t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LogisticModel {
        weights,
        rff: rff_map,
        n_classes: k,
        input_dim: p,
    })
}

/// Fits a soft classifier on cluster-labeled training data. Classes absent
/// from `y` are permitted and receive near-zero probability.
pub fn fit_soft_classifier(
    x: &Dataset,
    y: &Labeling,
    k: usize,
    spec: &ClassifierSpec,
    seed: RandomSeed,
) -> Result<ClassifierModel> {
    if x.n() != y.n() {
        return Err(Error::InvalidArgument(format!(
            "{} rows vs {} labels",
            x.n(),
            y.n()
        )));
    }
    if y.k() > k {
        return Err(Error::InvalidArgument(format!(
            "labels use alphabet {} larger than K = {}",
            y.k(),
            k
        )));
    }
    match spec {
        ClassifierSpec::MultinomialLogistic {
            rff,
            ridge,
            tol,
            max_iter,
        } => {
            if k < 2 {
                return Err(Error::InvalidArgument(
                    "logistic classifier requires K >= 2".into(),
                ));
            }
            Ok(ClassifierModel::MultinomialLogistic(fit_logistic(
                x, y, k, rff, *ridge, *tol, *max_iter, seed,
            )?))
        }
        ClassifierSpec::KnnSoft { k: neighbors } => {
            if *neighbors < 1 || *neighbors > x.n() {
                return Err(Error::InvalidArgument(format!(
                    "knn neighbor count {} must lie in 1..={}",
                    neighbors,
                    x.n()
                )));
            }
            Ok(ClassifierModel::KnnSoft(KnnModel {
                x_train: x.clone(),
                y_train: Labeling::new(y.labels().to_vec(), k)?,
                k_neighbors: *neighbors,
                n_classes: k,
            }))
        }
    }
}

/// Soft class probabilities at `x`: softmax scores for the logistic model,
/// Laplace-smoothed neighbor frequencies `(count + 1/K) / (k + 1)` for knn.
pub fn predict_proba(model: &ClassifierModel, x: &[f64]) -> Result<ProbVector> {
    if x.len() != model.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "query dimension {} != classifier dimension {}",
            x.len(),
            model.input_dim()
        )));
    }
    match model {
        ClassifierModel::MultinomialLogistic(m) => {
            let f = m.features(x);
            ProbVector::new(softmax(&m.scores(&f)))
        }
        ClassifierModel::KnnSoft(m) => {
            let n = m.x_train.n();
            let mut dists: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let d: f64 = m
                        .x_train
                        .row(i)
                        .iter()
                        .zip(x)
                        .map(|(u, v)| (u - v).powi(2))
                        .sum();
                    (d, i)
                })
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let kc = m.n_classes;
            let mut counts = vec![0.0f64; kc];
            for &(_, i) in dists.iter().take(m.k_neighbors) {
                counts[m.y_train.label(i) - 1] += 1.0;
            }
            let denom = m.k_neighbors as f64 + 1.0;
            ProbVector::new(
                counts
                    .into_iter()
                    .map(|c| (c + 1.0 / kc as f64) / denom)
                    .collect(),
            )
        }
    }
}

/// Induced hard classification rule: argmax of `predict_proba`, ties to the
/// smallest label index.
pub fn hard_rule(model: &ClassifierModel, x: &[f64]) -> Result<usize> {
    Ok(predict_proba(model, x)?.argmax())
}
