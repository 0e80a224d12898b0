//! Conformity scores, calibration, prediction sets, the cutoff baseline, and
//! the end-to-end split conformal clustering pipelines (stochastic labels and
//! the naive hard-label variant).

use serde::{Deserialize, Serialize};

use crate::align::{build_confusion_cost, solve_assignment, Permutation};
use crate::classify::{fit_soft_classifier, hard_rule, predict_proba, ClassifierModel, ClassifierSpec};
use crate::clustering::{argmax_labels, sample_stochastic_labels, ClustererSpec, FittedClusterer};
use crate::core::{simplex_ranks, split_indices, Dataset, Labeling, ProbVector, RandomSeed};
use crate::error::{Error, Result};

/// Serializes a nonnegative-or-infinite threshold; JSON has no infinity
/// literal, so +inf round-trips as the string `"inf"`.
mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "invalid threshold string {s:?}"
            ))),
        }
    }
}

/// A subset of the label alphabet `1..=K`, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    members: Vec<usize>,
}

impl ConfidenceSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        ConfidenceSet { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.members.binary_search(&label).is_ok()
    }
}

/// Generalized inverse quantile (APS) conformity score: the cumulative
/// probability of all labels ranked strictly above `y`, so the top-ranked
/// label always scores exactly 0. Ties rank by ascending label index.
pub fn aps_score(pi: &ProbVector, y: usize) -> f64 {
    let (sorted, rank) = simplex_ranks(pi);
    let r = rank[y - 1];
    // the empty f64 sum is -0.0; adding 0.0 restores the positive zero
    sorted[..r - 1].iter().sum::<f64>() + 0.0
}

/// The ceil((1 - alpha)(n + 1))-th smallest calibration score; +inf (maximal
/// sets) when the index overflows the sample.
pub fn calibration_threshold(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "calibration requires at least one score".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} must lie in (0, 1)"
        )));
    }
    let n = scores.len();
    let index = ((1.0 - alpha) * (n as f64 + 1.0)).ceil() as usize;
    if index > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted[index - 1])
}

/// All labels whose APS score is at most `threshold`; always contains the
/// argmax label when the threshold is nonnegative.
pub fn prediction_set(pi: &ProbVector, threshold: f64) -> ConfidenceSet {
    let members = (1..=pi.dim())
        .filter(|&y| aps_score(pi, y) <= threshold)
        .collect();
    ConfidenceSet::new(members)
}

/// Cutoff baseline: the smallest prefix of descending-sorted labels whose
/// cumulative soft-label mass reaches 1 - alpha.
pub fn cutoff_set(gamma: &ProbVector, alpha: f64) -> ConfidenceSet {
    let (sorted, rank) = simplex_ranks(gamma);
    let mut cum = 0.0;
    let mut cut = gamma.dim();
    for (pos, &v) in sorted.iter().enumerate() {
        cum += v;
        if cum >= 1.0 - alpha - 1e-12 {
            cut = pos + 1;
            break;
        }
    }
    ConfidenceSet::new((1..=gamma.dim()).filter(|&y| rank[y - 1] <= cut).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    /// Cluster labels sampled from soft labels on each half.
    Stochastic,
    /// Argmax (hard) cluster labels: the naive baseline.
    NaiveHard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub alpha: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_mode")]
    pub mode: PipelineMode,
    #[serde(default)]
    pub clusterer: ClustererSpec,
    /// `None` bypasses the classifier and predicts with the training-half
    /// clusterer directly (valid for generalizable soft clusterers).
    #[serde(default = "default_classifier")]
    pub classifier: Option<ClassifierSpec>,
}

fn default_train_fraction() -> f64 {
    0.5
}

fn default_mode() -> PipelineMode {
    PipelineMode::Stochastic
}

fn default_classifier() -> Option<ClassifierSpec> {
    Some(ClassifierSpec::default())
}

/// The soft predictor serving query-time probabilities: a fitted classifier,
/// or the training-half clusterer when the classifier is bypassed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predictor", rename_all = "kebab-case")]
pub enum SoftPredictor {
    Classifier(ClassifierModel),
    Clusterer(FittedClusterer),
}

impl SoftPredictor {
    pub fn predict(&self, x: &[f64]) -> Result<ProbVector> {
        match self {
            SoftPredictor::Classifier(m) => predict_proba(m, x),
            SoftPredictor::Clusterer(m) => m.soft_label(x),
        }
    }

    pub fn hard(&self, x: &[f64]) -> Result<usize> {
        match self {
            SoftPredictor::Classifier(m) => hard_rule(m, x),
            SoftPredictor::Clusterer(m) => Ok(m.soft_label(x)?.argmax()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SoftPredictor::Classifier(m) => m.input_dim(),
            SoftPredictor::Clusterer(m) => m.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n_calib: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Frozen artifact of a fitted split conformal clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalPipeline {
    #[serde(default = "pipeline_version")]
    pub version: u32,
    pub predictor: SoftPredictor,
    pub alignment: Permutation,
    #[serde(with = "inf_f64")]
    pub threshold: f64,
    pub alpha: f64,
    pub mode: PipelineMode,
    pub config: PipelineConfig,
    pub seed: RandomSeed,
    pub score_summary: ScoreSummary,
}

fn pipeline_version() -> u32 {
    1
}

fn summarize_scores(scores: &[f64]) -> ScoreSummary {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ScoreSummary {
        n_calib: sorted.len(),
        min: sorted[0],
        median: sorted[sorted.len() / 2],
        max: sorted[sorted.len() - 1],
    }
}

// Cluster one half and produce labels per the pipeline mode.
fn cluster_and_label(
    spec: &ClustererSpec,
    x: &Dataset,
    k: usize,
    mode: PipelineMode,
    fit_seed: RandomSeed,
    sample_seed: RandomSeed,
) -> Result<(FittedClusterer, Labeling)> {
    let fitted = spec.fit(x, k, fit_seed)?;
    let soft = fitted.soft_labels(x)?;
    let labels = match mode {
        PipelineMode::Stochastic => sample_stochastic_labels(&soft, sample_seed),
        PipelineMode::NaiveHard => argmax_labels(&soft),
    };
    Ok((fitted, labels))
}

fn calibrate(
    predictor: &SoftPredictor,
    x_ca: &Dataset,
    y_ca: &Labeling,
    alignment: &Permutation,
    alpha: f64,
) -> Result<(f64, ScoreSummary)> {
    let mut scores = Vec::with_capacity(x_ca.n());
    for i in 0..x_ca.n() {
        let pi = predictor.predict(x_ca.row(i))?;
        scores.push(aps_score(&pi, alignment.apply(y_ca.label(i))));
    }
    let threshold = calibration_threshold(&scores, alpha)?;
    Ok((threshold, summarize_scores(&scores)))
}

/// Runs the full split conformal clustering procedure: split, cluster and
/// label each half independently, fit the soft classifier on the training
/// half, align labels on the calibration half, and calibrate the APS
/// threshold. Fully reproducible from `seed`.
pub fn fit_conformal_pipeline(
    x: &Dataset,
    config: &PipelineConfig,
    seed: RandomSeed,
) -> Result<ConformalPipeline> {
    let k = config.k;
    if k < 1 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if x.n() < 2 * k {
        return Err(Error::InvalidArgument(format!(
            "need n >= 2K, got n = {}, K = {}",
            x.n(),
            k
        )));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {} must lie in (0, 1)",
            config.alpha
        )));
    }
    let split = split_indices(x.n(), config.train_fraction, seed.child(0))
        .map_err(|e| e.in_stage("split"))?;
    let x_tr = x.subset(&split.train);
    let x_ca = x.subset(&split.calib);

    let (clusterer_tr, y_tr) = cluster_and_label(
        &config.clusterer,
        &x_tr,
        k,
        config.mode,
        seed.child(1),
        seed.child(2),
    )
    .map_err(|e| e.in_stage("cluster-train"))?;

    let predictor = match &config.classifier {
        Some(spec) => SoftPredictor::Classifier(
            fit_soft_classifier(&x_tr, &y_tr, k, spec, seed.child(3))
                .map_err(|e| e.in_stage("classifier"))?,
        ),
        None => SoftPredictor::Clusterer(clusterer_tr),
    };

    let (_, y_ca) = cluster_and_label(
        &config.clusterer,
        &x_ca,
        k,
        config.mode,
        seed.child(4),
        seed.child(5),
    )
    .map_err(|e| e.in_stage("cluster-calibration"))?;

    let predicted: Result<Vec<usize>> =
        (0..x_ca.n()).map(|i| predictor.hard(x_ca.row(i))).collect();
    let predicted = Labeling::new(predicted.map_err(|e| e.in_stage("align"))?, k)?;
    let cost = build_confusion_cost(&predicted, &y_ca, k).map_err(|e| e.in_stage("align"))?;
    let alignment = solve_assignment(&cost);

    let (threshold, score_summary) =
        calibrate(&predictor, &x_ca, &y_ca, &alignment, config.alpha)
            .map_err(|e| e.in_stage("calibrate"))?;

    Ok(ConformalPipeline {
        version: pipeline_version(),
        predictor,
        alignment,
        threshold,
        alpha: config.alpha,
        mode: config.mode,
        config: config.clone(),
        seed,
        score_summary,
    })
}

/// Exchangeable control path: calibrates directly on supplied reference
/// labels (no clustering), reducing the procedure to split conformal
/// classification with identity alignment.
pub fn fit_with_reference_labels(
    x_tr: &Dataset,
    y_tr: &Labeling,
    x_ca: &Dataset,
    y_ca: &Labeling,
    k: usize,
    alpha: f64,
    classifier: &ClassifierSpec,
    seed: RandomSeed,
) -> Result<ConformalPipeline> {
    let predictor = SoftPredictor::Classifier(fit_soft_classifier(
        x_tr,
        y_tr,
        k,
        classifier,
        seed.child(3),
    )?);
    let alignment = Permutation::identity(k);
    let (threshold, score_summary) = calibrate(&predictor, x_ca, y_ca, &alignment, alpha)?;
    Ok(ConformalPipeline {
        version: pipeline_version(),
        predictor,
        alignment,
        threshold,
        alpha,
        mode: PipelineMode::Stochastic,
        config: PipelineConfig {
            k,
            alpha,
            train_fraction: x_tr.n() as f64 / (x_tr.n() + x_ca.n()) as f64,
            mode: PipelineMode::Stochastic,
            clusterer: ClustererSpec::default(),
            classifier: Some(classifier.clone()),
        },
        seed,
        score_summary,
    })
}

impl ConformalPipeline {
    pub fn predict_set(&self, x: &[f64]) -> Result<ConfidenceSet> {
        Ok(prediction_set(&self.predictor.predict(x)?, self.threshold))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-row prediction sets for a query dataset.
pub fn predict_sets(pipeline: &ConformalPipeline, x_query: &Dataset) -> Result<Vec<ConfidenceSet>> {
    if x_query.dim() != pipeline.predictor.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "query dimension {} != pipeline dimension {}",
            x_query.dim(),
            pipeline.predictor.input_dim()
        )));
    }
    (0..x_query.n())
        .map(|i| pipeline.predict_set(x_query.row(i)))
        .collect()
}

/// The cutoff baseline fitted on a full (unsplit) pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRule {
    pub clusterer: FittedClusterer,
    pub alpha: f64,
}

pub fn fit_cutoff_rule(
    x: &Dataset,
    k: usize,
    alpha: f64,
    spec: &ClustererSpec,
    seed: RandomSeed,
) -> Result<CutoffRule> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} must lie in (0, 1)"
        )));
    }
    Ok(CutoffRule {
        clusterer: spec.fit(x, k, seed)?,
        alpha,
    })
}

impl CutoffRule {
    pub fn predict_set(&self, x: &[f64]) -> Result<ConfidenceSet> {
        Ok(cutoff_set(&self.clusterer.soft_label(x)?, self.alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate_mixture_data, GeneratorConfig};
    use proptest::prelude::*;

    #[test]
    fn aps_hand_values() {
        let pi = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(aps_score(&pi, 1), 0.0);
        assert!((aps_score(&pi, 2) - 0.5).abs() < 1e-12);
        assert!((aps_score(&pi, 3) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn aps_uniform_tie_break() {
        let pi = ProbVector::uniform(3);
        assert_eq!(aps_score(&pi, 1), 0.0);
        assert!((aps_score(&pi, 2) - 1.0 / 3.0).abs() < 1e-12);
        assert!((aps_score(&pi, 3) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_order_statistics() {
        let scores: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert!((calibration_threshold(&scores, 0.1).unwrap() - 0.9).abs() < 1e-12);
        assert!((calibration_threshold(&scores, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(calibration_threshold(&scores, 0.05).unwrap().is_infinite());
        assert!(calibration_threshold(&[], 0.1).is_err());
    }

    #[test]
    fn prediction_set_examples() {
        let pi = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(prediction_set(&pi, 0.5).members(), &[1, 2]);
        assert_eq!(prediction_set(&pi, 0.0).members(), &[1]);
        assert_eq!(prediction_set(&pi, f64::INFINITY).members(), &[1, 2, 3]);
    }

    #[test]
    fn cutoff_examples() {
        let g = ProbVector::new(vec![0.8, 0.05, 0.05, 0.05, 0.05]).unwrap();
        assert_eq!(cutoff_set(&g, 0.1).size(), 3);

        let g = ProbVector::one_hot(4, 2).unwrap();
        assert_eq!(cutoff_set(&g, 0.2).members(), &[2]);

        let g = ProbVector::new(vec![0.8, 0.1, 0.1]).unwrap();
        assert_eq!(cutoff_set(&g, 0.1).members(), &[1, 2]);
    }

    #[test]
    fn cutoff_cumulative_mass_property() {
        let mut rng = RandomSeed::new(3).rng();
        use rand::Rng;
        for _ in 0..500 {
            let k = rng.gen_range(2..6);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-6).collect();
            let g = ProbVector::from_weights(raw).unwrap();
            let alpha = rng.gen_range(0.01..0.5);
            let set = cutoff_set(&g, alpha);
            let mass: f64 = set.members().iter().map(|&y| g.prob(y)).sum();
            assert!(mass >= 1.0 - alpha - 1e-12);
            // dropping the lowest-ranked included label falls below 1 - alpha
            if set.size() > 1 {
                let (_, rank) = simplex_ranks(&g);
                let last = *set
                    .members()
                    .iter()
                    .max_by_key(|&&y| rank[y - 1])
                    .unwrap();
                assert!(mass - g.prob(last) < 1.0 - alpha);
            }
        }
    }

    fn blob_config() -> GeneratorConfig {
        GeneratorConfig::gaussian_triangle(3, 0.05, 8.0)
    }

    #[test]
    fn separable_blobs_give_tight_threshold() {
        let (x, _) = generate_mixture_data(&blob_config(), 300, RandomSeed::new(10)).unwrap();
        let config = PipelineConfig {
            k: 3,
            alpha: 0.1,
            train_fraction: 0.5,
            mode: PipelineMode::Stochastic,
            clusterer: ClustererSpec::default(),
            classifier: Some(ClassifierSpec::default()),
        };
        let pipe = fit_conformal_pipeline(&x, &config, RandomSeed::new(20)).unwrap();
        assert!(pipe.threshold < 0.05, "threshold {}", pipe.threshold);
        // singleton sets at the component centers
        for center in blob_config().centers() {
            assert_eq!(pipe.predict_set(center).unwrap().size(), 1);
        }
    }

    #[test]
    fn tiny_alpha_yields_full_sets() {
        let (x, _) = generate_mixture_data(&blob_config(), 60, RandomSeed::new(4)).unwrap();
        let config = PipelineConfig {
            k: 3,
            alpha: 0.01, // 1/(n_ca+1) > alpha
            train_fraction: 0.5,
            mode: PipelineMode::Stochastic,
            clusterer: ClustererSpec::default(),
            classifier: Some(ClassifierSpec::default()),
        };
        let pipe = fit_conformal_pipeline(&x, &config, RandomSeed::new(5)).unwrap();
        assert!(pipe.threshold.is_infinite());
        assert_eq!(pipe.predict_set(&[0.0, 0.0]).unwrap().size(), 3);
    }

    #[test]
    fn deterministic_under_seed_reuse() {
        let (x, _) = generate_mixture_data(&blob_config(), 200, RandomSeed::new(6)).unwrap();
        let config = PipelineConfig {
            k: 3,
            alpha: 0.1,
            train_fraction: 0.5,
            mode: PipelineMode::Stochastic,
            clusterer: ClustererSpec::default(),
            classifier: Some(ClassifierSpec::default()),
        };
        let a = fit_conformal_pipeline(&x, &config, RandomSeed::new(77)).unwrap();
        let b = fit_conformal_pipeline(&x, &config, RandomSeed::new(77)).unwrap();
        assert_eq!(a.threshold, b.threshold);
        assert_eq!(a.alignment, b.alignment);
        for q in [[-3.0, 0.0], [3.0, 1.0], [0.0, 5.0]] {
            assert_eq!(a.predict_set(&q).unwrap(), b.predict_set(&q).unwrap());
        }
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn calibration_coverage_by_construction() {
        let cfg = GeneratorConfig::gaussian_triangle(3, 1.5, 3.0);
        let (x, _) = generate_mixture_data(&cfg, 400, RandomSeed::new(30)).unwrap();
        let config = PipelineConfig {
            k: 3,
            alpha: 0.1,
            train_fraction: 0.5,
            mode: PipelineMode::Stochastic,
            clusterer: ClustererSpec::default(),
            classifier: Some(ClassifierSpec::default()),
        };
        let seed = RandomSeed::new(31);
        let pipe = fit_conformal_pipeline(&x, &config, seed).unwrap();
        // rebuild the calibration labels exactly as the fit did
        let split = split_indices(x.n(), 0.5, seed.child(0)).unwrap();
        let x_ca = x.subset(&split.calib);
        let fitted = config.clusterer.fit(&x_ca, 3, seed.child(4)).unwrap();
        let soft = fitted.soft_labels(&x_ca).unwrap();
        let y_ca = sample_stochastic_labels(&soft, seed.child(5));
        let mut covered = 0;
        for i in 0..x_ca.n() {
            let set = pipe.predict_set(x_ca.row(i)).unwrap();
            if set.contains(pipe.alignment.apply(y_ca.label(i))) {
                covered += 1;
            }
        }
        let coverage = covered as f64 / x_ca.n() as f64;
        assert!(coverage >= 0.9, "calibration coverage {coverage}");
    }

    #[test]
    fn pipeline_json_roundtrip_with_infinite_threshold() {
        let (x, _) = generate_mixture_data(&blob_config(), 60, RandomSeed::new(4)).unwrap();
        let config = PipelineConfig {
            k: 3,
            alpha: 0.01,
            train_fraction: 0.5,
            mode: PipelineMode::NaiveHard,
            clusterer: ClustererSpec::default(),
            classifier: None,
        };
        let pipe = fit_conformal_pipeline(&x, &config, RandomSeed::new(1)).unwrap();
        assert!(pipe.threshold.is_infinite());
        let json = pipe.to_json().unwrap();
        let back = ConformalPipeline::from_json(&json).unwrap();
        assert_eq!(pipe, back);
    }

    proptest! {
        #[test]
        fn nonempty_and_alpha_nested(
            raw in proptest::collection::vec(1e-6f64..1.0, 2..6),
            a1 in 0.01f64..0.5,
            a2 in 0.01f64..0.5,
        ) {
            let pi = ProbVector::from_weights(raw).unwrap();
            let scores: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let t_lo = calibration_threshold(&scores, lo).unwrap();
            let t_hi = calibration_threshold(&scores, hi).unwrap();
            prop_assert!(t_lo >= t_hi);
            let set_lo = prediction_set(&pi, t_lo);
            let set_hi = prediction_set(&pi, t_hi);
            // nesting and nonemptiness
            prop_assert!(set_hi.members().iter().all(|&y| set_lo.contains(y)));
            prop_assert!(set_lo.contains(pi.argmax()));
            prop_assert!(set_hi.contains(pi.argmax()));
        }
    }
}
