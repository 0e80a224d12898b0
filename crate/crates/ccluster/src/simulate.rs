//! Ground-truth mixture data generators with known posteriors, and the
//! replication engine behind the simulation studies.

use rand_distr::{Distribution, Gamma as GammaDist, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::ClassifierSpec;
use crate::clustering::ClustererSpec;
use crate::conformal::{
    fit_conformal_pipeline, fit_cutoff_rule, fit_with_reference_labels, predict_sets,
    ConfidenceSet, PipelineConfig, PipelineMode,
};
use crate::core::{sample_categorical_with, Dataset, Labeling, ProbVector, RandomSeed};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_sets;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorFamily {
    Gaussian,
    Gamma,
}

/// A K-component location mixture with common spherical variance `sigma2`.
/// Gaussian components are `N(center, sigma2 I)`; gamma components have
/// independent coordinates with mean `center_j` and variance `sigma2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub family: GeneratorFamily,
    pub k: usize,
    pub p: usize,
    pub centers: Vec<Vec<f64>>,
    pub sigma2: f64,
    #[serde(default)]
    pub weights: Option<ProbVector>,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 {
            return Err(Error::InvalidArgument("K and p must be >= 1".into()));
        }
        if self.centers.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "expected {} centers, got {}",
                self.k,
                self.centers.len()
            )));
        }
        for (i, c) in self.centers.iter().enumerate() {
            if c.len() != self.p {
                return Err(Error::InvalidArgument(format!(
                    "center {} has dimension {}, expected {}",
                    i + 1,
                    c.len(),
                    self.p
                )));
            }
            if self.family == GeneratorFamily::Gamma && c.iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "gamma family requires strictly positive centers (center {})",
                    i + 1
                )));
            }
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma2 {} must be positive",
                self.sigma2
            )));
        }
        if let Some(w) = &self.weights {
            if w.dim() != self.k {
                return Err(Error::InvalidArgument(format!(
                    "weight vector has {} entries, expected {}",
                    w.dim(),
                    self.k
                )));
            }
        }
        Ok(())
    }

    pub fn component_weights(&self) -> ProbVector {
        self.weights
            .clone()
            .unwrap_or_else(|| ProbVector::uniform(self.k))
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    // k centers equally spaced on a circle in R^2 with adjacent distance `side`
    // (equilateral triangle for k = 3), centered at `offset`.
    fn ring_centers(k: usize, side: f64, offset: [f64; 2]) -> Vec<Vec<f64>> {
        let radius = side / (2.0 * (std::f64::consts::PI / k as f64).sin());
        (0..k)
            .map(|i| {
                let theta = std::f64::consts::TAU * i as f64 / k as f64;
                vec![
                    offset[0] + radius * theta.cos(),
                    offset[1] + radius * theta.sin(),
                ]
            })
            .collect()
    }

    /// Two-dimensional Gaussian layout: K centers with pairwise-adjacent
    /// distance `side`, centered at the origin.
    pub fn gaussian_triangle(k: usize, sigma2: f64, side: f64) -> Self {
        GeneratorConfig {
            family: GeneratorFamily::Gaussian,
            k,
            p: 2,
            centers: Self::ring_centers(k, side, [0.0, 0.0]),
            sigma2,
            weights: None,
        }
    }

    /// Gamma analogue of [`gaussian_triangle`], offset into the positive
    /// orthant so every center coordinate stays positive.
    pub fn gamma_triangle(k: usize, sigma2: f64, side: f64) -> Self {
        GeneratorConfig {
            family: GeneratorFamily::Gamma,
            k,
            p: 2,
            centers: Self::ring_centers(k, side, [8.0, 8.0]),
            sigma2,
            weights: None,
        }
    }

    /// Higher-dimensional layout: K scaled one-hot corners with pairwise
    /// center distance `distance` in R^p (requires p >= k).
    pub fn gaussian_corners(k: usize, p: usize, sigma2: f64, distance: f64) -> Self {
        let scale = distance / std::f64::consts::SQRT_2;
        let centers = (0..k)
            .map(|i| {
                let mut c = vec![0.0; p];
                c[i] = scale;
                c
            })
            .collect();
        GeneratorConfig {
            family: GeneratorFamily::Gaussian,
            k,
            p,
            centers,
            sigma2,
            weights: None,
        }
    }
}

/// Samples `n` labeled observations: labels from `Cat(weights)`, features
/// from the labeled component. Deterministic given `seed`.
pub fn generate_mixture_data(
    cfg: &GeneratorConfig,
    n: usize,
    seed: RandomSeed,
) -> Result<(Dataset, Labeling)> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let weights = cfg.component_weights();
    let mut rng = seed.rng();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = sample_categorical_with(&weights, &mut rng);
        let center = &cfg.centers[y - 1];
        let row: Vec<f64> = match cfg.family {
            GeneratorFamily::Gaussian => {
                let sd = cfg.sigma2.sqrt();
                center
                    .iter()
                    .map(|&c| c + sd * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
                    .collect()
            }
            GeneratorFamily::Gamma => center
                .iter()
                .map(|&c| {
                    let shape = c * c / cfg.sigma2;
                    let scale = cfg.sigma2 / c;
                    GammaDist::new(shape, scale).unwrap().sample(&mut rng)
                })
                .collect(),
        };
        rows.push(row);
        labels.push(y);
    }
    Ok((Dataset::new(rows)?, Labeling::new(labels, cfg.k)?))
}

fn log_density(cfg: &GeneratorConfig, component: usize, x: &[f64]) -> f64 {
    let center = &cfg.centers[component];
    match cfg.family {
        GeneratorFamily::Gaussian => {
            let quad: f64 = x
                .iter()
                .zip(center)
                .map(|(&xi, &c)| (xi - c).powi(2))
                .sum::<f64>()
                / cfg.sigma2;
            -0.5 * (cfg.p as f64 * (LN_2PI + cfg.sigma2.ln()) + quad)
        }
        GeneratorFamily::Gamma => {
            use statrs::function::gamma::ln_gamma;
            let mut ll = 0.0;
            for (&xi, &c) in x.iter().zip(center) {
                if xi <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let shape = c * c / cfg.sigma2;
                let scale = cfg.sigma2 / c;
                ll += (shape - 1.0) * xi.ln() - xi / scale - ln_gamma(shape) - shape * scale.ln();
            }
            ll
        }
    }
}

/// Bayes posterior label probabilities of the generator at `x`, in log-space.
pub fn true_posterior(cfg: &GeneratorConfig, x: &[f64]) -> Result<ProbVector> {
    cfg.validate()?;
    if x.len() != cfg.p {
        return Err(Error::InvalidArgument(format!(
            "query dimension {} != generator dimension {}",
            x.len(),
            cfg.p
        )));
    }
    let weights = cfg.component_weights();
    let logs: Vec<f64> = (0..cfg.k)
        .map(|kk| {
            let lw = if weights.entries()[kk] > 0.0 {
                weights.entries()[kk].ln()
            } else {
                f64::NEG_INFINITY
            };
            lw + log_density(cfg, kk, x)
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // off-support point (gamma family at x <= 0); posterior is undefined,
        // fall back to the prior weights
        return Ok(weights);
    }
    let lse = m + logs.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    ProbVector::new(logs.iter().map(|&l| (l - lse).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Stochastic,
    NaiveHard,
    Cutoff,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Stochastic => "stochastic",
            Method::NaiveHard => "naive-hard",
            Method::Cutoff => "cutoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Sweep {
    /// Varying pool size at the generator's fixed sigma2.
    SampleSize(Vec<usize>),
    /// Varying sigma2 at the fixed pool size `n`.
    Sigma2(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub sweep: Sweep,
    /// Pool size used by sigma2 sweeps.
    #[serde(default = "default_pool")]
    pub n: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub reps: usize,
    #[serde(default)]
    pub clusterer: ClustererSpec,
    #[serde(default = "default_classifier")]
    pub classifier: Option<ClassifierSpec>,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_pool() -> usize {
    1000
}

fn default_classifier() -> Option<ClassifierSpec> {
    Some(ClassifierSpec::default())
}

fn default_test_size() -> usize {
    2000
}

fn default_train_fraction() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        let empty = match &self.sweep {
            Sweep::SampleSize(v) => v.is_empty(),
            Sweep::Sigma2(v) => v.is_empty(),
        };
        if empty {
            return Err(Error::InvalidArgument("sweep must be nonempty".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub sweep_value: f64,
    pub method: Method,
    pub rep: usize,
    pub ok: bool,
    pub coverage: f64,
    pub mean_set_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub sweep_value: f64,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub invalid: bool,
    pub mean_coverage: f64,
    pub se_coverage: f64,
    pub mean_set_size: f64,
    pub se_set_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<CellRecord>,
    pub aggregates: Vec<CellAggregate>,
}

impl ExperimentResult {
    pub fn aggregate(&self, sweep_value: f64, method: Method) -> Option<&CellAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.sweep_value == sweep_value && a.method == method)
    }

    pub fn any_invalid(&self) -> bool {
        self.aggregates.iter().any(|a| a.invalid)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// One method on one replication's shared pool/test data.
fn run_method(
    cfg: &ExperimentConfig,
    generator: &GeneratorConfig,
    pool: &Dataset,
    x_test: &Dataset,
    y_test: &Labeling,
    method: Method,
    seed: RandomSeed,
) -> Result<(f64, f64)> {
    let sets: Vec<ConfidenceSet> = match method {
        Method::Stochastic | Method::NaiveHard => {
            let mode = if method == Method::Stochastic {
                PipelineMode::Stochastic
            } else {
                PipelineMode::NaiveHard
            };
            let pipe_cfg = PipelineConfig {
                k: generator.k,
                alpha: cfg.alpha,
                train_fraction: cfg.train_fraction,
                mode,
                clusterer: cfg.clusterer.clone(),
                classifier: cfg.classifier.clone(),
            };
            let pipe = fit_conformal_pipeline(pool, &pipe_cfg, seed)?;
            predict_sets(&pipe, x_test)?
        }
        Method::Cutoff => {
            let rule = fit_cutoff_rule(pool, generator.k, cfg.alpha, &cfg.clusterer, seed)?;
            (0..x_test.n())
                .map(|i| rule.predict_set(x_test.row(i)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let report = evaluate_sets(&sets, y_test)?;
    Ok((report.coverage, report.mean_set_size))
}

/// Runs the full sweep-by-method-by-replication grid. All methods within a
/// replication share the same generated pool and test set; per-cell seeds
/// derive deterministically from `seed`. Cells where more than 20% of
/// replications fail are marked invalid.
pub fn run_experiment(cfg: &ExperimentConfig, seed: RandomSeed) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sweep_values: Vec<(f64, GeneratorConfig, usize)> = match &cfg.sweep {
        Sweep::SampleSize(ns) => ns
            .iter()
            .map(|&n| (n as f64, cfg.generator.clone(), n))
            .collect(),
        Sweep::Sigma2(vars) => vars
            .iter()
            .map(|&s2| {
                let mut g = cfg.generator.clone();
                g.sigma2 = s2;
                (s2, g, cfg.n)
            })
            .collect(),
    };

    let mut records = Vec::new();
    let mut aggregates = Vec::new();
    for (s_idx, (sweep_value, generator, pool_size)) in sweep_values.iter().enumerate() {
        let sweep_seed = seed.child(s_idx as u64);
        let mut per_method: Vec<(Vec<f64>, Vec<f64>, usize)> =
            vec![(Vec::new(), Vec::new(), 0); cfg.methods.len()];
        for rep in 0..cfg.reps {
            let rep_seed = sweep_seed.child(rep as u64);
            let data = generate_mixture_data(generator, *pool_size, rep_seed.child(0))
                .and_then(|(pool, _)| {
                    let (x_test, y_test) =
                        generate_mixture_data(generator, cfg.test_size, rep_seed.child(1))?;
                    Ok((pool, x_test, y_test))
                });
            let (pool, x_test, y_test) = match data {
                Ok(d) => d,
                Err(_) => {
                    for (m_idx, &method) in cfg.methods.iter().enumerate() {
                        per_method[m_idx].2 += 1;
                        records.push(CellRecord {
                            sweep_value: *sweep_value,
                            method,
                            rep,
                            ok: false,
                            coverage: f64::NAN,
                            mean_set_size: f64::NAN,
                        });
                    }
                    continue;
                }
            };
            for (m_idx, &method) in cfg.methods.iter().enumerate() {
                match run_method(
                    cfg,
                    generator,
                    &pool,
                    &x_test,
                    &y_test,
                    method,
                    rep_seed.child(2 + m_idx as u64),
                ) {
                    Ok((coverage, size)) => {
                        per_method[m_idx].0.push(coverage);
                        per_method[m_idx].1.push(size);
                        records.push(CellRecord {
                            sweep_value: *sweep_value,
                            method,
                            rep,
                            ok: true,
                            coverage,
                            mean_set_size: size,
                        });
                    }
                    Err(_) => {
                        per_method[m_idx].2 += 1;
                        records.push(CellRecord {
                            sweep_value: *sweep_value,
                            method,
                            rep,
                            ok: false,
                            coverage: f64::NAN,
                            mean_set_size: f64::NAN,
                        });
                    }
                }
            }
        }
        for (m_idx, &method) in cfg.methods.iter().enumerate() {
            let (covs, sizes, failed) = &per_method[m_idx];
            let (mean_c, se_c) = mean_and_se(covs);
            let (mean_s, se_s) = mean_and_se(sizes);
            aggregates.push(CellAggregate {
                sweep_value: *sweep_value,
                method,
                n_ok: covs.len(),
                n_failed: *failed,
                invalid: *failed as f64 > 0.2 * cfg.reps as f64,
                mean_coverage: mean_c,
                se_coverage: se_c,
                mean_set_size: mean_s,
                se_set_size: se_s,
            });
        }
    }
    Ok(ExperimentResult {
        records,
        aggregates,
    })
}

/// Exchangeable control experiment: true generator labels are fed straight
/// into the calibration path (no clustering), so standard split conformal
/// coverage applies. Returns per-replication test coverage.
pub fn exchangeable_sanity_coverages(
    generator: &GeneratorConfig,
    n_train: usize,
    n_calib: usize,
    n_test: usize,
    alpha: f64,
    classifier: &ClassifierSpec,
    reps: usize,
    seed: RandomSeed,
) -> Result<Vec<f64>> {
    generator.validate()?;
    let mut coverages = Vec::with_capacity(reps);
    for rep in 0..reps {
        let rep_seed = seed.child(rep as u64);
        let (x_tr, y_tr) = generate_mixture_data(generator, n_train, rep_seed.child(0))?;
        let (x_ca, y_ca) = generate_mixture_data(generator, n_calib, rep_seed.child(1))?;
        let (x_te, y_te) = generate_mixture_data(generator, n_test, rep_seed.child(2))?;
        let pipe = fit_with_reference_labels(
            &x_tr,
            &y_tr,
            &x_ca,
            &y_ca,
            generator.k,
            alpha,
            classifier,
            rep_seed.child(3),
        )?;
        let mut covered = 0usize;
        for i in 0..x_te.n() {
            if pipe.predict_set(x_te.row(i))?.contains(y_te.label(i)) {
                covered += 1;
            }
        }
        coverages.push(covered as f64 / n_test as f64);
    }
    Ok(coverages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn vanishing_noise_pins_points_to_centers() {
        let cfg = GeneratorConfig::gaussian_triangle(3, 1e-12, 6.0);
        let (x, y) = generate_mixture_data(&cfg, 200, RandomSeed::new(1)).unwrap();
        for i in 0..x.n() {
            let c = &cfg.centers[y.label(i) - 1];
            for (a, b) in x.row(i).iter().zip(c) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn single_component_all_labels_one() {
        let cfg = GeneratorConfig {
            family: GeneratorFamily::Gaussian,
            k: 1,
            p: 2,
            centers: vec![vec![0.0, 0.0]],
            sigma2: 1.0,
            weights: None,
        };
        let (_, y) = generate_mixture_data(&cfg, 50, RandomSeed::new(2)).unwrap();
        assert!(y.labels().iter().all(|&l| l == 1));
        assert_eq!(true_posterior(&cfg, &[3.0, -1.0]).unwrap().entries(), &[1.0]);
    }

    #[test]
    fn gamma_rejects_negative_center() {
        let cfg = GeneratorConfig {
            family: GeneratorFamily::Gamma,
            k: 2,
            p: 1,
            centers: vec![vec![1.0], vec![-2.0]],
            sigma2: 0.5,
            weights: None,
        };
        assert!(generate_mixture_data(&cfg, 10, RandomSeed::new(0)).is_err());
    }

    #[test]
    fn component_means_match_clt() {
        let cfg = GeneratorConfig::gaussian_triangle(3, 1.0, 6.0);
        let n = 100_000;
        let (x, y) = generate_mixture_data(&cfg, n, RandomSeed::new(3)).unwrap();
        for k in 1..=3 {
            let rows: Vec<&[f64]> = (0..n)
                .filter(|&i| y.label(i) == k)
                .map(|i| x.row(i))
                .collect();
            let nk = rows.len() as f64;
            for j in 0..2 {
                let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / nk;
                let tol = 3.0 / nk.sqrt();
                assert!(
                    (mean - cfg.centers[k - 1][j]).abs() < tol,
                    "component {k} coord {j}: {mean} vs {}",
                    cfg.centers[k - 1][j]
                );
            }
        }
    }

    #[test]
    fn label_frequencies_chi_square() {
        let cfg = GeneratorConfig {
            weights: Some(ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap()),
            ..GeneratorConfig::gaussian_triangle(3, 1.0, 6.0)
        };
        let n = 100_000usize;
        let (_, y) = generate_mixture_data(&cfg, n, RandomSeed::new(4)).unwrap();
        let mut counts = [0.0f64; 3];
        for &l in y.labels() {
            counts[l - 1] += 1.0;
        }
        let expected = [0.2 * n as f64, 0.3 * n as f64, 0.5 * n as f64];
        let stat: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(o, e)| (o - e).powi(2) / e)
            .sum();
        let p_value = 1.0 - ChiSquared::new(2.0).unwrap().cdf(stat);
        assert!(p_value > 1e-3, "chi-square stat {stat}, p {p_value}");
    }

    #[test]
    fn true_posterior_symmetry_and_tails() {
        let cfg = GeneratorConfig {
            family: GeneratorFamily::Gaussian,
            k: 2,
            p: 1,
            centers: vec![vec![-1.0], vec![1.0]],
            sigma2: 1.0,
            weights: None,
        };
        let post = true_posterior(&cfg, &[0.0]).unwrap();
        assert!((post.entries()[0] - 0.5).abs() < 1e-12);

        // at center 1 with the other >= 10 sigma away
        let far = GeneratorConfig {
            centers: vec![vec![0.0], vec![12.0]],
            ..cfg
        };
        assert!(true_posterior(&far, &[0.0]).unwrap().prob(1) >= 0.999);
    }

    #[test]
    fn true_posterior_valid_for_both_families() {
        let gauss = GeneratorConfig::gaussian_triangle(4, 2.0, 5.0);
        let gamma = GeneratorConfig::gamma_triangle(3, 1.0, 4.0);
        for &q in &[-50.0, -1.0, 0.5, 3.0, 80.0] {
            let p1 = true_posterior(&gauss, &[q, -q]).unwrap();
            assert!((p1.entries().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let p2 = true_posterior(&gamma, &[q.abs() + 0.1, q.abs() + 0.2]).unwrap();
            assert!((p2.entries().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn experiment_single_cell_reproducible() {
        let cfg = ExperimentConfig {
            generator: GeneratorConfig::gaussian_triangle(3, 0.3, 6.0),
            sweep: Sweep::SampleSize(vec![120]),
            n: 120,
            alpha: 0.1,
            methods: vec![Method::Stochastic],
            reps: 1,
            clusterer: ClustererSpec::default(),
            classifier: Some(ClassifierSpec::KnnSoft { k: 10 }),
            test_size: 100,
            train_fraction: 0.5,
        };
        let a = run_experiment(&cfg, RandomSeed::new(50)).unwrap();
        let b = run_experiment(&cfg, RandomSeed::new(50)).unwrap();
        assert_eq!(a.records.len(), 1);
        assert_eq!(a, b);
    }
}
