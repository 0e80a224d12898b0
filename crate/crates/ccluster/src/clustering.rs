//! Soft clustering backends: Gaussian mixture EM (full or diagonal
//! covariance), independent-gamma mixture EM, fuzzy-c-means, the stochastic
//! label sampler, and the one-hot adapter for hard clusterings.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::core::{
    sample_categorical_with, Dataset, Labeling, ProbVector, RandomSeed,
};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Minimal component weight before a fit is declared degenerate.
const WEIGHT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureFamily {
    GaussianFull,
    GaussianDiag,
    GammaIndependent,
}

/// Family default mirroring the high-dimensional regime: full covariances up
/// to p = 50, diagonal beyond.
pub fn default_family(p: usize) -> MixtureFamily {
    if p > 50 {
        MixtureFamily::GaussianDiag
    } else {
        MixtureFamily::GaussianFull
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// kmeans++-style center seeding followed by one hard-assignment M-step.
    KmeansPlusPlus,
    /// Uniformly random responsibilities, row-normalized.
    RandomResponsibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmOptions {
    pub init: InitStrategy,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub variance_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            init: InitStrategy::KmeansPlusPlus,
            tol: 1e-6,
            max_iter: 300,
            restarts: 5,
            variance_floor: 1e-6,
        }
    }
}

/// Per-family dispersion parameters, in squared feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dispersion {
    /// K full p-by-p covariance matrices, row-major.
    Full(Vec<Vec<Vec<f64>>>),
    /// K diagonal variance vectors.
    Diag(Vec<Vec<f64>>),
    /// K per-coordinate gamma variances; shapes and scales derive from the
    /// component means via shape = mean^2/var, scale = var/mean.
    Gamma(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Per-iteration log-likelihood trace (non-decreasing up to 1e-8 slack).
    pub trace: Vec<f64>,
}

/// A fitted parametric mixture: the generalizable soft clusterer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub family: MixtureFamily,
    pub weights: ProbVector,
    pub means: Vec<Vec<f64>>,
    pub dispersion: Dispersion,
    pub fit_log: FitLog,
}

impl MixtureModel {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn prepared(&self) -> Result<PreparedMixture> {
        PreparedMixture::new(self)
    }
}

// Precomputed per-component density state for repeated evaluation.
enum CompDensity {
    Full {
        mean: DVector<f64>,
        chol: Cholesky<f64, nalgebra::Dyn>,
        log_norm: f64,
    },
    Diag {
        mean: Vec<f64>,
        var: Vec<f64>,
        log_norm: f64,
    },
    Gamma {
        shape: Vec<f64>,
        scale: Vec<f64>,
        log_norm: f64,
    },
}

impl CompDensity {
    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            CompDensity::Full {
                mean,
                chol,
                log_norm,
            } => {
                let d = DVector::from_row_slice(x) - mean;
                let z = chol.l().solve_lower_triangular(&d).unwrap();
                log_norm - 0.5 * z.norm_squared()
            }
            CompDensity::Diag {
                mean,
                var,
                log_norm,
            } => {
                let quad: f64 = x
                    .iter()
                    .zip(mean)
                    .zip(var)
                    .map(|((&xi, &mi), &vi)| (xi - mi).powi(2) / vi)
                    .sum();
                log_norm - 0.5 * quad
            }
            CompDensity::Gamma {
                shape,
                scale,
                log_norm,
            } => {
                let mut ll = *log_norm;
                for ((&xi, &a), &s) in x.iter().zip(shape).zip(scale) {
                    if xi <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    ll += (a - 1.0) * xi.ln() - xi / s;
                }
                ll
            }
        }
    }
}

/// A mixture with per-component factorizations cached for fast evaluation.
pub struct PreparedMixture {
    log_weights: Vec<f64>,
    comps: Vec<CompDensity>,
}

impl PreparedMixture {
    fn new(model: &MixtureModel) -> Result<Self> {
        let p = model.dim();
        let log_weights = model
            .weights
            .entries()
            .iter()
            .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
            .collect();
        let mut comps = Vec::with_capacity(model.k());
        match &model.dispersion {
            Dispersion::Full(covs) => {
                for (mean, cov) in model.means.iter().zip(covs) {
                    let m = DMatrix::from_fn(p, p, |i, j| cov[i][j]);
                    let chol = Cholesky::new(m).ok_or_else(|| {
                        Error::Numeric("covariance not positive definite".into())
                    })?;
                    let log_det: f64 =
                        (0..p).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
                    comps.push(CompDensity::Full {
                        mean: DVector::from_row_slice(mean),
                        chol,
                        log_norm: -0.5 * (p as f64 * LN_2PI + log_det),
                    });
                }
            }
            Dispersion::Diag(vars) => {
                for (mean, var) in model.means.iter().zip(vars) {
                    let log_det: f64 = var.iter().map(|v| v.ln()).sum();
                    comps.push(CompDensity::Diag {
                        mean: mean.clone(),
                        var: var.clone(),
                        log_norm: -0.5 * (p as f64 * LN_2PI + log_det),
                    });
                }
            }
            Dispersion::Gamma(vars) => {
                for (mean, var) in model.means.iter().zip(vars) {
                    let mut shape = Vec::with_capacity(p);
                    let mut scale = Vec::with_capacity(p);
                    let mut log_norm = 0.0;
                    for (&m, &v) in mean.iter().zip(var) {
                        if m <= 0.0 || v <= 0.0 {
                            return Err(Error::Numeric(
                                "gamma component requires positive mean and variance".into(),
                            ));
                        }
                        let a = m * m / v;
                        let s = v / m;
                        log_norm -= ln_gamma(a) + a * s.ln();
                        shape.push(a);
                        scale.push(s);
                    }
                    comps.push(CompDensity::Gamma {
                        shape,
                        scale,
                        log_norm,
                    });
                }
            }
        }
        Ok(PreparedMixture { log_weights, comps })
    }

    /// Log of weight_k * density_k(x), per component.
    pub fn weighted_log_densities(&self, x: &[f64]) -> Vec<f64> {
        self.comps
            .iter()
            .zip(&self.log_weights)
            .map(|(c, &lw)| lw + c.log_density(x))
            .collect()
    }

    /// Posterior membership probabilities at `x`, computed in log-space.
    pub fn posterior(&self, x: &[f64]) -> Result<ProbVector> {
        let logs = self.weighted_log_densities(x);
        log_space_normalize(&logs)
    }
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + logs.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

fn log_space_normalize(logs: &[f64]) -> Result<ProbVector> {
    let lse = log_sum_exp(logs);
    if !lse.is_finite() {
        return Err(Error::Numeric(
            "all component log-densities are -inf; cannot normalize".into(),
        ));
    }
    ProbVector::new(logs.iter().map(|&l| (l - lse).exp()).collect())
}

/// Posterior cluster probabilities of `x` under a fitted mixture.
pub fn mixture_posterior(model: &MixtureModel, x: &[f64]) -> Result<ProbVector> {
    if x.len() != model.dim() {
        return Err(Error::InvalidArgument(format!(
            "query dimension {} != model dimension {}",
            x.len(),
            model.dim()
        )));
    }
    model.prepared()?.posterior(x)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

// kmeans++-style seeding: first center uniform, each next proportional to the
// squared distance to the nearest chosen center.
fn kmeanspp_centers<R: Rng>(x: &Dataset, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = x.n();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(x.row(rng.gen_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(x.row(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = x.row(idx).to_vec();
        for i in 0..n {
            let d = squared_distance(x.row(i), &c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
        centers.push(c);
    }
    centers
}

// Weighted-moment M-step shared by all families. `resp[i][k]` are E-step
// responsibilities.
fn m_step(
    x: &Dataset,
    resp: &[Vec<f64>],
    family: MixtureFamily,
    floor: f64,
    iteration: usize,
) -> Result<MixtureModel> {
    let n = x.n();
    let p = x.dim();
    let k = resp[0].len();
    let mut weight_sums = vec![0.0; k];
    for r in resp {
        for (c, &rv) in weight_sums.iter_mut().zip(r) {
            *c += rv;
        }
    }
    for (kk, &w) in weight_sums.iter().enumerate() {
        if w / (n as f64) < WEIGHT_FLOOR {
            return Err(Error::DegenerateFit {
                iteration,
                message: format!("component {} weight collapsed to {:.3e}", kk + 1, w / n as f64),
            });
        }
    }
    let weights = ProbVector::from_weights(
        weight_sums.iter().map(|&w| w / n as f64).collect(),
    )?;
    let mut means = vec![vec![0.0; p]; k];
    for i in 0..n {
        let xi = x.row(i);
        for kk in 0..k {
            let r = resp[i][kk];
            for j in 0..p {
                means[kk][j] += r * xi[j];
            }
        }
    }
    for kk in 0..k {
        for j in 0..p {
            means[kk][j] /= weight_sums[kk];
        }
    }

    let dispersion = match family {
        MixtureFamily::GaussianFull => {
            let mut covs = vec![vec![vec![0.0; p]; p]; k];
            for i in 0..n {
                let xi = x.row(i);
                for kk in 0..k {
                    let r = resp[i][kk];
                    if r == 0.0 {
                        continue;
                    }
                    for a in 0..p {
                        let da = xi[a] - means[kk][a];
                        for b in a..p {
                            covs[kk][a][b] += r * da * (xi[b] - means[kk][b]);
                        }
                    }
                }
            }
            for kk in 0..k {
                for a in 0..p {
                    for b in a..p {
                        covs[kk][a][b] /= weight_sums[kk];
                        covs[kk][b][a] = covs[kk][a][b];
                    }
                }
                floor_covariance(&mut covs[kk], floor);
            }
            Dispersion::Full(covs)
        }
        MixtureFamily::GaussianDiag | MixtureFamily::GammaIndependent => {
            let mut vars = vec![vec![0.0; p]; k];
            for i in 0..n {
                let xi = x.row(i);
                for kk in 0..k {
                    let r = resp[i][kk];
                    if r == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        vars[kk][j] += r * (xi[j] - means[kk][j]).powi(2);
                    }
                }
            }
            for kk in 0..k {
                for j in 0..p {
                    vars[kk][j] = (vars[kk][j] / weight_sums[kk]).max(floor);
                }
            }
            if family == MixtureFamily::GaussianDiag {
                Dispersion::Diag(vars)
            } else {
                for kk in 0..k {
                    for j in 0..p {
                        if means[kk][j] <= 0.0 {
                            return Err(Error::DegenerateFit {
                                iteration,
                                message: format!(
                                    "gamma component {} has non-positive mean in coordinate {}",
                                    kk + 1,
                                    j + 1
                                ),
                            });
                        }
                    }
                }
                Dispersion::Gamma(vars)
            }
        }
    };

    Ok(MixtureModel {
        family,
        weights,
        means,
        dispersion,
        fit_log: FitLog {
            log_likelihood: f64::NEG_INFINITY,
            iterations: iteration,
            trace: Vec::new(),
        },
    })
}

// Floors the eigenvalues of a symmetric matrix at `floor`, in place.
fn floor_covariance(cov: &mut [Vec<f64>], floor: f64) {
    let p = cov.len();
    let m = DMatrix::from_fn(p, p, |i, j| cov[i][j]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut needs_floor = false;
    for &ev in eig.eigenvalues.iter() {
        if ev < floor {
            needs_floor = true;
        }
    }
    if !needs_floor {
        return;
    }
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        *v = v.max(floor);
    }
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
    for i in 0..p {
        for j in 0..p {
            cov[i][j] = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]);
        }
    }
}

fn initial_responsibilities<R: Rng>(
    x: &Dataset,
    k: usize,
    init: InitStrategy,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = x.n();
    match init {
        InitStrategy::KmeansPlusPlus => {
            let centers = kmeanspp_centers(x, k, rng);
            (0..n)
                .map(|i| {
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (kk, c) in centers.iter().enumerate() {
                        let d = squared_distance(x.row(i), c);
                        if d < best_d {
                            best_d = d;
                            best = kk;
                        }
                    }
                    let mut r = vec![0.0; k];
                    r[best] = 1.0;
                    r
                })
                .collect()
        }
        InitStrategy::RandomResponsibility => (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect(),
    }
}

fn em_single_run(
    x: &Dataset,
    k: usize,
    family: MixtureFamily,
    opts: &EmOptions,
    seed: RandomSeed,
) -> Result<MixtureModel> {
    let n = x.n();
    let mut rng = seed.rng();
    let resp0 = initial_responsibilities(x, k, opts.init, &mut rng);
    let mut model = m_step(x, &resp0, family, opts.variance_floor, 0)?;

    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        let prepared = model.prepared()?;
        let mut resp = Vec::with_capacity(n);
        let mut ll = 0.0;
        for i in 0..n {
            let logs = prepared.weighted_log_densities(x.row(i));
            let lse = log_sum_exp(&logs);
            if !lse.is_finite() {
                return Err(Error::Numeric(format!(
                    "observation {} has zero likelihood under every component",
                    i + 1
                )));
            }
            ll += lse;
            resp.push(logs.iter().map(|&l| (l - lse).exp()).collect::<Vec<f64>>());
        }
        trace.push(ll);
        iterations = iter;
        if prev_ll.is_finite() && ll - prev_ll < opts.tol {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
        model = m_step(x, &resp, family, opts.variance_floor, iter)?;
    }
    model.fit_log = FitLog {
        log_likelihood: prev_ll,
        iterations,
        trace,
    };
    Ok(model)
}

/// Fits a K-component mixture by EM with restarts, keeping the fit with the
/// best final log-likelihood. Deterministic given `seed`.
pub fn fit_mixture_em(
    x: &Dataset,
    k: usize,
    family: MixtureFamily,
    opts: &EmOptions,
    seed: RandomSeed,
) -> Result<MixtureModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if x.n() < k {
        return Err(Error::InvalidArgument(format!(
            "need n >= K, got n = {}, K = {}",
            x.n(),
            k
        )));
    }
    if family == MixtureFamily::GammaIndependent {
        for i in 0..x.n() {
            if x.row(i).iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "gamma family requires strictly positive data (row {})",
                    i + 1
                )));
            }
        }
    }
    let restarts = opts.restarts.max(1);
    let mut best: Option<MixtureModel> = None;
    let mut last_err = None;
    for r in 0..restarts {
        match em_single_run(x, k, family, opts, seed.child(r as u64)) {
            Ok(model) => {
                let better = best
                    .as_ref()
                    .map(|b| model.fit_log.log_likelihood > b.fit_log.log_likelihood)
                    .unwrap_or(true);
                if better {
                    best = Some(model);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap())
}

/// Fuzzy-c-means centroids with fuzziness exponent m > 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcmModel {
    pub centroids: Vec<Vec<f64>>,
    pub m: f64,
}

impl FcmModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }
}

const FCM_COINCIDENCE_TOL: f64 = 1e-12;

/// Fuzzy membership of `x` in each centroid. A point coinciding with one or
/// more centroids splits its mass uniformly over them.
pub fn fcm_membership(model: &FcmModel, x: &[f64]) -> ProbVector {
    let k = model.k();
    let dists: Vec<f64> = model
        .centroids
        .iter()
        .map(|c| squared_distance(x, c).sqrt())
        .collect();
    let coincident: Vec<usize> = (0..k).filter(|&i| dists[i] < FCM_COINCIDENCE_TOL).collect();
    if !coincident.is_empty() {
        let mut u = vec![0.0; k];
        for &i in &coincident {
            u[i] = 1.0 / coincident.len() as f64;
        }
        return ProbVector::new(u).unwrap();
    }
    let exponent = 2.0 / (model.m - 1.0);
    let dmin = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = dists.iter().map(|&d| (dmin / d).powf(exponent)).collect();
    ProbVector::from_weights(weights).unwrap()
}

/// Standard fuzzy-c-means alternation: memberships from centroid distances,
/// centroids as u^m-weighted means, until the largest centroid displacement
/// falls below `tol`.
pub fn fit_fcm(
    x: &Dataset,
    k: usize,
    m: f64,
    tol: f64,
    max_iter: usize,
    seed: RandomSeed,
) -> Result<FcmModel> {
    if k == 0 || k > x.n() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= K <= n, got K = {}, n = {}",
            k,
            x.n()
        )));
    }
    if m <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fuzziness m must exceed 1, got {m}"
        )));
    }
    let n = x.n();
    let p = x.dim();
    let mut rng = seed.rng();
    let mut model = FcmModel {
        centroids: kmeanspp_centers(x, k, &mut rng),
        m,
    };
    for _ in 0..max_iter {
        let mut num = vec![vec![0.0; p]; k];
        let mut den = vec![0.0; k];
        for i in 0..n {
            let u = fcm_membership(&model, x.row(i));
            let xi = x.row(i);
            for kk in 0..k {
                let w = u.entries()[kk].powf(m);
                den[kk] += w;
                for j in 0..p {
                    num[kk][j] += w * xi[j];
                }
            }
        }
        let mut max_shift: f64 = 0.0;
        for kk in 0..k {
            if den[kk] <= 0.0 {
                continue; // empty cluster keeps its centroid
            }
            let new_c: Vec<f64> = num[kk].iter().map(|&v| v / den[kk]).collect();
            let shift = squared_distance(&new_c, &model.centroids[kk]).sqrt();
            max_shift = max_shift.max(shift);
            model.centroids[kk] = new_c;
        }
        if max_shift < tol {
            break;
        }
    }
    Ok(model)
}

/// One soft cluster label per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelMatrix {
    rows: Vec<ProbVector>,
}

impl SoftLabelMatrix {
    pub fn new(rows: Vec<ProbVector>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "soft label matrix must be nonempty".into(),
            ));
        }
        let k = rows[0].dim();
        if rows.iter().any(|r| r.dim() != k) {
            return Err(Error::InvalidArgument(
                "soft label rows must share the same dimension".into(),
            ));
        }
        Ok(SoftLabelMatrix { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn k(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn row(&self, i: usize) -> &ProbVector {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[ProbVector] {
        &self.rows
    }
}

/// Row-wise independent categorical draws with per-row sub-streams.
pub fn sample_stochastic_labels(soft: &SoftLabelMatrix, seed: RandomSeed) -> Labeling {
    let labels = (0..soft.n())
        .map(|i| {
            let mut rng = seed.child(i as u64).rng();
            sample_categorical_with(soft.row(i), &mut rng)
        })
        .collect();
    Labeling::new(labels, soft.k()).unwrap()
}

/// Represents a hard labeling as stochastic clustering via one-hot encoding.
pub fn one_hot_soft_labels(hard: &Labeling) -> SoftLabelMatrix {
    let rows = hard
        .labels()
        .iter()
        .map(|&y| ProbVector::one_hot(hard.k(), y).unwrap())
        .collect();
    SoftLabelMatrix::new(rows).unwrap()
}

/// Argmax labels of a soft label matrix (ties to the smallest index).
pub fn argmax_labels(soft: &SoftLabelMatrix) -> Labeling {
    let labels = soft.rows().iter().map(|r| r.argmax()).collect();
    Labeling::new(labels, soft.k()).unwrap()
}

/// Configuration of a soft clustering backend, as read from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClustererSpec {
    /// Parametric mixture by EM. `family: None` picks the dimension default.
    Mixture {
        #[serde(default)]
        family: Option<MixtureFamily>,
        #[serde(default)]
        em: EmOptions,
    },
    /// Fuzzy-c-means with fuzziness m.
    Fcm {
        m: f64,
        #[serde(default = "default_fcm_tol")]
        tol: f64,
        #[serde(default = "default_fcm_max_iter")]
        max_iter: usize,
    },
}

fn default_fcm_tol() -> f64 {
    1e-6
}

fn default_fcm_max_iter() -> usize {
    300
}

impl Default for ClustererSpec {
    fn default() -> Self {
        ClustererSpec::Mixture {
            family: None,
            em: EmOptions::default(),
        }
    }
}

impl ClustererSpec {
    pub fn fit(&self, x: &Dataset, k: usize, seed: RandomSeed) -> Result<FittedClusterer> {
        match self {
            ClustererSpec::Mixture { family, em } => {
                let family = family.unwrap_or_else(|| default_family(x.dim()));
                Ok(FittedClusterer::Mixture(fit_mixture_em(
                    x, k, family, em, seed,
                )?))
            }
            ClustererSpec::Fcm { m, tol, max_iter } => Ok(FittedClusterer::Fcm(fit_fcm(
                x, k, *m, *tol, *max_iter, seed,
            )?)),
        }
    }
}

/// A fitted soft clusterer; both backends generalize to arbitrary query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum FittedClusterer {
    Mixture(MixtureModel),
    Fcm(FcmModel),
}

impl FittedClusterer {
    pub fn k(&self) -> usize {
        match self {
            FittedClusterer::Mixture(m) => m.k(),
            FittedClusterer::Fcm(m) => m.k(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FittedClusterer::Mixture(m) => m.dim(),
            FittedClusterer::Fcm(m) => m.dim(),
        }
    }

    pub fn soft_label(&self, x: &[f64]) -> Result<ProbVector> {
        match self {
            FittedClusterer::Mixture(m) => mixture_posterior(m, x),
            FittedClusterer::Fcm(m) => Ok(fcm_membership(m, x)),
        }
    }

    /// Soft labels for every row of a dataset, with per-model state prepared once.
    pub fn soft_labels(&self, x: &Dataset) -> Result<SoftLabelMatrix> {
        match self {
            FittedClusterer::Mixture(m) => {
                let prepared = m.prepared()?;
                let rows: Result<Vec<ProbVector>> =
                    (0..x.n()).map(|i| prepared.posterior(x.row(i))).collect();
                SoftLabelMatrix::new(rows?)
            }
            FittedClusterer::Fcm(m) => {
                let rows = (0..x.n()).map(|i| fcm_membership(m, x.row(i))).collect();
                SoftLabelMatrix::new(rows)
            }
        }
    }
}
