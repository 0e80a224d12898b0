//! Oracle-permutation coverage evaluation, set-size metrics, empirical
//! consistency and stability diagnostics, and the coverage lower bound.

use serde::{Deserialize, Serialize};

use crate::align::{min_cost_assignment, solve_assignment, CostMatrix, Permutation};
use crate::clustering::ClustererSpec;
use crate::conformal::{predict_sets, ConfidenceSet, ConformalPipeline};
use crate::core::{Dataset, Labeling, ProbVector, RandomSeed};
use crate::error::{Error, Result};
use crate::simulate::{generate_mixture_data, true_posterior, GeneratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub oracle_permutation: Permutation,
    pub coverage: f64,
    pub mean_set_size: f64,
    /// Index s holds the number of test sets with exactly s members.
    pub size_histogram: Vec<usize>,
    pub n_test: usize,
}

/// Permutation of the truth labels maximizing empirical coverage
/// `#{i : sigma(Y*_i) in set_i}`, solved exactly as an assignment problem on
/// the benefit matrix `b(k, j) = #{i : Y*_i = k, j in set_i}`. Ties resolve
/// to the lexicographically smallest permutation.
pub fn oracle_permutation(sets: &[ConfidenceSet], truth: &Labeling) -> Result<Permutation> {
    if sets.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if sets.len() != truth.n() {
        return Err(Error::InvalidArgument(format!(
            "{} sets but {} truth labels",
            sets.len(),
            truth.n()
        )));
    }
    let k = truth.k();
    let mut benefit = vec![vec![0u64; k]; k];
    for (set, &y) in sets.iter().zip(truth.labels()) {
        for &j in set.members() {
            if j < 1 || j > k {
                return Err(Error::InvalidArgument(format!(
                    "set member {j} outside 1..={k}"
                )));
            }
            benefit[y - 1][j - 1] += 1;
        }
    }
    let bmax = benefit.iter().flatten().copied().max().unwrap_or(0);
    let cost: Vec<Vec<u64>> = benefit
        .iter()
        .map(|row| row.iter().map(|&b| bmax - b).collect())
        .collect();
    Ok(solve_assignment(&CostMatrix::new(cost)?))
}

/// Coverage and size statistics of `sets` against `truth` under the oracle
/// permutation.
pub fn evaluate_sets(sets: &[ConfidenceSet], truth: &Labeling) -> Result<CoverageReport> {
    let sigma = oracle_permutation(sets, truth)?;
    let n = sets.len();
    let mut covered = 0usize;
    let mut size_sum = 0usize;
    let mut histogram = vec![0usize; truth.k() + 1];
    for (set, &y) in sets.iter().zip(truth.labels()) {
        if set.contains(sigma.apply(y)) {
            covered += 1;
        }
        size_sum += set.size();
        histogram[set.size()] += 1;
    }
    Ok(CoverageReport {
        oracle_permutation: sigma,
        coverage: covered as f64 / n as f64,
        mean_set_size: size_sum as f64 / n as f64,
        size_histogram: histogram,
        n_test: n,
    })
}

/// Builds prediction sets on `x_test` and evaluates them against `y_true`.
pub fn evaluate_coverage(
    pipeline: &ConformalPipeline,
    x_test: &Dataset,
    y_true: &Labeling,
) -> Result<CoverageReport> {
    let sets = predict_sets(pipeline, x_test)?;
    evaluate_sets(&sets, y_true)
}

// Matches fitted components to true components by the assignment minimizing
// total L1 gap, then returns the mean aligned L1 distance. `fitted` and
// `truth` are parallel soft-label rows.
pub fn estimation_error_from(fitted: &[ProbVector], truth: &[ProbVector]) -> Result<f64> {
    if fitted.is_empty() || fitted.len() != truth.len() {
        return Err(Error::InvalidArgument(
            "fitted and true posterior lists must be nonempty and equal length".into(),
        ));
    }
    let k = fitted[0].dim();
    if truth[0].dim() != k {
        return Err(Error::InvalidArgument(
            "fitted and true posteriors must share dimension".into(),
        ));
    }
    // cost[a][b] = total L1 contribution of mapping fitted component a+1 onto
    // true component b+1
    let mut cost = vec![vec![0.0f64; k]; k];
    for (f, t) in fitted.iter().zip(truth) {
        for a in 0..k {
            for b in 0..k {
                cost[a][b] += (f.entries()[a] - t.entries()[b]).abs();
            }
        }
    }
    let (_, total) = min_cost_assignment(&cost);
    let n = fitted.len() as f64;
    Ok(total / n)
}

/// Monte Carlo estimate of the estimation error `E_n` of a clusterer against
/// the generator's known posterior, averaged over `reps` independent fits.
/// More than 20% failed fits aborts with a diagnostics error.
pub fn estimate_estimation_error(
    spec: &ClustererSpec,
    generator: &GeneratorConfig,
    n: usize,
    reps: usize,
    seed: RandomSeed,
) -> Result<f64> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let mut values = Vec::with_capacity(reps);
    let mut failed = 0usize;
    for rep in 0..reps {
        let rep_seed = seed.child(rep as u64);
        let outcome = (|| {
            let (x, _) = generate_mixture_data(generator, n, rep_seed.child(0))?;
            let fit = spec.fit(&x, generator.k, rep_seed.child(1))?;
            let soft = fit.soft_labels(&x)?;
            let truth: Vec<ProbVector> = (0..x.n())
                .map(|i| true_posterior(generator, x.row(i)))
                .collect::<Result<_>>()?;
            estimation_error_from(soft.rows(), &truth)
        })();
        match outcome {
            Ok(v) => values.push(v),
            Err(_) => failed += 1,
        }
    }
    if failed as f64 > 0.2 * reps as f64 {
        return Err(Error::Diagnostics {
            failed,
            total: reps,
        });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Squared Hellinger distance between two probability vectors.
pub fn hellinger_sq(u: &ProbVector, v: &ProbVector) -> f64 {
    0.5 * u
        .entries()
        .iter()
        .zip(v.entries())
        .map(|(&a, &b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum::<f64>()
}

/// Upper bound on the L1 distance between two product distributions from the
/// per-factor squared Hellinger distances, clamped to the trivial bound 2.
pub fn product_l1_upper_bound(h2s: &[f64]) -> f64 {
    let prod: f64 = h2s.iter().map(|&h2| (1.0 - h2).max(0.0)).product();
    (2.0 * (2.0 * (1.0 - prod)).max(0.0).sqrt()).min(2.0)
}

/// Exact L1 distance between the product distributions with factor
/// distributions `a` and `b`, by full enumeration of all K^n label tuples.
/// Refuses instances with more than 4096 tuples.
pub fn exact_product_l1(a: &[ProbVector], b: &[ProbVector]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(
            "factor lists must be nonempty and equal length".into(),
        ));
    }
    let k = a[0].dim();
    if a.iter().chain(b).any(|p| p.dim() != k) {
        return Err(Error::InvalidArgument(
            "all factors must share dimension".into(),
        ));
    }
    let n = a.len();
    let tuples = (k as f64).powi(n as i32);
    if tuples > 4096.0 {
        return Err(Error::UnsupportedSize(format!(
            "K^n = {k}^{n} exceeds the 4096-tuple enumeration limit"
        )));
    }
    let mut total = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let mut pa = 1.0;
        let mut pb = 1.0;
        for (j, &label) in idx.iter().enumerate() {
            pa *= a[j].entries()[label];
            pb *= b[j].entries()[label];
        }
        total += (pa - pb).abs();
        // odometer increment over {0..k-1}^n
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(total);
            }
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Monte Carlo estimate of the replace-one stability upper bound `S_n`:
/// refits with the first point replaced by a fresh draw, re-matches
/// components, and aggregates per-point Hellinger squares over the shared
/// points by the product formula.
pub fn estimate_stability_upper(
    spec: &ClustererSpec,
    generator: &GeneratorConfig,
    n: usize,
    reps: usize,
    seed: RandomSeed,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument("stability needs n >= 2".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let mut values = Vec::with_capacity(reps);
    let mut failed = 0usize;
    for rep in 0..reps {
        let rep_seed = seed.child(rep as u64);
        let outcome: Result<f64> = (|| {
            let (x, _) = generate_mixture_data(generator, n, rep_seed.child(0))?;
            let (fresh, _) = generate_mixture_data(generator, 1, rep_seed.child(1))?;
            let mut rows: Vec<Vec<f64>> = x.rows().to_vec();
            rows[0] = fresh.row(0).to_vec();
            let x_prime = Dataset::new(rows)?;

            let fit = spec.fit(&x, generator.k, rep_seed.child(2))?;
            let refit = spec.fit(&x_prime, generator.k, rep_seed.child(2))?;
            let soft = fit.soft_labels(&x)?;
            let soft_prime = refit.soft_labels(&x)?;

            // align refit components to the original fit over the shared
            // points j = 2..n
            let k = generator.k;
            let mut cost = vec![vec![0.0f64; k]; k];
            for j in 1..x.n() {
                let f = soft_prime.row(j).entries();
                let t = soft.row(j).entries();
                for a in 0..k {
                    for b in 0..k {
                        cost[a][b] += (f[a] - t[b]).abs();
                    }
                }
            }
            let (assignment, _) = min_cost_assignment(&cost);
            let h2s: Vec<f64> = (1..x.n())
                .map(|j| {
                    let f = soft_prime.row(j).entries();
                    let t = soft.row(j).entries();
                    let aligned: Vec<f64> = (0..k)
                        .map(|b| {
                            let a = assignment.iter().position(|&c| c == b).unwrap();
                            f[a]
                        })
                        .collect();
                    0.5 * aligned
                        .iter()
                        .zip(t)
                        .map(|(&u, &v)| (u.sqrt() - v.sqrt()).powi(2))
                        .sum::<f64>()
                })
                .collect();
            Ok(product_l1_upper_bound(&h2s))
        })();
        match outcome {
            Ok(v) => values.push(v),
            Err(_) => failed += 1,
        }
    }
    if failed as f64 > 0.2 * reps as f64 {
        return Err(Error::Diagnostics {
            failed,
            total: reps,
        });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Coverage lower bound `1 - alpha - (n/(n+2)) E_half - (n/(2(n+2))) S_half`.
pub fn coverage_bound_rhs(alpha: f64, e_half: f64, s_half: f64, n: usize) -> Result<f64> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "n = {n} must be even and >= 2"
        )));
    }
    if !(alpha.is_finite() && e_half.is_finite() && s_half.is_finite()) {
        return Err(Error::InvalidArgument("inputs must be finite".into()));
    }
    let nf = n as f64;
    Ok(1.0 - alpha - nf / (nf + 2.0) * e_half - nf / (2.0 * (nf + 2.0)) * s_half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub reps: usize,
    pub e_hat: f64,
    pub s_hat_upper: f64,
    pub bound_rhs: f64,
}

/// Estimates `E_{n/2}` and `S_{n/2}` for the clusterer on the generator and
/// assembles the coverage lower bound at sample size `n`.
pub fn run_diagnostics(
    spec: &ClustererSpec,
    generator: &GeneratorConfig,
    alpha: f64,
    n: usize,
    reps: usize,
    seed: RandomSeed,
) -> Result<DiagnosticsReport> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "n = {n} must be even and >= 4"
        )));
    }
    let e_hat = estimate_estimation_error(spec, generator, n / 2, reps, seed.child(0))?;
    let s_hat_upper = estimate_stability_upper(spec, generator, n / 2, reps, seed.child(1))?;
    Ok(DiagnosticsReport {
        n,
        reps,
        e_hat,
        s_hat_upper,
        bound_rhs: coverage_bound_rhs(alpha, e_hat, s_hat_upper, n)?,
    })
}

// average ranks with ties sharing the mean of their rank span
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with a Student-t two-sided p-value
/// approximation. Ties receive average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidArgument(
            "spearman needs equal-length inputs with n >= 3".into(),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("constant input to spearman".into()));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 2.0)
            .map_err(|e| Error::Numeric(format!("t distribution: {e}")))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((rho, p))
}
