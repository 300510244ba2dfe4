//! Batch estimators: active, prediction-powered (uniform rule) and classical,
//! with plug-in covariances and Wald intervals.

use nalgebra::{DMatrix, DVector};

use crate::aipw::{self, AipwTerm};
use crate::betting::{betting_interval, increment_bounds};
use crate::data::{Budget, Pool};
use crate::error::{Error, Result};
use crate::losses::{solve_weighted, ProblemSpec, WeightedSample};
use crate::normal::z_two_sided;
use crate::report::{CoordinateInterval, InferenceReport, Method};
use crate::sampling::SamplingPlan;

fn check_len(what: usize, expected: usize) -> Result<()> {
    if what != expected {
        return Err(Error::LengthMismatch { expected, got: what });
    }
    Ok(())
}

pub(crate) fn batch_terms<'a>(
    pool: &'a Pool,
    pi: &[f64],
    xi: &[bool],
    labels: &[Option<f64>],
) -> Result<Vec<AipwTerm<'a>>> {
    let n = pool.len();
    check_len(pi.len(), n)?;
    check_len(xi.len(), n)?;
    check_len(labels.len(), n)?;
    pool.iter()
        .enumerate()
        .map(|(i, e)| {
            let f = e.f.ok_or(Error::MissingPrediction { index: i })?;
            if !xi[i] {
                return Ok(AipwTerm { x: &e.x, f, y: None, ipw: 0.0 });
            }
            if !(pi[i] > 0.0 && pi[i] <= 1.0) {
                return Err(Error::InvalidPlan {
                    index: i,
                    reason: format!("selected with probability {}", pi[i]),
                });
            }
            let y = labels[i].ok_or(Error::MissingLabel { index: i })?;
            Ok(AipwTerm { x: &e.x, f, y: Some(y), ipw: 1.0 / pi[i] })
        })
        .collect()
}

/// Active estimator: minimizer of (1/n) Σ [ℓ^f + (ℓ - ℓ^f) ξ/π].
///
/// `labels[i]` must be present wherever `plan.xi[i]`; other entries are ignored.
pub fn active_batch_estimate(
    pool: &Pool,
    plan: &SamplingPlan,
    labels: &[Option<f64>],
    spec: &ProblemSpec,
) -> Result<DVector<f64>> {
    let terms = batch_terms(pool, &plan.pi, &plan.xi, labels)?;
    aipw::estimate(spec, &terms)
}

fn uniform_pi(pool: &Pool, budget: Budget) -> Result<Vec<f64>> {
    check_len(budget.n(), pool.len())?;
    Ok(vec![budget.rate(); pool.len()])
}

/// Prediction-powered estimator: the active estimator under π ≡ n_b / n.
pub fn ppi_estimate(
    pool: &Pool,
    xi: &[bool],
    labels: &[Option<f64>],
    spec: &ProblemSpec,
    budget: Budget,
) -> Result<DVector<f64>> {
    let pi = uniform_pi(pool, budget)?;
    let terms = batch_terms(pool, &pi, xi, labels)?;
    aipw::estimate(spec, &terms)
}

fn labeled<'a>(pool: &'a Pool, xi: &[bool], labels: &[Option<f64>]) -> Result<Vec<(&'a [f64], f64)>> {
    check_len(xi.len(), pool.len())?;
    check_len(labels.len(), pool.len())?;
    let mut out = Vec::new();
    for (i, e) in pool.iter().enumerate() {
        if xi[i] {
            let y = labels[i].ok_or(Error::MissingLabel { index: i })?;
            out.push((e.x.as_slice(), y));
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("no labeled items".into()));
    }
    Ok(out)
}

/// M-estimate on the labeled items alone; predictions are not used.
pub fn classical_estimate(
    pool: &Pool,
    xi: &[bool],
    labels: &[Option<f64>],
    spec: &ProblemSpec,
) -> Result<DVector<f64>> {
    let data = labeled(pool, xi, labels)?;
    let samples: Vec<WeightedSample<'_>> = data.iter().map(|&(x, y)| WeightedSample::new(x, y, 1.0)).collect();
    solve_weighted(spec, &samples)
}

/// Mean increments f + (y - f) ξ/π, one per item.
pub fn batch_increments(pool: &Pool, plan: &SamplingPlan, labels: &[Option<f64>]) -> Result<Vec<f64>> {
    let terms = batch_terms(pool, &plan.pi, &plan.xi, labels)?;
    Ok(terms.iter().map(AipwTerm::mean_increment).collect())
}

/// (1/n) Σ (Δᵢ - Δ̄)².
pub fn empirical_increment_variance(increments: &[f64]) -> Result<f64> {
    aipw::variance(increments)
}

/// Ĥ⁻¹ V̂ Ĥ⁻¹ for the active estimator, with V̂ the divisor-n covariance of the
/// per-item gradient increments at `theta_hat`. For the mean this is exactly
/// [`empirical_increment_variance`] of the increments.
pub fn sandwich_covariance(
    pool: &Pool,
    plan: &SamplingPlan,
    labels: &[Option<f64>],
    spec: &ProblemSpec,
    theta_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let terms = batch_terms(pool, &plan.pi, &plan.xi, labels)?;
    aipw::covariance_at(spec, theta_hat, &terms)
}

/// θ̂ⱼ ± z_{1-α/2} √(var / n).
pub fn wald_interval(theta_j: f64, var_jj: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    if !(var_jj >= 0.0) || n == 0 {
        return Err(Error::Argument(format!(
            "need a nonnegative variance and n > 0, got {var_jj} and {n}"
        )));
    }
    let half = z_two_sided(alpha) * (var_jj / n as f64).sqrt();
    Ok((theta_j - half, theta_j + half))
}

pub(crate) fn build_report(
    method: Method,
    theta_hat: DVector<f64>,
    sigma_hat: DMatrix<f64>,
    alpha: f64,
    n: usize,
    n_lab: usize,
) -> Result<InferenceReport> {
    let intervals = (0..theta_hat.len())
        .map(|j| {
            let (lo, hi) = wald_interval(theta_hat[j], sigma_hat[(j, j)].max(0.0), n, alpha)?;
            Ok(CoordinateInterval { coordinate: j, lo, hi })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InferenceReport {
        method,
        theta_hat,
        sigma_hat,
        intervals,
        alpha,
        n,
        n_lab,
        degenerate: false,
    })
}

/// Active estimate, sandwich covariance and Wald intervals.
pub fn active_batch_report(
    pool: &Pool,
    plan: &SamplingPlan,
    labels: &[Option<f64>],
    spec: &ProblemSpec,
    alpha: f64,
) -> Result<InferenceReport> {
    let terms = batch_terms(pool, &plan.pi, &plan.xi, labels)?;
    let theta = aipw::estimate(spec, &terms)?;
    let sigma = aipw::covariance_at(spec, &theta, &terms)?;
    let n_lab = plan.xi.iter().filter(|&&x| x).count();
    build_report(Method::ActiveBatch, theta, sigma, alpha, pool.len(), n_lab)
}

pub fn ppi_report(
    pool: &Pool,
    xi: &[bool],
    labels: &[Option<f64>],
    spec: &ProblemSpec,
    budget: Budget,
    alpha: f64,
) -> Result<InferenceReport> {
    let pi = uniform_pi(pool, budget)?;
    let terms = batch_terms(pool, &pi, xi, labels)?;
    let theta = aipw::estimate(spec, &terms)?;
    let sigma = aipw::covariance_at(spec, &theta, &terms)?;
    let n_lab = xi.iter().filter(|&&x| x).count();
    build_report(Method::Ppi, theta, sigma, alpha, pool.len(), n_lab)
}

/// Classical estimate with the sandwich over the labeled items; the interval
/// scales with n_lab.
pub fn classical_report(
    pool: &Pool,
    xi: &[bool],
    labels: &[Option<f64>],
    spec: &ProblemSpec,
    alpha: f64,
) -> Result<InferenceReport> {
    let data = labeled(pool, xi, labels)?;
    let samples: Vec<WeightedSample<'_>> = data.iter().map(|&(x, y)| WeightedSample::new(x, y, 1.0)).collect();
    let theta = solve_weighted(spec, &samples)?;
    let terms: Vec<AipwTerm<'_>> = data
        .iter()
        .map(|&(x, y)| AipwTerm { x, f: y, y: Some(y), ipw: 1.0 })
        .collect();
    let sigma = aipw::covariance_at(spec, &theta, &terms)?;
    build_report(Method::Classical, theta, sigma, alpha, data.len(), data.len())
}

/// Betting interval for the mean from the same draws as the active report.
/// Labels and predictions must lie in `y_range`.
pub fn active_betting_report(
    pool: &Pool,
    plan: &SamplingPlan,
    labels: &[Option<f64>],
    y_range: (f64, f64),
    alpha: f64,
    grid_size: usize,
) -> Result<InferenceReport> {
    let inc = batch_increments(pool, plan, labels)?;
    let pi_min = plan.pi.iter().copied().filter(|&p| p > 0.0).fold(1.0, f64::min);
    let bounds = increment_bounds(y_range.0, y_range.1, pi_min)?;
    let ci = betting_interval(&inc, &bounds, alpha, grid_size)?;
    let mean = inc.iter().sum::<f64>() / inc.len() as f64;
    let var = aipw::variance(&inc)?;
    Ok(InferenceReport {
        method: Method::ActiveBetting,
        theta_hat: DVector::from_element(1, mean),
        sigma_hat: DMatrix::from_element(1, 1, var),
        intervals: vec![CoordinateInterval { coordinate: 0, lo: ci.lo, hi: ci.hi }],
        alpha,
        n: pool.len(),
        n_lab: plan.n_lab,
        degenerate: ci.degenerate,
    })
}

/// One value of a discrete covariate for exact variance calculations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteStratum {
    /// P(X = x).
    pub prob: f64,
    /// Sampling probability π(x).
    pub pi: f64,
    /// Prediction f(x).
    pub f: f64,
    /// E[Y | X = x].
    pub y_mean: f64,
    /// E[Y² | X = x].
    pub y_second_moment: f64,
}

/// Exact variance of the active mean estimator over n i.i.d. draws:
/// (1/n) (Var(Y) + E[(Y - f(X))² (1/π(X) - 1)]).
pub fn analytic_mean_variance(strata: &[DiscreteStratum], n: usize) -> Result<f64> {
    let total: f64 = strata.iter().map(|s| s.prob).sum();
    if strata.is_empty() || (total - 1.0).abs() > 1e-9 || n == 0 {
        return Err(Error::Argument(
            "strata probabilities must sum to 1 and n must be positive".into(),
        ));
    }
    let mut ey = 0.0;
    let mut ey2 = 0.0;
    let mut extra = 0.0;
    for s in strata {
        if !(s.pi > 0.0 && s.pi <= 1.0) {
            return Err(Error::Argument(format!("probability {} outside (0, 1]", s.pi)));
        }
        ey += s.prob * s.y_mean;
        ey2 += s.prob * s.y_second_moment;
        let resid2 = s.y_second_moment - 2.0 * s.f * s.y_mean + s.f * s.f;
        extra += s.prob * resid2 * (1.0 / s.pi - 1.0);
    }
    Ok((ey2 - ey * ey + extra) / n as f64)
}
