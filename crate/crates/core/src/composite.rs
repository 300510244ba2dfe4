//! Odds ratio of two subpopulation means, with a log-scale delta-method
//! interval.

use crate::aipw::{self, AipwTerm};
use crate::batch::batch_terms;
use crate::data::{Budget, Pool, RngSpec};
use crate::error::{Error, Result};
use crate::normal::z_two_sided;
use crate::predictors::classification_uncertainty;
use crate::sampling::{calibrate_eta, draw_decisions, tau_mix, SamplingPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OddsRatioInputs {
    pub mu1_hat: f64,
    pub mu0_hat: f64,
    pub var1: f64,
    pub var0: f64,
    pub n1: usize,
    pub n0: usize,
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Argument(format!("mean {mu} must lie strictly inside (0, 1)")));
    }
    Ok(())
}

/// (μ1 / (1 - μ1)) / (μ0 / (1 - μ0)).
pub fn odds_ratio(mu1: f64, mu0: f64) -> Result<f64> {
    check_mu(mu1)?;
    check_mu(mu0)?;
    Ok((mu1 / (1.0 - mu1)) / (mu0 / (1.0 - mu0)))
}

/// d log(μ/(1-μ)) / dμ = 1 / (μ(1-μ)).
pub fn log_odds_derivative(mu: f64) -> f64 {
    1.0 / (mu * (1.0 - mu))
}

/// Wald interval for log θ, exponentiated.
pub fn odds_ratio_interval(inp: &OddsRatioInputs, alpha: f64) -> Result<(f64, f64)> {
    let theta = odds_ratio(inp.mu1_hat, inp.mu0_hat)?;
    if !(inp.var1 >= 0.0 && inp.var0 >= 0.0) || inp.n1 == 0 || inp.n0 == 0 {
        return Err(Error::Argument("variances must be nonnegative and group sizes positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    let g1 = log_odds_derivative(inp.mu1_hat);
    let g0 = log_odds_derivative(inp.mu0_hat);
    let se = (inp.var1 * g1 * g1 / inp.n1 as f64 + inp.var0 * g0 * g0 / inp.n0 as f64).sqrt();
    let half = z_two_sided(alpha) * se;
    let log_theta = theta.ln();
    Ok(((log_theta - half).exp(), (log_theta + half).exp()))
}

/// Membership in group 1, read from covariate column `group_col` (nonzero = 1).
pub fn group_membership(pool: &Pool, group_col: usize) -> Result<Vec<bool>> {
    if group_col >= pool.dim() {
        return Err(Error::Schema(format!(
            "group column {group_col} out of range for {} covariates",
            pool.dim()
        )));
    }
    Ok(pool.iter().map(|e| e.x[group_col] != 0.0).collect())
}

/// A plan that splits the budget across the two groups in proportion to
/// their sizes and calibrates each group separately. Uncertainty comes from
/// the attached class probabilities, or `err` when probabilities are absent.
pub fn two_group_plan(pool: &Pool, group: &[bool], budget: Budget, tau: f64, rng: RngSpec) -> Result<SamplingPlan> {
    if group.len() != pool.len() || budget.n() != pool.len() {
        return Err(Error::LengthMismatch { expected: pool.len(), got: group.len() });
    }
    let mut pi = vec![0.0; pool.len()];
    for g in [false, true] {
        let idx: Vec<usize> = (0..pool.len()).filter(|&i| group[i] == g).collect();
        if idx.is_empty() {
            return Err(Error::InsufficientData(format!("group {} is empty", g as u8)));
        }
        let n_g = idx.len();
        let share = (budget.n_b() * n_g as f64 / pool.len() as f64).min(n_g as f64);
        let b = Budget::new(share, n_g)?;
        let u = idx
            .iter()
            .map(|&i| {
                let e = &pool.examples()[i];
                match (&e.probs, e.err) {
                    (Some(p), _) => classification_uncertainty(p),
                    (None, Some(err)) => Ok(err),
                    (None, None) => Err(Error::MissingPrediction { index: i }),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let base = match calibrate_eta(&u, b) {
            Ok((_, p)) => p,
            Err(Error::Degenerate(_)) => vec![b.rate(); n_g],
            Err(e) => return Err(e),
        };
        for (k, p) in tau_mix(&base, tau, b)?.into_iter().enumerate() {
            pi[idx[k]] = p;
        }
    }
    let xi = draw_decisions(&pi, rng);
    SamplingPlan::from_parts(pi, xi, f64::NAN, tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OddsRatioEstimate {
    pub theta_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub inputs: OddsRatioInputs,
}

/// Per-group active mean estimates and their increment variances, combined
/// into the odds ratio and its interval.
pub fn odds_ratio_estimate(
    pool: &Pool,
    group: &[bool],
    plan: &SamplingPlan,
    labels: &[Option<f64>],
    alpha: f64,
) -> Result<OddsRatioEstimate> {
    let terms = batch_terms(pool, &plan.pi, &plan.xi, labels)?;
    if group.len() != terms.len() {
        return Err(Error::LengthMismatch { expected: terms.len(), got: group.len() });
    }
    let stats = |g: bool| -> Result<(f64, f64, usize)> {
        let inc: Vec<f64> = terms
            .iter()
            .zip(group)
            .filter(|(_, &m)| m == g)
            .map(|(t, _)| AipwTerm::mean_increment(t))
            .collect();
        let n = inc.len();
        let mean = inc.iter().sum::<f64>() / n.max(1) as f64;
        Ok((mean, aipw::variance(&inc)?, n))
    };
    let (mu1, var1, n1) = stats(true)?;
    let (mu0, var0, n0) = stats(false)?;
    let inputs = OddsRatioInputs { mu1_hat: mu1, mu0_hat: mu0, var1, var0, n1, n0 };
    let (lo, hi) = odds_ratio_interval(&inputs, alpha)?;
    Ok(OddsRatioEstimate { theta_hat: odds_ratio(mu1, mu0)?, lo, hi, inputs })
}
