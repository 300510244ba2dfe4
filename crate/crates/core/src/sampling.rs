//! Sampling rules: budget calibration, mixing with the uniform rule, τ tuning,
//! GLM-aware uncertainty, the sequential budget rule, and Bernoulli draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{Budget, Pool, RngSpec};
use crate::error::{Error, Result};
use crate::losses::{add_hessian, LossKind, ProblemSpec};
use crate::predictors::PredictedPoint;

/// Default τ for sequential runs.
pub const DEFAULT_TAU: f64 = 0.5;

/// Default τ grid for tuning: 0.0, 0.05, ..., 1.0.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Per-item labeling probabilities and the decisions drawn from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub pi: Vec<f64>,
    pub xi: Vec<bool>,
    pub eta: f64,
    pub tau: f64,
    pub n_lab: usize,
    /// Set when every uncertainty was zero and the rule fell back to uniform.
    pub uniform_fallback: bool,
}

impl SamplingPlan {
    /// Calibrates `u` to the budget, mixes with the uniform rule and draws
    /// decisions. All-zero uncertainty falls back to the uniform rule.
    pub fn from_uncertainty(u: &[f64], budget: Budget, tau: f64, rng: RngSpec) -> Result<Self> {
        let (eta, base, fallback) = match calibrate_eta(u, budget) {
            Ok((eta, pi)) => (eta, pi, false),
            Err(Error::Degenerate(_)) => (0.0, vec![budget.rate(); budget.n()], true),
            Err(e) => return Err(e),
        };
        let pi = tau_mix(&base, tau, budget)?;
        let xi = draw_decisions(&pi, rng);
        Ok(Self::assemble(pi, xi, eta, tau, fallback))
    }

    /// The uniform rule π ≡ n_b / n.
    pub fn uniform(budget: Budget, rng: RngSpec) -> Self {
        let pi = vec![budget.rate(); budget.n()];
        let xi = draw_decisions(&pi, rng);
        Self::assemble(pi, xi, budget.n_b() / budget.n() as f64, 1.0, false)
    }

    /// A plan read back from storage; probabilities and decisions are checked.
    pub fn from_parts(pi: Vec<f64>, xi: Vec<bool>, eta: f64, tau: f64) -> Result<Self> {
        if pi.len() != xi.len() {
            return Err(Error::LengthMismatch {
                expected: pi.len(),
                got: xi.len(),
            });
        }
        for (index, (&p, &x)) in pi.iter().zip(&xi).enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidPlan {
                    index,
                    reason: format!("probability {p} outside [0, 1]"),
                });
            }
            if x && p == 0.0 {
                return Err(Error::InvalidPlan {
                    index,
                    reason: "selected with probability zero".into(),
                });
            }
        }
        Ok(Self::assemble(pi, xi, eta, tau, false))
    }

    fn assemble(pi: Vec<f64>, xi: Vec<bool>, eta: f64, tau: f64, uniform_fallback: bool) -> Self {
        let n_lab = xi.iter().filter(|&&x| x).count();
        SamplingPlan {
            pi,
            xi,
            eta,
            tau,
            n_lab,
            uniform_fallback,
        }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn expected_labels(&self) -> f64 {
        self.pi.iter().sum()
    }
}

fn check_len(u: &[f64], budget: Budget) -> Result<()> {
    if u.len() != budget.n() {
        return Err(Error::LengthMismatch {
            expected: budget.n(),
            got: u.len(),
        });
    }
    Ok(())
}

/// Scales uncertainties so the expected label count equals the budget:
/// η = n_b / Σuᵢ and πᵢ = min(η uᵢ, 1).
pub fn calibrate_eta(u: &[f64], budget: Budget) -> Result<(f64, Vec<f64>)> {
    check_len(u, budget)?;
    if u.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Argument(
            "uncertainties must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = u.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "all uncertainties are zero; use the uniform rule".into(),
        ));
    }
    let eta = budget.n_b() / total;
    let pi = u.iter().map(|&v| (eta * v).min(1.0)).collect();
    Ok((eta, pi))
}

/// (1 - τ) π + τ n_b / n, entrywise.
pub fn tau_mix(pi: &[f64], tau: f64, budget: Budget) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Argument(format!("tau {tau} outside [0, 1]")));
    }
    if pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Argument("probabilities must lie in [0, 1]".into()));
    }
    let unif = budget.rate();
    Ok(pi
        .iter()
        .map(|&p| ((1.0 - tau) * p + tau * unif).min(1.0))
        .collect())
}

/// Picks τ from `grid` minimizing Σ (yᵢ - f(xᵢ))² / π^(τ)(xᵢ) on historical
/// data. The unmixed rule is u scaled to the uniform rate by its historical
/// mean. Ties go to the largest τ.
pub fn tune_tau(
    historical: &[PredictedPoint],
    u: &[f64],
    budget: Budget,
    grid: &[f64],
) -> Result<f64> {
    if historical.is_empty() || grid.is_empty() {
        return Err(Error::Argument("tau tuning needs data and a grid".into()));
    }
    if historical.len() != u.len() {
        return Err(Error::LengthMismatch {
            expected: historical.len(),
            got: u.len(),
        });
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Argument("tau grid values must lie in [0, 1]".into()));
    }
    let rate = budget.rate();
    let mean_u = u.iter().sum::<f64>() / u.len() as f64;
    let base: Vec<f64> = u
        .iter()
        .map(|&v| if mean_u > 0.0 { (rate * v / mean_u).min(1.0) } else { 0.0 })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for &tau in grid {
        let obj = tau_objective(historical, &base, tau, rate);
        if !obj.is_finite() {
            continue;
        }
        best = match best {
            None => Some((obj, tau)),
            Some((b, bt)) => {
                let tol = 1e-12 * b.abs().max(obj.abs());
                if obj < b - tol || ((obj - b).abs() <= tol && tau > bt) {
                    Some((obj, tau))
                } else {
                    Some((b, bt))
                }
            }
        };
    }
    best.map(|(_, t)| t).ok_or_else(|| {
        Error::Degenerate("every tau in the grid leaves a zero probability on a nonzero residual".into())
    })
}

fn tau_objective(historical: &[PredictedPoint], base: &[f64], tau: f64, rate: f64) -> f64 {
    historical
        .iter()
        .zip(base)
        .map(|(h, &b)| {
            let r2 = (h.y - h.f).powi(2);
            if r2 == 0.0 {
                return 0.0;
            }
            let p = (1.0 - tau) * b + tau * rate;
            if p > 0.0 {
                r2 / p
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Direction along which prediction errors matter for the target coordinate:
/// the j-th column of the inverse Hessian for GLMs, the identity otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum GlmDirection {
    Identity,
    Column(DVector<f64>),
}

impl GlmDirection {
    pub fn column(&self) -> Option<&DVector<f64>> {
        match self {
            GlmDirection::Identity => None,
            GlmDirection::Column(h) => Some(h),
        }
    }
}

/// Plug-in h^(j) = Ĥ⁻¹ e_j with Ĥ the average per-item Hessian at `theta_plug`.
pub fn glm_direction(pool: &Pool, spec: &ProblemSpec, theta_plug: &DVector<f64>) -> Result<GlmDirection> {
    if !spec.is_glm() {
        return Ok(GlmDirection::Identity);
    }
    if theta_plug.len() != spec.dim() || pool.dim() != spec.dim() {
        return Err(Error::Argument(format!(
            "plug-in parameter and covariates must have dimension {}",
            spec.dim()
        )));
    }
    let h = empirical_hessian(pool.iter().map(|e| e.x.as_slice()), spec.kind(), theta_plug, spec.dim());
    let mut e_j = DVector::zeros(spec.dim());
    e_j[spec.target()] = 1.0;
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Singular("empirical Hessian is not invertible".into()))?;
    Ok(GlmDirection::Column(chol.solve(&e_j)))
}

pub(crate) fn empirical_hessian<'a>(
    xs: impl Iterator<Item = &'a [f64]>,
    kind: LossKind,
    theta: &DVector<f64>,
    dim: usize,
) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dim, dim);
    let mut n = 0usize;
    for x in xs {
        add_hessian(kind, theta, x, 1.0, &mut h);
        n += 1;
    }
    if n > 0 {
        h /= n as f64;
    }
    h
}

/// err · |xᵀ h^(j)|; plain `err` for the identity direction.
pub fn glm_uncertainty(err: f64, x: &[f64], dir: &GlmDirection) -> f64 {
    match dir {
        GlmDirection::Identity => err,
        GlmDirection::Column(h) => {
            let proj: f64 = x.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
            err * proj.abs()
        }
    }
}

/// Running budget bookkeeping for the sequential rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialBudgetState {
    budget: Budget,
    /// Current step, starting at 1.
    t: usize,
    /// Labels collected before step t.
    n_lab: usize,
}

impl SequentialBudgetState {
    pub fn new(budget: Budget) -> Self {
        SequentialBudgetState {
            budget,
            t: 1,
            n_lab: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.t
    }

    pub fn labels_so_far(&self) -> usize {
        self.n_lab
    }

    /// Imaginary budget t · n_b / n.
    pub fn imaginary_budget(&self) -> f64 {
        self.t as f64 * self.budget.n_b() / self.budget.n() as f64
    }

    /// Remaining budget n_{b,t} - n_{lab,t-1}.
    pub fn remaining(&self) -> f64 {
        self.imaginary_budget() - self.n_lab as f64
    }

    pub fn advance(&mut self, labeled: bool) {
        self.n_lab += labeled as usize;
        self.t += 1;
    }
}

/// min(η_t u_t, n_Δ,t) clipped to [0, 1].
pub fn sequential_pi(eta_t: f64, u_t: f64, state: &SequentialBudgetState) -> f64 {
    (eta_t * u_t).min(state.remaining()).clamp(0.0, 1.0)
}

/// Independent Bernoulli(πᵢ) draws.
pub fn draw_decisions(pi: &[f64], rng: RngSpec) -> Vec<bool> {
    let mut r = rng.rng();
    pi.iter().map(|&p| r.random::<f64>() < p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn budget(n_b: f64, n: usize) -> Budget {
        Budget::new(n_b, n).unwrap()
    }

    #[test]
    fn calibrate_examples() {
        let (eta, pi) = calibrate_eta(&[1.0, 2.0, 3.0, 4.0], budget(2.0, 4)).unwrap();
        assert!((eta - 0.2).abs() < 1e-15);
        for (p, want) in pi.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((p - want).abs() < 1e-12);
        }
        let (_, pi) = calibrate_eta(&[1.0; 10], budget(5.0, 10)).unwrap();
        assert!(pi.iter().all(|&p| p == 0.5));
        let (_, pi) = calibrate_eta(&[3.0, 0.5, 0.5], budget(1.5, 3)).unwrap();
        assert_eq!(pi[0], 1.0);
        assert!(matches!(
            calibrate_eta(&[0.0; 3], budget(1.0, 3)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn mix_examples() {
        let b = budget(1.0, 10);
        assert!((tau_mix(&[0.2], 0.5, budget(0.1, 1)).unwrap()[0] - 0.15).abs() < 1e-15);
        assert!(tau_mix(&[0.0, 0.7, 1.0], 1.0, b).unwrap().iter().all(|&p| p == 0.1));
        assert_eq!(tau_mix(&[0.0, 0.7, 1.0], 0.0, b).unwrap(), vec![0.0, 0.7, 1.0]);
        assert!(tau_mix(&[0.5], 1.5, b).is_err());
    }

    fn hist(resid: &[f64]) -> Vec<PredictedPoint> {
        resid
            .iter()
            .map(|&r| PredictedPoint {
                x: vec![],
                f: 0.0,
                y: r,
            })
            .collect()
    }

    #[test]
    fn tune_tau_examples() {
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = tune_tau(&hist(&[0.0, 0.0]), &[1.0, 2.0], budget(1.0, 10), &grid).unwrap();
        assert_eq!(t, 1.0);
        let t = tune_tau(&hist(&[1.0]), &[0.0], budget(1.0, 10), &grid).unwrap();
        assert_eq!(t, 1.0);
        let err = tune_tau(&hist(&[1.0]), &[0.0], budget(1.0, 10), &[0.0]);
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn sequential_rule_examples() {
        let b = budget(20.0, 100);
        let mut s = SequentialBudgetState::new(b);
        // n_Δ at t=1 is 0.2
        assert!((sequential_pi(1.0, 0.3, &s) - 0.2).abs() < 1e-15);
        for _ in 0..14 {
            s.advance(false);
        }
        // t = 15: n_Δ = 3
        assert!((s.remaining() - 3.0).abs() < 1e-12);
        assert_eq!(sequential_pi(1.0, 1.5, &s), 1.0);
        let mut s = SequentialBudgetState::new(b);
        s.advance(true);
        s.advance(true);
        assert!(s.remaining() <= 0.0);
        assert_eq!(sequential_pi(5.0, 1.0, &s), 0.0);
    }

    #[test]
    fn draw_edges() {
        let xi = draw_decisions(&[1.0, 0.0, 1.0, 0.0], RngSpec::new(3, 0));
        assert_eq!(xi, vec![true, false, true, false]);
    }

    #[test]
    fn glm_direction_examples() {
        let s2 = 2f64.sqrt();
        let pool = Pool::new(vec![
            Example::new(vec![s2, 0.0]),
            Example::new(vec![0.0, s2]),
        ])
        .unwrap();
        let spec = ProblemSpec::linear_regression(2, 0).unwrap();
        let dir = glm_direction(&pool, &spec, &DVector::zeros(2)).unwrap();
        let h = dir.column().unwrap();
        assert!((h[0] - 1.0).abs() < 1e-12 && h[1].abs() < 1e-12);

        let pool = Pool::new(vec![
            Example::new(vec![2.0 * s2, 0.0]),
            Example::new(vec![0.0, s2]),
        ])
        .unwrap();
        let dir = glm_direction(&pool, &spec, &DVector::zeros(2)).unwrap();
        let h = dir.column().unwrap();
        assert!((h[0] - 0.25).abs() < 1e-12 && h[1].abs() < 1e-12);

        let single = Pool::new(vec![Example::new(vec![1.0, 1.0])]).unwrap();
        assert!(matches!(
            glm_direction(&single, &spec, &DVector::zeros(2)),
            Err(Error::Singular(_))
        ));
        assert_eq!(
            glm_direction(&single, &ProblemSpec::mean(), &DVector::zeros(1)).unwrap(),
            GlmDirection::Identity
        );
    }

    #[test]
    fn glm_uncertainty_examples() {
        let dir = GlmDirection::Column(DVector::from_column_slice(&[1.0, 0.0]));
        assert_eq!(glm_uncertainty(0.5, &[2.0, 0.0], &dir), 1.0);
        assert_eq!(glm_uncertainty(0.5, &[0.0, 3.0], &dir), 0.0);
        assert_eq!(glm_uncertainty(0.7, &[5.0, 1.0], &GlmDirection::Identity), 0.7);
    }

    #[test]
    fn plan_fallback_and_invariants() {
        let b = budget(3.0, 10);
        let plan = SamplingPlan::from_uncertainty(&[0.0; 10], b, 0.0, RngSpec::new(1, 0)).unwrap();
        assert!(plan.uniform_fallback);
        assert!(plan.pi.iter().all(|&p| p == 0.3));
        let u: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let plan = SamplingPlan::from_uncertainty(&u, b, 0.4, RngSpec::new(1, 0)).unwrap();
        assert!(plan.expected_labels() <= 3.0 + 1e-9);
        assert!(plan.pi.iter().all(|&p| p >= 0.4 * 0.3 - 1e-15));
        assert_eq!(plan.n_lab, plan.xi.iter().filter(|&&x| x).count());
        assert!(SamplingPlan::from_parts(vec![0.0], vec![true], 0.0, 0.0).is_err());
    }
}
