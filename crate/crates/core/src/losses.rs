//! Convex losses for the supported estimation targets and a weighted
//! M-estimation solver shared by every estimator.
//!
//! | kind               | loss                                   | parameter |
//! |--------------------|----------------------------------------|-----------|
//! | `Mean`             | (y - θ)² / 2                           | scalar    |
//! | `LinearRegression` | (y - xᵀθ)² / 2                         | vector    |
//! | `Logistic`         | -y xᵀθ + log(1 + exp(xᵀθ))             | vector    |
//! | `Quantile(q)`      | pinball loss at level q                | scalar    |
//!
//! Weights passed to [`solve_weighted`] may be negative: the active estimator
//! combines a prediction term with weight `1 - ξ/π` and a label term with
//! weight `ξ/π`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mean,
    LinearRegression,
    Logistic,
    Quantile(f64),
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mean => "mean",
            LossKind::LinearRegression => "linear",
            LossKind::Logistic => "logistic",
            LossKind::Quantile(_) => "quantile",
        }
    }
}

/// Estimation target: a loss, the parameter dimension, and the coordinate
/// whose confidence interval is reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    kind: LossKind,
    dim: usize,
    target: usize,
}

impl ProblemSpec {
    pub fn new(kind: LossKind, dim: usize, target: usize) -> Result<Self> {
        match kind {
            LossKind::Mean | LossKind::Quantile(_) if dim != 1 => {
                return Err(Error::Argument(format!(
                    "{} problems have dimension 1, got {dim}",
                    kind.name()
                )))
            }
            LossKind::Quantile(q) if !(q > 0.0 && q < 1.0) => {
                return Err(Error::Argument(format!("quantile level {q} outside (0, 1)")))
            }
            _ => {}
        }
        if dim == 0 || target >= dim {
            return Err(Error::Argument(format!(
                "target coordinate {target} out of range for dimension {dim}"
            )));
        }
        Ok(ProblemSpec { kind, dim, target })
    }

    pub fn mean() -> Self {
        ProblemSpec {
            kind: LossKind::Mean,
            dim: 1,
            target: 0,
        }
    }

    pub fn quantile(q: f64) -> Result<Self> {
        Self::new(LossKind::Quantile(q), 1, 0)
    }

    pub fn linear_regression(dim: usize, target: usize) -> Result<Self> {
        Self::new(LossKind::LinearRegression, dim, target)
    }

    pub fn logistic(dim: usize, target: usize) -> Result<Self> {
        Self::new(LossKind::Logistic, dim, target)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Generalized linear models: losses of the form -y xᵀθ + ψ(xᵀθ).
    pub fn is_glm(&self) -> bool {
        matches!(self.kind, LossKind::LinearRegression | LossKind::Logistic)
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Argument(format!(
                "parameter has dimension {}, expected {}",
                theta.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if self.is_glm() && x.len() != self.dim {
            return Err(Error::Argument(format!(
                "covariates have dimension {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// One term of a weighted empirical loss.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSample<'a> {
    pub x: &'a [f64],
    pub y: f64,
    pub w: f64,
}

impl<'a> WeightedSample<'a> {
    pub fn new(x: &'a [f64], y: f64, w: f64) -> Self {
        WeightedSample { x, y, w }
    }
}

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn dot(x: &[f64], theta: &DVector<f64>) -> f64 {
    x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum()
}

fn value(kind: LossKind, theta: &DVector<f64>, x: &[f64], y: f64) -> f64 {
    match kind {
        LossKind::Mean => 0.5 * (y - theta[0]).powi(2),
        LossKind::LinearRegression => 0.5 * (y - dot(x, theta)).powi(2),
        LossKind::Logistic => {
            let s = dot(x, theta);
            -y * s + softplus(s)
        }
        LossKind::Quantile(q) => {
            let r = y - theta[0];
            if r > 0.0 {
                q * r
            } else {
                (q - 1.0) * r
            }
        }
    }
}

/// Adds `scale * ∇ℓ_θ(x, y)` into `out`.
pub(crate) fn add_grad(
    kind: LossKind,
    theta: &DVector<f64>,
    x: &[f64],
    y: f64,
    scale: f64,
    out: &mut DVector<f64>,
) {
    match kind {
        LossKind::Mean => out[0] += scale * (theta[0] - y),
        LossKind::LinearRegression | LossKind::Logistic => {
            let s = dot(x, theta);
            let resid = if kind == LossKind::Logistic {
                sigmoid(s) - y
            } else {
                s - y
            };
            for (o, xi) in out.iter_mut().zip(x) {
                *o += scale * resid * xi;
            }
        }
        LossKind::Quantile(q) => {
            let t = theta[0];
            // ties contribute zero
            if y < t {
                out[0] += scale * (1.0 - q);
            } else if y > t {
                out[0] -= scale * q;
            }
        }
    }
}

/// ψ''(xᵀθ) for GLMs; 1 for the mean.
pub(crate) fn curvature(kind: LossKind, theta: &DVector<f64>, x: &[f64]) -> f64 {
    match kind {
        LossKind::Logistic => {
            let p = sigmoid(dot(x, theta));
            p * (1.0 - p)
        }
        _ => 1.0,
    }
}

/// Adds `scale * ψ''(xᵀθ) x xᵀ` into `out` (GLMs) or `scale` (mean).
pub(crate) fn add_hessian(
    kind: LossKind,
    theta: &DVector<f64>,
    x: &[f64],
    scale: f64,
    out: &mut DMatrix<f64>,
) {
    match kind {
        LossKind::Mean => out[(0, 0)] += scale,
        _ => {
            let c = scale * curvature(kind, theta, x);
            let d = x.len();
            for a in 0..d {
                let ca = c * x[a];
                for b in a..d {
                    out[(a, b)] += ca * x[b];
                }
            }
            for a in 0..d {
                for b in 0..a {
                    out[(a, b)] = out[(b, a)];
                }
            }
        }
    }
}

pub fn loss(spec: &ProblemSpec, theta: &DVector<f64>, x: &[f64], y: f64) -> Result<f64> {
    spec.check_theta(theta)?;
    spec.check_x(x)?;
    Ok(value(spec.kind, theta, x, y))
}

/// Gradient in θ of ℓ_θ(x, y). For the pinball loss this is the subgradient
/// `1 - q` below the label, `-q` above it, and zero at a tie.
pub fn loss_grad(spec: &ProblemSpec, theta: &DVector<f64>, x: &[f64], y: f64) -> Result<DVector<f64>> {
    spec.check_theta(theta)?;
    spec.check_x(x)?;
    let mut g = DVector::zeros(spec.dim);
    add_grad(spec.kind, theta, x, y, 1.0, &mut g);
    Ok(g)
}

/// Per-example Hessian. It does not depend on the label for the GLMs.
pub fn loss_hessian(spec: &ProblemSpec, theta: &DVector<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
    if let LossKind::Quantile(_) = spec.kind {
        return Err(Error::UnsupportedKind(
            "the pinball loss has no pointwise Hessian; use density_hessian".into(),
        ));
    }
    spec.check_theta(theta)?;
    spec.check_x(x)?;
    let mut h = DMatrix::zeros(spec.dim, spec.dim);
    add_hessian(spec.kind, theta, x, 1.0, &mut h);
    Ok(h)
}

/// Kernel density estimate of the label density at `theta_hat`, used as the
/// 1×1 Hessian of the pinball loss.
///
/// `labels` holds (value, weight) pairs. The bandwidth is Silverman's
/// `1.06 σ̂ m^(-1/5)` with `m` the Kish effective sample size, so rescaling
/// all weights leaves the estimate unchanged.
pub fn density_hessian(labels: &[(f64, f64)], theta_hat: f64) -> Result<DMatrix<f64>> {
    let total: f64 = labels.iter().map(|&(_, w)| w).sum();
    let sq: f64 = labels.iter().map(|&(_, w)| w * w).sum();
    if !(total > 0.0) || sq == 0.0 {
        return Err(Error::Degenerate("zero effective weight".into()));
    }
    let ess = total * total / sq;
    if ess < 10.0 {
        return Err(Error::InsufficientData(format!(
            "density estimate needs at least 10 effective samples, have {ess:.2}"
        )));
    }
    let mean = labels.iter().map(|&(y, w)| w * y).sum::<f64>() / total;
    let var = labels
        .iter()
        .map(|&(y, w)| w * (y - mean).powi(2))
        .sum::<f64>()
        / total;
    if !(var > 0.0) {
        return Err(Error::Degenerate("labels have no spread".into()));
    }
    let h = 1.06 * var.sqrt() * ess.powf(-0.2);
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * total);
    let density: f64 = labels
        .iter()
        .map(|&(y, w)| {
            let z = (theta_hat - y) / h;
            w * (-0.5 * z * z).exp()
        })
        .sum::<f64>()
        * norm;
    if !(density > 0.0) {
        return Err(Error::Degenerate(format!(
            "nonpositive density estimate {density}"
        )));
    }
    Ok(DMatrix::from_element(1, 1, density))
}

fn total_weight(samples: &[WeightedSample<'_>]) -> Result<f64> {
    let w: f64 = samples.iter().map(|s| s.w).sum();
    if !(w > 0.0) {
        return Err(Error::Degenerate(format!(
            "total sample weight {w} must be positive"
        )));
    }
    Ok(w)
}

/// (1/W) Σ wᵢ ℓ_θ(xᵢ, yᵢ) with W the total weight.
pub fn weighted_objective(
    spec: &ProblemSpec,
    theta: &DVector<f64>,
    samples: &[WeightedSample<'_>],
) -> Result<f64> {
    spec.check_theta(theta)?;
    let total = total_weight(samples)?;
    let mut acc = 0.0;
    for s in samples {
        spec.check_x(s.x)?;
        acc += s.w * value(spec.kind, theta, s.x, s.y);
    }
    Ok(acc / total)
}

/// Gradient of [`weighted_objective`].
pub fn weighted_gradient(
    spec: &ProblemSpec,
    theta: &DVector<f64>,
    samples: &[WeightedSample<'_>],
) -> Result<DVector<f64>> {
    spec.check_theta(theta)?;
    let total = total_weight(samples)?;
    let mut g = DVector::zeros(spec.dim);
    for s in samples {
        spec.check_x(s.x)?;
        add_grad(spec.kind, theta, s.x, s.y, s.w / total, &mut g);
    }
    Ok(g)
}

/// Minimizes the weighted empirical loss.
///
/// Means are solved in closed form, quantiles by an exact sweep over the
/// breakpoints of the piecewise-linear objective, linear regression through
/// the normal equations, and logistic regression by damped Newton.
pub fn solve_weighted(spec: &ProblemSpec, samples: &[WeightedSample<'_>]) -> Result<DVector<f64>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to fit".into()));
    }
    for s in samples {
        spec.check_x(s.x)?;
        if !(s.w.is_finite() && s.y.is_finite()) {
            return Err(Error::Argument("non-finite sample".into()));
        }
    }
    let total = total_weight(samples)?;
    match spec.kind {
        LossKind::Mean => {
            let m = samples.iter().map(|s| s.w * s.y).sum::<f64>() / total;
            Ok(DVector::from_element(1, m))
        }
        LossKind::Quantile(q) => Ok(DVector::from_element(1, weighted_quantile(samples, q, total))),
        LossKind::LinearRegression => solve_linear(spec, samples),
        LossKind::Logistic => solve_newton(spec, samples, total),
    }
}

/// Global minimizer of Σ wᵢ ρ_q(yᵢ - θ). With positive total weight the
/// objective is coercive and piecewise linear, so the minimum sits at a
/// breakpoint. Ties go to the smallest minimizer.
fn weighted_quantile(samples: &[WeightedSample<'_>], q: f64, total: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.y, s.w)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_s: f64 = pts.iter().map(|&(y, w)| w * y).sum();
    let scale: f64 = pts.iter().map(|&(y, w)| (w * y).abs()).sum::<f64>() + total.abs();
    let (mut w_le, mut s_le) = (0.0, 0.0);
    let mut best = (f64::INFINITY, pts[0].0);
    let mut i = 0;
    while i < pts.len() {
        let t = pts[i].0;
        while i < pts.len() && pts[i].0 == t {
            w_le += pts[i].1;
            s_le += pts[i].1 * pts[i].0;
            i += 1;
        }
        let obj = q * ((total_s - s_le) - t * (total - w_le)) + (1.0 - q) * (t * w_le - s_le);
        if obj < best.0 - 1e-13 * scale {
            best = (obj, t);
        }
    }
    best.1
}

fn gram(spec: &ProblemSpec, samples: &[WeightedSample<'_>]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(spec.dim, spec.dim);
    let zero = DVector::zeros(spec.dim);
    for s in samples {
        add_hessian(LossKind::LinearRegression, &zero, s.x, s.w, &mut g);
    }
    g
}

fn solve_linear(spec: &ProblemSpec, samples: &[WeightedSample<'_>]) -> Result<DVector<f64>> {
    let a = gram(spec, samples);
    let mut b = DVector::zeros(spec.dim);
    for s in samples {
        for (bj, xj) in b.iter_mut().zip(s.x) {
            *bj += s.w * s.y * xj;
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("design matrix is rank deficient".into()))?;
    Ok(chol.solve(&b))
}

fn solve_newton(
    spec: &ProblemSpec,
    samples: &[WeightedSample<'_>],
    total: f64,
) -> Result<DVector<f64>> {
    if gram(spec, samples).cholesky().is_none() {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    let kind = spec.kind;
    let design_scale = gram(spec, samples).abs().max() / total;
    let objective = |theta: &DVector<f64>| {
        samples
            .iter()
            .map(|s| s.w * value(kind, theta, s.x, s.y))
            .sum::<f64>()
            / total
    };
    let mut theta = DVector::zeros(spec.dim);
    let mut obj = objective(&theta);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let mut g = DVector::zeros(spec.dim);
        let mut h = DMatrix::zeros(spec.dim, spec.dim);
        for s in samples {
            add_grad(kind, &theta, s.x, s.y, s.w / total, &mut g);
            add_hessian(kind, &theta, s.x, s.w / total, &mut h);
        }
        grad_norm = g.norm();
        let chol = h.clone().cholesky();
        let step = match &chol {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        let flat = chol.is_some() && g.dot(&step) <= 1e-14 * obj.abs().max(1e-300);
        if grad_norm <= NEWTON_TOL || flat {
            // a vanishing curvature at a stationary point means the data are
            // separated and the minimizer lies at infinity
            let min_eig = h.clone().symmetric_eigenvalues().min();
            if min_eig > 1e-10 * design_scale {
                return Ok(theta);
            }
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta - &step * t;
            let cand_obj = objective(&cand);
            // near the optimum a full Newton step may only change the
            // objective at the rounding level
            let slack = if t == 1.0 { 4.0 * f64::EPSILON * obj.abs() } else { 0.0 };
            if cand_obj <= obj + slack {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::Solver {
        iterations: NEWTON_MAX_ITER,
        grad_norm,
        last: theta.iter().copied().collect(),
    })
}
