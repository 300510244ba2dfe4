use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::losses::{add_grad, add_hessian, density_hessian, solve_weighted, LossKind, ProblemSpec, WeightedSample};

/// One item of an inverse-probability-weighted loss: the prediction term with
/// weight 1 - ipw and the label term with weight ipw = ξ/π.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AipwTerm<'a> {
    pub x: &'a [f64],
    pub f: f64,
    pub y: Option<f64>,
    pub ipw: f64,
}

impl AipwTerm<'_> {
    fn label(&self) -> f64 {
        self.y.unwrap_or(self.f)
    }

    /// f + (y - f) ξ/π.
    pub fn mean_increment(&self) -> f64 {
        match self.y {
            Some(y) if self.ipw != 0.0 => self.f + (y - self.f) * self.ipw,
            _ => self.f,
        }
    }
}

pub(crate) fn estimate(spec: &ProblemSpec, terms: &[AipwTerm<'_>]) -> Result<DVector<f64>> {
    if terms.is_empty() {
        return Err(Error::InsufficientData("empty pool".into()));
    }
    if spec.kind() == LossKind::Mean {
        let s: f64 = terms.iter().map(AipwTerm::mean_increment).sum();
        return Ok(DVector::from_element(1, s / terms.len() as f64));
    }
    let mut samples = Vec::with_capacity(2 * terms.len());
    for t in terms {
        samples.push(WeightedSample::new(t.x, t.f, 1.0 - t.ipw));
        if t.ipw != 0.0 {
            samples.push(WeightedSample::new(t.x, t.label(), t.ipw));
        }
    }
    solve_weighted(spec, &samples)
}

/// ∇ℓ^f + (∇ℓ - ∇ℓ^f) ξ/π at θ.
pub(crate) fn gradient_increment(spec: &ProblemSpec, theta: &DVector<f64>, t: &AipwTerm<'_>) -> DVector<f64> {
    let mut g = DVector::zeros(spec.dim());
    add_grad(spec.kind(), theta, t.x, t.f, 1.0 - t.ipw, &mut g);
    if t.ipw != 0.0 {
        add_grad(spec.kind(), theta, t.x, t.label(), t.ipw, &mut g);
    }
    g
}

pub(crate) fn hessian(spec: &ProblemSpec, theta: &DVector<f64>, terms: &[AipwTerm<'_>]) -> Result<DMatrix<f64>> {
    let n = terms.len() as f64;
    match spec.kind() {
        LossKind::Quantile(_) => {
            let mut pts = Vec::with_capacity(2 * terms.len());
            for t in terms {
                pts.push((t.f, 1.0 - t.ipw));
                if t.ipw != 0.0 {
                    pts.push((t.label(), t.ipw));
                }
            }
            density_hessian(&pts, theta[0])
        }
        kind => {
            // weights 1 - ξ/π and ξ/π sum to one per item and the GLM Hessian
            // does not depend on the label
            let mut h = DMatrix::zeros(spec.dim(), spec.dim());
            for t in terms {
                add_hessian(kind, theta, t.x, 1.0 / n, &mut h);
            }
            Ok(h)
        }
    }
}

/// Divisor-n variance.
pub(crate) fn variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 values, have {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Divisor-n covariance of vectors.
pub(crate) fn covariance(values: &[DVector<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 values, have {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mut mean = DVector::zeros(dim);
    for v in values {
        mean += v;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in values {
        let c = v - &mean;
        cov += &c * c.transpose();
    }
    Ok(cov / n)
}

/// H⁻¹ V H⁻¹, symmetrized.
pub(crate) fn sandwich(h: DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Singular("Hessian estimate is not positive definite".into()))?;
    let hinv = chol.inverse();
    let s = &hinv * v * &hinv;
    Ok((&s + s.transpose()) * 0.5)
}

pub(crate) fn covariance_at(
    spec: &ProblemSpec,
    theta: &DVector<f64>,
    terms: &[AipwTerm<'_>],
) -> Result<DMatrix<f64>> {
    if spec.kind() == LossKind::Mean {
        let inc: Vec<f64> = terms.iter().map(AipwTerm::mean_increment).collect();
        return Ok(DMatrix::from_element(1, 1, variance(&inc)?));
    }
    let grads: Vec<DVector<f64>> = terms.iter().map(|t| gradient_increment(spec, theta, t)).collect();
    let v = covariance(&grads, spec.dim())?;
    sandwich(hessian(spec, theta, terms)?, &v)
}
