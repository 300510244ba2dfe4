//! Built-in learners standing in for a black-box model, the classification
//! uncertainty score, and learned error models.
//!
//! External models enter through prediction columns attached to a pool; the
//! learners here exist so the sequential pipeline can refit a model as labels
//! arrive. "Fine-tuning" is a full refit on everything seen so far.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::losses::sigmoid;

/// Per-sample ridge penalty used when none is given.
pub const DEFAULT_RIDGE_PER_SAMPLE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerKind {
    /// Least squares with an unpenalized intercept. `None` means
    /// `1e-3 * n_train`.
    Ridge { lambda: Option<f64> },
    /// L2-penalized logistic regression on labels in [0, 1].
    Logistic { lambda: Option<f64> },
    /// Average label of the k nearest stored points.
    KNearest { k: usize },
}

impl LearnerKind {
    pub fn ridge() -> Self {
        LearnerKind::Ridge { lambda: None }
    }

    pub fn logistic() -> Self {
        LearnerKind::Logistic { lambda: None }
    }
}

/// A labeled training point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Observation { x, y }
    }
}

/// Output of [`Predictor::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub value: f64,
    /// Class probabilities `[P(y=0), P(y=1)]`, logistic learner only.
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Linear { w: DVector<f64>, b: f64 },
    Logistic { w: DVector<f64>, b: f64 },
    Neighbors { points: Vec<Observation>, k: usize },
}

/// A learner together with its training buffer and a refit counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    kind: LearnerKind,
    fitted: Option<Fitted>,
    version: u64,
    buffer: Vec<Observation>,
}

impl Predictor {
    /// An unfitted learner (version 0).
    pub fn new(kind: LearnerKind) -> Self {
        Predictor {
            kind,
            fitted: None,
            version: 0,
            buffer: Vec::new(),
        }
    }

    pub fn fit(kind: LearnerKind, data: &[Observation]) -> Result<Self> {
        Predictor::new(kind).finetune(data)
    }

    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// Everything the model has been trained on, in arrival order.
    pub fn training_data(&self) -> &[Observation] {
        &self.buffer
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let fitted = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::State("predict called on an unfitted model".into()))?;
        match fitted {
            Fitted::Linear { w, b } => {
                check_dim(w.len(), x)?;
                Ok(Prediction {
                    value: b + dot(w, x),
                    probs: None,
                })
            }
            Fitted::Logistic { w, b } => {
                check_dim(w.len(), x)?;
                let p = sigmoid(b + dot(w, x));
                Ok(Prediction {
                    value: p,
                    probs: Some(vec![1.0 - p, p]),
                })
            }
            Fitted::Neighbors { points, k } => {
                check_dim(points[0].x.len(), x)?;
                Ok(Prediction {
                    value: knn_average(points, *k, x),
                    probs: None,
                })
            }
        }
    }

    /// Refits on the accumulated buffer plus `batch` and bumps the version.
    pub fn finetune(&self, batch: &[Observation]) -> Result<Predictor> {
        if batch.is_empty() {
            return Err(Error::Argument("fine-tuning batch is empty".into()));
        }
        let mut buffer = self.buffer.clone();
        buffer.extend_from_slice(batch);
        let dim = buffer[0].x.len();
        if buffer.iter().any(|o| o.x.len() != dim) {
            return Err(Error::Schema("training points differ in dimension".into()));
        }
        let fitted = match self.kind {
            LearnerKind::Ridge { lambda } => fit_ridge(&buffer, lambda)?,
            LearnerKind::Logistic { lambda } => fit_logistic(&buffer, lambda)?,
            LearnerKind::KNearest { k } => {
                if k == 0 {
                    return Err(Error::Argument("k must be at least 1".into()));
                }
                Fitted::Neighbors {
                    points: buffer.clone(),
                    k,
                }
            }
        };
        Ok(Predictor {
            kind: self.kind,
            fitted: Some(fitted),
            version: self.version + 1,
            buffer,
        })
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Argument(format!(
            "model expects {expected} covariates, got {}",
            x.len()
        )));
    }
    Ok(())
}

fn dot(w: &DVector<f64>, x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn knn_average(points: &[Observation], k: usize, x: &[f64]) -> f64 {
    let mut dist: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d: f64 = p.x.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            (d, i)
        })
        .collect();
    let k = k.min(dist.len());
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist[..k].iter().map(|&(_, i)| points[i].y).sum::<f64>() / k as f64
}

fn design(data: &[Observation]) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.len();
    let d = data[0].x.len();
    let x = DMatrix::from_fn(n, d, |i, j| data[i].x[j]);
    let y = DVector::from_fn(n, |i, _| data[i].y);
    (x, y)
}

fn fit_ridge(data: &[Observation], lambda: Option<f64>) -> Result<Fitted> {
    let n = data.len();
    let lambda = lambda.unwrap_or(DEFAULT_RIDGE_PER_SAMPLE * n as f64);
    if lambda < 0.0 {
        return Err(Error::Argument("ridge penalty must be nonnegative".into()));
    }
    let (x, y) = design(data);
    let d = x.ncols();
    let x_mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let y_mean = y.mean();
    let mut xc = x;
    for j in 0..d {
        let m = x_mean[j];
        xc.column_mut(j).add_scalar_mut(-m);
    }
    let yc = y.add_scalar(-y_mean);
    let mut a = xc.transpose() * &xc;
    for j in 0..d {
        a[(j, j)] += lambda;
    }
    let w = if d == 0 {
        DVector::zeros(0)
    } else {
        let rhs = xc.transpose() * yc;
        a.cholesky()
            .ok_or_else(|| Error::Singular("ridge design is rank deficient".into()))?
            .solve(&rhs)
    };
    let b = y_mean - w.dot(&x_mean);
    Ok(Fitted::Linear { w, b })
}

fn fit_logistic(data: &[Observation], lambda: Option<f64>) -> Result<Fitted> {
    if data.iter().any(|o| !(0.0..=1.0).contains(&o.y)) {
        return Err(Error::Argument("logistic labels must lie in [0, 1]".into()));
    }
    let n = data.len() as f64;
    let lambda = lambda.unwrap_or(DEFAULT_RIDGE_PER_SAMPLE * n);
    // a light penalty on the intercept keeps single-class buffers finite
    let lambda_b = lambda * 1e-2 + 1e-8;
    let d = data[0].x.len();
    let mut theta = DVector::zeros(d + 1);
    let row = |o: &Observation, j: usize| if j < d { o.x[j] } else { 1.0 };
    let penalty = |j: usize| if j < d { lambda } else { lambda_b };
    let objective = |t: &DVector<f64>| {
        let mut acc = 0.0;
        for o in data {
            let s: f64 = (0..=d).map(|j| row(o, j) * t[j]).sum();
            acc += -o.y * s + if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
        }
        acc + (0..=d).map(|j| 0.5 * penalty(j) * t[j] * t[j]).sum::<f64>()
    };
    let mut obj = objective(&theta);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..100 {
        let mut g = DVector::from_fn(d + 1, |j, _| penalty(j) * theta[j]);
        let mut h = DMatrix::from_fn(d + 1, d + 1, |a, b| if a == b { penalty(a) } else { 0.0 });
        for o in data {
            let s: f64 = (0..=d).map(|j| row(o, j) * theta[j]).sum();
            let p = sigmoid(s);
            let c = p * (1.0 - p);
            for a in 0..=d {
                g[a] += (p - o.y) * row(o, a);
                for b in 0..=d {
                    h[(a, b)] += c * row(o, a) * row(o, b);
                }
            }
        }
        grad_norm = g.norm();
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Singular("logistic Hessian is not positive definite".into()))?
            .solve(&g);
        // stop on a small gradient or once the Newton decrement is below the
        // resolution of the objective
        let decrement = g.dot(&step);
        if grad_norm <= 1e-10 * n.max(1.0) || decrement <= 1e-14 * obj.abs().max(1.0) {
            let (w, b) = (theta.rows(0, d).into_owned(), theta[d]);
            return Ok(Fitted::Logistic { w, b });
        }
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let c = objective(&cand);
            let slack = if t == 1.0 { 4.0 * f64::EPSILON * obj.abs() } else { 0.0 };
            if c <= obj + slack || t < 1e-12 {
                theta = cand;
                obj = c;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Solver {
        iterations: 100,
        grad_norm,
        last: theta.iter().copied().collect(),
    })
}

/// Normalized distance of a probability vector from certainty:
/// `K/(K-1) * (1 - max_k p_k)`. Zero for a one-hot vector, one for uniform.
pub fn classification_uncertainty(probs: &[f64]) -> Result<f64> {
    let k = probs.len();
    if k < 2 {
        return Err(Error::Argument(format!("need at least two classes, got {k}")));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Argument("probabilities must lie in [0, 1]".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!("probabilities sum to {sum}")));
    }
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kf = k as f64;
    Ok((kf / (kf - 1.0) * (1.0 - max)).clamp(0.0, 1.0))
}

/// A training point together with the main model's prediction on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPoint {
    pub x: Vec<f64>,
    pub f: f64,
    pub y: f64,
}

/// Predicts the magnitude |f(x) - y| of the main model's error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    inner: Predictor,
}

impl ErrorModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.inner.predict(x)?.value.max(0.0))
    }

    pub fn version(&self) -> u64 {
        self.inner.version()
    }

    pub fn inner(&self) -> &Predictor {
        &self.inner
    }

    /// Retrains from scratch on a fresh residual set (residuals change when
    /// the main model changes) and bumps the version.
    pub fn refit(&self, points: &[PredictedPoint]) -> Result<ErrorModel> {
        let mut next = fit_error_model(points, self.inner.kind())?;
        next.inner.version = self.inner.version + 1;
        Ok(next)
    }
}

fn abs_residuals(points: &[PredictedPoint]) -> Vec<Observation> {
    points
        .iter()
        .map(|p| Observation::new(p.x.clone(), (p.f - p.y).abs()))
        .collect()
}

pub fn fit_error_model(points: &[PredictedPoint], kind: LearnerKind) -> Result<ErrorModel> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(
            "an error model needs at least two points".into(),
        ));
    }
    Ok(ErrorModel {
        inner: Predictor::fit(kind, &abs_residuals(points))?,
    })
}
