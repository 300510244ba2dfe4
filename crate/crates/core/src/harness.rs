//! Synthetic data, Monte-Carlo trials and the evaluation metrics: coverage,
//! mean width and budget savings.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::batch::{active_batch_report, active_betting_report, classical_report, ppi_report};
use crate::betting::DEFAULT_GRID_SIZE;
use crate::data::{Budget, Example, Pool, RngSpec};
use crate::error::{Error, Result};
use crate::losses::{sigmoid, solve_weighted, LossKind, ProblemSpec, WeightedSample};
use crate::normal::normal_quantile;
use crate::predictors::{
    classification_uncertainty, fit_error_model, ErrorModel, LearnerKind, Observation, PredictedPoint, Predictor,
};
use crate::report::Method;
use crate::sampling::{glm_direction, glm_uncertainty, tune_tau, GlmDirection, SamplingPlan, DEFAULT_TAU};
use crate::sequential::{run_sequential, sequential_report, pool_oracle, SeqConfig, SeqModel, UncertaintySource};

/// Families of synthetic data with a known target.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    /// X ~ U(-1, 1), Y ~ Bern(σ(a + bX)). Target: E[Y].
    BinaryResponse { a: f64, b: f64 },
    /// X = (1, Z), Z ~ N(0, I), Y = θᵀX + (base + slope |Z₁|) ε.
    HeteroLinear { theta: Vec<f64>, noise_base: f64, noise_slope: f64 },
    /// Y ~ N(μ, 1), X = Y + noise · N(0, 1). Target: q-quantile of Y.
    QuantileTarget { mu: f64, q: f64, noise: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n: usize) -> Self {
        SyntheticSpec { kind, n }
    }

    /// The estimation problem this family targets.
    pub fn problem(&self) -> Result<ProblemSpec> {
        match &self.kind {
            SyntheticKind::BinaryResponse { .. } => Ok(ProblemSpec::mean()),
            SyntheticKind::HeteroLinear { theta, .. } => ProblemSpec::linear_regression(theta.len(), 0),
            SyntheticKind::QuantileTarget { q, .. } => ProblemSpec::quantile(*q),
        }
    }

    /// Population θ*.
    pub fn theta_star(&self) -> DVector<f64> {
        match &self.kind {
            SyntheticKind::BinaryResponse { a, b } => {
                let v = if *b == 0.0 {
                    sigmoid(*a)
                } else {
                    (softplus(a + b) - softplus(a - b)) / (2.0 * b)
                };
                DVector::from_element(1, v)
            }
            SyntheticKind::HeteroLinear { theta, .. } => DVector::from_column_slice(theta),
            SyntheticKind::QuantileTarget { mu, q, .. } => DVector::from_element(1, mu + normal_quantile(*q)),
        }
    }

    /// Population θ* for `spec`: the family's own target, or E[Y] = θ₀ for
    /// the mean of a heteroscedastic linear family.
    pub fn theta_star_for(&self, spec: &ProblemSpec) -> Result<DVector<f64>> {
        match (&self.kind, spec.kind()) {
            (SyntheticKind::HeteroLinear { theta, .. }, LossKind::Mean) => Ok(DVector::from_element(1, theta[0])),
            _ if self.problem()?.kind() == spec.kind() => Ok(self.theta_star()),
            _ => Err(Error::Config(format!(
                "no population target for {} on this synthetic family",
                spec.kind().name()
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match &self.kind {
            SyntheticKind::BinaryResponse { a, b } => a.is_finite() && b.is_finite(),
            SyntheticKind::HeteroLinear { theta, noise_base, noise_slope } => {
                theta.len() >= 2 && *noise_base >= 0.0 && *noise_slope >= 0.0
            }
            SyntheticKind::QuantileTarget { q, noise, .. } => *q > 0.0 && *q < 1.0 && *noise > 0.0,
        };
        if !ok || self.n < 2 {
            return Err(Error::Config(format!("invalid synthetic spec {self:?}")));
        }
        Ok(())
    }
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// A pool with labels stored and the true conditional model attached as
/// predictions, together with the population θ*.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: RngSpec) -> Result<(Pool, DVector<f64>)> {
    spec.validate()?;
    let mut r = rng.rng();
    let examples = (0..spec.n).map(|_| draw_example(&spec.kind, &mut r)).collect();
    Ok((Pool::new(examples)?, spec.theta_star()))
}

fn draw_example<R: Rng>(kind: &SyntheticKind, r: &mut R) -> Example {
    let sqrt_2_pi = (2.0 / std::f64::consts::PI).sqrt();
    match kind {
        SyntheticKind::BinaryResponse { a, b } => {
            let x = r.random_range(-1.0..1.0);
            let p = sigmoid(a + b * x);
            let y = if r.random::<f64>() < p { 1.0 } else { 0.0 };
            Example::new(vec![x])
                .with_label(y)
                .with_prediction(p)
                .with_probs(vec![1.0 - p, p])
                .with_err(2.0 * p * (1.0 - p))
        }
        SyntheticKind::HeteroLinear { theta, noise_base, noise_slope } => {
            let mut x = vec![1.0];
            x.extend((1..theta.len()).map(|_| r.sample::<f64, _>(StandardNormal)));
            let mean: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
            let sd = noise_base + noise_slope * x[1].abs();
            let y = mean + sd * r.sample::<f64, _>(StandardNormal);
            Example::new(x).with_label(y).with_prediction(mean).with_err(sd * sqrt_2_pi)
        }
        SyntheticKind::QuantileTarget { mu, noise, .. } => {
            let y = mu + r.sample::<f64, _>(StandardNormal);
            let x = y + noise * r.sample::<f64, _>(StandardNormal);
            let shrink = 1.0 / (1.0 + noise * noise);
            let sd = (noise * noise * shrink).sqrt();
            Example::new(vec![x])
                .with_label(y)
                .with_prediction(mu + (x - mu) * shrink)
                .with_err(sd * sqrt_2_pi)
        }
    }
}

/// Where the pool and its predictions come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic { spec: SyntheticSpec, model: ModelSource },
    /// A fully labeled pool with predictions already attached.
    Pool(Pool),
}

/// Predictions for synthetic pools.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSource {
    /// The true conditional mean and error.
    Oracle,
    /// Learners trained on an independent historical draw of `n_hist` items.
    Learned { n_hist: usize, learner: LearnerKind, error_learner: LearnerKind },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthMode {
    /// Full-pool M-estimate with every label.
    FullPool,
    /// Population value of the synthetic family.
    Population,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TauPolicy {
    Fixed(f64),
    /// Tune on historical data over this grid (learned models only).
    Tuned(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub spec: ProblemSpec,
    pub methods: Vec<Method>,
    pub nb_grid: Vec<f64>,
    pub trials: usize,
    pub alpha: f64,
    pub tau: TauPolicy,
    /// τ for the sequential methods.
    pub seq_tau: f64,
    pub batch_size: usize,
    pub flush_period: Option<f64>,
    pub truth: TruthMode,
    pub seed: u64,
    /// Label range for betting intervals.
    pub y_range: Option<(f64, f64)>,
    pub grid_size: usize,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, spec: ProblemSpec, nb_grid: Vec<f64>) -> Self {
        ExperimentConfig {
            data,
            spec,
            methods: vec![Method::ActiveBatch, Method::Ppi, Method::Classical],
            nb_grid,
            trials: 1000,
            alpha: 0.1,
            tau: TauPolicy::Fixed(DEFAULT_TAU),
            seq_tau: DEFAULT_TAU,
            batch_size: 100,
            flush_period: Some(100.0),
            truth: TruthMode::FullPool,
            seed: 0,
            y_range: None,
            grid_size: DEFAULT_GRID_SIZE,
        }
    }
}

/// `count` evenly spaced budgets from `lo` to `hi`.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![hi],
        _ => (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect(),
    }
}

/// Default budget grids: 20 points for batch sweeps, 10 for sequential.
pub fn default_grid(n: usize, sequential: bool) -> Vec<f64> {
    let count = if sequential { 10 } else { 20 };
    let lo = (0.05 * n as f64).max(10.0).min(n as f64);
    let hi = (0.5 * n as f64).max(lo);
    uniform_grid(lo, hi, count)
}

/// Everything shared by all trials: the fixed pool, the target and the
/// sampling ingredients.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub pool: Pool,
    pub theta_star: DVector<f64>,
    /// Per-item uncertainty for the batch active rule.
    pub u: Vec<f64>,
    pub direction: GlmDirection,
    pub tau: f64,
    /// Main learner for fine-tuning runs.
    pub learner: Option<Predictor>,
    /// Out-of-fold predictions on the historical draw.
    pub historical: Vec<PredictedPoint>,
}

/// Builds the pool, attaches predictions and fixes θ*.
pub fn prepare(config: &ExperimentConfig) -> Result<Experiment> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config(format!("alpha {} outside (0, 1)", config.alpha)));
    }
    let (pool, population, learner, historical) = match &config.data {
        DataSource::Pool(pool) => (pool.clone(), None, None, Vec::new()),
        DataSource::Synthetic { spec, model } => {
            let (pool, _) = gen_synthetic(spec, RngSpec::new(config.seed, 1))?;
            let theta = spec.theta_star_for(&config.spec)?;
            match *model {
                ModelSource::Oracle => (pool, Some(theta), None, Vec::new()),
                ModelSource::Learned { n_hist, learner, error_learner } => {
                    let hist_spec = SyntheticSpec::new(spec.kind.clone(), n_hist);
                    let (hist, _) = gen_synthetic(&hist_spec, RngSpec::new(config.seed, 2))?;
                    let (pool, model, historical) = attach_learned(&pool, &hist, learner, error_learner)?;
                    (pool, Some(theta), Some(model), historical)
                }
            }
        }
    };
    let theta_star = match (config.truth, population) {
        (TruthMode::Population, Some(t)) => t,
        (TruthMode::Population, None) => {
            return Err(Error::Config("population truth needs a synthetic source".into()))
        }
        (TruthMode::FullPool, _) => full_pool_estimate(&pool, &config.spec)?,
    };
    let direction = plug_in_direction(&pool, &config.spec)?;
    let u = pool_uncertainty(&pool, &direction)?;
    let tau = match &config.tau {
        TauPolicy::Fixed(t) => *t,
        TauPolicy::Tuned(grid) => {
            if historical.is_empty() {
                return Err(Error::Config("tau tuning needs a learned model with historical data".into()));
            }
            let u_hist = historical_uncertainty(&historical, learner.as_ref(), &pool, &direction)?;
            let b = Budget::new(config.nb_grid.iter().copied().fold(f64::NAN, f64::max), pool.len())?;
            tune_tau(&historical, &u_hist, b, grid)?
        }
    };
    Ok(Experiment { pool, theta_star, u, direction, tau, learner, historical })
}

fn attach_learned(
    pool: &Pool,
    hist: &Pool,
    learner: LearnerKind,
    error_learner: LearnerKind,
) -> Result<(Pool, Predictor, Vec<PredictedPoint>)> {
    let obs: Vec<Observation> = hist
        .iter()
        .map(|e| Ok(Observation::new(e.x.clone(), e.y.ok_or(Error::MissingLabel { index: 0 })?)))
        .collect::<Result<_>>()?;
    let model = Predictor::fit(learner, &obs)?;
    let historical = out_of_fold(learner, &obs)?;
    let err_model: ErrorModel = fit_error_model(&historical, error_learner)?;
    let mut examples = Vec::with_capacity(pool.len());
    for e in pool.iter() {
        let p = model.predict(&e.x)?;
        let mut ex = Example::new(e.x.clone()).with_prediction(p.value).with_err(err_model.predict(&e.x)?);
        if let Some(y) = e.y {
            ex = ex.with_label(y);
        }
        if let Some(probs) = p.probs {
            ex = ex.with_probs(probs);
        }
        examples.push(ex);
    }
    Ok((Pool::new(examples)?, model, historical))
}

fn out_of_fold(kind: LearnerKind, obs: &[Observation]) -> Result<Vec<PredictedPoint>> {
    let half = obs.len() / 2;
    if half < 2 {
        return Err(Error::InsufficientData("historical draw too small".into()));
    }
    let (a, b) = obs.split_at(half);
    let on_a = Predictor::fit(kind, a)?;
    let on_b = Predictor::fit(kind, b)?;
    let mut out = Vec::with_capacity(obs.len());
    for (model, fold) in [(&on_b, a), (&on_a, b)] {
        for o in fold {
            out.push(PredictedPoint { x: o.x.clone(), f: model.predict(&o.x)?.value, y: o.y });
        }
    }
    Ok(out)
}

fn historical_uncertainty(
    historical: &[PredictedPoint],
    learner: Option<&Predictor>,
    pool: &Pool,
    direction: &GlmDirection,
) -> Result<Vec<f64>> {
    let classify = pool.iter().all(|e| e.probs.is_some());
    if classify {
        let model = learner.ok_or_else(|| Error::Config("no learner for historical uncertainty".into()))?;
        return historical
            .iter()
            .map(|h| match model.predict(&h.x)?.probs {
                Some(p) => classification_uncertainty(&p),
                None => Ok(1.0),
            })
            .collect();
    }
    let err = fit_error_model(historical, LearnerKind::ridge())?;
    historical
        .iter()
        .map(|h| Ok(glm_uncertainty(err.predict(&h.x)?, &h.x, direction)))
        .collect()
}

/// M-estimate on the whole pool with every label.
pub fn full_pool_estimate(pool: &Pool, spec: &ProblemSpec) -> Result<DVector<f64>> {
    let labels = pool.labels()?;
    let samples: Vec<WeightedSample<'_>> = pool
        .iter()
        .zip(&labels)
        .map(|(e, &y)| WeightedSample::new(&e.x, y, 1.0))
        .collect();
    solve_weighted(spec, &samples)
}

/// h^(j) with the plug-in θ obtained by regressing predictions on covariates.
pub fn plug_in_direction(pool: &Pool, spec: &ProblemSpec) -> Result<GlmDirection> {
    if !spec.is_glm() {
        return Ok(GlmDirection::Identity);
    }
    let f = pool.predictions()?;
    let samples: Vec<WeightedSample<'_>> = pool
        .iter()
        .zip(&f)
        .map(|(e, &fv)| WeightedSample::new(&e.x, fv, 1.0))
        .collect();
    let theta = solve_weighted(spec, &samples)?;
    glm_direction(pool, spec, &theta)
}

/// Classification uncertainty when probabilities are attached, otherwise
/// err · |xᵀh|.
pub fn pool_uncertainty(pool: &Pool, direction: &GlmDirection) -> Result<Vec<f64>> {
    pool.iter()
        .enumerate()
        .map(|(i, e)| match (&e.probs, e.err) {
            (Some(p), _) => classification_uncertainty(p),
            (None, Some(err)) => Ok(glm_uncertainty(err, &e.x, direction)),
            (None, None) => Err(Error::MissingPrediction { index: i }),
        })
        .collect()
}

/// Result of one method on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub method: Method,
    pub n_b: f64,
    pub trial: usize,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_lab: usize,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub method: Method,
    pub n_b: f64,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResults {
    pub theta_star: f64,
    pub target: usize,
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
}

impl TrialResults {
    pub fn select(&self, method: Method, n_b: f64) -> Vec<&TrialRecord> {
        self.records.iter().filter(|r| r.method == method && r.n_b == n_b).collect()
    }
}

/// One row of widths.csv, plus the spread needed for Monte-Carlo slack.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthRow {
    pub method: Method,
    pub n_b: f64,
    pub mean_width: f64,
    pub coverage: f64,
    /// Standard error of the mean width.
    pub width_se: f64,
    pub mean_n_lab: f64,
    pub trials: usize,
}

/// Runs every (method, n_b, trial) combination. Batch trials keep the pool
/// fixed; sequential trials permute it. Trial errors are recorded, not fatal.
pub fn run_trials(config: &ExperimentConfig) -> Result<(Experiment, TrialResults)> {
    let exp = prepare(config)?;
    let target = config.spec.target();
    let jobs: Vec<(usize, f64, usize)> = config
        .nb_grid
        .iter()
        .enumerate()
        .flat_map(|(k, &nb)| (0..config.trials).map(move |r| (k, nb, r)))
        .collect();
    let base = RngSpec::new(config.seed, 3);
    let outcomes: Vec<Vec<std::result::Result<TrialRecord, TrialFailure>>> = jobs
        .par_iter()
        .map(|&(k, nb, r)| {
            let rng = base.child(k as u64).child(r as u64);
            config
                .methods
                .iter()
                .map(|&m| {
                    run_one(config, &exp, m, nb, r, rng).map_err(|e| TrialFailure {
                        method: m,
                        n_b: nb,
                        trial: r,
                        message: e.to_string(),
                    })
                })
                .collect()
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for out in outcomes.into_iter().flatten() {
        match out {
            Ok(r) => records.push(r),
            Err(f) => {
                warn!("{} n_b={} trial {}: {}", f.method, f.n_b, f.trial, f.message);
                failures.push(f);
            }
        }
    }
    let theta_star = exp.theta_star[target];
    Ok((exp, TrialResults { theta_star, target, records, failures }))
}

fn run_one(
    config: &ExperimentConfig,
    exp: &Experiment,
    method: Method,
    n_b: f64,
    trial: usize,
    rng: RngSpec,
) -> Result<TrialRecord> {
    let pool = &exp.pool;
    let budget = Budget::new(n_b, pool.len())?;
    let spec = &config.spec;
    let j = spec.target();
    let report = match method {
        Method::ActiveBatch | Method::ActiveBetting => {
            let plan = SamplingPlan::from_uncertainty(&exp.u, budget, exp.tau, rng.child(1))?;
            let labels = pool.reveal(&plan.xi);
            let report = active_batch_report(pool, &plan, &labels, spec, config.alpha)?;
            if method == Method::ActiveBetting {
                return betting_record(config, exp, &plan, &labels, n_b, trial);
            }
            report
        }
        Method::Ppi | Method::Classical => {
            let plan = SamplingPlan::uniform(budget, rng.child(2));
            let labels = pool.reveal(&plan.xi);
            if method == Method::Ppi {
                ppi_report(pool, &plan.xi, &labels, spec, budget, config.alpha)?
            } else {
                classical_report(pool, &plan.xi, &labels, spec, config.alpha)?
            }
        }
        Method::ActiveSeq | Method::ActiveSeqFinetune => {
            let permuted = pool.permuted(rng.child(3));
            let uncertainty = if permuted.iter().all(|e| e.probs.is_some()) {
                UncertaintySource::Classification
            } else if method == Method::ActiveSeqFinetune {
                UncertaintySource::ErrorModel(LearnerKind::ridge())
            } else {
                UncertaintySource::PoolErr
            };
            let mut cfg = SeqConfig::new(budget, spec.clone(), uncertainty);
            cfg.tau = config.seq_tau;
            cfg.flush_period = config.flush_period;
            cfg.direction = Some(exp.direction.clone());
            let model = if method == Method::ActiveSeqFinetune {
                cfg.batch_size = Some(config.batch_size);
                match &exp.learner {
                    Some(p) => SeqModel::Learner(p.clone()),
                    None => {
                        return Err(Error::Config("fine-tuning needs a learned model source".into()));
                    }
                }
            } else {
                SeqModel::Attached
            };
            let trace = run_sequential(&permuted, model, cfg, rng.child(4), pool_oracle)?;
            sequential_report(&trace, spec, config.alpha, method)?
        }
    };
    let ci = report
        .interval(j)
        .ok_or_else(|| Error::Argument(format!("no interval for coordinate {j}")))?;
    Ok(TrialRecord {
        method,
        n_b,
        trial,
        estimate: report.theta_hat[j],
        lo: ci.lo,
        hi: ci.hi,
        n_lab: report.n_lab,
        covered: ci.contains(exp.theta_star[j]),
    })
}

fn betting_record(
    config: &ExperimentConfig,
    exp: &Experiment,
    plan: &SamplingPlan,
    labels: &[Option<f64>],
    n_b: f64,
    trial: usize,
) -> Result<TrialRecord> {
    if config.spec.kind() != LossKind::Mean {
        return Err(Error::UnsupportedKind("betting intervals cover the mean only".into()));
    }
    let y_range = config
        .y_range
        .ok_or_else(|| Error::Config("betting intervals need y_lo and y_hi".into()))?;
    let report = active_betting_report(&exp.pool, plan, labels, y_range, config.alpha, config.grid_size)?;
    let ci = report.intervals[0];
    Ok(TrialRecord {
        method: Method::ActiveBetting,
        n_b,
        trial,
        estimate: report.theta_hat[0],
        lo: ci.lo,
        hi: ci.hi,
        n_lab: plan.n_lab,
        covered: ci.contains(exp.theta_star[0]),
    })
}

/// Fraction of intervals containing θ* and their mean width.
pub fn coverage_and_width(intervals: &[(f64, f64)], theta_star: f64) -> Result<(f64, f64)> {
    if intervals.is_empty() {
        return Err(Error::InsufficientData("no intervals".into()));
    }
    let n = intervals.len() as f64;
    let covered = intervals.iter().filter(|(lo, hi)| *lo <= theta_star && theta_star <= *hi).count();
    let width = intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / n;
    Ok((covered as f64 / n, width))
}

/// Per (method, n_b) aggregates in method order then grid order.
pub fn summarize(config: &ExperimentConfig, results: &TrialResults) -> Vec<WidthRow> {
    let mut rows = Vec::new();
    for &m in &config.methods {
        for &nb in &config.nb_grid {
            let recs = results.select(m, nb);
            let intervals: Vec<(f64, f64)> = recs.iter().map(|r| (r.lo, r.hi)).collect();
            let Ok((coverage, mean_width)) = coverage_and_width(&intervals, results.theta_star) else {
                continue;
            };
            let k = intervals.len() as f64;
            let var = intervals.iter().map(|(lo, hi)| (hi - lo - mean_width).powi(2)).sum::<f64>() / k;
            rows.push(WidthRow {
                method: m,
                n_b: nb,
                mean_width,
                coverage,
                width_se: (var / k).sqrt(),
                mean_n_lab: recs.iter().map(|r| r.n_lab as f64).sum::<f64>() / k,
                trials: recs.len(),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaveRow {
    pub n_b: f64,
    /// Missing when the baseline width lies outside the active curve.
    pub save_pct: Option<f64>,
    /// The active curve was not monotone; the first crossing was used.
    pub flagged: bool,
}

/// Budget saved by the active method at each baseline grid point, matching
/// widths on the linearly interpolated active curve.
pub fn budget_save(active: &[(f64, f64)], baseline: &[(f64, f64)]) -> Result<Vec<SaveRow>> {
    let sorted = |c: &[(f64, f64)]| c.windows(2).all(|w| w[0].0 < w[1].0);
    if active.is_empty() || !sorted(active) || !sorted(baseline) {
        return Err(Error::Argument("curves must be nonempty and sorted by n_b".into()));
    }
    if active.iter().chain(baseline).any(|&(nb, w)| !(w > 0.0) || !(nb > 0.0)) {
        return Err(Error::Argument("budgets and widths must be positive".into()));
    }
    let monotone = active.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(baseline
        .iter()
        .map(|&(nb, w)| {
            let found = crossing(active, w);
            SaveRow {
                n_b: nb,
                save_pct: found.map(|nb_active| (nb - nb_active) / nb * 100.0),
                flagged: !monotone && found.is_some(),
            }
        })
        .collect())
}

fn crossing(curve: &[(f64, f64)], w: f64) -> Option<f64> {
    if curve.len() == 1 {
        return (curve[0].1 == w).then_some(curve[0].0);
    }
    for seg in curve.windows(2) {
        let ((x0, w0), (x1, w1)) = (seg[0], seg[1]);
        if (w0.min(w1)..=w0.max(w1)).contains(&w) {
            if w0 == w1 {
                return Some(x0);
            }
            return Some(x0 + (w - w0) / (w1 - w0) * (x1 - x0));
        }
    }
    None
}

/// Savings of `active` against each baseline method, from the summary rows.
pub fn savings_table(rows: &[WidthRow], active: Method, baselines: &[Method]) -> Result<Vec<(Method, SaveRow)>> {
    let curve = |m: Method| -> Vec<(f64, f64)> {
        let mut c: Vec<(f64, f64)> = rows.iter().filter(|r| r.method == m).map(|r| (r.n_b, r.mean_width)).collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
        c
    };
    let active_curve = curve(active);
    let mut out = Vec::new();
    for &b in baselines {
        let base = curve(b);
        if base.is_empty() || active_curve.is_empty() {
            continue;
        }
        for row in budget_save(&active_curve, &base)? {
            if row.flagged {
                warn!("non-monotone {active} width curve; first crossing used for {b} at n_b={}", row.n_b);
            }
            out.push((b, row));
        }
    }
    Ok(out)
}

/// Fourth-largest grid value (the largest if the grid is shorter).
pub fn example_budget(grid: &[f64]) -> Option<f64> {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g.get(3).or(g.last()).copied()
}

fn header_line<W: Write>(w: &mut W, header: &str) -> Result<()> {
    writeln!(w, "# {header}")?;
    Ok(())
}

/// widths.csv: method, n_b, mean_width, coverage.
pub fn write_widths<W: Write>(mut w: W, header: &str, rows: &[WidthRow]) -> Result<()> {
    header_line(&mut w, header)?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["method", "n_b", "mean_width", "coverage"])?;
    for r in rows {
        c.write_record([r.method.name().to_string(), r.n_b.to_string(), r.mean_width.to_string(), r.coverage.to_string()])?;
    }
    c.flush()?;
    Ok(())
}

/// savings.csv: baseline, n_b, save_pct (empty when undefined).
pub fn write_savings<W: Write>(mut w: W, header: &str, rows: &[(Method, SaveRow)]) -> Result<()> {
    header_line(&mut w, header)?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["baseline", "n_b", "save_pct"])?;
    for (m, r) in rows {
        c.write_record([m.name().to_string(), r.n_b.to_string(), r.save_pct.map_or(String::new(), |v| v.to_string())])?;
    }
    c.flush()?;
    Ok(())
}

/// examples.csv: the first five trials at the fourth-largest budget.
pub fn write_examples<W: Write>(mut w: W, header: &str, config: &ExperimentConfig, results: &TrialResults) -> Result<()> {
    header_line(&mut w, header)?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["trial", "method", "estimate", "lo", "hi"])?;
    if let Some(nb) = example_budget(&config.nb_grid) {
        let mut by_trial: BTreeMap<(usize, usize), &TrialRecord> = BTreeMap::new();
        for r in results.records.iter().filter(|r| r.n_b == nb && r.trial < 5) {
            let order = config.methods.iter().position(|&m| m == r.method).unwrap_or(usize::MAX);
            by_trial.insert((r.trial, order), r);
        }
        for r in by_trial.values() {
            c.write_record([
                r.trial.to_string(),
                r.method.name().to_string(),
                r.estimate.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
            ])?;
        }
    }
    c.flush()?;
    Ok(())
}

/// Reads widths.csv back into (method, n_b, mean_width, coverage) rows.
pub fn read_widths<R: std::io::Read>(r: R) -> Result<Vec<WidthRow>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 3;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse { line, message: format!("bad number in column {}", i + 1) })
        };
        rows.push(WidthRow {
            method: rec.get(0).unwrap_or("").parse()?,
            n_b: num(1)?,
            mean_width: num(2)?,
            coverage: num(3)?,
            width_se: f64::NAN,
            mean_n_lab: f64::NAN,
            trials: 0,
        });
    }
    Ok(rows)
}
