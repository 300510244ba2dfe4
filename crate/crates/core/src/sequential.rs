//! Sequential active inference: a single streaming pass over the pool with
//! the budget-spreading rule, periodic fine-tuning, and the martingale
//! estimator.

use std::fmt;
use std::io::{Read, Write};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::aipw::{self, AipwTerm};
use crate::batch::build_report;
use crate::data::{Budget, Example, Pool, RngSpec};
use crate::error::{Error, Result};
use crate::losses::{solve_weighted, ProblemSpec, WeightedSample};
use crate::predictors::{
    classification_uncertainty, fit_error_model, ErrorModel, LearnerKind, Observation, PredictedPoint, Predictor,
};
use crate::report::{InferenceReport, Method};
use crate::sampling::{glm_direction, glm_uncertainty, sequential_pi, GlmDirection, SequentialBudgetState};

/// Where predictions come from during a run.
#[derive(Debug, Clone)]
pub enum SeqModel {
    /// Use the `f`/`probs`/`err` columns already attached to the pool. Never
    /// fine-tuned.
    Attached,
    /// A learner, fine-tuned every `batch_size` labels.
    Learner(Predictor),
}

/// How per-step uncertainty is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UncertaintySource {
    /// `K/(K-1) (1 - max p)` from class probabilities.
    Classification,
    /// A learned error model, refit on out-of-fold residuals with the main model.
    ErrorModel(LearnerKind),
    /// The pool's `err` column.
    PoolErr,
}

#[derive(Debug, Clone)]
pub struct SeqConfig {
    pub budget: Budget,
    pub spec: ProblemSpec,
    pub tau: f64,
    /// Fine-tune after this many new labels. `None` never fine-tunes.
    pub batch_size: Option<usize>,
    /// Flush the remaining budget every ⌈flush_period·n/n_b⌉ steps.
    pub flush_period: Option<f64>,
    /// No fine-tuning after this step.
    pub freeze_after: Option<usize>,
    pub uncertainty: UncertaintySource,
    /// GLM direction to use until the first refit.
    pub direction: Option<GlmDirection>,
}

impl SeqConfig {
    pub fn new(budget: Budget, spec: ProblemSpec, uncertainty: UncertaintySource) -> Self {
        SeqConfig {
            budget,
            spec,
            tau: crate::sampling::DEFAULT_TAU,
            batch_size: None,
            flush_period: None,
            freeze_after: None,
            uncertainty,
            direction: None,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.budget.n() != n {
            return Err(Error::Config(format!(
                "budget is for {} items but the pool has {n}",
                self.budget.n()
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(p) = self.flush_period {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("flush period {p} must be positive")));
            }
        }
        Ok(())
    }

    /// Steps between forced flushes.
    pub fn flush_every(&self) -> Option<usize> {
        self.flush_period
            .map(|p| ((p * self.budget.n() as f64 / self.budget.n_b()).ceil() as usize).max(1))
    }
}

/// One step of a sequential run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// 1-based step.
    pub t: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub u: f64,
    /// Probability before mixing with the uniform rule.
    pub pi_raw: f64,
    pub pi: f64,
    pub n_delta: f64,
    pub xi: bool,
    pub y: Option<f64>,
    pub version: u64,
    /// Last step whose label the model in use had seen (0 if none).
    pub data_until: usize,
    pub flush: bool,
}

/// Configuration echo stored with a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceConfig {
    pub batch_size: Option<usize>,
    pub tau: f64,
    pub flush_period: Option<f64>,
    pub n_b: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config: TraceConfig,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.config.n
    }

    pub fn n_lab(&self) -> usize {
        self.steps.iter().filter(|s| s.xi).count()
    }

    /// Running label counts n_lab,t.
    pub fn label_path(&self) -> Vec<usize> {
        self.steps
            .iter()
            .scan(0usize, |acc, s| {
                *acc += s.xi as usize;
                Some(*acc)
            })
            .collect()
    }

    /// f_t + (y_t - f_t) ξ_t / π_t.
    pub fn mean_increments(&self) -> Result<Vec<f64>> {
        Ok(self.terms()?.iter().map(AipwTerm::mean_increment).collect())
    }

    /// Errors if some step used a model trained on its own or later labels.
    pub fn check_predictability(&self) -> Result<()> {
        for s in &self.steps {
            if s.data_until >= s.t {
                return Err(Error::State(format!(
                    "step {} used a model trained through step {}",
                    s.t, s.data_until
                )));
            }
        }
        Ok(())
    }

    fn terms(&self) -> Result<Vec<AipwTerm<'_>>> {
        self.steps
            .iter()
            .map(|s| {
                if !s.xi {
                    return Ok(AipwTerm { x: &s.x, f: s.f, y: None, ipw: 0.0 });
                }
                if !(s.pi > 0.0) {
                    return Err(Error::InvalidPlan {
                        index: s.t - 1,
                        reason: format!("selected with probability {}", s.pi),
                    });
                }
                let y = s.y.ok_or(Error::MissingLabel { index: s.t - 1 })?;
                Ok(AipwTerm { x: &s.x, f: s.f, y: Some(y), ipw: 1.0 / s.pi })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let c = &self.config;
        writeln!(
            writer,
            "# batch_size={} tau={} flush_period={} n_b={} n={}",
            opt(c.batch_size),
            c.tau,
            opt(c.flush_period),
            c.n_b,
            c.n
        )?;
        let dim = self.steps.first().map_or(0, |s| s.x.len());
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = [
            "t", "f", "u", "pi_raw", "pi", "n_delta", "xi", "y", "version", "data_until", "flush",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for s in &self.steps {
            let mut row = vec![
                s.t.to_string(),
                s.f.to_string(),
                s.u.to_string(),
                s.pi_raw.to_string(),
                s.pi.to_string(),
                s.n_delta.to_string(),
                (s.xi as u8).to_string(),
                s.y.map_or(String::new(), |y| y.to_string()),
                s.version.to_string(),
                s.data_until.to_string(),
                (s.flush as u8).to_string(),
            ];
            row.extend(s.x.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut reader: R) -> Result<Trace> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        // Leading comment lines may carry provenance; the configuration echo
        // is the one naming `batch_size`.
        let mut rest = text.as_str();
        let mut config = None;
        while rest.starts_with('#') {
            let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
            if line.contains("batch_size=") {
                config = Some(parse_config_line(line)?);
            }
            rest = tail;
        }
        let config = config
            .ok_or_else(|| Error::Parse { line: 1, message: "missing trace configuration line".into() })?;
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rest.as_bytes());
        let header = r.headers()?.clone();
        let dim = header
            .iter()
            .filter(|h| h.strip_prefix('x').is_some_and(|d| d.parse::<usize>().is_ok()))
            .count();
        let mut steps = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 3;
            let num = |i: usize| -> Result<f64> {
                let cell = rec.get(i).unwrap_or("");
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{cell}` in column {}", header.get(i).unwrap_or("?")),
                })
            };
            let y = match rec.get(7).unwrap_or("") {
                "" => None,
                _ => Some(num(7)?),
            };
            steps.push(TraceStep {
                t: num(0)? as usize,
                f: num(1)?,
                u: num(2)?,
                pi_raw: num(3)?,
                pi: num(4)?,
                n_delta: num(5)?,
                xi: num(6)? != 0.0,
                y,
                version: num(8)? as u64,
                data_until: num(9)? as usize,
                flush: num(10)? != 0.0,
                x: (0..dim).map(|j| num(11 + j)).collect::<Result<_>>()?,
            });
        }
        Ok(Trace { config, steps })
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn parse_config_line(line: &str) -> Result<TraceConfig> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse { line: 1, message: "missing trace configuration line".into() })?;
    let mut cfg = TraceConfig { batch_size: None, tau: 0.0, flush_period: None, n_b: 0.0, n: 0 };
    let bad = |k: &str| Error::Parse { line: 1, message: format!("bad value for `{k}`") };
    for kv in body.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(kv))?;
        match k {
            "batch_size" => cfg.batch_size = if v == "none" { None } else { Some(v.parse().map_err(|_| bad(k))?) },
            "tau" => cfg.tau = v.parse().map_err(|_| bad(k))?,
            "flush_period" => cfg.flush_period = if v == "none" { None } else { Some(v.parse().map_err(|_| bad(k))?) },
            "n_b" => cfg.n_b = v.parse().map_err(|_| bad(k))?,
            "n" => cfg.n = v.parse().map_err(|_| bad(k))?,
            _ => {}
        }
    }
    Ok(cfg)
}

/// A run that stopped early because the label oracle failed.
#[derive(Debug)]
pub struct SequentialAbort {
    pub partial: Trace,
    pub source: Error,
}

impl fmt::Display for SequentialAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sequential run aborted after {} steps: {}", self.partial.len(), self.source)
    }
}

impl std::error::Error for SequentialAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<SequentialAbort> for Error {
    fn from(a: SequentialAbort) -> Self {
        a.source
    }
}

/// Oracle that reads the labels stored in the pool.
pub fn pool_oracle(_index: usize, e: &Example) -> std::result::Result<f64, String> {
    e.y.ok_or_else(|| "no label stored for this item".to_string())
}

struct Engine<'p> {
    pool: &'p Pool,
    cfg: SeqConfig,
    model: SeqModel,
    error_model: Option<ErrorModel>,
    direction: Option<GlmDirection>,
    data_until: usize,
}

impl Engine<'_> {
    fn version(&self) -> u64 {
        match &self.model {
            SeqModel::Attached => 0,
            SeqModel::Learner(p) => p.version(),
        }
    }

    /// (f, probs) at x; an unfitted learner predicts 0.
    fn predict(&self, e: &Example, index: usize) -> Result<(f64, Option<Vec<f64>>)> {
        match &self.model {
            SeqModel::Attached => Ok((e.f.ok_or(Error::MissingPrediction { index })?, e.probs.clone())),
            SeqModel::Learner(p) if p.is_fitted() => {
                let pr = p.predict(&e.x)?;
                Ok((pr.value, pr.probs))
            }
            SeqModel::Learner(_) => Ok((0.0, None)),
        }
    }

    fn uncertainty(&self, e: &Example, probs: Option<&[f64]>) -> Result<f64> {
        match self.cfg.uncertainty {
            UncertaintySource::Classification => match probs {
                Some(p) => classification_uncertainty(p),
                None => Ok(1.0),
            },
            UncertaintySource::ErrorModel(_) => {
                let base = match (&self.error_model, e.err) {
                    (Some(m), _) => m.predict(&e.x)?,
                    (None, Some(err)) => err,
                    (None, None) => return Ok(1.0),
                };
                Ok(self.directed(base, &e.x))
            }
            UncertaintySource::PoolErr => Ok(self.directed(e.err.unwrap_or(1.0), &e.x)),
        }
    }

    fn directed(&self, base: f64, x: &[f64]) -> f64 {
        match &self.direction {
            Some(d) => glm_uncertainty(base, x, d),
            None => base,
        }
    }

    /// η_t = n_b / (n Ê[u_t]) over the whole pool; 0 when Ê[u_t] = 0.
    fn eta(&self) -> Result<f64> {
        let mut total = 0.0;
        for (i, e) in self.pool.iter().enumerate() {
            let (_, probs) = self.predict(e, i)?;
            total += self.uncertainty(e, probs.as_deref())?;
        }
        Ok(if total > 0.0 { self.cfg.budget.n_b() / total } else { 0.0 })
    }

    fn refit(&mut self, batch: &[Observation], step: usize) -> Result<()> {
        let SeqModel::Learner(p) = &self.model else {
            return Ok(());
        };
        let next = p.finetune(batch)?;
        let kind = p.kind();
        debug!("step {step}: fine-tuned to version {}", next.version());
        let data = next.training_data().to_vec();
        self.model = SeqModel::Learner(next);
        self.data_until = step;
        if let UncertaintySource::ErrorModel(err_kind) = self.cfg.uncertainty {
            match out_of_fold_points(kind, &data).and_then(|pts| match &self.error_model {
                Some(m) => m.refit(&pts),
                None => fit_error_model(&pts, err_kind),
            }) {
                Ok(m) => self.error_model = Some(m),
                Err(e) => warn!("step {step}: keeping previous error model ({e})"),
            }
        }
        if self.cfg.spec.is_glm() {
            match labeled_direction(&self.cfg.spec, &data) {
                Ok(d) => self.direction = Some(d),
                Err(e) => warn!("step {step}: keeping previous GLM direction ({e})"),
            }
        }
        Ok(())
    }
}

/// Two-fold out-of-fold predictions: each half predicted by a model fit on
/// the other half.
fn out_of_fold_points(kind: LearnerKind, data: &[Observation]) -> Result<Vec<PredictedPoint>> {
    let (even, odd): (Vec<_>, Vec<_>) = data.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
    let even: Vec<Observation> = even.into_iter().map(|(_, o)| o).collect();
    let odd: Vec<Observation> = odd.into_iter().map(|(_, o)| o).collect();
    if even.len() < 2 || odd.len() < 2 {
        return Err(Error::InsufficientData("out-of-fold residuals need four points".into()));
    }
    let on_even = Predictor::fit(kind, &even)?;
    let on_odd = Predictor::fit(kind, &odd)?;
    let mut pts = Vec::with_capacity(data.len());
    for (model, fold) in [(&on_odd, &even), (&on_even, &odd)] {
        for o in fold {
            pts.push(PredictedPoint { x: o.x.clone(), f: model.predict(&o.x)?.value, y: o.y });
        }
    }
    Ok(pts)
}

/// h^(j) from the labeled data, with the plug-in θ fit on the same data.
fn labeled_direction(spec: &ProblemSpec, data: &[Observation]) -> Result<GlmDirection> {
    let samples: Vec<WeightedSample<'_>> = data.iter().map(|o| WeightedSample::new(&o.x, o.y, 1.0)).collect();
    let theta = solve_weighted(spec, &samples)?;
    let pool = Pool::new(data.iter().map(|o| Example::new(o.x.clone())).collect())?;
    glm_direction(&pool, spec, &theta)
}

/// Runs the sequential rule over `pool` in order. The oracle is asked for a
/// label only when ξ_t = 1.
pub fn run_sequential<F>(
    pool: &Pool,
    model0: SeqModel,
    cfg: SeqConfig,
    rng: RngSpec,
    mut oracle: F,
) -> std::result::Result<Trace, SequentialAbort>
where
    F: FnMut(usize, &Example) -> std::result::Result<f64, String>,
{
    let config = TraceConfig {
        batch_size: cfg.batch_size,
        tau: cfg.tau,
        flush_period: cfg.flush_period,
        n_b: cfg.budget.n_b(),
        n: cfg.budget.n(),
    };
    let mut trace = Trace { config, steps: Vec::with_capacity(pool.len()) };
    let abort = |trace: Trace, source: Error| SequentialAbort { partial: trace, source };
    if let Err(e) = cfg.validate(pool.len()) {
        return Err(abort(trace, e));
    }
    let direction = if cfg.spec.is_glm() { cfg.direction.clone() } else { Some(GlmDirection::Identity) };
    let flush_every = cfg.flush_every();
    let rate = cfg.budget.rate();
    let mut engine = Engine { pool, cfg, model: model0, error_model: None, direction, data_until: 0 };
    let mut state = SequentialBudgetState::new(engine.cfg.budget);
    let mut draws = rng.rng();
    let mut tune: Vec<Observation> = Vec::new();
    let mut eta_version: Option<u64> = None;
    let mut eta = 0.0;

    for (i, e) in pool.iter().enumerate() {
        let t = i + 1;
        let result: Result<()> = (|| {
            let version = engine.version();
            if eta_version != Some(version) {
                eta = engine.eta()?;
                eta_version = Some(version);
            }
            let (f, probs) = engine.predict(e, i)?;
            let u = engine.uncertainty(e, probs.as_deref())?;
            let n_delta = state.remaining();
            let flush = flush_every.is_some_and(|k| t % k == 0);
            let pi_raw = if flush { n_delta.clamp(0.0, 1.0) } else { sequential_pi(eta, u, &state) };
            let pi = ((1.0 - engine.cfg.tau) * pi_raw + engine.cfg.tau * rate).min(1.0);
            let xi = draws.random::<f64>() < pi;
            let y = if xi {
                Some(oracle(i, e).map_err(|message| Error::Oracle { step: t, message })?)
            } else {
                None
            };
            trace.steps.push(TraceStep {
                t,
                x: e.x.clone(),
                f,
                u,
                pi_raw,
                pi,
                n_delta,
                xi,
                y,
                version,
                data_until: engine.data_until,
                flush,
            });
            state.advance(xi);
            if let Some(y) = y {
                tune.push(Observation::new(e.x.clone(), y));
                let frozen = engine.cfg.freeze_after.is_some_and(|s| t > s);
                if !frozen && engine.cfg.batch_size.is_some_and(|b| tune.len() >= b) {
                    engine.refit(&tune, t)?;
                    tune.clear();
                }
            }
            Ok(())
        })();
        if let Err(err) = result {
            return Err(abort(trace, err));
        }
    }
    Ok(trace)
}

/// Minimizer of (1/n) Σ [ℓ^{f_t} + (ℓ - ℓ^{f_t}) ξ_t/π_t], each step with its
/// own prediction.
pub fn sequential_estimate(trace: &Trace, spec: &ProblemSpec) -> Result<DVector<f64>> {
    aipw::estimate(spec, &trace.terms()?)
}

/// Ĥ⁻¹ V̂ Ĥ⁻¹ from the realized gradient increments.
pub fn sequential_covariance(trace: &Trace, spec: &ProblemSpec, theta_hat: &DVector<f64>) -> Result<DMatrix<f64>> {
    aipw::covariance_at(spec, theta_hat, &trace.terms()?)
}

pub fn sequential_report(trace: &Trace, spec: &ProblemSpec, alpha: f64, method: Method) -> Result<InferenceReport> {
    let terms = trace.terms()?;
    let theta = aipw::estimate(spec, &terms)?;
    let sigma = aipw::covariance_at(spec, &theta, &terms)?;
    build_report(method, theta, sigma, alpha, trace.len(), trace.n_lab())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(t: usize, f: f64, y: Option<f64>, pi: f64) -> TraceStep {
        TraceStep {
            t,
            x: vec![t as f64],
            f,
            u: 1.0,
            pi_raw: pi,
            pi,
            n_delta: 1.0,
            xi: y.is_some(),
            y,
            version: 0,
            data_until: 0,
            flush: false,
        }
    }

    fn cfg() -> TraceConfig {
        TraceConfig { batch_size: Some(100), tau: 0.5, flush_period: Some(100.0), n_b: 1.0, n: 2 }
    }

    #[test]
    fn worked_mean_example() {
        let trace = Trace { config: cfg(), steps: vec![step(1, 1.0, Some(2.0), 0.5), step(2, 3.0, Some(4.0), 1.0)] };
        let theta = sequential_estimate(&trace, &ProblemSpec::mean()).unwrap();
        assert_eq!(theta[0], 3.5);
        let v = sequential_covariance(&trace, &ProblemSpec::mean(), &theta).unwrap();
        assert_eq!(v[(0, 0)], 0.25);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let trace = Trace {
            config: cfg(),
            steps: vec![step(1, 0.1 + 0.2, Some(1.0 / 3.0), 0.123456789), step(2, -2.5e-17, None, 0.7)],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = Trace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn oracle_failure_returns_partial_trace() {
        let pool = Pool::new((0..20).map(|i| Example::new(vec![i as f64]).with_prediction(0.0).with_err(1.0)).collect())
            .unwrap();
        let mut cfg = SeqConfig::new(Budget::new(20.0, 20).unwrap(), ProblemSpec::mean(), UncertaintySource::PoolErr);
        cfg.tau = 1.0;
        let out = run_sequential(&pool, SeqModel::Attached, cfg, RngSpec::new(1, 0), |i, _| {
            if i < 3 {
                Ok(1.0)
            } else {
                Err("offline".into())
            }
        });
        let abort = out.unwrap_err();
        assert_eq!(abort.partial.len(), 3);
        assert!(matches!(abort.source, Error::Oracle { step: 4, .. }));
    }
}
