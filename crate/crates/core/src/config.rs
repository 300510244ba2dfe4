//! Run configuration: a `key = value` text file, command-line overrides, and
//! the hash stamped on every output file.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::betting::DEFAULT_GRID_SIZE;
use crate::error::{Error, Result};
use crate::harness::{
    default_grid, DataSource, ExperimentConfig, ModelSource, SyntheticKind, SyntheticSpec, TauPolicy, TruthMode,
};
use crate::losses::ProblemSpec;
use crate::predictors::LearnerKind;
use crate::report::Method;
use crate::sampling::{default_tau_grid, DEFAULT_TAU};

#[derive(Clone, Copy)]
enum Kind {
    Float,
    Int,
    Text,
    FloatList,
    TextList,
    /// A float or the word `none`.
    OptFloat,
    /// An integer or the word `none`.
    OptInt,
}

const KEYS: &[(&str, Kind)] = &[
    ("seed", Kind::Int),
    ("alpha", Kind::Float),
    ("problem", Kind::Text),
    ("q", Kind::Float),
    ("target", Kind::Int),
    ("covariates", Kind::TextList),
    ("label", Kind::Text),
    ("prediction", Kind::Text),
    ("probs", Kind::TextList),
    ("err", Kind::Text),
    ("n_b", Kind::Float),
    ("tau", Kind::Text),
    ("tau_grid", Kind::FloatList),
    ("seq_tau", Kind::Float),
    ("historical", Kind::Text),
    ("batch_size", Kind::OptInt),
    ("flush_period", Kind::OptFloat),
    ("freeze_after", Kind::OptInt),
    ("model", Kind::Text),
    ("knn_k", Kind::Int),
    ("uncertainty", Kind::Text),
    ("trials", Kind::Int),
    ("methods", Kind::TextList),
    ("nb_grid", Kind::Text),
    ("truth", Kind::Text),
    ("data", Kind::Text),
    ("pool", Kind::Text),
    ("n", Kind::Int),
    ("a", Kind::Float),
    ("b", Kind::Float),
    ("theta", Kind::FloatList),
    ("noise_base", Kind::Float),
    ("noise_slope", Kind::Float),
    ("mu", Kind::Float),
    ("noise", Kind::Float),
    ("source", Kind::Text),
    ("n_hist", Kind::Int),
    ("learner", Kind::Text),
    ("y_lo", Kind::Float),
    ("y_hi", Kind::Float),
    ("grid_size", Kind::Int),
];

/// Effective configuration after file, `--set` and flag overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("`{key} = {value}`: expected {what}"))
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", k + 1)))?;
            let key = key.trim();
            if cfg.entries.contains_key(key) {
                return Err(Error::Config(format!("line {}: `{key}` set twice", k + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key, checking the name and the value's type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let kind = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, kind)| *kind)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        check_value(key, value, kind)?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        for p in pairs {
            let p = p.as_ref();
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{p}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn float(&self, key: &str, default: f64) -> f64 {
        self.get(key).map_or(default, |v| v.parse().expect("checked on set"))
    }

    fn int(&self, key: &str, default: u64) -> u64 {
        self.get(key).map_or(default, |v| v.parse().expect("checked on set"))
    }

    fn floats(&self, key: &str) -> Option<Vec<f64>> {
        self.get(key).map(|v| split_list(v).map(|s| s.parse().expect("checked on set")).collect())
    }

    fn texts(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(|v| split_list(v).map(String::from).collect())
    }

    fn opt_float(&self, key: &str, default: Option<f64>) -> Option<f64> {
        match self.get(key) {
            None => default,
            Some("none") => None,
            Some(v) => Some(v.parse().expect("checked on set")),
        }
    }

    fn opt_int(&self, key: &str, default: Option<usize>) -> Option<usize> {
        match self.get(key) {
            None => default,
            Some("none") => None,
            Some(v) => Some(v.parse().expect("checked on set")),
        }
    }

    /// SHA-256 over the sorted `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.entries {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.int("seed", 0)
    }

    pub fn alpha(&self) -> Result<f64> {
        let a = self.float("alpha", 0.1);
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha {a} outside (0, 1)")));
        }
        Ok(a)
    }

    /// First comment line of every output file.
    pub fn header(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.seed())
    }

    /// The configuration on one line, for the second comment line of outputs.
    pub fn echo(&self) -> String {
        if self.entries.is_empty() {
            return "config: defaults".to_string();
        }
        let body: Vec<String> = self.entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("config: {}", body.join("; "))
    }

    /// Header and echo as comment lines.
    pub fn preamble(&self) -> String {
        format!("# {}\n# {}\n", self.header(), self.echo())
    }

    /// Problem for `dim` covariates.
    pub fn problem(&self, dim: usize) -> Result<ProblemSpec> {
        let target = self.int("target", 0) as usize;
        match self.get("problem").unwrap_or("mean") {
            "mean" => Ok(ProblemSpec::mean()),
            "quantile" => ProblemSpec::quantile(self.float("q", 0.5)),
            "linear" | "linear-regression" => ProblemSpec::linear_regression(dim, target),
            "logistic" | "logistic-regression" => ProblemSpec::logistic(dim, target),
            other => Err(Error::Config(format!("unknown problem `{other}`"))),
        }
        .map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })
    }

    pub fn n_b(&self) -> Result<f64> {
        self.get("n_b")
            .map(|v| v.parse().expect("checked on set"))
            .ok_or_else(|| Error::Config("`n_b` is required".into()))
    }

    /// Fixed τ, or the tuning grid when `tau = tuned`.
    pub fn tau_policy(&self) -> Result<TauPolicy> {
        match self.get("tau").unwrap_or("default") {
            "default" => Ok(TauPolicy::Fixed(DEFAULT_TAU)),
            "tuned" => Ok(TauPolicy::Tuned(self.floats("tau_grid").unwrap_or_else(default_tau_grid))),
            v => {
                let t: f64 = v.parse().map_err(|_| bad("tau", v, "a number, `default` or `tuned`"))?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::Config(format!("tau {t} outside [0, 1]")));
                }
                Ok(TauPolicy::Fixed(t))
            }
        }
    }

    pub fn seq_tau(&self) -> f64 {
        self.float("seq_tau", DEFAULT_TAU)
    }

    pub fn batch_size(&self) -> Option<usize> {
        self.opt_int("batch_size", Some(100))
    }

    pub fn flush_period(&self) -> Option<f64> {
        self.opt_float("flush_period", Some(100.0))
    }

    pub fn freeze_after(&self) -> Option<usize> {
        self.opt_int("freeze_after", None)
    }

    pub fn y_range(&self) -> Option<(f64, f64)> {
        match (self.get("y_lo"), self.get("y_hi")) {
            (Some(_), Some(_)) => Some((self.float("y_lo", 0.0), self.float("y_hi", 1.0))),
            _ => None,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.int("grid_size", DEFAULT_GRID_SIZE as u64) as usize
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        match self.texts("methods") {
            None => Ok(vec![Method::ActiveBatch, Method::Ppi, Method::Classical]),
            Some(names) => names.iter().map(|s| s.parse()).collect(),
        }
    }

    fn learner(&self, key: &str, default: &str) -> Result<LearnerKind> {
        match self.get(key).unwrap_or(default) {
            "ridge" => Ok(LearnerKind::ridge()),
            "logistic" => Ok(LearnerKind::logistic()),
            "knn" => Ok(LearnerKind::KNearest { k: self.int("knn_k", 10) as usize }),
            other => Err(Error::Config(format!("unknown learner `{other}`"))),
        }
    }

    /// The learner named by `model`, or `None` for `model = attached`.
    pub fn model(&self) -> Result<Option<LearnerKind>> {
        match self.get("model").unwrap_or("attached") {
            "attached" => Ok(None),
            _ => self.learner("model", "attached").map(Some),
        }
    }

    /// The uncertainty key: auto, classification, err or error-model.
    pub fn uncertainty(&self) -> Result<&str> {
        let v = self.get("uncertainty").unwrap_or("auto");
        match v {
            "auto" | "classification" | "err" | "error-model" => Ok(v),
            other => Err(bad("uncertainty", other, "auto, classification, err or error-model")),
        }
    }

    pub fn synthetic(&self) -> Result<Option<SyntheticSpec>> {
        let n = self.int("n", 2000) as usize;
        let kind = match self.get("data").unwrap_or("binary") {
            "binary" => SyntheticKind::BinaryResponse { a: self.float("a", 0.0), b: self.float("b", 1.0) },
            "hetero-linear" => SyntheticKind::HeteroLinear {
                theta: self.floats("theta").unwrap_or_else(|| vec![1.0, 2.0]),
                noise_base: self.float("noise_base", 0.5),
                noise_slope: self.float("noise_slope", 0.5),
            },
            "quantile" => SyntheticKind::QuantileTarget {
                mu: self.float("mu", 0.0),
                q: self.float("q", 0.5),
                noise: self.float("noise", 1.0),
            },
            "file" => return Ok(None),
            other => return Err(Error::Config(format!("unknown data source `{other}`"))),
        };
        if n < 2 {
            return Err(Error::Config("`n` must be at least 2".into()));
        }
        Ok(Some(SyntheticSpec::new(kind, n)))
    }

    /// Full harness configuration. `pool` supplies the data when `data = file`.
    pub fn experiment(&self, pool: Option<crate::data::Pool>) -> Result<ExperimentConfig> {
        let methods = self.methods()?;
        let sequential = methods.iter().any(|m| m.is_sequential());
        let mut family_problem = None;
        let (data, n, dim) = match (self.synthetic()?, pool) {
            (Some(spec), _) => {
                family_problem = Some(spec.problem()?);
                let n = spec.n;
                let dim = match &spec.kind {
                    SyntheticKind::HeteroLinear { theta, .. } => theta.len(),
                    _ => 1,
                };
                let model = match self.get("source").unwrap_or("oracle") {
                    "oracle" => ModelSource::Oracle,
                    "learned" => {
                        let default = match spec.kind {
                            SyntheticKind::BinaryResponse { .. } => "logistic",
                            _ => "ridge",
                        };
                        ModelSource::Learned {
                            n_hist: self.int("n_hist", 100) as usize,
                            learner: self.learner("learner", default)?,
                            error_learner: LearnerKind::ridge(),
                        }
                    }
                    other => return Err(bad("source", other, "oracle or learned")),
                };
                (DataSource::Synthetic { spec, model }, n, dim)
            }
            (None, Some(pool)) => {
                let (n, dim) = (pool.len(), pool.dim());
                (DataSource::Pool(pool), n, dim)
            }
            (None, None) => return Err(Error::Config("`data = file` needs a pool file".into())),
        };
        let nb_grid = match self.get("nb_grid").unwrap_or("default") {
            "default" => default_grid(n, sequential),
            v => split_list(v)
                .map(|s| s.parse::<f64>().map_err(|_| bad("nb_grid", v, "`default` or a list of numbers")))
                .collect::<Result<Vec<f64>>>()?,
        };
        if nb_grid.is_empty() || nb_grid.iter().any(|&b| !(b > 0.0 && b <= n as f64)) {
            return Err(Error::Config(format!("every budget in nb_grid must lie in (0, {n}]")));
        }
        let problem = match (self.get("problem"), family_problem) {
            (None, Some(p)) => p,
            _ => self.problem(dim)?,
        };
        let mut cfg = ExperimentConfig::new(data, problem, nb_grid);
        cfg.methods = methods;
        cfg.trials = self.int("trials", 1000) as usize;
        cfg.alpha = self.alpha()?;
        cfg.tau = self.tau_policy()?;
        cfg.seq_tau = self.seq_tau();
        cfg.batch_size = self.batch_size().unwrap_or(usize::MAX);
        cfg.flush_period = self.flush_period();
        cfg.truth = match self.get("truth").unwrap_or("full-pool") {
            "full-pool" => TruthMode::FullPool,
            "population" => TruthMode::Population,
            other => return Err(bad("truth", other, "full-pool or population")),
        };
        cfg.seed = self.seed();
        cfg.y_range = self.y_range();
        cfg.grid_size = self.grid_size();
        if cfg.trials == 0 {
            return Err(Error::Config("`trials` must be positive".into()));
        }
        Ok(cfg)
    }
}

fn check_value(key: &str, value: &str, kind: Kind) -> Result<()> {
    let float = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    let ok = match kind {
        Kind::Float => float(value).is_some(),
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Text => !value.is_empty(),
        Kind::FloatList => split_list(value).all(|s| float(s).is_some()) && split_list(value).next().is_some(),
        Kind::TextList => split_list(value).next().is_some(),
        Kind::OptFloat => value == "none" || float(value).is_some(),
        Kind::OptInt => value == "none" || value.parse::<u64>().is_ok(),
    };
    if ok {
        return Ok(());
    }
    let what = match kind {
        Kind::Float => "a finite number",
        Kind::Int => "a nonnegative integer",
        Kind::Text => "a nonempty value",
        Kind::FloatList => "a comma-separated list of numbers",
        Kind::TextList => "a comma-separated list",
        Kind::OptFloat => "a number or `none`",
        Kind::OptInt => "an integer or `none`",
    };
    Err(bad(key, value, what))
}
