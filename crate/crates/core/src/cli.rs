//! Command-line front end: `plan`, `infer`, `simulate`, `sequential` and
//! `budget-save`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::batch::{active_batch_report, active_betting_report};
use crate::config::RunConfig;
use crate::data::{attach_predictions, csv_reader, load_pool, load_predictions, map_csv_error, parse_cell, Budget, Pool, RngSpec, Schema};
use crate::error::{Error, Result};
use crate::harness::{
    plug_in_direction, pool_uncertainty, read_widths, run_trials, savings_table, summarize, write_examples,
    write_savings, write_widths, TauPolicy,
};
use crate::predictors::{LearnerKind, Observation, PredictedPoint, Predictor};
use crate::report::{write_reports, InferenceReport, Method};
use crate::sampling::{tune_tau, SamplingPlan};
use crate::sequential::{run_sequential, sequential_report, SeqConfig, SeqModel, UncertaintySource};

#[derive(Debug, Parser)]
#[command(name = "active-inference", version, about = "Model-guided label collection with valid confidence intervals")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable. Dedicated flags win over these.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute labeling probabilities and draw decisions for a pool.
    Plan(PlanArgs),
    /// Estimate and report intervals from a plan and the collected labels.
    Infer(InferArgs),
    /// Monte-Carlo widths, coverage and budget savings.
    Simulate(SimulateArgs),
    /// Stream a pool through the sequential rule, using a labels file as the oracle.
    Sequential(SequentialArgs),
    /// Recompute savings from an existing widths.csv.
    BudgetSave(BudgetSaveArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Predictions file; defaults to the prediction columns of the pool file.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "n-b")]
    pub n_b: Option<f64>,
    /// A number in [0, 1], `default` or `tuned`.
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub plan: PathBuf,
    /// CSV with columns `index` and `y`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Add a betting interval row (means only; needs y_lo and y_hi).
    #[arg(long)]
    pub nonasymptotic: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory for widths.csv, savings.csv and examples.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads for the trials; outputs do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SequentialArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// CSV with columns `index` and `y`, queried when an item is selected.
    #[arg(long)]
    pub labels: PathBuf,
    /// Trace output.
    #[arg(long)]
    pub out: PathBuf,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long = "n-b")]
    pub n_b: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BudgetSaveArgs {
    #[arg(long)]
    pub widths: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "active")]
    pub active: String,
    /// Comma-separated baselines; those absent from the file are skipped.
    #[arg(long, default_value = "ppi,classical")]
    pub baselines: String,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    cfg.apply_overrides(&cli.set)?;
    match cli.command {
        Command::Plan(a) => {
            flag(&mut cfg, "n_b", a.n_b)?;
            if let Some(t) = &a.tau {
                cfg.set("tau", t)?;
            }
            flag(&mut cfg, "seed", a.seed)?;
            cmd_plan(&cfg, &a.pool, a.predictions.as_deref(), &a.out)
        }
        Command::Infer(a) => {
            flag(&mut cfg, "alpha", a.alpha)?;
            cmd_infer(&cfg, &a)
        }
        Command::Simulate(a) => {
            flag(&mut cfg, "trials", a.trials)?;
            flag(&mut cfg, "seed", a.seed)?;
            cmd_simulate(&cfg, &a.out_dir, a.threads)
        }
        Command::Sequential(a) => {
            flag(&mut cfg, "n_b", a.n_b)?;
            flag(&mut cfg, "seq_tau", a.tau)?;
            flag(&mut cfg, "seed", a.seed)?;
            flag(&mut cfg, "alpha", a.alpha)?;
            cmd_sequential(&cfg, &a)
        }
        Command::BudgetSave(a) => cmd_budget_save(&cfg, &a),
    }
}

fn flag<T: ToString>(cfg: &mut RunConfig, key: &str, v: Option<T>) -> Result<()> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn is_indexed(name: &str, prefix: char) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Column mapping from the configuration, falling back to `x0, x1, ...`,
/// `y`, `f`, `p0, p1, ...` and `err` when those columns exist.
pub fn pool_schema(cfg: &RunConfig, path: &Path, with_label: bool) -> Result<Schema> {
    let mut rdr = csv_reader(File::open(path)?);
    let header: Vec<String> = rdr.headers().map_err(map_csv_error)?.iter().map(str::to_string).collect();
    let has = |c: &str| header.iter().any(|h| h == c);
    let list = |key: &str, prefix: char| -> Vec<String> {
        match cfg.get(key) {
            Some(v) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => header.iter().filter(|h| is_indexed(h, prefix)).cloned().collect(),
        }
    };
    let covariates = list("covariates", 'x');
    if covariates.is_empty() {
        return Err(Error::Schema(format!(
            "{}: no covariate columns; name them with `covariates`",
            path.display()
        )));
    }
    let mut schema = Schema::new(covariates).probs(list("probs", 'p'));
    let named = |key: &str, default: &str| -> Option<String> {
        match cfg.get(key) {
            Some(v) => Some(v.to_string()),
            None => has(default).then(|| default.to_string()),
        }
    };
    if with_label {
        schema.label = named("label", "y");
    }
    schema.prediction = named("prediction", "f");
    schema.err = named("err", "err");
    Ok(schema)
}

fn read_pool(cfg: &RunConfig, path: &Path, predictions: Option<&Path>, with_label: bool) -> Result<Pool> {
    let pool = load_pool(path, &pool_schema(cfg, path, with_label)?)?;
    match predictions {
        None => Ok(pool),
        Some(p) => {
            let mut schema = pool_schema(cfg, p, false).unwrap_or_default();
            schema.prediction.get_or_insert_with(|| "f".into());
            attach_predictions(&pool, &load_predictions(p, &schema)?)
        }
    }
}

/// Labels keyed by pool row: a CSV with columns `index` and `y`.
pub fn read_labels(path: &Path, n: usize) -> Result<Vec<Option<f64>>> {
    let mut rdr = csv_reader(File::open(path)?);
    let header = rdr.headers().map_err(map_csv_error)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: column '{name}' not found", path.display())))
    };
    let (ci, cy) = (col("index")?, col("y")?);
    let mut out = vec![None; n];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(map_csv_error)?;
        let line = k + 2;
        let idx = rec.get(ci).unwrap_or("").parse::<usize>().map_err(|_| Error::Parse {
            line,
            message: format!("index '{}' is not a row number", rec.get(ci).unwrap_or("")),
        })?;
        if idx >= n {
            return Err(Error::Parse { line, message: format!("index {idx} outside a pool of {n}") });
        }
        if out[idx].is_some() {
            return Err(Error::Parse { line, message: format!("index {idx} labeled twice") });
        }
        out[idx] = parse_cell(rec.get(cy).unwrap_or(""), line, "y")?;
    }
    Ok(out)
}

/// Reads a plan written by `plan`: columns `index`, `pi`, `xi`.
pub fn read_plan(path: &Path) -> Result<SamplingPlan> {
    let mut rdr = csv_reader(File::open(path)?);
    let mut pi = Vec::new();
    let mut xi = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(map_csv_error)?;
        let line = k + 2;
        let num = |i: usize, name: &str| {
            parse_cell(rec.get(i).unwrap_or(""), line, name)?
                .ok_or_else(|| Error::Parse { line, message: format!("empty '{name}'") })
        };
        if num(0, "index")? as usize != pi.len() {
            return Err(Error::Parse { line, message: "plan rows must be in pool order".into() });
        }
        pi.push(num(1, "pi")?);
        xi.push(num(2, "xi")? != 0.0);
    }
    SamplingPlan::from_parts(pi, xi, f64::NAN, f64::NAN)
}

fn historical_points(cfg: &RunConfig) -> Result<Option<Pool>> {
    match cfg.get("historical") {
        None => Ok(None),
        Some(p) => {
            let path = Path::new(p);
            load_pool(path, &pool_schema(cfg, path, true)?).map(Some)
        }
    }
}

pub fn cmd_plan(cfg: &RunConfig, pool_path: &Path, predictions: Option<&Path>, out: &Path) -> Result<()> {
    let pool = read_pool(cfg, pool_path, predictions, false)?;
    let spec = cfg.problem(pool.dim())?;
    let budget = Budget::new(cfg.n_b()?, pool.len()).map_err(|e| Error::Config(e.to_string()))?;
    let direction = plug_in_direction(&pool, &spec)?;
    let u = pool_uncertainty(&pool, &direction)?;
    let tau = match cfg.tau_policy()? {
        TauPolicy::Fixed(t) => t,
        TauPolicy::Tuned(grid) => {
            let hist = historical_points(cfg)?
                .ok_or_else(|| Error::Config("`tau = tuned` needs a `historical` file".into()))?;
            let u_hist = pool_uncertainty(&hist, &direction)?;
            let pts = hist
                .iter()
                .enumerate()
                .map(|(i, e)| match (e.f, e.y) {
                    (Some(f), Some(y)) => Ok(PredictedPoint { x: e.x.clone(), f, y }),
                    (None, _) => Err(Error::MissingPrediction { index: i }),
                    (_, None) => Err(Error::MissingLabel { index: i }),
                })
                .collect::<Result<Vec<_>>>()?;
            let t = tune_tau(&pts, &u_hist, budget, &grid)?;
            info!("tuned tau = {t}");
            t
        }
    };
    let plan = SamplingPlan::from_uncertainty(&u, budget, tau, RngSpec::new(cfg.seed(), 0))?;
    if plan.uniform_fallback {
        warn!("every uncertainty is zero; using the uniform rule pi = n_b/n");
    }
    let expected = plan.expected_labels();
    if expected > budget.n_b() * (1.0 + 1e-9) {
        return Err(Error::Degenerate(format!("plan expects {expected} labels, above the budget {}", budget.n_b())));
    }
    let summary = format!("eta={} tau={} expected_n_lab={} n_lab={}", plan.eta, plan.tau, expected, plan.n_lab);
    let mut w = create(out)?;
    write!(w, "{}", cfg.preamble())?;
    writeln!(w, "# {summary}")?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["index", "pi", "xi"])?;
    for (i, (p, x)) in plan.pi.iter().zip(&plan.xi).enumerate() {
        c.write_record([i.to_string(), p.to_string(), (*x as u8).to_string()])?;
    }
    c.flush()?;
    println!("{summary}");
    Ok(())
}

pub fn cmd_infer(cfg: &RunConfig, a: &InferArgs) -> Result<()> {
    let pool = read_pool(cfg, &a.pool, a.predictions.as_deref(), false)?;
    let plan = read_plan(&a.plan)?;
    if plan.len() != pool.len() {
        return Err(Error::LengthMismatch { expected: pool.len(), got: plan.len() });
    }
    let labels = read_labels(&a.labels, pool.len())?;
    let spec = cfg.problem(pool.dim())?;
    let alpha = cfg.alpha()?;
    let mut reports = vec![active_batch_report(&pool, &plan, &labels, &spec, alpha)?];
    if a.nonasymptotic {
        let range = cfg
            .y_range()
            .ok_or_else(|| Error::Config("--nonasymptotic needs y_lo and y_hi".into()))?;
        if spec.kind() != crate::losses::LossKind::Mean {
            return Err(Error::Config("--nonasymptotic covers the mean only".into()));
        }
        reports.push(active_betting_report(&pool, &plan, &labels, range, alpha, cfg.grid_size())?);
    }
    emit_reports(cfg, a.out.as_deref(), &reports)
}

fn emit_reports(cfg: &RunConfig, out: Option<&Path>, reports: &[InferenceReport]) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write!(w, "{}", cfg.preamble())?;
            write_reports(w, reports)
        }
        None => {
            let mut w = std::io::stdout().lock();
            write!(w, "{}", cfg.preamble())?;
            write_reports(w, reports)
        }
    }
}

fn provenance(cfg: &RunConfig) -> String {
    format!("{}\n# {}", cfg.header(), cfg.echo())
}

pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path, threads: Option<usize>) -> Result<()> {
    let pool = match cfg.get("data") {
        Some("file") => {
            let p = cfg
                .get("pool")
                .ok_or_else(|| Error::Config("`data = file` needs `pool`".into()))?;
            Some(read_pool(cfg, Path::new(p), None, true)?)
        }
        _ => None,
    };
    let ecfg = cfg.experiment(pool)?;
    let run = || run_trials(&ecfg);
    let (_, results) = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    if !results.failures.is_empty() {
        warn!("{} trials failed; first: {}", results.failures.len(), results.failures[0].message);
    }
    let rows = summarize(&ecfg, &results);
    let active = [Method::ActiveBatch, Method::ActiveSeqFinetune, Method::ActiveSeq, Method::ActiveBetting]
        .into_iter()
        .find(|m| ecfg.methods.contains(m));
    let baselines: Vec<Method> = [Method::Ppi, Method::Classical]
        .into_iter()
        .filter(|m| ecfg.methods.contains(m))
        .collect();
    let savings = match active {
        Some(m) => savings_table(&rows, m, &baselines)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(out_dir)?;
    let header = provenance(cfg);
    write_widths(create(&out_dir.join("widths.csv"))?, &header, &rows)?;
    write_savings(create(&out_dir.join("savings.csv"))?, &header, &savings)?;
    write_examples(create(&out_dir.join("examples.csv"))?, &header, &ecfg, &results)?;
    info!("{} records, {} failures", results.records.len(), results.failures.len());
    Ok(())
}

pub fn cmd_sequential(cfg: &RunConfig, a: &SequentialArgs) -> Result<()> {
    let pool = read_pool(cfg, &a.pool, None, false)?;
    let labels = read_labels(&a.labels, pool.len())?;
    let spec = cfg.problem(pool.dim())?;
    let budget = Budget::new(cfg.n_b()?, pool.len()).map_err(|e| Error::Config(e.to_string()))?;
    let learner = cfg.model()?;
    let model = match learner {
        None => SeqModel::Attached,
        Some(kind) => match historical_points(cfg)? {
            Some(hist) => {
                let obs = hist
                    .iter()
                    .enumerate()
                    .map(|(i, e)| e.y.map(|y| Observation::new(e.x.clone(), y)).ok_or(Error::MissingLabel { index: i }))
                    .collect::<Result<Vec<_>>>()?;
                SeqModel::Learner(Predictor::fit(kind, &obs)?)
            }
            None => SeqModel::Learner(Predictor::new(kind)),
        },
    };
    let all_probs = pool.iter().all(|e| e.probs.is_some());
    let uncertainty = match cfg.uncertainty()? {
        "classification" => UncertaintySource::Classification,
        "err" => UncertaintySource::PoolErr,
        "error-model" => UncertaintySource::ErrorModel(LearnerKind::ridge()),
        _ if all_probs || matches!(learner, Some(LearnerKind::Logistic { .. })) => UncertaintySource::Classification,
        _ if learner.is_some() => UncertaintySource::ErrorModel(LearnerKind::ridge()),
        _ => UncertaintySource::PoolErr,
    };
    let mut scfg = SeqConfig::new(budget, spec.clone(), uncertainty);
    scfg.tau = cfg.seq_tau();
    scfg.flush_period = cfg.flush_period();
    scfg.freeze_after = cfg.freeze_after();
    if learner.is_some() {
        scfg.batch_size = cfg.batch_size();
    }
    if spec.is_glm() && pool.iter().all(|e| e.f.is_some()) {
        scfg.direction = Some(plug_in_direction(&pool, &spec)?);
    }
    let finetune = scfg.batch_size.is_some();
    let oracle = |i: usize, _: &crate::data::Example| labels[i].ok_or_else(|| format!("no label for row {i}"));
    let outcome = run_sequential(&pool, model, scfg, RngSpec::new(cfg.seed(), 4), oracle);
    let (trace, failure) = match outcome {
        Ok(t) => (t, None),
        Err(abort) => (abort.partial, Some(abort.source)),
    };
    let mut w = create(&a.out)?;
    write!(w, "{}", cfg.preamble())?;
    trace.write_csv(w)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let method = if finetune { Method::ActiveSeqFinetune } else { Method::ActiveSeq };
    let report = sequential_report(&trace, &spec, cfg.alpha()?, method)?;
    emit_reports(cfg, a.report.as_deref(), &[report])
}

pub fn cmd_budget_save(cfg: &RunConfig, a: &BudgetSaveArgs) -> Result<()> {
    let rows = read_widths(File::open(&a.widths)?)?;
    let active: Method = a.active.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let baselines = a
        .baselines
        .split(',')
        .map(|s| s.trim().parse::<Method>())
        .collect::<Result<Vec<_>>>()?;
    let present: Vec<Method> = baselines.into_iter().filter(|b| rows.iter().any(|r| r.method == *b)).collect();
    if !rows.iter().any(|r| r.method == active) {
        return Err(Error::Schema(format!("{}: no rows for method {active}", a.widths.display())));
    }
    let table = savings_table(&rows, active, &present)?;
    write_savings(create(&a.out)?, &provenance(cfg), &table)
}
