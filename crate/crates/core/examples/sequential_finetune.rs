//! Stream a pool one item at a time, fine-tuning a logistic model on every
//! 100 new labels.

use active_inference::data::{Budget, RngSpec};
use active_inference::harness::{gen_synthetic, SyntheticKind, SyntheticSpec};
use active_inference::losses::ProblemSpec;
use active_inference::predictors::{LearnerKind, Observation, Predictor};
use active_inference::report::Method;
use active_inference::sequential::{pool_oracle, run_sequential, sequential_report, SeqConfig, SeqModel, UncertaintySource};

fn main() -> active_inference::Result<()> {
    let kind = SyntheticKind::BinaryResponse { a: 0.0, b: 2.0 };
    let (pool, theta_star) = gen_synthetic(&SyntheticSpec::new(kind.clone(), 2000), RngSpec::new(3, 0))?;
    let (hist, _) = gen_synthetic(&SyntheticSpec::new(kind, 20), RngSpec::new(3, 1))?;
    let obs: Vec<Observation> = hist.iter().map(|e| Observation::new(e.x.clone(), e.y.unwrap())).collect();
    let model = Predictor::fit(LearnerKind::logistic(), &obs)?;

    let mut cfg = SeqConfig::new(Budget::new(300.0, pool.len())?, ProblemSpec::mean(), UncertaintySource::Classification);
    cfg.batch_size = Some(100);
    cfg.flush_period = Some(100.0);

    let trace = run_sequential(&pool, SeqModel::Learner(model), cfg, RngSpec::new(3, 2), pool_oracle)?;
    trace.check_predictability()?;
    let report = sequential_report(&trace, &ProblemSpec::mean(), 0.1, Method::ActiveSeqFinetune)?;
    let ci = report.interval(0).unwrap();

    let versions = trace.steps.last().map_or(0, |s| s.version);
    let path = trace.label_path();
    let pool_mean = pool.iter().map(|e| e.y.unwrap()).sum::<f64>() / pool.len() as f64;
    println!("theta* = {:.4}, full-pool mean {pool_mean:.4}", theta_star[0]);
    println!("estimate {:.4}  [{:.4}, {:.4}]", report.theta_hat[0], ci.lo, ci.hi);
    println!("labels {} (budget 300), model versions {}", trace.n_lab(), versions + 1);
    for t in [500, 1000, 1500, 2000] {
        println!("  after {t:>4} steps: {:>3} labels (pace {:.0})", path[t - 1], t as f64 * 300.0 / 2000.0);
    }
    Ok(())
}
