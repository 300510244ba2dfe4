//! Choose the mixing weight τ on historical data, then compare interval
//! widths at the tuned and default values.

use active_inference::batch::active_batch_report;
use active_inference::data::{Budget, RngSpec};
use active_inference::harness::{prepare, DataSource, ExperimentConfig, ModelSource, SyntheticKind, SyntheticSpec, TauPolicy};
use active_inference::losses::ProblemSpec;
use active_inference::predictors::LearnerKind;
use active_inference::sampling::{default_tau_grid, SamplingPlan, DEFAULT_TAU};

fn main() -> active_inference::Result<()> {
    let kind = SyntheticKind::HeteroLinear { theta: vec![0.0, 1.0], noise_base: 0.1, noise_slope: 1.0 };
    let model = ModelSource::Learned { n_hist: 400, learner: LearnerKind::ridge(), error_learner: LearnerKind::KNearest { k: 25 } };
    let data = DataSource::Synthetic { spec: SyntheticSpec::new(kind, 2000), model };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::mean(), vec![200.0]);
    cfg.tau = TauPolicy::Tuned(default_tau_grid());
    let exp = prepare(&cfg)?;
    println!("tuned tau = {}", exp.tau);

    let budget = Budget::new(200.0, exp.pool.len())?;
    for (name, tau) in [("tuned", exp.tau), ("default", DEFAULT_TAU), ("uniform", 1.0)] {
        let mut widths = Vec::new();
        for r in 0..200 {
            let plan = SamplingPlan::from_uncertainty(&exp.u, budget, tau, RngSpec::new(9, r))?;
            let rep = active_batch_report(&exp.pool, &plan, &exp.pool.reveal(&plan.xi), &cfg.spec, 0.1)?;
            widths.push(rep.interval(0).unwrap().width());
        }
        println!("{name:<8} tau {tau:.2}: mean width {:.4}", widths.iter().sum::<f64>() / widths.len() as f64);
    }
    Ok(())
}
