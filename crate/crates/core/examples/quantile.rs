//! Median of an outcome from a noisy proxy, with weighted pinball loss and a
//! kernel density estimate for the interval.

use active_inference::batch::{active_batch_report, classical_report};
use active_inference::data::{Budget, RngSpec};
use active_inference::harness::{gen_synthetic, pool_uncertainty, SyntheticKind, SyntheticSpec};
use active_inference::sampling::{GlmDirection, SamplingPlan};

fn main() -> active_inference::Result<()> {
    let spec = SyntheticSpec::new(SyntheticKind::QuantileTarget { mu: 1.0, q: 0.5, noise: 0.5 }, 3000);
    let (pool, theta_star) = gen_synthetic(&spec, RngSpec::new(2, 0))?;
    let problem = spec.problem()?;
    let budget = Budget::new(300.0, pool.len())?;

    let u = pool_uncertainty(&pool, &GlmDirection::Identity)?;
    let plan = SamplingPlan::from_uncertainty(&u, budget, 0.5, RngSpec::new(2, 1))?;
    let active = active_batch_report(&pool, &plan, &pool.reveal(&plan.xi), &problem, 0.1)?;
    let uniform = SamplingPlan::uniform(budget, RngSpec::new(2, 2));
    let classical = classical_report(&pool, &uniform.xi, &pool.reveal(&uniform.xi), &problem, 0.1)?;

    println!("population median {:.4}", theta_star[0]);
    for r in [&active, &classical] {
        let ci = r.interval(0).unwrap();
        println!("{:<10} {:.4}  [{:.4}, {:.4}]", r.method.name(), r.theta_hat[0], ci.lo, ci.hi);
    }
    Ok(())
}
