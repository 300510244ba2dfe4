//! Finite-sample interval for a bounded mean by betting, next to the Wald
//! interval on the same draws, plus its time-uniform version.

use active_inference::batch::{active_batch_report, active_betting_report, batch_increments};
use active_inference::betting::{confidence_sequence, increment_bounds};
use active_inference::data::{Budget, RngSpec};
use active_inference::harness::{gen_synthetic, pool_uncertainty, SyntheticKind, SyntheticSpec};
use active_inference::losses::ProblemSpec;
use active_inference::sampling::{GlmDirection, SamplingPlan};

fn main() -> active_inference::Result<()> {
    let spec = SyntheticSpec::new(SyntheticKind::BinaryResponse { a: 0.5, b: 2.0 }, 2000);
    let (pool, theta_star) = gen_synthetic(&spec, RngSpec::new(8, 0))?;
    let u = pool_uncertainty(&pool, &GlmDirection::Identity)?;
    let plan = SamplingPlan::from_uncertainty(&u, Budget::new(400.0, pool.len())?, 0.5, RngSpec::new(8, 1))?;
    let labels = pool.reveal(&plan.xi);

    let wald = active_batch_report(&pool, &plan, &labels, &ProblemSpec::mean(), 0.1)?;
    let bet = active_betting_report(&pool, &plan, &labels, (0.0, 1.0), 0.1, 1000)?;
    println!("theta* = {:.4}", theta_star[0]);
    for r in [&wald, &bet] {
        let ci = r.interval(0).unwrap();
        println!("{:<15} [{:.4}, {:.4}]  width {:.4}", r.method.name(), ci.lo, ci.hi, ci.width());
    }

    let pi_min = plan.pi.iter().copied().fold(1.0, f64::min);
    let bounds = increment_bounds(0.0, 1.0, pi_min)?;
    let cs = confidence_sequence(&batch_increments(&pool, &plan, &labels)?, &bounds, 0.1, 500)?;
    for t in [100, 500, 1000, 2000] {
        let (lo, hi) = cs[t - 1];
        println!("after {t:>4} items: [{lo:.4}, {hi:.4}]");
    }
    Ok(())
}
