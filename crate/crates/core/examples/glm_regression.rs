//! Linear regression with heteroscedastic noise: sandwich intervals for each
//! coefficient, with sampling aimed at the slope.

use active_inference::batch::active_batch_report;
use active_inference::data::{Budget, RngSpec};
use active_inference::harness::{full_pool_estimate, gen_synthetic, plug_in_direction, pool_uncertainty, SyntheticKind, SyntheticSpec};
use active_inference::losses::ProblemSpec;
use active_inference::sampling::SamplingPlan;

fn main() -> active_inference::Result<()> {
    let kind = SyntheticKind::HeteroLinear { theta: vec![1.0, 2.0], noise_base: 0.2, noise_slope: 1.5 };
    let (pool, theta_star) = gen_synthetic(&SyntheticSpec::new(kind, 2000), RngSpec::new(5, 0))?;
    let problem = ProblemSpec::linear_regression(2, 1)?;

    // Uncertainty is err(x) · |xᵀh| with h = Ĥ⁻¹e_1 from a plug-in fit on predictions.
    let direction = plug_in_direction(&pool, &problem)?;
    let u = pool_uncertainty(&pool, &direction)?;
    let plan = SamplingPlan::from_uncertainty(&u, Budget::new(300.0, pool.len())?, 0.5, RngSpec::new(5, 1))?;
    let report = active_batch_report(&pool, &plan, &pool.reveal(&plan.xi), &problem, 0.1)?;

    let full = full_pool_estimate(&pool, &problem)?;
    println!("labels used: {} of {}", report.n_lab, pool.len());
    for ci in &report.intervals {
        let j = ci.coordinate;
        println!(
            "theta[{j}]: estimate {:.4}  [{:.4}, {:.4}]  population {:.1}  full-pool {:.4}",
            report.theta_hat[j], ci.lo, ci.hi, theta_star[j], full[j]
        );
    }
    println!("covariance:\n{:.5}", report.sigma_hat);
    Ok(())
}
