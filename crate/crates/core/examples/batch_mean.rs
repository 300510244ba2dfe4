//! Estimate the mean of a binary outcome, labeling 10% of a pool.
//!
//! Compares the active rule against uniform sampling (PPI) and the
//! labeled-only baseline on the same pool.

use active_inference::batch::{active_batch_report, classical_report, ppi_report};
use active_inference::data::{Budget, RngSpec};
use active_inference::harness::{gen_synthetic, SyntheticKind, SyntheticSpec};
use active_inference::predictors::classification_uncertainty;
use active_inference::sampling::{SamplingPlan, DEFAULT_TAU};

fn main() -> active_inference::Result<()> {
    let spec = SyntheticSpec::new(SyntheticKind::BinaryResponse { a: 0.0, b: 3.0 }, 2000);
    let (pool, theta_star) = gen_synthetic(&spec, RngSpec::new(11, 0))?;
    let problem = spec.problem()?;
    let budget = Budget::new(200.0, pool.len())?;

    let u: Vec<f64> = pool
        .iter()
        .map(|e| classification_uncertainty(e.probs.as_deref().unwrap()))
        .collect::<active_inference::Result<_>>()?;
    let plan = SamplingPlan::from_uncertainty(&u, budget, DEFAULT_TAU, RngSpec::new(11, 1))?;
    let labels = pool.reveal(&plan.xi);
    let active = active_batch_report(&pool, &plan, &labels, &problem, 0.1)?;

    let uniform = SamplingPlan::uniform(budget, RngSpec::new(11, 2));
    let labels_u = pool.reveal(&uniform.xi);
    let ppi = ppi_report(&pool, &uniform.xi, &labels_u, &problem, budget, 0.1)?;
    let classical = classical_report(&pool, &uniform.xi, &labels_u, &problem, 0.1)?;

    println!("theta* = {:.4}  (eta = {:.3}, expected labels {:.1})", theta_star[0], plan.eta, plan.expected_labels());
    for r in [&active, &ppi, &classical] {
        let ci = r.interval(0).unwrap();
        println!(
            "{:<10} estimate {:.4}  [{:.4}, {:.4}]  width {:.4}  labels {}",
            r.method.name(),
            r.theta_hat[0],
            ci.lo,
            ci.hi,
            ci.width(),
            r.n_lab
        );
    }
    Ok(())
}
