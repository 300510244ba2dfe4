//! Odds ratio between two groups, each with its own share of the budget.

use active_inference::composite::{group_membership, odds_ratio, odds_ratio_estimate, two_group_plan};
use active_inference::data::{Budget, Example, Pool, RngSpec};
use rand::Rng;

fn main() -> active_inference::Result<()> {
    let mut rng = RngSpec::new(21, 0).rng();
    // x0 marks the group; x1 is a score the model uses.
    let examples: Vec<Example> = (0..4000)
        .map(|i| {
            let g = (i % 2) as f64;
            let s: f64 = rng.random_range(-1.0..1.0);
            let p = 1.0 / (1.0 + (-(0.8 * g - 0.3 + 1.5 * s)).exp());
            let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            Example::new(vec![g, s]).with_label(y).with_prediction(p).with_probs(vec![1.0 - p, p])
        })
        .collect();
    let pool = Pool::new(examples)?;
    let group = group_membership(&pool, 0)?;

    let plan = two_group_plan(&pool, &group, Budget::new(600.0, pool.len())?, 0.5, RngSpec::new(21, 1))?;
    let est = odds_ratio_estimate(&pool, &group, &plan, &pool.reveal(&plan.xi), 0.1)?;

    let mean = |g: bool| {
        let ys: Vec<f64> = pool.iter().zip(&group).filter(|(_, &m)| m == g).map(|(e, _)| e.y.unwrap()).collect();
        ys.iter().sum::<f64>() / ys.len() as f64
    };
    println!("full-pool odds ratio {:.3}", odds_ratio(mean(true), mean(false))?);
    println!("estimate {:.3}  [{:.3}, {:.3}]  from {} labels", est.theta_hat, est.lo, est.hi, plan.n_lab);
    println!("group means: {:.3} vs {:.3}", est.inputs.mu1_hat, est.inputs.mu0_hat);
    Ok(())
}
