//! Monte-Carlo comparison over a budget grid: widths, coverage, and the
//! share of labels active sampling saves at equal width.

use active_inference::harness::{
    run_trials, savings_table, summarize, uniform_grid, DataSource, ExperimentConfig, ModelSource, SyntheticKind,
    SyntheticSpec, TruthMode,
};
use active_inference::losses::ProblemSpec;
use active_inference::report::Method;

fn main() -> active_inference::Result<()> {
    let kind = SyntheticKind::HeteroLinear { theta: vec![1.0, 2.0], noise_base: 0.2, noise_slope: 1.5 };
    let data = DataSource::Synthetic { spec: SyntheticSpec::new(kind, 2000), model: ModelSource::Oracle };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::mean(), uniform_grid(100.0, 1000.0, 10));
    cfg.trials = 200;
    cfg.truth = TruthMode::Population;
    cfg.seed = 4;

    let (_, results) = run_trials(&cfg)?;
    let rows = summarize(&cfg, &results);
    println!("{:<10} {:>7} {:>10} {:>9}", "method", "n_b", "width", "coverage");
    for r in &rows {
        println!("{:<10} {:>7.0} {:>10.4} {:>9.3}", r.method.name(), r.n_b, r.mean_width, r.coverage);
    }
    println!();
    for (base, s) in savings_table(&rows, Method::ActiveBatch, &[Method::Ppi, Method::Classical])? {
        match s.save_pct {
            Some(p) => println!("vs {:<9} n_b {:>6.0}: {:>5.1}% fewer labels", base.name(), s.n_b, p),
            None => println!("vs {:<9} n_b {:>6.0}: outside active range", base.name(), s.n_b),
        }
    }
    Ok(())
}
