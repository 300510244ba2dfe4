use active_inference::betting::capital_process;
use active_inference::composite::{group_membership, odds_ratio, odds_ratio_estimate, two_group_plan};
use active_inference::data::{Budget, Example, Pool, RngSpec};
use active_inference::harness::{
    run_trials, summarize, uniform_grid, write_widths, DataSource, ExperimentConfig, ModelSource, SyntheticKind,
    SyntheticSpec, TruthMode,
};
use active_inference::losses::ProblemSpec;
use active_inference::report::Method;
use rand::Rng;

fn hmean(trials: usize, seed: u64) -> ExperimentConfig {
    let kind = SyntheticKind::HeteroLinear { theta: vec![1.0, 2.0], noise_base: 0.2, noise_slope: 1.5 };
    let data = DataSource::Synthetic { spec: SyntheticSpec::new(kind, 2000), model: ModelSource::Oracle };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::mean(), uniform_grid(100.0, 1000.0, 5));
    cfg.truth = TruthMode::Population;
    cfg.trials = trials;
    cfg.seed = seed;
    cfg
}

fn widths_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    let (_, res) = run_trials(cfg).unwrap();
    let mut buf = Vec::new();
    write_widths(&mut buf, "# h", &summarize(cfg, &res)).unwrap();
    buf
}

#[test]
fn active_narrower_than_classical_and_widths_shrink() {
    let cfg = hmean(200, 1);
    let (_, res) = run_trials(&cfg).unwrap();
    assert!(res.failures.is_empty());
    let rows = summarize(&cfg, &res);
    let row = |m: Method, n_b: f64| rows.iter().find(|r| r.method == m && r.n_b == n_b).unwrap().clone();
    for &n_b in &cfg.nb_grid {
        assert!(row(Method::Classical, n_b).mean_width > row(Method::ActiveBatch, n_b).mean_width, "n_b {n_b}");
    }
    for m in [Method::ActiveBatch, Method::Ppi, Method::Classical] {
        for w in cfg.nb_grid.windows(2) {
            let (a, b) = (row(m, w[0]), row(m, w[1]));
            let slack = 3.0 * (a.width_se.powi(2) + b.width_se.powi(2)).sqrt();
            assert!(b.mean_width <= a.mean_width + slack, "{m:?} at {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn same_seed_gives_identical_widths() {
    let cfg = hmean(20, 9);
    assert_eq!(widths_bytes(&cfg), widths_bytes(&cfg));
    let one = hmean(1, 9);
    assert_eq!(widths_bytes(&one), widths_bytes(&one));
    let other = hmean(20, 10);
    assert_ne!(widths_bytes(&cfg), widths_bytes(&other));
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = hmean(30, 3);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| widths_bytes(&cfg))
    };
    assert_eq!(run(1), run(4));
}

// P(Y = 1 | g) when Y ~ Bern(σ(c + b s)) with s ~ U(-1, 1).
fn group_mean(c: f64, b: f64) -> f64 {
    let softplus = |v: f64| if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() };
    (softplus(c + b) - softplus(c - b)) / (2.0 * b)
}

#[test]
fn odds_ratio_interval_covers_population_ratio() {
    let (slope, shift, offset) = (1.5, 0.8, -0.3);
    let truth = odds_ratio(group_mean(offset + shift, slope), group_mean(offset, slope)).unwrap();
    let trials = 1000;
    let mut covered = 0;
    for t in 0..trials {
        let mut rng = RngSpec::new(500 + t, 0).rng();
        let examples: Vec<Example> = (0..2000)
            .map(|i| {
                let g = (i % 2) as f64;
                let s: f64 = rng.random_range(-1.0..1.0);
                let p = 1.0 / (1.0 + (-(shift * g + offset + slope * s)).exp());
                let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                Example::new(vec![g, s]).with_label(y).with_prediction(p).with_probs(vec![1.0 - p, p])
            })
            .collect();
        let pool = Pool::new(examples).unwrap();
        let group = group_membership(&pool, 0).unwrap();
        let budget = Budget::new(400.0, pool.len()).unwrap();
        let plan = two_group_plan(&pool, &group, budget, 0.5, RngSpec::new(500 + t, 1)).unwrap();
        let est = odds_ratio_estimate(&pool, &group, &plan, &pool.reveal(&plan.xi), 0.1).unwrap();
        if est.lo <= truth && truth <= est.hi {
            covered += 1;
        }
    }
    let cov = covered as f64 / trials as f64;
    assert!((0.85..=0.95).contains(&cov), "coverage {cov}");
}

#[test]
fn capital_at_true_mean_rarely_crosses_threshold() {
    let alpha = 0.1;
    let m = 0.3;
    let runs = 500;
    let mut below = 0;
    for r in 0..runs {
        let mut rng = RngSpec::new(r, 7).rng();
        let z: Vec<f64> = (0..400).map(|_| if rng.random::<f64>() < m { 1.0 } else { 0.0 }).collect();
        let path = capital_process(&z, m, alpha);
        if path.wealth.iter().all(|&w| w < 1.0 / alpha) {
            below += 1;
        }
    }
    let freq = below as f64 / runs as f64;
    assert!(freq >= 0.9, "frequency {freq}");
}
