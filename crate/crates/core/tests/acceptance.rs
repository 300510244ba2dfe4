//! Acceptance run: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::time::Instant;

use active_inference::batch::{active_batch_estimate, active_batch_report, analytic_mean_variance, ppi_estimate, DiscreteStratum};
use active_inference::data::{Budget, Example, Pool, RngSpec};
use active_inference::harness::{
    default_grid, gen_synthetic, pool_uncertainty, run_trials, savings_table, summarize, write_widths, DataSource,
    ExperimentConfig, ModelSource, SyntheticKind, SyntheticSpec, TrialResults, TruthMode,
};
use active_inference::losses::{loss, loss_grad, loss_hessian, ProblemSpec};
use active_inference::predictors::{LearnerKind, Observation, Predictor};
use active_inference::report::Method;
use active_inference::sampling::{calibrate_eta, GlmDirection, SamplingPlan};
use active_inference::sequential::{pool_oracle, run_sequential, sequential_estimate, SeqConfig, SeqModel, UncertaintySource};
use nalgebra::DVector;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn coverage(res: &TrialResults, method: Method) -> f64 {
    let r: Vec<_> = res.records.iter().filter(|r| r.method == method).collect();
    r.iter().filter(|r| r.covered).count() as f64 / r.len() as f64
}

// Mean labels per (method, n_b) against n_b + 3 standard errors.
fn budget_violations(res: &TrialResults) -> Vec<String> {
    let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in &res.records {
        groups.entry((r.method.name().to_string(), r.n_b.to_bits())).or_default().push(r.n_lab as f64);
    }
    let mut bad = Vec::new();
    for ((m, nb), v) in groups {
        let n_b = f64::from_bits(nb);
        let (mean, sd) = if v.len() > 1 { mean_sd(&v) } else { (v[0], 0.0) };
        if mean > n_b + 3.0 * sd / (v.len() as f64).sqrt() {
            bad.push(format!("{m}@{n_b}: {mean:.1}"));
        }
    }
    bad
}

fn binary_config(b: f64, n_b: f64, trials: usize) -> ExperimentConfig {
    let spec = SyntheticSpec::new(SyntheticKind::BinaryResponse { a: 0.0, b }, 2000);
    let data = DataSource::Synthetic { spec, model: ModelSource::Oracle };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::mean(), vec![n_b]);
    cfg.methods = vec![Method::ActiveBatch];
    cfg.trials = trials;
    cfg.tau = active_inference::harness::TauPolicy::Fixed(0.5);
    cfg.seed = 1;
    cfg
}

fn c1(budgets: &mut Vec<TrialResults>) -> Outcome {
    let start = Instant::now();
    let cfg = binary_config(1.0, 200.0, 1000);
    let (_, res) = run_trials(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let cov = coverage(&res, Method::ActiveBatch);
    let pass = (0.87..=0.93).contains(&cov) && secs <= 120.0 && res.failures.is_empty();
    budgets.push(res);
    outcome(pass, format!("coverage {cov:.3} in [0.87, 0.93], {secs:.1} s"))
}

fn c2(budgets: &mut Vec<TrialResults>) -> Outcome {
    let kind = SyntheticKind::HeteroLinear { theta: vec![1.0, 2.0], noise_base: 0.5, noise_slope: 0.5 };
    let data = DataSource::Synthetic { spec: SyntheticSpec::new(kind, 2000), model: ModelSource::Oracle };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::linear_regression(2, 0).unwrap(), vec![300.0]);
    cfg.methods = vec![Method::ActiveBatch];
    cfg.trials = 1000;
    cfg.seed = 2;
    let (_, res) = run_trials(&cfg).unwrap();
    let cov = coverage(&res, Method::ActiveBatch);
    let pass = (0.86..=0.94).contains(&cov) && res.failures.is_empty();
    budgets.push(res);
    outcome(pass, format!("coverage {cov:.3} in [0.86, 0.94]"))
}

fn c3(budgets: &mut Vec<TrialResults>) -> Outcome {
    let kind = SyntheticKind::BinaryResponse { a: 0.0, b: 1.0 };
    let model = ModelSource::Learned { n_hist: 10, learner: LearnerKind::logistic(), error_learner: LearnerKind::ridge() };
    let data = DataSource::Synthetic { spec: SyntheticSpec::new(kind, 2000), model };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::mean(), vec![300.0]);
    cfg.methods = vec![Method::ActiveSeqFinetune];
    cfg.trials = 100;
    cfg.batch_size = 100;
    cfg.seq_tau = 0.5;
    cfg.flush_period = Some(100.0);
    cfg.seed = 3;
    let (_, res) = run_trials(&cfg).unwrap();
    let cov = coverage(&res, Method::ActiveSeqFinetune);
    let pass = (0.83..=0.97).contains(&cov) && res.failures.is_empty();
    budgets.push(res);
    outcome(pass, format!("coverage {cov:.3} in [0.83, 0.97]"))
}

fn c4() -> Outcome {
    let spec = SyntheticSpec::new(SyntheticKind::BinaryResponse { a: 0.3, b: 2.0 }, 300);
    let (pool, _) = gen_synthetic(&spec, RngSpec::new(40, 0)).unwrap();
    let truth = pool.iter().map(|e| e.y.unwrap()).sum::<f64>() / pool.len() as f64;
    let u = pool_uncertainty(&pool, &GlmDirection::Identity).unwrap();
    let budget = Budget::new(60.0, pool.len()).unwrap();
    let batch: Vec<f64> = (0..10_000u64)
        .map(|r| {
            let plan = SamplingPlan::from_uncertainty(&u, budget, 0.5, RngSpec::new(r, 41)).unwrap();
            active_batch_estimate(&pool, &plan, &pool.reveal(&plan.xi), &ProblemSpec::mean()).unwrap()[0]
        })
        .collect();
    let (bm, bsd) = mean_sd(&batch);
    let bz = (bm - truth).abs() / (bsd / (batch.len() as f64).sqrt());

    let hist: Vec<Observation> = gen_synthetic(&SyntheticSpec::new(spec.kind.clone(), 20), RngSpec::new(42, 0))
        .unwrap()
        .0
        .iter()
        .map(|e| Observation::new(e.x.clone(), e.y.unwrap()))
        .collect();
    let learner = Predictor::fit(LearnerKind::logistic(), &hist).unwrap();
    let seq: Vec<f64> = (0..2000u64)
        .map(|r| {
            let mut cfg = SeqConfig::new(budget, ProblemSpec::mean(), UncertaintySource::Classification);
            cfg.batch_size = Some(50);
            cfg.flush_period = Some(100.0);
            let trace = run_sequential(&pool, SeqModel::Learner(learner.clone()), cfg, RngSpec::new(r, 43), pool_oracle).unwrap();
            sequential_estimate(&trace, &ProblemSpec::mean()).unwrap()[0]
        })
        .collect();
    let (sm, ssd) = mean_sd(&seq);
    let sz = (sm - truth).abs() / (ssd / (seq.len() as f64).sqrt());
    outcome(bz <= 4.0 && sz <= 4.0, format!("batch |bias|/SE {bz:.2}, sequential |bias|/SE {sz:.2} (limit 4)"))
}

fn c5() -> Outcome {
    // X in {0, 1}, Y | X Bernoulli, fixed predictions and probabilities.
    let px = [0.4, 0.6];
    let py = [0.2, 0.7];
    let f = [0.3, 0.6];
    let pi = [0.25, 0.5];
    let n = 200;
    let strata: Vec<DiscreteStratum> = (0..2)
        .map(|k| DiscreteStratum { prob: px[k], pi: pi[k], f: f[k], y_mean: py[k], y_second_moment: py[k] })
        .collect();
    let analytic = analytic_mean_variance(&strata, n).unwrap();

    // Exact enumeration of one increment f + (y - f) ξ / π.
    let (mut m1, mut m2) = (0.0, 0.0);
    for k in 0..2 {
        for (y, qy) in [(1.0, py[k]), (0.0, 1.0 - py[k])] {
            for (xi, qx) in [(1.0, pi[k]), (0.0, 1.0 - pi[k])] {
                let d = f[k] + (y - f[k]) * xi / pi[k];
                let w = px[k] * qy * qx;
                m1 += w * d;
                m2 += w * d * d;
            }
        }
    }
    let exact = (m2 - m1 * m1) / n as f64;

    let reps = 20_000u64;
    let est: Vec<f64> = (0..reps)
        .map(|r| {
            let mut rng = RngSpec::new(r, 50).rng();
            let ex: Vec<Example> = (0..n)
                .map(|_| {
                    let k = usize::from(rng.random::<f64>() >= px[0]);
                    let y = if rng.random::<f64>() < py[k] { 1.0 } else { 0.0 };
                    Example::new(vec![k as f64]).with_label(y).with_prediction(f[k])
                })
                .collect();
            let pool = Pool::new(ex).unwrap();
            let p: Vec<f64> = pool.iter().map(|e| pi[e.x[0] as usize]).collect();
            let xi: Vec<bool> = p.iter().map(|&q| rng.random::<f64>() < q).collect();
            let plan = SamplingPlan::from_parts(p, xi, f64::NAN, 0.0).unwrap();
            active_batch_estimate(&pool, &plan, &pool.reveal(&plan.xi), &ProblemSpec::mean()).unwrap()[0]
        })
        .collect();
    let (_, sd) = mean_sd(&est);
    let mc = sd * sd;
    let rel_mc = (mc - analytic).abs() / analytic;
    let rel_exact = (exact - analytic).abs() / analytic;
    outcome(
        rel_mc <= 0.05 && rel_exact <= 1e-12,
        format!("Monte-Carlo vs analytic {:.2}% (limit 5%), enumeration vs analytic {rel_exact:.1e}", 100.0 * rel_mc),
    )
}

// Grid search over budget-feasible rules on three strata, against the
// calibrated rule π ∝ √E[(Y - f)² | X].
fn grid_check(resid2: [f64; 3], rate: f64) -> (bool, bool, String) {
    let probs = [0.2, 0.3, 0.5];
    let strata = |pi: [f64; 3]| -> Vec<DiscreteStratum> {
        (0..3)
            .map(|k| DiscreteStratum { prob: probs[k], pi: pi[k], f: 0.0, y_mean: 0.0, y_second_moment: resid2[k] })
            .collect()
    };
    let var = |pi: [f64; 3]| analytic_mean_variance(&strata(pi), 100).unwrap();

    // Items in proportion to the strata.
    let counts = [2usize, 3, 5];
    let u: Vec<f64> = (0..3).flat_map(|k| std::iter::repeat_n(resid2[k].sqrt(), counts[k])).collect();
    let (_, cal) = calibrate_eta(&u, Budget::new(rate * u.len() as f64, u.len()).unwrap()).unwrap();
    let rule = [cal[0], cal[2], cal[5]];

    let step = 0.01;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for a in 1..=100 {
        for b in 1..=100 {
            for c in 1..=100 {
                let pi = [a as f64 * step, b as f64 * step, c as f64 * step];
                if (0..3).map(|k| probs[k] * pi[k]).sum::<f64>() > rate + 1e-12 {
                    continue;
                }
                let v = var(pi);
                if v < best.0 {
                    best = (v, pi);
                }
            }
        }
    }
    let near = (0..3).all(|k| (best.1[k] - rule[k]).abs() <= step + 1e-12);
    let v_rule = var(rule);
    let beats = v_rule <= best.0 * (1.0 + 1e-12);
    (near, beats, format!("rule {rule:.3?} vs grid {:.2?}, variance {v_rule:.6} vs {:.6}", best.1, best.0))
}

fn c6() -> Outcome {
    let (near, beats_on, on) = grid_check([1.0 / 16.0, 0.25, 1.0], 0.28);
    let (_, beats_off, off) = grid_check([0.04, 0.25, 1.0], 0.3);
    outcome(
        near && beats_on && beats_off,
        format!("on-grid: {on}, argmin within one step {near}; off-grid: {off}, rule beats grid {beats_off}"),
    )
}

fn c7() -> Outcome {
    let kind = SyntheticKind::HeteroLinear { theta: vec![1.0, 2.0], noise_base: 0.5, noise_slope: 0.5 };
    let (pool, _) = gen_synthetic(&SyntheticSpec::new(kind, 1000), RngSpec::new(70, 0)).unwrap();
    let budget = Budget::new(150.0, pool.len()).unwrap();
    let mut equal = true;
    for r in 0..20 {
        let plan = SamplingPlan::uniform(budget, RngSpec::new(r, 71));
        let labels = pool.reveal(&plan.xi);
        for spec in [ProblemSpec::mean(), ProblemSpec::linear_regression(2, 1).unwrap()] {
            let a = active_batch_estimate(&pool, &plan, &labels, &spec).unwrap();
            let p = ppi_estimate(&pool, &plan.xi, &labels, &spec, budget).unwrap();
            equal &= a == p;
        }
    }
    let u = pool_uncertainty(&pool, &GlmDirection::Identity).unwrap();
    let plan = SamplingPlan::from_uncertainty(&u, budget, 1.0, RngSpec::new(72, 0)).unwrap();
    let uniform = plan.pi.iter().all(|&p| p == budget.rate());
    outcome(equal && uniform, format!("active == PPI on uniform plans: {equal}; tau=1 plan uniform: {uniform}"))
}

fn c8(budgets: &mut Vec<TrialResults>) -> Outcome {
    let kind = SyntheticKind::HeteroLinear { theta: vec![1.0, 2.0], noise_base: 0.2, noise_slope: 1.5 };
    let data = DataSource::Synthetic { spec: SyntheticSpec::new(kind, 2000), model: ModelSource::Oracle };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::mean(), default_grid(2000, false));
    cfg.truth = TruthMode::Population;
    cfg.trials = 300;
    cfg.seed = 8;
    let (_, res) = run_trials(&cfg).unwrap();
    let rows = summarize(&cfg, &res);
    let row = |m: Method, n_b: f64| rows.iter().find(|r| r.method == m && r.n_b == n_b).unwrap();
    let mut broken = Vec::new();
    for &n_b in &cfg.nb_grid {
        for (lo, hi) in [(Method::ActiveBatch, Method::Ppi), (Method::Ppi, Method::Classical)] {
            let (a, b) = (row(lo, n_b), row(hi, n_b));
            let slack = 3.0 * (a.width_se.powi(2) + b.width_se.powi(2)).sqrt();
            if a.mean_width >= b.mean_width + slack {
                broken.push(format!("{}>{}@{n_b}", lo.name(), hi.name()));
            }
        }
    }
    let mid = cfg.nb_grid[cfg.nb_grid.len() / 2];
    let save = savings_table(&rows, Method::ActiveBatch, &[Method::Classical])
        .unwrap()
        .into_iter()
        .find(|(_, s)| s.n_b == mid)
        .and_then(|(_, s)| s.save_pct);
    let pass = broken.is_empty() && save.is_some_and(|s| s > 50.0) && res.failures.is_empty();
    budgets.push(res);
    outcome(
        pass,
        format!("ordering violations {broken:?}; save vs classical at n_b={mid} {:.1}% (need > 50%)", save.unwrap_or(f64::NAN)),
    )
}

fn c9(budgets: &[TrialResults]) -> Outcome {
    let bad: Vec<String> = budgets.iter().flat_map(budget_violations).collect();
    let spec = SyntheticSpec::new(SyntheticKind::BinaryResponse { a: 0.0, b: 2.0 }, 2000);
    let n_b = 300.0;
    let mut worst: f64 = 0.0;
    for r in 0..100u64 {
        let (pool, _) = gen_synthetic(&spec, RngSpec::new(900 + r, 0)).unwrap();
        let hist: Vec<Observation> = gen_synthetic(&SyntheticSpec::new(spec.kind.clone(), 20), RngSpec::new(900 + r, 1))
            .unwrap()
            .0
            .iter()
            .map(|e| Observation::new(e.x.clone(), e.y.unwrap()))
            .collect();
        let learner = Predictor::fit(LearnerKind::logistic(), &hist).unwrap();
        let mut cfg = SeqConfig::new(Budget::new(n_b, pool.len()).unwrap(), ProblemSpec::mean(), UncertaintySource::Classification);
        cfg.batch_size = Some(100);
        cfg.flush_period = Some(100.0);
        let trace = run_sequential(&pool, SeqModel::Learner(learner), cfg, RngSpec::new(900 + r, 2), pool_oracle).unwrap();
        for (k, &lab) in trace.label_path().iter().enumerate() {
            let t = (k + 1) as f64;
            worst = worst.max((lab as f64 - t * n_b / pool.len() as f64).abs() / t.sqrt());
        }
    }
    outcome(
        bad.is_empty() && worst <= 1.0,
        format!("configurations over budget {bad:?}; max |n_lab,t - t n_b/n| / sqrt(t) = {worst:.3} (limit 1)"),
    )
}

fn c10() -> Outcome {
    let spec = SyntheticSpec::new(SyntheticKind::BinaryResponse { a: 0.0, b: 2.0 }, 2000);
    let data = DataSource::Synthetic { spec, model: ModelSource::Oracle };
    let mut cfg = ExperimentConfig::new(data, ProblemSpec::mean(), vec![1000.0]);
    cfg.methods = vec![Method::ActiveBatch, Method::ActiveBetting];
    cfg.trials = 500;
    cfg.y_range = Some((0.0, 1.0));
    cfg.seed = 10;
    let (_, res) = run_trials(&cfg).unwrap();
    let wald: BTreeMap<usize, f64> =
        res.records.iter().filter(|r| r.method == Method::ActiveBatch).map(|r| (r.trial, r.hi - r.lo)).collect();
    let bet: Vec<_> = res.records.iter().filter(|r| r.method == Method::ActiveBetting).collect();
    let wider = bet.iter().filter(|r| r.hi - r.lo > wald[&r.trial]).count();
    let cov = coverage(&res, Method::ActiveBetting);
    let wald_cov = coverage(&res, Method::ActiveBatch);
    outcome(
        cov >= 0.90 && cov > 1.0 - cfg.alpha && wider == bet.len() && res.failures.is_empty(),
        format!("betting coverage {cov:.3} (Wald {wald_cov:.3}); wider than Wald in {wider}/{} trials", bet.len()),
    )
}

fn c11() -> Outcome {
    let mut r = RngSpec::new(110, 0).rng();
    let h = 1e-5;
    let mut fd_ok = true;
    for spec in [ProblemSpec::mean(), ProblemSpec::linear_regression(3, 0).unwrap(), ProblemSpec::logistic(3, 1).unwrap()] {
        let d = spec.dim();
        for _ in 0..100 {
            let theta = DVector::from_fn(d, |_, _| r.random_range(-1.5..1.5));
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let y: f64 = r.random_range(0.0..1.0);
            let g = loss_grad(&spec, &theta, &x, y).unwrap();
            let hess = loss_hessian(&spec, &theta, &x).unwrap();
            for k in 0..d {
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                let fd = (loss(&spec, &up, &x, y).unwrap() - loss(&spec, &dn, &x, y).unwrap()) / (2.0 * h);
                fd_ok &= (fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0);
                let col = (loss_grad(&spec, &up, &x, y).unwrap() - loss_grad(&spec, &dn, &x, y).unwrap()) / (2.0 * h);
                for i in 0..d {
                    fd_ok &= (col[i] - hess[(i, k)]).abs() <= 1e-5 * hess[(i, k)].abs().max(1.0);
                }
            }
        }
    }

    let kind = SyntheticKind::HeteroLinear { theta: vec![1.0, 2.0, -1.0], noise_base: 0.5, noise_slope: 1.0 };
    let mut psd = true;
    for s in 0..20 {
        let (pool, _) = gen_synthetic(&SyntheticSpec::new(kind.clone(), 500), RngSpec::new(111 + s, 0)).unwrap();
        let u = pool_uncertainty(&pool, &GlmDirection::Identity).unwrap();
        let plan = SamplingPlan::from_uncertainty(&u, Budget::new(100.0, 500).unwrap(), 0.5, RngSpec::new(111 + s, 1)).unwrap();
        let rep = active_batch_report(&pool, &plan, &pool.reveal(&plan.xi), &ProblemSpec::linear_regression(3, 0).unwrap(), 0.1).unwrap();
        let sig = &rep.sigma_hat;
        let asym = (sig - sig.transpose()).abs().max();
        psd &= asym <= 1e-12 * sig.abs().max().max(1.0);
        psd &= sig.clone().symmetric_eigenvalues().min() >= -1e-12 * sig.abs().max().max(1.0);
    }

    let cfg = binary_config(2.0, 200.0, 20);
    let bytes = || {
        let (_, res) = run_trials(&cfg).unwrap();
        let mut buf = Vec::new();
        write_widths(&mut buf, "# h", &summarize(&cfg, &res)).unwrap();
        buf
    };
    let det = bytes() == bytes();
    outcome(fd_ok && psd && det, format!("finite differences {fd_ok}; symmetric PSD {psd}; deterministic {det}"))
}

fn main() {
    let mut budgets = Vec::new();
    let results = [
        ("1 coverage, batch mean", c1(&mut budgets)),
        ("2 coverage, batch GLM", c2(&mut budgets)),
        ("3 coverage, sequential finetune", c3(&mut budgets)),
        ("4 unbiasedness", c4()),
        ("5 variance identity", c5()),
        ("6 oracle optimality", c6()),
        ("7 reductions", c7()),
        ("8 ordering and budget save", c8(&mut budgets)),
    ];
    let tail = [
        ("9 budget", c9(&budgets)),
        ("10 non-asymptotic", c10()),
        ("11 numerical hygiene", c11()),
    ];
    let mut failed = 0;
    for (name, o) in results.iter().chain(tail.iter()) {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria pass", results.len() + tail.len() - failed, results.len() + tail.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
