//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs full 100-run ensembles, so expect a few minutes in an optimized build.
//! Exits non-zero on failure only when `EGS_ACCEPTANCE_STRICT` is set, so the
//! regular test run reports the outcome without aborting the workspace.

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egs::engine::{self, RateControl, RunSetup, RunSummary};
use egs::experiment::{
    self, analytic_step_bound, execute, preset, session_count, ExperimentConfig,
    ExperimentReport, NodeCapProfile, StepRule,
};
use egs::model::{lambda_egs, EgsConfig, EgsParams, SessionId, SessionTable, UtilityKind};
use egs::numopt::{solve_dual, verify_kkt, NumProblem, SolveOptions};
use egs::scheduler::{brute_force_schedule, max_weight_schedule, QueueVector};
use egs::Error;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag}  {name}: {detail}");
    Outcome { name, pass, detail }
}

fn scheduler_exactness() -> Outcome {
    const INSTANCES: usize = 10_000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..INSTANCES {
        let n = rng.random_range(1..=6);
        let queues: Vec<u64> = (0..n).map(|_| rng.random_range(0..=10)).collect();
        let caps: Vec<u32> = (0..n).map(|_| rng.random_range(0..=3)).collect();
        let resources = rng.random_range(0..=5);
        let q = QueueVector(queues.clone());
        let greedy = max_weight_schedule(&q, &caps, resources, &mut rng);
        let (best, _) = brute_force_schedule(&q, &caps, resources).expect("small instance");
        if greedy.objective(&queues) != best || !greedy.is_feasible(&queues, &caps, resources) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        "scheduler exactness",
        mismatches == 0 && elapsed < 10.0,
        format!("{INSTANCES} instances, {mismatches} mismatches, {elapsed:.2}s (limit 10s)"),
    )
}

fn pinned_setup(total_rate: f64, horizon: u64) -> RunSetup {
    let (resources, p_gen) = (3, 0.05);
    let capacity = lambda_egs(resources, p_gen);
    let pairs: Vec<SessionId> = (0..10).map(|k| SessionId::new(2 * k, 2 * k + 1).unwrap()).collect();
    let table = SessionTable::with_defaults(20, &pairs, capacity).unwrap();
    let step = 1.0 / (40.0 * capacity);
    let config = EgsConfig::new(
        EgsParams {
            resources,
            p_gen,
            node_caps: vec![1.0; 20],
            central_step: step,
            node_steps: vec![step; 20],
            utility: UtilityKind::Log,
            override_step_bound: false,
        },
        &table,
    )
    .unwrap();
    let mut setup = RunSetup::new(config, table, horizon);
    setup.control = RateControl::Pinned(vec![total_rate / 10.0; 10]);
    setup
}

fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn stability() -> Outcome {
    let horizon = 100_000;
    let setup = pinned_setup(0.9 * 0.15, horizon);
    let summary = engine::ensemble(&setup, 20, 11).unwrap();
    let tail: Vec<(f64, f64)> = summary.mean_trace[(horizon / 2) as usize..]
        .iter()
        .map(|p| (p.slot as f64, p.sum_queue))
        .collect();
    let slope = ls_slope(&tail);
    outcome(
        "stability inside the capacity region",
        slope < 1e-4,
        format!("slope of mean total queue over last half = {slope:.3e} (limit 1e-4)"),
    )
}

fn instability() -> Outcome {
    let horizon = 100_000;
    let setup = pinned_setup(0.15 + 0.05, horizon);
    let summary = engine::ensemble(&setup, 20, 12).unwrap();
    let tail = &summary.mean_trace[(horizon - 10_000) as usize..];
    let growth = tail.iter().map(|p| p.sum_queue / p.slot as f64).sum::<f64>() / tail.len() as f64;
    let rel = (growth - 0.05).abs() / 0.05;
    outcome(
        "instability outside the capacity region",
        rel <= 0.10,
        format!("mean total queue / t = {growth:.5} (target 0.05 +-10%, off by {:.1}%)", 100.0 * rel),
    )
}

fn oracle_instance() -> ExperimentConfig {
    let sessions = [(0, 1), (0, 2), (0, 3), (1, 2), (4, 5)]
        .iter()
        .map(|&(i, j)| SessionId::new(i, j).unwrap())
        .collect();
    ExperimentConfig {
        name: "oracle-agreement".into(),
        nodes: 6,
        max_resources: 2,
        sessions: Some(sessions),
        // Node 0 hosts three sessions and can take at most 0.03 of their demand.
        node_caps: NodeCapProfile::Explicit {
            caps: vec![0.03, 0.2, 0.2, 0.2, 0.2, 0.2],
        },
        step: StepRule::InverseCapacity { divisor: 40.0 },
        runs: 20,
        emit_oracle: true,
        ..preset("fig2-n20").unwrap()
    }
}

fn oracle_agreement() -> Outcome {
    let config = oracle_instance();
    let resolved = config.resolve().unwrap();
    let setup = &resolved.setup;
    let problem =
        NumProblem::new(setup.table.clone(), setup.config.clone(), setup.utilities.clone()).unwrap();
    let solution = solve_dual(&problem, &SolveOptions::default()).unwrap();
    let kkt = verify_kkt(&problem, &solution.rates, &solution.prices).max_violation();
    let binding = solution.prices.nodes[0] > 0.0;

    let report = execute(&config).unwrap();
    let converged = report.record.converged;
    let rcp = &report.record.tail_mean_rates;
    let worst = solution
        .rates
        .iter()
        .zip(rcp)
        .map(|(o, r)| (r - o).abs() / o)
        .fold(0.0, f64::max);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        "protocol matches offline optimum",
        converged && binding && worst <= 0.05 && kkt < 1e-8,
        format!(
            "optimum [{}], protocol [{}], worst rel err {:.1}% (limit 5%), kkt {kkt:.1e}, node cap binding: {binding}",
            fmt(&solution.rates),
            fmt(rcp),
            100.0 * worst
        ),
    )
}

fn run_preset(name: &str) -> ExperimentReport {
    execute(&preset(name).unwrap()).unwrap()
}

fn in_band(value: Option<f64>, lo: f64, hi: f64) -> bool {
    value.is_some_and(|v| (lo..=hi).contains(&v))
}

fn show(value: Option<f64>) -> String {
    value.map_or("none".into(), |v| format!("{v:.4}"))
}

struct Sweep {
    n20: ExperimentReport,
    n50: ExperimentReport,
    n100: ExperimentReport,
}

fn sweep_tightness(s: &Sweep) -> Outcome {
    let d = [&s.n20, &s.n50, &s.n100].map(|r| r.record.tightness);
    let bands = in_band(d[0], 0.06, 0.24) && in_band(d[1], 0.018, 0.07) && in_band(d[2], 0.006, 0.024);
    let monotone = matches!(d, [Some(a), Some(b), Some(c)] if a > b && b > c);
    let finite = s.n20.record.convergence_time.is_some();
    outcome(
        "fig2 tightness bands",
        bands && monotone && finite,
        format!(
            "delta n20 {} in [0.06, 0.24], n50 {} in [0.018, 0.07], n100 {} in [0.006, 0.024]; strictly decreasing: {monotone}",
            show(d[0]),
            show(d[1]),
            show(d[2])
        ),
    )
}

fn sweep_tradeoff(s: &Sweep) -> Outcome {
    let (a, b) = (s.n20.record.convergence_time, s.n100.record.convergence_time);
    outcome(
        "fig2 convergence time grows with sessions",
        matches!((a, b), (Some(a), Some(b)) if a < b),
        format!("dtau n20 {a:?} < dtau n100 {b:?}"),
    )
}

fn reconvergence(n50: &RunSummary) -> Outcome {
    let report = run_preset("fig3");
    let epochs = &report.summary.epochs;
    let initial = epochs[0].convergence_time;
    let later: Vec<Option<u64>> = epochs[1..].iter().map(|e| e.convergence_time).collect();
    let all_converged = report.summary.converged();
    let faster = matches!(initial, Some(t0) if later.iter().all(|t| matches!(t, Some(t) if *t < t0)));
    let delta = report.summary.tightness();
    let delta_fixed = n50.tightness();
    let within_two = delta.is_some_and(|d| (0.035 / 2.0..=0.035 * 2.0).contains(&d));
    let rel = match (delta, delta_fixed) {
        (Some(d), Some(f)) => Some((d - f).abs() / f),
        _ => None,
    };
    outcome(
        "fig3 re-convergence after resource changes",
        all_converged && faster && within_two && rel.is_some_and(|r| r < 1.0),
        format!(
            "{} epochs all re-converge: {all_converged}; dtau {initial:?} then {later:?}; delta {} (band [0.0175, 0.07]); |delta - fixed| / fixed = {} (limit 1)",
            epochs.len(),
            show(delta),
            show(rel)
        ),
    )
}

fn same_setup(a: &str, b: &str) -> bool {
    let (a, b) = (preset(a).unwrap(), preset(b).unwrap());
    ExperimentConfig { name: String::new(), ..a } == ExperimentConfig { name: String::new(), ..b }
}

fn fairness_gap(s: &Sweep) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, uniform) in [(20, &s.n20), (50, &s.n50), (100, &s.n100)] {
        // The uniform profile is the fig2 configuration; reuse that ensemble.
        assert!(same_setup(&format!("fig4-uniform-n{n}"), &format!("fig2-n{n}")));
        let tiered = run_preset(&format!("fig4-tiered-n{n}"));
        let ratio = tiered.record.mean_rate_gap / uniform.record.mean_rate_gap;
        pass &= ratio >= 10.0;
        parts.push(format!("N={n} ratio {ratio:.3e}"));
    }
    outcome("fig4 tiered caps widen the rate gap", pass, format!("{} (need >= 10)", parts.join(", ")))
}

fn step_bound() -> Outcome {
    let base = preset("fig2-n20").unwrap();
    let bound = base.resolve().unwrap().resolution.step_bound;
    let too_big = ExperimentConfig {
        step: StepRule::Fixed { value: bound },
        ..base.clone()
    };
    let rejected = matches!(too_big.resolve(), Err(Error::StepSize { .. }));
    let overridden = ExperimentConfig {
        override_step_bound: true,
        ..too_big
    }
    .resolve()
    .is_ok();

    let mut analytic_ok = true;
    for name in experiment::PRESETS {
        let config = preset(name).unwrap();
        let sessions = session_count(&config);
        let analytic = analytic_step_bound(&config, sessions);
        let capacity = lambda_egs(config.resources, config.p_gen);
        let reference = 1.0 / (40.0 * capacity);
        let resolved = config.resolve().unwrap().resolution;
        analytic_ok &= reference < analytic
            && resolved.step < analytic
            && (resolved.step_bound - analytic).abs() <= 1e-12 * analytic;
    }
    outcome(
        "step-size bound enforced",
        rejected && overridden && analytic_ok,
        format!(
            "theta = bound rejected: {rejected}; accepted with override: {overridden}; all {} presets under 2/(alpha |S|): {analytic_ok}",
            experiment::PRESETS.len()
        ),
    )
}

fn determinism(n20: &ExperimentReport) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let full_a = experiment::render_trace(&n20.summary);
    experiment::run_experiment(&preset("fig2-n20").unwrap(), dir.path()).unwrap();
    let full_b = fs::read_to_string(dir.path().join(experiment::TRACE_FILE)).unwrap();
    identical &= full_a == full_b;
    for name in experiment::PRESETS {
        let config = ExperimentConfig {
            runs: 2,
            horizon: 20_000,
            ..preset(name).unwrap()
        };
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        experiment::run_experiment(&config, &a).unwrap();
        experiment::run_experiment(&config, &b).unwrap();
        identical &= fs::read(a.join(experiment::TRACE_FILE)).unwrap()
            == fs::read(b.join(experiment::TRACE_FILE)).unwrap();
    }
    outcome(
        "deterministic traces",
        identical,
        format!("fig2-n20 at full scale and {} presets at reduced scale, byte-identical: {identical}", experiment::PRESETS.len()),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments; the suite always runs in full.
    let start = Instant::now();
    let mut results = vec![scheduler_exactness(), stability(), instability(), oracle_agreement()];
    let sweep = Sweep {
        n20: run_preset("fig2-n20"),
        n50: run_preset("fig2-n50"),
        n100: run_preset("fig2-n100"),
    };
    results.push(sweep_tightness(&sweep));
    results.push(sweep_tradeoff(&sweep));
    results.push(reconvergence(&sweep.n50.summary));
    results.push(fairness_gap(&sweep));
    results.push(step_bound());
    results.push(determinism(&sweep.n20));

    let failed: Vec<&Outcome> = results.iter().filter(|r| !r.pass).collect();
    println!(
        "\nacceptance: {} passed, {} failed ({:.0}s)",
        results.len() - failed.len(),
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    for f in &failed {
        println!("  failed: {} ({})", f.name, f.detail);
    }
    if !failed.is_empty() && std::env::var_os("EGS_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
