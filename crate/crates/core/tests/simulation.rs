use proptest::prelude::*;

use egs::engine::{self, EventKind, RunSetup, ScenarioEvent, Simulation};
use egs::experiment::{execute, preset, ExperimentConfig, NodeCapProfile};
use egs::model::{lambda_egs, EgsConfig, EgsParams, SessionId, SessionTable, UtilityKind};

fn setup(n: usize, pairs: &[(usize, usize)], resources: u32, cap: f64, horizon: u64) -> RunSetup {
    let p_gen = 0.05;
    let capacity = lambda_egs(resources, p_gen);
    let ids: Vec<SessionId> = pairs.iter().map(|&(i, j)| SessionId::new(i, j).unwrap()).collect();
    let table = SessionTable::with_defaults(n, &ids, capacity).unwrap();
    let step = 1.0 / (40.0 * capacity);
    let config = EgsConfig::new(
        EgsParams {
            resources,
            p_gen,
            node_caps: vec![cap; n],
            central_step: step,
            node_steps: vec![step; n],
            utility: UtilityKind::Log,
            override_step_bound: false,
        },
        &table,
    )
    .unwrap();
    RunSetup::new(config, table, horizon)
}

#[test]
fn queues_conserve_demand() {
    let mut s = setup(6, &[(0, 1), (0, 2), (1, 3), (4, 5)], 3, 1.0, 5_000);
    s.scenario = vec![
        ScenarioEvent { at_slot: 1_000, kind: EventKind::Resources { count: 1 } },
        ScenarioEvent { at_slot: 3_000, kind: EventKind::Resources { count: 2 } },
    ];
    let mut sim = Simulation::new(&s, 3, 0).unwrap();
    for _ in 0..s.horizon {
        sim.step().unwrap();
        let state = sim.state();
        for k in 0..4 {
            assert_eq!(
                state.queues.0[k],
                sim.cumulative_demand()[k] - sim.cumulative_served()[k]
            );
        }
        assert!(state.schedule.total() <= u64::from(state.resources));
    }
    assert_eq!(sim.state().resources, 2);
}

#[test]
fn slack_caps_rates_track_the_optimum() {
    let config = ExperimentConfig {
        runs: 10,
        horizon: 30_000,
        emit_oracle: true,
        ..preset("fig2-n20").unwrap()
    };
    let report = execute(&config).unwrap();
    let oracle = report.record.oracle.unwrap();
    assert!(oracle.converged);
    for (o, r) in oracle.rates.iter().zip(&report.record.tail_mean_rates) {
        assert!((r - o).abs() / o < 0.05, "protocol {r} vs optimum {o}");
    }
}

#[test]
fn node_cap_event_must_keep_slater() {
    let mut s = setup(4, &[(0, 1), (0, 2), (2, 3)], 3, 1.0, 100);
    s.scenario = vec![ScenarioEvent {
        at_slot: 50,
        kind: EventKind::NodeCap { node: 0, cap: 1e-6 },
    }];
    assert!(matches!(
        engine::run(&s, 1, 0),
        Err(egs::Error::Slater { epoch: Some(50), .. })
    ));
    s.scenario[0].kind = EventKind::NodeCap { node: 0, cap: 0.2 };
    assert_eq!(s.epochs().unwrap().len(), 2);
    assert!(engine::run(&s, 1, 0).is_ok());
}

#[test]
fn tiered_sessions_spread_further_than_uniform() {
    let base = ExperimentConfig {
        runs: 4,
        horizon: 10_000,
        ..preset("fig4-uniform-n20").unwrap()
    };
    let tiered = ExperimentConfig {
        node_caps: NodeCapProfile::ThreeTier { high: 1.5, mid: 1.0, low: 0.5 },
        ..base.clone()
    };
    let gap_uniform = execute(&base).unwrap().record.mean_rate_gap;
    let gap_tiered = execute(&tiered).unwrap().record.mean_rate_gap;
    assert!(gap_tiered > gap_uniform, "{gap_tiered} vs {gap_uniform}");
}

fn instance() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, u32, u64)> {
    (3usize..8)
        .prop_flat_map(|n| {
            let pair = (0..n, 0..n).prop_filter("distinct", |(i, j)| i != j);
            (Just(n), prop::collection::vec(pair, 1..8), 1u32..5, any::<u64>())
        })
        .prop_map(|(n, raw, r, seed)| {
            let mut pairs: Vec<(usize, usize)> =
                raw.into_iter().map(|(i, j)| (i.min(j), i.max(j))).collect();
            pairs.sort_unstable();
            pairs.dedup();
            (n, pairs, r, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_slot_respects_the_model((n, pairs, r, seed) in instance()) {
        let s = setup(n, &pairs, r, 10.0, 300);
        let regions = s.table.rate_regions(0.05).unwrap();
        let mut sim = Simulation::new(&s, seed, 0).unwrap();
        for _ in 0..s.horizon {
            let m = sim.step().unwrap();
            let state = sim.state();
            prop_assert!(state.prices.is_nonnegative());
            prop_assert!(state.schedule.total() <= u64::from(r));
            for (k, rate) in state.rates.iter().enumerate() {
                prop_assert!(regions[k].contains(*rate));
                prop_assert!(state.schedule.0[k] <= s.table.max_resources()[k]);
            }
            prop_assert!(m.min_rate <= m.max_rate);
            prop_assert!((m.sum_rate - state.rates.iter().sum::<f64>()).abs() < 1e-12);
        }
    }
}
