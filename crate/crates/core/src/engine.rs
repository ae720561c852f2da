//! Slot-by-slot simulation of the hub, plus seeded ensembles and the
//! convergence statistics computed on their mean trajectory.
//!
//! One slot runs, in order: generation attempts on the schedule chosen last
//! slot, demand arrivals at the current rates, the queue update, the schedule
//! for the next slot (from the queues as they stood before this slot's
//! arrivals), node then hub prices from the updated queues, and finally the
//! rates for the next slot.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{slater_check_raw, EgsConfig, NodeIndex, RateRegion, SessionId, SessionTable};
use crate::rcp::{self, PriceVector, Utilities};
use crate::scheduler::{MaxWeightScheduler, QueueVector, Schedule};
use crate::traffic::{self, Purpose, RngStream, SessionStreams};

/// Joint state at the start of slot `slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub slot: u64,
    pub queues: QueueVector,
    pub rates: Vec<f64>,
    pub prices: PriceVector,
    /// Schedule executing during `slot`.
    pub schedule: Schedule,
    pub resources: u32,
}

impl SlotState {
    /// `lambda(0) = lambda_min`, zero prices, empty queues, empty schedule.
    pub fn initial(table: &SessionTable, config: &EgsConfig) -> Self {
        Self {
            slot: 0,
            queues: QueueVector::zeros(table.len()),
            rates: table.min_rates().to_vec(),
            prices: PriceVector::zeros(table.node_count()),
            schedule: Schedule::zeros(table.len()),
            resources: config.resources(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    Resources { count: u32 },
    NodeCap { node: NodeIndex, cap: f64 },
}

/// A constraint change taking effect at the start of `at_slot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at_slot: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Reflecting random walk of the resource count, one step every `interval` slots.
pub fn resource_walk(
    start: u32,
    min: u32,
    max: u32,
    interval: u64,
    horizon: u64,
    rng: &mut impl Rng,
) -> Vec<ScenarioEvent> {
    let mut events = Vec::new();
    if interval == 0 || min >= max {
        return events;
    }
    let mut current = start.clamp(min, max);
    let mut at = interval;
    while at < horizon {
        current = if current == min {
            current + 1
        } else if current == max {
            current - 1
        } else if rng.random_bool(0.5) {
            current + 1
        } else {
            current - 1
        };
        events.push(ScenarioEvent {
            at_slot: at,
            kind: EventKind::Resources { count: current },
        });
        at += interval;
    }
    events
}

/// Per-slot observables after a step. `slot` labels the rates now in force.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotMetrics {
    pub slot: u64,
    pub sum_rate: f64,
    pub sum_queue: u64,
    pub max_rate: f64,
    pub min_rate: f64,
    /// Only filled on sampled slots.
    pub rates: Option<Vec<f64>>,
}

/// How session rates evolve.
#[derive(Debug, Clone, PartialEq)]
pub enum RateControl {
    /// Prices and rates follow the rate control protocol.
    Protocol,
    /// Rates fixed for the whole run; prices are not computed.
    Pinned(Vec<f64>),
}

/// Everything that defines a run apart from its seed.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub config: EgsConfig,
    pub table: SessionTable,
    pub utilities: Utilities,
    pub scenario: Vec<ScenarioEvent>,
    pub horizon: u64,
    pub control: RateControl,
    /// Slots at the end of a run over which per-session rates are averaged.
    pub tail_window: u64,
    /// Record every session's rate every this many slots.
    pub rate_sample_interval: Option<u64>,
}

impl RunSetup {
    pub fn new(config: EgsConfig, table: SessionTable, horizon: u64) -> Self {
        let utilities = Utilities::shared(config.utility(), table.len());
        Self {
            config,
            table,
            utilities,
            scenario: Vec::new(),
            horizon,
            control: RateControl::Protocol,
            tail_window: 10_000,
            rate_sample_interval: None,
        }
    }

    /// Constraint sets in force over the run: `(first slot, config)` per epoch.
    pub fn epochs(&self) -> Result<Vec<(u64, EgsConfig)>> {
        let mut events = self.scenario.clone();
        if events.windows(2).any(|w| w[0].at_slot > w[1].at_slot) {
            return Err(Error::Config("scenario events must be sorted by slot".into()));
        }
        events.retain(|e| e.at_slot < self.horizon.max(1));
        let mut epochs = vec![(0, self.config.clone())];
        for event in events {
            let current = &epochs.last().expect("non-empty").1;
            let next = apply_event(current, &event.kind)?;
            match epochs.last_mut() {
                Some(last) if last.0 == event.at_slot => last.1 = next,
                _ => epochs.push((event.at_slot, next)),
            }
        }
        Ok(epochs)
    }

    /// Every epoch must admit a strictly feasible minimum-rate vector.
    pub fn validate(&self) -> Result<()> {
        if self.utilities.len() != self.table.len() {
            return Err(Error::Dimension {
                expected: self.table.len(),
                actual: self.utilities.len(),
            });
        }
        if let RateControl::Pinned(rates) = &self.control {
            if rates.len() != self.table.len() {
                return Err(Error::Dimension {
                    expected: self.table.len(),
                    actual: rates.len(),
                });
            }
            if let Some((session, &rate)) = rates.iter().enumerate().find(|(_, r)| !(**r >= 0.0)) {
                return Err(Error::NegativeRate { session, rate });
            }
        }
        for (start, config) in self.epochs()? {
            let report = slater_check_raw(&self.table, config.lambda_egs(), config.node_caps());
            if !report.holds {
                return Err(Error::Slater {
                    epoch: Some(start),
                    violations: report.violations.iter().map(|v| v.to_string()).collect(),
                });
            }
        }
        Ok(())
    }
}

fn apply_event(config: &EgsConfig, kind: &EventKind) -> Result<EgsConfig> {
    match *kind {
        EventKind::Resources { count } => config.with_resources(count),
        EventKind::NodeCap { node, cap } => config.with_node_cap(node, cap),
    }
}

/// One seeded run, advanced a slot at a time.
pub struct Simulation<'a> {
    setup: &'a RunSetup,
    config: EgsConfig,
    regions: Vec<RateRegion>,
    state: SlotState,
    /// Queue snapshot the executing schedule was computed from.
    schedule_basis: Vec<u64>,
    streams: SessionStreams,
    scheduler_rng: RngStream,
    scheduler: MaxWeightScheduler,
    next_event: usize,
    node_queue: Vec<u64>,
    node_rate: Vec<f64>,
    pre_arrival: Vec<u64>,
    next_schedule: Schedule,
    cumulative_served: Vec<u64>,
    cumulative_demand: Vec<u64>,
}

impl<'a> Simulation<'a> {
    pub fn new(setup: &'a RunSetup, master_seed: u64, run: u64) -> Result<Self> {
        let state = SlotState::initial(&setup.table, &setup.config);
        Self::from_state(setup, state, master_seed, run)
    }

    pub fn from_state(
        setup: &'a RunSetup,
        mut state: SlotState,
        master_seed: u64,
        run: u64,
    ) -> Result<Self> {
        setup.validate()?;
        let sessions = setup.table.len();
        let nodes = setup.table.node_count();
        if state.queues.0.len() != sessions
            || state.rates.len() != sessions
            || state.schedule.0.len() != sessions
            || state.prices.nodes.len() != nodes
        {
            return Err(Error::Dimension {
                expected: sessions,
                actual: state.queues.0.len(),
            });
        }
        if let RateControl::Pinned(rates) = &setup.control {
            state.rates.clone_from(rates);
        }
        let mut config = setup.config.clone();
        let mut next_event = 0;
        // Events strictly before the starting slot are already in force.
        while let Some(event) = setup.scenario.get(next_event) {
            if event.at_slot >= state.slot {
                break;
            }
            config = apply_event(&config, &event.kind)?;
            next_event += 1;
        }
        let regions = setup.table.rate_regions(config.p_gen())?;
        let schedule_basis = state.queues.0.clone();
        Ok(Self {
            setup,
            config,
            regions,
            schedule_basis,
            streams: SessionStreams::new(master_seed, run, sessions),
            scheduler_rng: RngStream::new(master_seed, run, Purpose::Scheduler),
            scheduler: MaxWeightScheduler::new(),
            next_event,
            node_queue: vec![0; nodes],
            node_rate: vec![0.0; nodes],
            pre_arrival: vec![0; sessions],
            next_schedule: Schedule::zeros(sessions),
            cumulative_served: vec![0; sessions],
            cumulative_demand: vec![0; sessions],
            state,
        })
    }

    pub fn state(&self) -> &SlotState {
        &self.state
    }

    pub fn config(&self) -> &EgsConfig {
        &self.config
    }

    /// Demands removed from each queue so far.
    pub fn cumulative_served(&self) -> &[u64] {
        &self.cumulative_served
    }

    pub fn cumulative_demand(&self) -> &[u64] {
        &self.cumulative_demand
    }

    fn apply_due_events(&mut self) -> Result<()> {
        let mut resources_changed = false;
        while let Some(event) = self.setup.scenario.get(self.next_event) {
            if event.at_slot > self.state.slot {
                break;
            }
            self.config = apply_event(&self.config, &event.kind)?;
            resources_changed |= matches!(event.kind, EventKind::Resources { .. });
            self.next_event += 1;
        }
        if resources_changed {
            self.state.resources = self.config.resources();
            if self.state.schedule.total() > u64::from(self.state.resources) {
                // A resource went offline under the executing schedule: re-plan it
                // from the same snapshot with the reduced budget.
                self.scheduler.schedule_into(
                    &self.schedule_basis,
                    self.setup.table.max_resources(),
                    self.state.resources,
                    &mut self.scheduler_rng,
                    &mut self.state.schedule,
                );
            }
        }
        Ok(())
    }

    /// Advances one slot and reports the metrics of the slot that follows.
    pub fn step(&mut self) -> Result<SlotMetrics> {
        self.apply_due_events()?;
        let table = &self.setup.table;
        let p_gen = self.config.p_gen();
        let state = &mut self.state;

        self.pre_arrival.copy_from_slice(&state.queues.0);
        for s in 0..table.len() {
            let rng = self.streams.get_mut(s);
            let generated = traffic::draw_successes(state.schedule.0[s], p_gen, rng);
            let arrived = traffic::draw_demand(state.rates[s], rng);
            let before = state.queues.0[s] + arrived;
            let after = before.saturating_sub(generated);
            self.cumulative_served[s] += before - after;
            self.cumulative_demand[s] += arrived;
            state.queues.0[s] = after;
        }

        self.scheduler.schedule_into(
            &self.pre_arrival,
            table.max_resources(),
            state.resources,
            &mut self.scheduler_rng,
            &mut self.next_schedule,
        );
        debug_assert!(self.next_schedule.is_feasible(
            &self.pre_arrival,
            table.max_resources(),
            state.resources
        ));
        std::mem::swap(&mut state.schedule, &mut self.next_schedule);
        std::mem::swap(&mut self.schedule_basis, &mut self.pre_arrival);

        if matches!(self.setup.control, RateControl::Protocol) {
            self.update_prices_and_rates()?;
        }
        self.state.slot += 1;

        let rates = &self.state.rates;
        let (mut sum, mut max, mut min) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
        for &r in rates {
            sum += r;
            max = max.max(r);
            min = min.min(r);
        }
        if rates.is_empty() {
            (max, min) = (0.0, 0.0);
        }
        let sampled = self
            .setup
            .rate_sample_interval
            .is_some_and(|k| k > 0 && self.state.slot % k == 0);
        Ok(SlotMetrics {
            slot: self.state.slot,
            sum_rate: sum,
            sum_queue: self.state.queues.total(),
            max_rate: max,
            min_rate: min,
            rates: sampled.then(|| rates.clone()),
        })
    }

    fn update_prices_and_rates(&mut self) -> Result<()> {
        let table = &self.setup.table;
        let state = &mut self.state;

        self.node_queue.iter_mut().for_each(|q| *q = 0);
        self.node_rate.iter_mut().for_each(|r| *r = 0.0);
        let mut total_queue = 0u64;
        let mut total_rate = 0.0;
        for (s, id) in table.sessions().iter().enumerate() {
            let q = state.queues.0[s];
            let r = state.rates[s];
            total_queue += q;
            total_rate += r;
            for u in id.nodes() {
                self.node_queue[u] += q;
                self.node_rate[u] += r;
            }
        }

        for u in 0..table.node_count() {
            state.prices.nodes[u] = if table.sessions_of(u).is_empty() {
                0.0
            } else {
                let cap = self.config.node_cap(u);
                if !(cap > 0.0) {
                    return Err(Error::Config(format!(
                        "node {u}: price needs a positive cap, got {cap}"
                    )));
                }
                rcp::node_price(self.node_queue[u], self.node_rate[u], cap, self.config.node_step(u))
            };
        }
        state.prices.central = rcp::central_price(
            total_queue,
            total_rate,
            self.config.lambda_egs(),
            self.config.central_step(),
        );

        for (s, id) in table.sessions().iter().enumerate() {
            let price = rcp::session_price(*id, &state.prices);
            state.rates[s] = self.setup.utilities.get(s).best_response(price, self.regions[s]);
        }
        Ok(())
    }
}

/// Output of a single run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<SlotMetrics>,
    pub final_state: SlotState,
    /// Per-session rate averaged over the last `tail_window` slots.
    pub tail_mean_rates: Vec<f64>,
}

pub fn run(setup: &RunSetup, master_seed: u64, run_index: u64) -> Result<RunOutput> {
    let mut sim = Simulation::new(setup, master_seed, run_index)?;
    let mut metrics = Vec::with_capacity(setup.horizon as usize);
    let tail_start = setup.horizon.saturating_sub(setup.tail_window);
    let mut tail_sum = vec![0.0; setup.table.len()];
    for t in 0..setup.horizon {
        let m = sim.step()?;
        if t >= tail_start {
            for (acc, r) in tail_sum.iter_mut().zip(&sim.state().rates) {
                *acc += r;
            }
        }
        metrics.push(m);
    }
    let window = (setup.horizon - tail_start).max(1) as f64;
    Ok(RunOutput {
        metrics,
        final_state: sim.state().clone(),
        tail_mean_rates: tail_sum.into_iter().map(|s| s / window).collect(),
    })
}

/// One point of the ensemble-mean trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub slot: u64,
    pub sum_rate: f64,
    pub sum_queue: f64,
    pub max_rate: f64,
    pub min_rate: f64,
}

/// Convergence statistics for one constraint epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub start_slot: u64,
    pub end_slot: u64,
    pub resources: u32,
    pub lambda_egs: f64,
    /// Slots from the epoch start until the mean total rate first crosses `lambda_egs`.
    pub convergence_time: Option<u64>,
    /// Largest deviation of the mean total rate from `lambda_egs` after the crossing.
    pub tightness: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub n_runs: u64,
    pub horizon: u64,
    pub mean_trace: Vec<TracePoint>,
    pub epochs: Vec<EpochSummary>,
    /// Mean across runs of each run's tail-averaged session rates.
    pub tail_mean_rates: Vec<f64>,
    /// Mean-across-runs per-session rates on sampled slots.
    pub sampled_rates: Vec<(u64, Vec<f64>)>,
}

impl RunSummary {
    /// Initial-epoch convergence time.
    pub fn convergence_time(&self) -> Option<u64> {
        self.epochs.first().and_then(|e| e.convergence_time)
    }

    /// Max of the per-epoch tightness values; `None` if any epoch never converged.
    pub fn tightness(&self) -> Option<f64> {
        if self.epochs.is_empty() {
            return None;
        }
        self.epochs
            .iter()
            .map(|e| e.tightness)
            .try_fold(0.0f64, |acc, d| d.map(|d| acc.max(d)))
    }

    pub fn converged(&self) -> bool {
        self.tightness().is_some()
    }

    /// Time average of `mean max rate - mean min rate` over the trace.
    pub fn mean_rate_gap(&self) -> f64 {
        if self.mean_trace.is_empty() {
            return 0.0;
        }
        self.mean_trace
            .iter()
            .map(|p| p.max_rate - p.min_rate)
            .sum::<f64>()
            / self.mean_trace.len() as f64
    }
}

/// Runs per parallel batch. Results are folded in run order, so the summary is
/// bit-identical regardless of thread count.
const BATCH: u64 = 16;

pub fn ensemble(setup: &RunSetup, n_runs: u64, master_seed: u64) -> Result<RunSummary> {
    if n_runs == 0 {
        return Err(Error::Config("an ensemble needs at least one run".into()));
    }
    setup.validate()?;
    let horizon = setup.horizon as usize;
    let sessions = setup.table.len();
    let mut sum_rate = vec![0.0; horizon];
    let mut sum_queue = vec![0.0; horizon];
    let mut max_rate = vec![0.0; horizon];
    let mut min_rate = vec![0.0; horizon];
    let mut tail = vec![0.0; sessions];
    let mut sampled: Vec<(u64, Vec<f64>)> = Vec::new();

    let mut start = 0;
    while start < n_runs {
        let end = (start + BATCH).min(n_runs);
        let outputs: Vec<RunOutput> = (start..end)
            .into_par_iter()
            .map(|r| run(setup, master_seed, r))
            .collect::<Result<_>>()?;
        for out in outputs {
            for (k, m) in out.metrics.iter().enumerate() {
                sum_rate[k] += m.sum_rate;
                sum_queue[k] += m.sum_queue as f64;
                max_rate[k] += m.max_rate;
                min_rate[k] += m.min_rate;
            }
            let samples = out.metrics.into_iter().filter_map(|m| m.rates.map(|r| (m.slot, r)));
            if sampled.is_empty() {
                sampled = samples.collect();
            } else {
                for ((_, acc), (_, r)) in sampled.iter_mut().zip(samples) {
                    acc.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                }
            }
            tail.iter_mut()
                .zip(&out.tail_mean_rates)
                .for_each(|(a, b)| *a += b);
        }
        start = end;
    }

    let n = n_runs as f64;
    let mean_trace: Vec<TracePoint> = (0..horizon)
        .map(|k| TracePoint {
            slot: k as u64 + 1,
            sum_rate: sum_rate[k] / n,
            sum_queue: sum_queue[k] / n,
            max_rate: max_rate[k] / n,
            min_rate: min_rate[k] / n,
        })
        .collect();
    for (_, rates) in &mut sampled {
        rates.iter_mut().for_each(|r| *r /= n);
    }
    let epochs = epoch_summaries(&setup.epochs()?, &mean_trace, setup.horizon);
    Ok(RunSummary {
        n_runs,
        horizon: setup.horizon,
        mean_trace,
        epochs,
        tail_mean_rates: tail.into_iter().map(|t| t / n).collect(),
        sampled_rates: sampled,
    })
}

/// Convergence time and tightness of a trace against a target, per epoch.
///
/// Trace point `k` (slot label `k + 1`) holds the rates produced by slot `k`.
/// Within an epoch starting at slot `a`, the first label is `a + 1`.
pub fn epoch_summaries(
    epochs: &[(u64, EgsConfig)],
    trace: &[TracePoint],
    horizon: u64,
) -> Vec<EpochSummary> {
    epochs
        .iter()
        .enumerate()
        .map(|(e, (start, config))| {
            let end = epochs.get(e + 1).map_or(horizon, |next| next.0);
            let target = config.lambda_egs();
            let window = &trace[(*start as usize).min(trace.len())..(end as usize).min(trace.len())];
            let (convergence_time, tightness) = match crossing(window, target) {
                Some(k) => {
                    let delta = window[k..]
                        .iter()
                        .map(|p| (p.sum_rate - target).abs())
                        .fold(0.0, f64::max);
                    (Some(k as u64 + 1), Some(delta))
                }
                None => (None, None),
            };
            EpochSummary {
                start_slot: *start,
                end_slot: end,
                resources: config.resources(),
                lambda_egs: target,
                convergence_time,
                tightness,
            }
        })
        .collect()
}

/// Index of the first point on the other side of `target` from the window's first point.
fn crossing(window: &[TracePoint], target: f64) -> Option<usize> {
    let first = window.first()?;
    let above = first.sum_rate > target;
    window.iter().position(|p| {
        if above {
            p.sum_rate <= target
        } else {
            p.sum_rate >= target
        }
    })
}

/// Uniformly samples `round(fraction * C(n, 2))` distinct pairs, returned sorted.
pub fn sample_sessions(n: usize, fraction: f64, rng: &mut impl Rng) -> Result<Vec<SessionId>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("session fraction must lie in (0, 1], got {fraction}")));
    }
    let total = n * n.saturating_sub(1) / 2;
    let count = (fraction * total as f64).round() as usize;
    let mut picked: Vec<usize> = index::sample(rng, total, count.min(total)).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| pair_from_index(n, k)).collect()
}

/// Lexicographic pair `(i, j)`, `i < j`, with rank `k`.
fn pair_from_index(n: usize, mut k: usize) -> Result<SessionId> {
    for i in 0..n {
        let row = n - i - 1;
        if k < row {
            return SessionId::new(i, i + 1 + k);
        }
        k -= row;
    }
    Err(Error::Config(format!("pair index out of range for n = {n}")))
}
