//! Experiment configuration, built-in presets, and the file outputs of a run.
//!
//! A run directory holds:
//!
//! * `trace.csv`: ensemble-mean trajectory, columns
//!   `slot,sum_lambda,sum_q,max_rate,min_rate`;
//! * `summary.toml`: convergence time and tightness per epoch, rate gap,
//!   tail-averaged session rates, and the offline optimum when requested;
//! * `manifest.toml`: the full experiment config plus what it resolved to
//!   (sessions, node caps, scenario events). Feeding it back through
//!   [`load_config`] reproduces the same trace byte for byte;
//! * `rates.csv` (only with a rate sampling interval): mean per-session rates.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::engine::{self, EpochSummary, RunSetup, RunSummary, ScenarioEvent};
use crate::error::{Error, Result};
use crate::model::{
    default_min_rate, lambda_egs, slater_check, EgsConfig, EgsParams, SessionId,
    SessionSpec, SessionTable, UtilityKind,
};
use crate::numopt::{self, NumProblem, NumSolution, SolveOptions};
use crate::rcp::Utilities;
use crate::traffic::{Purpose, RngStream};

pub const PRESETS: &[&str] = &[
    "fig2-n20",
    "fig2-n50",
    "fig2-n100",
    "fig3",
    "fig4-uniform",
    "fig4-tiered",
    "fig4-uniform-n20",
    "fig4-uniform-n50",
    "fig4-uniform-n100",
    "fig4-tiered-n20",
    "fig4-tiered-n50",
    "fig4-tiered-n100",
];

/// Per-node rate caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NodeCapProfile {
    /// The same cap for every node.
    Uniform { cap: f64 },
    /// `((|S| - 1) / 2) * p_gen` for every node: effectively unconstrained.
    SessionScaled,
    /// A quarter of nodes at `high * p_gen`, half at `mid * p_gen`, the rest
    /// at `low * p_gen`, assigned by a seeded shuffle.
    ThreeTier { high: f64, mid: f64, low: f64 },
    Explicit { caps: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MinRatePolicy {
    /// `0.1 * lambda_EGS / |S|`.
    Default,
    Fixed { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    /// `1 / (divisor * lambda_EGS)` for the hub and every node.
    InverseCapacity { divisor: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioSpec {
    None,
    Events { events: Vec<ScenarioEvent> },
    /// Resource count moves by one (reflecting at the bounds) every `interval` slots.
    ResourceWalk { interval: u64, min: u32, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub nodes: usize,
    pub resources: u32,
    pub p_gen: f64,
    /// `x_s` for every session.
    pub max_resources: u32,
    /// Fraction of all node pairs sampled as sessions. Ignored when `sessions` is set.
    pub session_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sessions: Option<Vec<SessionId>>,
    pub node_caps: NodeCapProfile,
    pub min_rate: MinRatePolicy,
    pub step: StepRule,
    #[serde(default)]
    pub override_step_bound: bool,
    #[serde(default)]
    pub utility: UtilityKind,
    pub horizon: u64,
    pub runs: u64,
    pub seed: u64,
    pub scenario: ScenarioSpec,
    pub tail_window: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_sample_interval: Option<u64>,
    #[serde(default)]
    pub emit_oracle: bool,
}

/// Returns the named built-in experiment.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = |name: &str, nodes: usize| ExperimentConfig {
        name: name.to_string(),
        nodes,
        resources: 3,
        p_gen: 0.05,
        max_resources: 1,
        session_fraction: 0.1,
        sessions: None,
        node_caps: NodeCapProfile::SessionScaled,
        min_rate: MinRatePolicy::Default,
        step: StepRule::InverseCapacity { divisor: 40.0 },
        override_step_bound: false,
        utility: UtilityKind::Log,
        horizon: 60_000,
        runs: 100,
        seed: 1,
        scenario: ScenarioSpec::None,
        tail_window: 10_000,
        rate_sample_interval: None,
        emit_oracle: false,
    };
    let tiered = NodeCapProfile::ThreeTier {
        high: 1.5,
        mid: 1.0,
        low: 0.5,
    };
    let config = match name {
        "fig2-n20" => base(name, 20),
        "fig2-n50" => base(name, 50),
        "fig2-n100" => base(name, 100),
        "fig3" => ExperimentConfig {
            step: StepRule::InverseCapacity { divisor: 10.0 },
            scenario: ScenarioSpec::ResourceWalk {
                interval: 10_000,
                min: 1,
                max: 3,
            },
            ..base(name, 50)
        },
        "fig4-uniform" | "fig4-uniform-n50" => base(name, 50),
        "fig4-uniform-n20" => base(name, 20),
        "fig4-uniform-n100" => base(name, 100),
        "fig4-tiered" | "fig4-tiered-n50" => ExperimentConfig {
            node_caps: tiered,
            ..base(name, 50)
        },
        "fig4-tiered-n20" => ExperimentConfig {
            node_caps: tiered,
            ..base(name, 20)
        },
        "fig4-tiered-n100" => ExperimentConfig {
            node_caps: tiered,
            ..base(name, 100)
        },
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    Ok(config)
}

/// What an [`ExperimentConfig`] expands to. Recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub lambda_egs: f64,
    pub sessions: Vec<SessionId>,
    pub min_rate: f64,
    pub node_caps: Vec<f64>,
    pub step: f64,
    pub step_bound: f64,
    pub scenario: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub experiment: ExperimentConfig,
    pub resolution: Resolution,
    pub setup: RunSetup,
}

impl ExperimentConfig {
    /// Expands sampling rules and validates the constraint set. Fails on any
    /// Slater or step-size violation before anything runs.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        if self.nodes < 2 {
            return Err(Error::Config("at least two nodes are required".into()));
        }
        let capacity = lambda_egs(self.resources, self.p_gen);
        let sessions = match &self.sessions {
            Some(list) => list.clone(),
            None => {
                let mut rng = RngStream::new(self.seed, 0, Purpose::SessionSampling);
                engine::sample_sessions(self.nodes, self.session_fraction, &mut rng)?
            }
        };
        if sessions.is_empty() {
            return Err(Error::Config("experiment has no sessions".into()));
        }
        let min_rate = match self.min_rate {
            MinRatePolicy::Default => default_min_rate(capacity, sessions.len()),
            MinRatePolicy::Fixed { rate } => rate,
        };
        let table = SessionTable::new(
            self.nodes,
            sessions
                .iter()
                .map(|&id| SessionSpec::new(id, self.max_resources, min_rate))
                .collect(),
        )?;
        let node_caps = self.node_caps(sessions.len())?;
        let step = match self.step {
            StepRule::InverseCapacity { divisor } => 1.0 / (divisor * capacity),
            StepRule::Fixed { value } => value,
        };
        let config = EgsConfig::new(
            EgsParams {
                resources: self.resources,
                p_gen: self.p_gen,
                node_caps: node_caps.clone(),
                central_step: step,
                node_steps: vec![step; self.nodes],
                utility: self.utility,
                override_step_bound: self.override_step_bound,
            },
            &table,
        )?;
        let report = slater_check(&table, &config);
        if !report.holds {
            return Err(Error::Slater {
                epoch: None,
                violations: report.violations.iter().map(|v| v.to_string()).collect(),
            });
        }
        let scenario = match &self.scenario {
            ScenarioSpec::None => Vec::new(),
            ScenarioSpec::Events { events } => events.clone(),
            ScenarioSpec::ResourceWalk { interval, min, max } => {
                let mut rng = RngStream::new(self.seed, 0, Purpose::Scenario);
                engine::resource_walk(self.resources, *min, *max, *interval, self.horizon, &mut rng)
            }
        };
        let step_bound = config.step_bound(&table)?;

        let mut setup = RunSetup::new(config, table, self.horizon);
        setup.utilities = Utilities::shared(self.utility, sessions.len());
        setup.scenario = scenario.clone();
        setup.tail_window = self.tail_window;
        setup.rate_sample_interval = self.rate_sample_interval;
        setup.validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }

        Ok(ResolvedExperiment {
            experiment: self.clone(),
            resolution: Resolution {
                lambda_egs: capacity,
                sessions,
                min_rate,
                node_caps,
                step,
                step_bound,
                scenario,
            },
            setup,
        })
    }

    fn node_caps(&self, sessions: usize) -> Result<Vec<f64>> {
        let n = self.nodes;
        Ok(match &self.node_caps {
            NodeCapProfile::Uniform { cap } => vec![*cap; n],
            NodeCapProfile::SessionScaled => {
                vec![(sessions.saturating_sub(1) as f64 / 2.0) * self.p_gen; n]
            }
            NodeCapProfile::ThreeTier { high, mid, low } => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut RngStream::new(self.seed, 0, Purpose::NodeTiers));
                let quarter = n / 4;
                let half = n / 2;
                let mut caps = vec![0.0; n];
                for (rank, &u) in order.iter().enumerate() {
                    let factor = if rank < quarter {
                        high
                    } else if rank < quarter + half {
                        mid
                    } else {
                        low
                    };
                    caps[u] = factor * self.p_gen;
                }
                caps
            }
            NodeCapProfile::Explicit { caps } => {
                if caps.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        actual: caps.len(),
                    });
                }
                caps.clone()
            }
        })
    }
}

/// Manifest written next to every run: config plus its resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub experiment: ExperimentConfig,
    pub resolved: Resolution,
}

/// Reads either a plain experiment config or a manifest.
///
/// A manifest's recorded resolution must match what its config resolves to.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let parse_err = |e: toml::de::Error| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    };
    let value: toml::Table = toml::from_str(text).map_err(parse_err)?;
    if value.contains_key("experiment") {
        let manifest: Manifest = toml::from_str(text).map_err(parse_err)?;
        let resolved = manifest.experiment.resolve()?;
        if resolved.resolution != manifest.resolved {
            return Err(Error::Parse {
                path: origin.to_string(),
                message: "recorded resolution does not match the experiment config".into(),
            });
        }
        Ok(manifest.experiment)
    } else {
        toml::from_str(text).map_err(parse_err)
    }
}

/// Offline optimum recorded in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub converged: bool,
    pub iterations: u64,
    pub residual: f64,
    pub central_price: f64,
    pub node_prices: Vec<f64>,
    pub rates: Vec<f64>,
}

impl OracleRecord {
    fn from_solution(sol: NumSolution, converged: bool) -> Self {
        Self {
            converged,
            iterations: sol.iterations,
            residual: sol.residual,
            central_price: sol.prices.central,
            node_prices: sol.prices.nodes,
            rates: sol.rates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub name: String,
    pub runs: u64,
    pub horizon: u64,
    pub seed: u64,
    pub sessions: usize,
    pub lambda_egs: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_time: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tightness: Option<f64>,
    pub mean_rate_gap: f64,
    pub tail_mean_rates: Vec<f64>,
    pub epochs: Vec<EpochSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: RunSummary,
    pub record: SummaryRecord,
    pub manifest: Manifest,
}

/// Solves the static problem for the experiment's initial constraint set.
pub fn solve_oracle(setup: &RunSetup, options: &SolveOptions) -> Result<OracleRecord> {
    let problem = NumProblem::new(setup.table.clone(), setup.config.clone(), setup.utilities.clone())?;
    match numopt::solve_dual(&problem, options) {
        Ok(sol) => Ok(OracleRecord::from_solution(sol, true)),
        Err(Error::NotConverged { last, .. }) => Ok(OracleRecord::from_solution(*last, false)),
        Err(e) => Err(e),
    }
}

/// Runs the ensemble without touching the filesystem.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let resolved = config.resolve()?;
    let summary = engine::ensemble(&resolved.setup, config.runs, config.seed)?;
    let oracle = if config.emit_oracle {
        Some(solve_oracle(&resolved.setup, &SolveOptions::default())?)
    } else {
        None
    };
    let record = SummaryRecord {
        name: config.name.clone(),
        runs: config.runs,
        horizon: config.horizon,
        seed: config.seed,
        sessions: resolved.setup.table.len(),
        lambda_egs: resolved.resolution.lambda_egs,
        converged: summary.converged(),
        convergence_time: summary.convergence_time(),
        tightness: summary.tightness(),
        mean_rate_gap: summary.mean_rate_gap(),
        tail_mean_rates: summary.tail_mean_rates.clone(),
        epochs: summary.epochs.clone(),
        oracle,
    };
    Ok(ExperimentReport {
        summary,
        record,
        manifest: Manifest {
            experiment: config.clone(),
            resolved: resolved.resolution,
        },
    })
}

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RATES_FILE: &str = "rates.csv";
pub const TRACE_HEADER: &str = "slot,sum_lambda,sum_q,max_rate,min_rate";

pub fn render_trace(summary: &RunSummary) -> String {
    let mut out = String::with_capacity(64 * (summary.mean_trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for p in &summary.mean_trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.slot, p.sum_rate, p.sum_queue, p.max_rate, p.min_rate
        );
    }
    out
}

pub fn render_rates(summary: &RunSummary, sessions: &[SessionId]) -> String {
    let mut out = String::from("slot");
    for s in sessions {
        let _ = write!(out, ",s{}_{}", s.i(), s.j());
    }
    out.push('\n');
    for (slot, rates) in &summary.sampled_rates {
        let _ = write!(out, "{slot}");
        for r in rates {
            let _ = write!(out, ",{r}");
        }
        out.push('\n');
    }
    out
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(format!("serialization failed: {e}")))
}

/// Runs the experiment and writes its files into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    let report = execute(config)?;
    write_outputs(&report, out_dir)?;
    Ok(report)
}

pub fn write_outputs(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = vec![
        (out_dir.join(TRACE_FILE), render_trace(&report.summary)),
        (out_dir.join(SUMMARY_FILE), to_toml(&report.record)?),
        (out_dir.join(MANIFEST_FILE), to_toml(&report.manifest)?),
    ];
    if !report.summary.sampled_rates.is_empty() {
        files.push((
            out_dir.join(RATES_FILE),
            render_rates(&report.summary, &report.manifest.resolved.sessions),
        ));
    }
    for (path, contents) in &files {
        fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// The step-size ceiling a preset's log-utility sessions impose, computed
/// from first principles: `alpha = (x_s p_gen)^2`.
pub fn analytic_step_bound(config: &ExperimentConfig, sessions: usize) -> f64 {
    let lambda_max = f64::from(config.max_resources) * config.p_gen;
    2.0 / (lambda_max * lambda_max * sessions as f64)
}

/// Number of sessions a preset samples.
pub fn session_count(config: &ExperimentConfig) -> usize {
    match &config.sessions {
        Some(list) => list.len(),
        None => {
            let pairs = config.nodes * (config.nodes - 1) / 2;
            (config.session_fraction * pairs as f64).round() as usize
        }
    }
}
