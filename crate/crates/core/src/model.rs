//! Sessions, hub configuration, and the capacity-region and Slater predicates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeIndex = usize;

/// An unordered node pair stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct SessionId {
    i: NodeIndex,
    j: NodeIndex,
}

impl SessionId {
    pub fn new(i: NodeIndex, j: NodeIndex) -> Result<Self> {
        if i >= j {
            return Err(Error::InvalidSession {
                i,
                j,
                reason: "pair must satisfy i < j",
            });
        }
        Ok(Self { i, j })
    }

    pub fn i(&self) -> NodeIndex {
        self.i
    }

    pub fn j(&self) -> NodeIndex {
        self.j
    }

    pub fn contains(&self, u: NodeIndex) -> bool {
        self.i == u || self.j == u
    }

    pub fn nodes(&self) -> [NodeIndex; 2] {
        [self.i, self.j]
    }
}

impl TryFrom<(usize, usize)> for SessionId {
    type Error = Error;

    fn try_from((i, j): (usize, usize)) -> Result<Self> {
        SessionId::new(i, j)
    }
}

impl From<SessionId> for (usize, usize) {
    fn from(s: SessionId) -> Self {
        (s.i, s.j)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Per-session entry used to build a [`SessionTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub id: SessionId,
    /// Maximum number of resources the hub may give the session in one slot.
    pub max_resources: u32,
    /// Minimum acceptable rate, pairs/slot.
    pub min_rate: f64,
    /// Node that reports demand and sets the rate. Defaults to the lower index.
    pub designated: Option<NodeIndex>,
}

impl SessionSpec {
    pub fn new(id: SessionId, max_resources: u32, min_rate: f64) -> Self {
        Self {
            id,
            max_resources,
            min_rate,
            designated: None,
        }
    }
}

/// The set of communication sessions with their caps and the node -> session index.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTable {
    node_count: usize,
    sessions: Vec<SessionId>,
    max_resources: Vec<u32>,
    min_rates: Vec<f64>,
    designated: Vec<NodeIndex>,
    by_node: Vec<Vec<usize>>,
}

impl SessionTable {
    pub fn new(node_count: usize, specs: Vec<SessionSpec>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(specs.len());
        let mut by_node = vec![Vec::new(); node_count];
        let mut sessions = Vec::with_capacity(specs.len());
        let mut max_resources = Vec::with_capacity(specs.len());
        let mut min_rates = Vec::with_capacity(specs.len());
        let mut designated = Vec::with_capacity(specs.len());

        for (pos, spec) in specs.into_iter().enumerate() {
            let id = spec.id;
            if id.j >= node_count {
                return Err(Error::InvalidSession {
                    i: id.i,
                    j: id.j,
                    reason: "node index out of range",
                });
            }
            if !seen.insert(id) {
                return Err(Error::DuplicateSession(id));
            }
            if spec.max_resources == 0 {
                return Err(Error::Config(format!(
                    "session {id}: max_resources must be at least 1"
                )));
            }
            if !(spec.min_rate > 0.0 && spec.min_rate.is_finite()) {
                return Err(Error::Config(format!(
                    "session {id}: minimum rate must be positive, got {}",
                    spec.min_rate
                )));
            }
            let designated_node = spec.designated.unwrap_or(id.i);
            if !id.contains(designated_node) {
                return Err(Error::Config(format!(
                    "session {id}: designated node {designated_node} is not a member"
                )));
            }
            by_node[id.i].push(pos);
            by_node[id.j].push(pos);
            sessions.push(id);
            max_resources.push(spec.max_resources);
            min_rates.push(spec.min_rate);
            designated.push(designated_node);
        }

        Ok(Self {
            node_count,
            sessions,
            max_resources,
            min_rates,
            designated,
            by_node,
        })
    }

    /// Builds a table with `x_s = 1` and the default minimum rate `0.1 * lambda_egs / |S|`.
    pub fn with_defaults(node_count: usize, pairs: &[SessionId], lambda_egs: f64) -> Result<Self> {
        let min_rate = default_min_rate(lambda_egs, pairs.len());
        let specs = pairs
            .iter()
            .map(|&id| SessionSpec::new(id, 1, min_rate))
            .collect();
        Self::new(node_count, specs)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn sessions(&self) -> &[SessionId] {
        &self.sessions
    }

    pub fn session(&self, pos: usize) -> SessionId {
        self.sessions[pos]
    }

    pub fn position(&self, id: SessionId) -> Option<usize> {
        self.sessions.iter().position(|&s| s == id)
    }

    pub fn max_resources(&self) -> &[u32] {
        &self.max_resources
    }

    pub fn min_rates(&self) -> &[f64] {
        &self.min_rates
    }

    pub fn designated(&self, pos: usize) -> NodeIndex {
        self.designated[pos]
    }

    /// Session positions touching node `u`, i.e. `S(u)`.
    pub fn sessions_of(&self, u: NodeIndex) -> &[usize] {
        &self.by_node[u]
    }

    /// `[lambda_min_s, x_s * p_gen]`.
    pub fn rate_region(&self, pos: usize, p_gen: f64) -> Result<RateRegion> {
        let min = self.min_rates[pos];
        let max = f64::from(self.max_resources[pos]) * p_gen;
        if min > max {
            return Err(Error::EmptyRateRegion {
                session: self.sessions[pos],
                min,
                max,
            });
        }
        Ok(RateRegion { min, max })
    }

    pub fn rate_regions(&self, p_gen: f64) -> Result<Vec<RateRegion>> {
        (0..self.len()).map(|s| self.rate_region(s, p_gen)).collect()
    }

    /// Same sessions reordered so that new position `k` holds old position `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let specs = order
            .iter()
            .map(|&k| SessionSpec {
                id: self.sessions[k],
                max_resources: self.max_resources[k],
                min_rate: self.min_rates[k],
                designated: Some(self.designated[k]),
            })
            .collect();
        Self::new(self.node_count, specs)
    }
}

pub fn default_min_rate(lambda_egs: f64, sessions: usize) -> f64 {
    0.1 * lambda_egs / sessions.max(1) as f64
}

/// Closed interval of feasible rates for one session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRegion {
    pub min: f64,
    pub max: f64,
}

impl RateRegion {
    pub fn clamp(&self, rate: f64) -> f64 {
        rate.min(self.max).max(self.min)
    }

    pub fn contains(&self, rate: f64) -> bool {
        rate >= self.min && rate <= self.max
    }
}

/// Built-in utility families. Only log utility ships; see [`crate::rcp::Utility`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    #[default]
    Log,
}

/// Raw hub parameters, validated by [`EgsConfig::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct EgsParams {
    pub resources: u32,
    pub p_gen: f64,
    /// `lambda_u` for every node.
    pub node_caps: Vec<f64>,
    pub central_step: f64,
    /// `theta_u` for every node.
    pub node_steps: Vec<f64>,
    pub utility: UtilityKind,
    /// Skip the step-size bound check (for divergence experiments).
    pub override_step_bound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgsConfig {
    resources: u32,
    p_gen: f64,
    node_caps: Vec<f64>,
    central_step: f64,
    node_steps: Vec<f64>,
    utility: UtilityKind,
    override_step_bound: bool,
}

impl EgsConfig {
    pub fn new(params: EgsParams, table: &SessionTable) -> Result<Self> {
        let EgsParams {
            resources,
            p_gen,
            node_caps,
            central_step,
            node_steps,
            utility,
            override_step_bound,
        } = params;

        if !(0.0..=1.0).contains(&p_gen) {
            return Err(Error::Config(format!("p_gen must lie in [0, 1], got {p_gen}")));
        }
        if resources == 0 || p_gen == 0.0 {
            return Err(Error::Config(format!(
                "lambda_EGS = R * p_gen must be positive (R = {resources}, p_gen = {p_gen})"
            )));
        }
        let n = table.node_count();
        if node_caps.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: node_caps.len(),
            });
        }
        if node_steps.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: node_steps.len(),
            });
        }
        if let Some((u, cap)) = node_caps
            .iter()
            .enumerate()
            .find(|(_, c)| !(**c >= 0.0 && c.is_finite()))
        {
            return Err(Error::Config(format!("node {u}: cap must be non-negative, got {cap}")));
        }
        if let Some(pos) = table.max_resources().iter().position(|&x| x > resources) {
            return Err(Error::Config(format!(
                "session {}: x_s = {} exceeds R = {resources}",
                table.session(pos),
                table.max_resources()[pos]
            )));
        }
        table.rate_regions(p_gen)?;

        let config = Self {
            resources,
            p_gen,
            node_caps,
            central_step,
            node_steps,
            utility,
            override_step_bound,
        };
        crate::rcp::check_step_sizes(
            &config,
            table,
            &crate::rcp::Utilities::shared(utility, table.len()),
        )?;
        Ok(config)
    }

    pub fn resources(&self) -> u32 {
        self.resources
    }

    pub fn p_gen(&self) -> f64 {
        self.p_gen
    }

    pub fn lambda_egs(&self) -> f64 {
        lambda_egs(self.resources, self.p_gen)
    }

    pub fn node_caps(&self) -> &[f64] {
        &self.node_caps
    }

    pub fn node_cap(&self, u: NodeIndex) -> f64 {
        self.node_caps[u]
    }

    pub fn central_step(&self) -> f64 {
        self.central_step
    }

    pub fn node_steps(&self) -> &[f64] {
        &self.node_steps
    }

    pub fn node_step(&self, u: NodeIndex) -> f64 {
        self.node_steps[u]
    }

    pub fn utility(&self) -> UtilityKind {
        self.utility
    }

    pub fn override_step_bound(&self) -> bool {
        self.override_step_bound
    }

    /// `2 / (alpha_max * |S|)` for the configured utility family.
    pub fn step_bound(&self, table: &SessionTable) -> Result<f64> {
        let utilities = crate::rcp::Utilities::shared(self.utility, table.len());
        crate::rcp::step_bound(&utilities, &table.rate_regions(self.p_gen)?)
    }

    /// Copy with a different resource count; step sizes are not re-checked.
    pub fn with_resources(&self, resources: u32) -> Result<Self> {
        if resources == 0 {
            return Err(Error::Config("resource count must stay positive".into()));
        }
        Ok(Self {
            resources,
            ..self.clone()
        })
    }

    pub fn with_node_cap(&self, u: NodeIndex, cap: f64) -> Result<Self> {
        if u >= self.node_caps.len() || !(cap >= 0.0) {
            return Err(Error::Config(format!("invalid node cap change: node {u}, cap {cap}")));
        }
        let mut next = self.clone();
        next.node_caps[u] = cap;
        Ok(next)
    }
}

pub fn lambda_egs(resources: u32, p_gen: f64) -> f64 {
    f64::from(resources) * p_gen
}

/// A constraint of the capacity set that is violated or tight.
#[derive(Debug, Clone, PartialEq)]
pub enum BindingConstraint {
    TotalRate { total: f64, limit: f64 },
    SessionRate { session: usize, rate: f64, limit: f64 },
    Negative { session: usize, rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityVerdict {
    pub inside_interior: bool,
    pub binding_constraints: Vec<BindingConstraint>,
}

/// Tests membership of `rates` in the interior of the capacity set.
///
/// Boundary points count as outside: every inequality is strict.
pub fn capacity_check(
    rates: &[f64],
    config: &EgsConfig,
    table: &SessionTable,
) -> Result<CapacityVerdict> {
    capacity_check_raw(rates, config.lambda_egs(), config.p_gen(), table)
}

pub(crate) fn capacity_check_raw(
    rates: &[f64],
    lambda_egs: f64,
    p_gen: f64,
    table: &SessionTable,
) -> Result<CapacityVerdict> {
    if rates.len() != table.len() {
        return Err(Error::Dimension {
            expected: table.len(),
            actual: rates.len(),
        });
    }
    let mut binding = Vec::new();
    for (s, &rate) in rates.iter().enumerate() {
        if rate < 0.0 {
            binding.push(BindingConstraint::Negative { session: s, rate });
        }
    }
    let total: f64 = rates.iter().sum();
    if !(total < lambda_egs) {
        binding.push(BindingConstraint::TotalRate {
            total,
            limit: lambda_egs,
        });
    }
    for (s, (&rate, &x)) in rates.iter().zip(table.max_resources()).enumerate() {
        let limit = f64::from(x) * p_gen;
        if !(rate < limit) {
            binding.push(BindingConstraint::SessionRate {
                session: s,
                rate,
                limit,
            });
        }
    }
    Ok(CapacityVerdict {
        inside_interior: binding.is_empty(),
        binding_constraints: binding,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlaterViolation {
    Total { sum_min: f64, lambda_egs: f64 },
    Node { node: NodeIndex, sum_min: f64, cap: f64 },
}

impl fmt::Display for SlaterViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlaterViolation::Total { sum_min, lambda_egs } => write!(
                f,
                "sum of minimum rates {sum_min} is not below lambda_EGS {lambda_egs}"
            ),
            SlaterViolation::Node { node, sum_min, cap } => write!(
                f,
                "node {node}: sum of minimum rates {sum_min} is not below its cap {cap}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlaterReport {
    pub holds: bool,
    pub violations: Vec<SlaterViolation>,
}

/// Strict feasibility of the all-minimum rate vector.
pub fn slater_check(table: &SessionTable, config: &EgsConfig) -> SlaterReport {
    slater_check_raw(table, config.lambda_egs(), config.node_caps())
}

pub(crate) fn slater_check_raw(
    table: &SessionTable,
    lambda_egs: f64,
    node_caps: &[f64],
) -> SlaterReport {
    let mins = table.min_rates();
    let mut violations = Vec::new();
    let sum_min: f64 = mins.iter().sum();
    if !(sum_min < lambda_egs) {
        violations.push(SlaterViolation::Total { sum_min, lambda_egs });
    }
    for (u, &cap) in node_caps.iter().enumerate() {
        let sum_min: f64 = table.sessions_of(u).iter().map(|&s| mins[s]).sum();
        if !(sum_min < cap) {
            violations.push(SlaterViolation::Node {
                node: u,
                sum_min,
                cap,
            });
        }
    }
    SlaterReport {
        holds: violations.is_empty(),
        violations,
    }
}

/// Projects a rate onto `[lambda_min_s, x_s * p_gen]`.
pub fn feasible_rate_region_clamp(
    rate: f64,
    session: SessionId,
    table: &SessionTable,
    config: &EgsConfig,
) -> Result<f64> {
    let pos = table.position(session).ok_or(Error::InvalidSession {
        i: session.i,
        j: session.j,
        reason: "not in session table",
    })?;
    Ok(table.rate_region(pos, config.p_gen())?.clamp(rate))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn pairs(list: &[(usize, usize)]) -> Vec<SessionId> {
        list.iter().map(|&(i, j)| SessionId::new(i, j).unwrap()).collect()
    }

    pub fn table(n: usize, list: &[(usize, usize)], min_rate: f64) -> SessionTable {
        let specs = pairs(list)
            .into_iter()
            .map(|id| SessionSpec::new(id, 1, min_rate))
            .collect();
        SessionTable::new(n, specs).unwrap()
    }

    pub fn config(table: &SessionTable, resources: u32, p_gen: f64, node_cap: f64) -> EgsConfig {
        let n = table.node_count();
        let step = 1.0 / (40.0 * lambda_egs(resources, p_gen));
        EgsConfig::new(
            EgsParams {
                resources,
                p_gen,
                node_caps: vec![node_cap; n],
                central_step: step,
                node_steps: vec![step; n],
                utility: UtilityKind::Log,
                override_step_bound: false,
            },
            table,
        )
        .unwrap()
    }
}
