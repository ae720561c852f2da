//! Rate control: price updates at the hub and at every node, and the
//! utility-driven rate each session sets from its price.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{EgsConfig, NodeIndex, RateRegion, SessionId, SessionTable, UtilityKind};

/// Central price plus one price per node. All components are non-negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceVector {
    pub central: f64,
    pub nodes: Vec<f64>,
}

impl PriceVector {
    pub fn zeros(node_count: usize) -> Self {
        Self {
            central: 0.0,
            nodes: vec![0.0; node_count],
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.central >= 0.0 && self.nodes.iter().all(|&p| p >= 0.0)
    }
}

/// A session's utility `f`.
///
/// Implementations must be increasing, strictly concave and twice
/// differentiable on the session's rate region, with `-f'' >= 1 / alpha`
/// there.
pub trait Utility: Send + Sync + fmt::Debug {
    fn value(&self, rate: f64) -> f64;

    fn derivative(&self, rate: f64) -> f64;

    fn second_derivative(&self, rate: f64) -> f64;

    /// `alpha_s` with `-f''(rate) >= 1 / alpha_s` on `region`.
    fn curvature_bound(&self, region: RateRegion) -> f64;

    /// The rate in `region` whose marginal utility equals `price`, clamped to the region.
    fn best_response(&self, price: f64, region: RateRegion) -> f64 {
        generic_inverse_derivative(self, price, region)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogUtility;

impl Utility for LogUtility {
    fn value(&self, rate: f64) -> f64 {
        rate.ln()
    }

    fn derivative(&self, rate: f64) -> f64 {
        1.0 / rate
    }

    fn second_derivative(&self, rate: f64) -> f64 {
        -1.0 / (rate * rate)
    }

    fn curvature_bound(&self, region: RateRegion) -> f64 {
        region.max * region.max
    }

    fn best_response(&self, price: f64, region: RateRegion) -> f64 {
        if price <= 0.0 {
            return region.max;
        }
        region.clamp(1.0 / price)
    }
}

/// Bisection on `f'(rate) = price` over the region, to absolute tolerance 1e-12.
pub fn generic_inverse_derivative<U: Utility + ?Sized>(
    utility: &U,
    price: f64,
    region: RateRegion,
) -> f64 {
    if price <= utility.derivative(region.max) {
        return region.max;
    }
    if price >= utility.derivative(region.min) {
        return region.min;
    }
    let (mut lo, mut hi) = (region.min, region.max);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if utility.derivative(mid) > price {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Per-session utility assignment.
#[derive(Debug, Clone)]
pub struct Utilities {
    per_session: Vec<Arc<dyn Utility>>,
}

impl Utilities {
    pub fn shared(kind: UtilityKind, sessions: usize) -> Self {
        let u: Arc<dyn Utility> = match kind {
            UtilityKind::Log => Arc::new(LogUtility),
        };
        Self {
            per_session: vec![u; sessions],
        }
    }

    pub fn from_vec(per_session: Vec<Arc<dyn Utility>>) -> Self {
        Self { per_session }
    }

    pub fn len(&self) -> usize {
        self.per_session.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_session.is_empty()
    }

    pub fn get(&self, s: usize) -> &dyn Utility {
        self.per_session[s].as_ref()
    }
}

/// Step-size ceiling `2 / (alpha_max * |S|)`.
pub fn step_bound(utilities: &Utilities, regions: &[RateRegion]) -> Result<f64> {
    if utilities.len() != regions.len() {
        return Err(Error::Dimension {
            expected: regions.len(),
            actual: utilities.len(),
        });
    }
    if regions.is_empty() {
        return Ok(f64::INFINITY);
    }
    let alpha_max = regions
        .iter()
        .enumerate()
        .map(|(s, &r)| utilities.get(s).curvature_bound(r))
        .fold(0.0, f64::max);
    Ok(2.0 / (alpha_max * regions.len() as f64))
}

/// Rejects any step size outside `(0, 2 / (alpha_max |S|))` unless overridden.
pub fn check_step_sizes(
    config: &EgsConfig,
    table: &SessionTable,
    utilities: &Utilities,
) -> Result<()> {
    if config.override_step_bound() {
        return Ok(());
    }
    let bound = step_bound(utilities, &table.rate_regions(config.p_gen())?)?;
    let steps = std::iter::once(("central price".to_string(), config.central_step())).chain(
        config
            .node_steps()
            .iter()
            .enumerate()
            .map(|(u, &step)| (format!("node {u} price"), step)),
    );
    for (target, step) in steps {
        if !(step > 0.0 && step < bound) {
            return Err(Error::StepSize { target, step, bound });
        }
    }
    Ok(())
}

/// Hub price: queued demand scaled by `1 / lambda_EGS` plus the step-weighted
/// excess of requested over deliverable rate, projected onto `[0, inf)`.
pub fn central_price_update(queues: &[u64], rates: &[f64], config: &EgsConfig) -> f64 {
    let total_queue: u64 = queues.iter().sum();
    let total_rate: f64 = rates.iter().sum();
    central_price(total_queue, total_rate, config.lambda_egs(), config.central_step())
}

#[inline]
pub(crate) fn central_price(total_queue: u64, total_rate: f64, lambda_egs: f64, step: f64) -> f64 {
    (total_queue as f64 / lambda_egs + step * (total_rate - lambda_egs)).max(0.0)
}

/// Node price over the sessions `S(u)` touching node `u`.
pub fn node_price_update(
    u: NodeIndex,
    queues: &[u64],
    rates: &[f64],
    table: &SessionTable,
    config: &EgsConfig,
) -> Result<f64> {
    let cap = config.node_cap(u);
    let sessions = table.sessions_of(u);
    if sessions.is_empty() {
        return Ok(0.0);
    }
    if !(cap > 0.0) {
        return Err(Error::Config(format!("node {u}: price needs a positive cap, got {cap}")));
    }
    let queue: u64 = sessions.iter().map(|&s| queues[s]).sum();
    let rate: f64 = sessions.iter().map(|&s| rates[s]).sum();
    Ok(node_price(queue, rate, cap, config.node_step(u)))
}

#[inline]
pub(crate) fn node_price(queue: u64, rate: f64, cap: f64, step: f64) -> f64 {
    (queue as f64 / cap + step * (rate - cap)).max(0.0)
}

/// `p_c + p_i + p_j`.
pub fn session_price(session: SessionId, prices: &PriceVector) -> f64 {
    prices.central + prices.nodes[session.i()] + prices.nodes[session.j()]
}

/// Rate a session sets in response to the current prices.
pub fn rate_update(
    session: SessionId,
    prices: &PriceVector,
    utility: &dyn Utility,
    table: &SessionTable,
    config: &EgsConfig,
) -> Result<f64> {
    let pos = table.position(session).ok_or(Error::InvalidSession {
        i: session.i(),
        j: session.j(),
        reason: "not in session table",
    })?;
    let region = table.rate_region(pos, config.p_gen())?;
    Ok(utility.best_response(session_price(session, prices), region))
}
