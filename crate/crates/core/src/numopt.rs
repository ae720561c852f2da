//! Offline network-utility-maximization oracle.
//!
//! Runs dual gradient projection with explicit price memory,
//!
//! ```text
//! p_c <- [p_c + theta (sum_s lambda_s(p) - lambda_EGS)]^+
//! p_u <- [p_u + theta (sum_{s in S(u)} lambda_s(p) - lambda_u)]^+
//! ```
//!
//! where `lambda_s(p)` is each session's best response to `p_s`. No queues are
//! involved, so the fixed point is the exact primal-dual optimum the online
//! protocol is measured against.

use crate::error::{Error, Result};
use crate::model::{EgsConfig, RateRegion, SessionTable};
use crate::rcp::{PriceVector, Utilities};

/// Constraint rows: row 0 is the hub, row `1 + u` is node `u`.
#[derive(Debug, Clone)]
pub struct NumProblem {
    table: SessionTable,
    config: EgsConfig,
    utilities: Utilities,
    regions: Vec<RateRegion>,
    rows: Vec<Vec<usize>>,
}

impl NumProblem {
    pub fn new(table: SessionTable, config: EgsConfig, utilities: Utilities) -> Result<Self> {
        if utilities.len() != table.len() {
            return Err(Error::Dimension {
                expected: table.len(),
                actual: utilities.len(),
            });
        }
        let regions = table.rate_regions(config.p_gen())?;
        let mut rows = Vec::with_capacity(1 + table.node_count());
        rows.push((0..table.len()).collect());
        rows.extend((0..table.node_count()).map(|u| table.sessions_of(u).to_vec()));
        Ok(Self {
            table,
            config,
            utilities,
            regions,
            rows,
        })
    }

    pub fn table(&self) -> &SessionTable {
        &self.table
    }

    pub fn config(&self) -> &EgsConfig {
        &self.config
    }

    /// Session positions covered by each constraint row.
    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    fn row_limit(&self, row: usize) -> f64 {
        if row == 0 {
            self.config.lambda_egs()
        } else {
            self.config.node_cap(row - 1)
        }
    }

    fn row_price(prices: &PriceVector, row: usize) -> f64 {
        if row == 0 {
            prices.central
        } else {
            prices.nodes[row - 1]
        }
    }

    /// Best-response rates `lambda*(p)`.
    pub fn best_rates(&self, prices: &PriceVector) -> Vec<f64> {
        let mut rates = Vec::with_capacity(self.table.len());
        self.best_rates_into(prices, &mut rates);
        rates
    }

    fn best_rates_into(&self, prices: &PriceVector, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.table.sessions().iter().enumerate().map(|(s, id)| {
            let price = crate::rcp::session_price(*id, prices);
            self.utilities.get(s).best_response(price, self.regions[s])
        }));
    }

    /// Dual function `D(p) = sup_lambda L(lambda, p)`, in closed form per session.
    pub fn dual_objective(&self, prices: &PriceVector) -> f64 {
        let rates = self.best_rates(prices);
        let separable: f64 = self
            .table
            .sessions()
            .iter()
            .enumerate()
            .map(|(s, id)| {
                let price = crate::rcp::session_price(*id, prices);
                self.utilities.get(s).value(rates[s]) - rates[s] * price
            })
            .sum();
        let offsets: f64 = (0..self.rows.len())
            .map(|row| Self::row_price(prices, row) * self.row_limit(row))
            .sum();
        separable + offsets
    }

    /// `theta = 0.5 / (alpha_max |S|)`.
    pub fn default_step(&self) -> f64 {
        0.5 * crate::rcp::step_bound(&self.utilities, &self.regions).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumSolution {
    pub rates: Vec<f64>,
    pub prices: PriceVector,
    pub iterations: u64,
    /// Largest KKT violation at the returned point.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u64,
    /// Defaults to [`NumProblem::default_step`].
    pub step: Option<f64>,
    /// Defaults to all-zero prices.
    pub initial: Option<PriceVector>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1_000_000,
            step: None,
            initial: None,
        }
    }
}

/// Iterates the projected dual gradient until no price moves by `tol` or more.
pub fn solve_dual(problem: &NumProblem, options: &SolveOptions) -> Result<NumSolution> {
    let step = options.step.unwrap_or_else(|| problem.default_step());
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("solver step must be positive, got {step}")));
    }
    let nodes = problem.table.node_count();
    let mut prices = options
        .initial
        .clone()
        .unwrap_or_else(|| PriceVector::zeros(nodes));
    if prices.nodes.len() != nodes {
        return Err(Error::Dimension {
            expected: nodes,
            actual: prices.nodes.len(),
        });
    }

    let mut rates = Vec::with_capacity(problem.table.len());
    let mut last_change = f64::INFINITY;
    for iteration in 1..=options.max_iter {
        problem.best_rates_into(&prices, &mut rates);
        let mut change: f64 = 0.0;
        for row in 0..problem.rows.len() {
            let load: f64 = problem.rows[row].iter().map(|&s| rates[s]).sum();
            let slot = if row == 0 {
                &mut prices.central
            } else {
                &mut prices.nodes[row - 1]
            };
            let next = (*slot + step * (load - problem.row_limit(row))).max(0.0);
            change = change.max((next - *slot).abs());
            *slot = next;
        }
        last_change = change;
        if change < options.tol {
            let rates = problem.best_rates(&prices);
            let residual = verify_kkt(problem, &rates, &prices).max_violation();
            return Ok(NumSolution {
                rates,
                prices,
                iterations: iteration,
                residual,
            });
        }
    }

    let rates = problem.best_rates(&prices);
    let residual = verify_kkt(problem, &rates, &prices).max_violation();
    Err(Error::NotConverged {
        iterations: options.max_iter,
        last_change,
        last: Box::new(NumSolution {
            rates,
            prices,
            iterations: options.max_iter,
            residual,
        }),
    })
}

/// Violation of one constraint row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowCheck {
    /// 0 for the hub, `1 + u` for node `u`.
    pub row: usize,
    pub load: f64,
    pub limit: f64,
    pub price: f64,
    /// `max(0, load - limit)`.
    pub infeasibility: f64,
    /// `|price * (limit - load)|`.
    pub slackness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Max `|lambda_s - best_response(p_s)|`.
    pub stationarity: f64,
    /// Max violation of row limits or session regions.
    pub primal_feasibility: f64,
    /// Max negative price magnitude.
    pub dual_feasibility: f64,
    /// Max `|p_r * slack_r|`.
    pub complementary_slackness: f64,
    pub rows: Vec<RowCheck>,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementary_slackness)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.max_violation() < tol
    }
}

pub fn verify_kkt(problem: &NumProblem, rates: &[f64], prices: &PriceVector) -> KktReport {
    let best = problem.best_rates(prices);
    let stationarity = rates
        .iter()
        .zip(&best)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let region_violation = rates
        .iter()
        .zip(&problem.regions)
        .map(|(&r, reg)| (reg.min - r).max(r - reg.max).max(0.0))
        .fold(0.0, f64::max);

    let rows: Vec<RowCheck> = (0..problem.rows.len())
        .map(|row| {
            let load: f64 = problem.rows[row].iter().map(|&s| rates[s]).sum();
            let limit = problem.row_limit(row);
            let price = NumProblem::row_price(prices, row);
            RowCheck {
                row,
                load,
                limit,
                price,
                infeasibility: (load - limit).max(0.0),
                slackness: (price * (limit - load)).abs(),
            }
        })
        .collect();

    let primal_feasibility = rows
        .iter()
        .map(|r| r.infeasibility)
        .fold(region_violation, f64::max);
    let dual_feasibility = std::iter::once(prices.central)
        .chain(prices.nodes.iter().copied())
        .map(|p| (-p).max(0.0))
        .fold(0.0, f64::max);
    let complementary_slackness = rows.iter().map(|r| r.slackness).fold(0.0, f64::max);

    KktReport {
        stationarity,
        primal_feasibility,
        dual_feasibility,
        complementary_slackness,
        rows,
    }
}
