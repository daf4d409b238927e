//! One synchronous Net-Bidding round and the loop that iterates it to a legitimate
//! configuration.
//!
//! A round runs in three phases against the time-`t` snapshot:
//!
//! 1. every node picks its cheapest neighbor (ties to the lowest id) and bids on it when
//!    its own price is at least `epsilon` higher;
//! 2. every node that received a bid becomes a seller and its own outgoing bid is
//!    cancelled; each seller takes its highest surviving bid (ties to the lowest buyer id);
//! 3. every contracted pair trades to its pooled price, all pairs at once.

use std::io::Write;

use crate::error::{Error, Result};
use crate::market::{Configuration, NodeState};
use crate::strategy::Strategy;
use crate::topology::Topology;

pub use crate::strategy::compute_bid_fixed_c;

/// Relative drift allowed on total funds and total coins per step.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

/// Default legitimacy tolerance: neighbor prices closer than this are treated as equal.
pub const DEFAULT_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bid {
    pub buyer: usize,
    pub seller: usize,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contract {
    pub seller: usize,
    pub buyer: usize,
    pub bid_price: f64,
    pub quantity: f64,
    pub pooled_price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub p_max: f64,
    pub p_min: f64,
    pub diff: f64,
    pub contracts: usize,
    pub total_f: f64,
    pub total_q: f64,
}

impl StepMetrics {
    /// Metrics of `cfg` itself, attributing `contracts` trades to the step that produced it.
    pub fn of(cfg: &Configuration, contracts: usize) -> Self {
        let (p_max, p_min) = cfg.price_extent();
        StepMetrics {
            step: cfg.step,
            p_max,
            p_min,
            diff: p_max - p_min,
            contracts,
            total_f: cfg.total_funds(),
            total_q: cfg.total_coins(),
        }
    }
}

/// Neighbor of `i` with the lowest price, ties to the lowest id.
pub fn cheapest_neighbor(cfg: &Configuration, topo: &Topology, i: usize) -> usize {
    let mut best = topo.adj(i)[0];
    let mut best_price = cfg.price(best);
    for &m in &topo.adj(i)[1..] {
        let p = cfg.price(m);
        if p < best_price {
            best = m;
            best_price = p;
        }
    }
    best
}

/// Phase 1: at most one bid per node, on its cheapest neighbor, when the price gap is at
/// least `epsilon`. Bids are ordered by buyer id.
pub fn collect_bids(
    cfg: &Configuration,
    topo: &Topology,
    strategy: &Strategy,
    epsilon: f64,
) -> Result<Vec<Bid>> {
    let mut bids = Vec::new();
    for i in 0..topo.n() {
        let h = cheapest_neighbor(cfg, topo, i);
        if cfg.price(i) - cfg.price(h) >= epsilon {
            bids.push(Bid {
                buyer: i,
                seller: h,
                price: strategy.bid(cfg, topo, i, h)?,
            });
        }
    }
    Ok(bids)
}

/// Number of raw bids each node received, before any cancellation.
pub fn incoming_counts(bids: &[Bid], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for b in bids {
        counts[b.seller] += 1;
    }
    counts
}

/// `(f_s + f_b) / (q_s + q_b)`.
pub fn pooled_price(seller: &NodeState, buyer: &NodeState) -> f64 {
    (seller.f + buyer.f) / (seller.q + buyer.q)
}

/// Coins the seller passes at `bid_price` per coin so both sides end at the pooled price:
/// `q_s (p* - p_s) / (b + p*)`.
pub fn trade_quantity(seller: &NodeState, buyer: &NodeState, bid_price: f64) -> f64 {
    let pooled = pooled_price(seller, buyer);
    seller.q * (pooled - seller.price()) / (bid_price + pooled)
}

/// Phase 2: priority of selling over buying, then highest bid per seller.
///
/// Contracts are ordered by seller id and form vertex-disjoint pairs.
pub fn resolve_contracts(bids: &[Bid], cfg: &Configuration) -> Vec<Contract> {
    let n = cfg.len();
    let mut is_seller = vec![false; n];
    for b in bids {
        is_seller[b.seller] = true;
    }
    let mut winner: Vec<Option<Bid>> = vec![None; n];
    for b in bids.iter().filter(|b| !is_seller[b.buyer]) {
        let slot = &mut winner[b.seller];
        let better = match slot {
            None => true,
            Some(cur) => b.price > cur.price || (b.price == cur.price && b.buyer < cur.buyer),
        };
        if better {
            *slot = Some(*b);
        }
    }
    winner
        .into_iter()
        .flatten()
        .map(|b| {
            let (s, q) = (&cfg.states[b.seller], &cfg.states[b.buyer]);
            Contract {
                seller: b.seller,
                buyer: b.buyer,
                bid_price: b.price,
                quantity: trade_quantity(s, q, b.price),
                pooled_price: pooled_price(s, q),
            }
        })
        .collect()
}

/// Trades coins from `seller` to `buyer` at `bid_price` until both reach the pooled price.
pub fn execute_trade(
    seller: NodeState,
    buyer: NodeState,
    bid_price: f64,
) -> Result<(NodeState, NodeState)> {
    let (p_s, p_b) = (seller.price(), buyer.price());
    if p_s >= p_b || p_s.is_nan() || !(p_s..=p_b).contains(&bid_price) {
        return Err(Error::Protocol(format!(
            "trade needs p_seller < p_buyer and p_seller <= bid <= p_buyer; got {p_s}, {p_b}, bid {bid_price}"
        )));
    }
    let pooled = pooled_price(&seller, &buyer);
    let x = trade_quantity(&seller, &buyer, bid_price);
    let paid = bid_price * x;
    let s = NodeState::new(seller.q - x, seller.f + paid);
    let b = NodeState::new(buyer.q + x, buyer.f - paid);
    if !(x > 0.0 && s.q > 0.0 && s.f > 0.0 && b.q > 0.0 && b.f > 0.0) {
        return Err(Error::Protocol(format!(
            "trade left a non-positive holding: x = {x}, seller {s:?}, buyer {b:?}"
        )));
    }
    let tol = 1e-9 * pooled;
    if (s.price() - pooled).abs() > tol || (b.price() - pooled).abs() > tol {
        return Err(Error::Protocol(format!(
            "trade missed pooled price {pooled}: seller {}, buyer {}",
            s.price(),
            b.price()
        )));
    }
    Ok((s, b))
}

/// Everything one round produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub config: Configuration,
    pub metrics: StepMetrics,
    pub bids: Vec<Bid>,
    pub contracts: Vec<Contract>,
    /// Raw bids received per node (the actual bidder count).
    pub bidder_counts: Vec<usize>,
    /// The strategy's bidder-count estimate per node at bid time, if it estimates at all.
    pub estimates: Option<Vec<usize>>,
}

/// One synchronous round from `cfg` to its successor.
pub fn step(
    cfg: &Configuration,
    topo: &Topology,
    strategy: &mut Strategy,
    epsilon: f64,
) -> Result<StepOutcome> {
    if cfg.len() != topo.n() {
        return Err(Error::InvalidParameter(format!(
            "configuration has {} nodes, topology {}",
            cfg.len(),
            topo.n()
        )));
    }
    let estimates = strategy.estimate_all(cfg, topo);
    let bids = collect_bids(cfg, topo, strategy, epsilon)?;
    let bidder_counts = incoming_counts(&bids, topo.n());
    let contracts = resolve_contracts(&bids, cfg);

    let mut next = cfg.clone();
    next.step = cfg.step + 1;
    for c in &contracts {
        let (s, b) = execute_trade(cfg.states[c.seller], cfg.states[c.buyer], c.bid_price)?;
        next.states[c.seller] = s;
        next.states[c.buyer] = b;
    }
    check_conservation(cfg, &next)?;
    strategy.observe(&bidder_counts);

    let metrics = StepMetrics::of(&next, contracts.len());
    Ok(StepOutcome {
        config: next,
        metrics,
        bids,
        contracts,
        bidder_counts,
        estimates,
    })
}

fn check_conservation(before: &Configuration, after: &Configuration) -> Result<()> {
    let (f0, f1) = (before.total_funds(), after.total_funds());
    let (q0, q1) = (before.total_coins(), after.total_coins());
    if (f1 - f0).abs() > CONSERVATION_TOLERANCE * f0
        || (q1 - q0).abs() > CONSERVATION_TOLERANCE * q0
    {
        return Err(Error::Invariant(format!(
            "step {}: totals drifted F {f0} -> {f1}, Q {q0} -> {q1}",
            after.step
        )));
    }
    Ok(())
}

/// Outcome of one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Steps taken; the stabilization time when `converged`.
    pub steps: u64,
    pub converged: bool,
    /// `F / Q` of the final configuration.
    pub equilibrium_price: f64,
    pub max_funds: f64,
    pub min_funds: f64,
    /// Metrics of every configuration, starting with the initial one (`contracts = 0`).
    pub metrics: Vec<StepMetrics>,
    pub final_config: Configuration,
}

impl TrialResult {
    /// Largest distance of any final node price from `F / Q`.
    pub fn max_price_error(&self) -> f64 {
        let pe = self.equilibrium_price;
        self.final_config
            .prices()
            .into_iter()
            .map(|p| (p - pe).abs())
            .fold(0.0, f64::max)
    }
}

/// Iterates [`step`] until the configuration is legitimate or `max_steps` rounds ran.
pub fn run_to_convergence(
    cfg: Configuration,
    topo: &Topology,
    strategy: &mut Strategy,
    epsilon: f64,
    max_steps: u64,
) -> Result<TrialResult> {
    run_observed(cfg, topo, strategy, epsilon, max_steps, |_| Ok(()))
}

/// [`run_to_convergence`] with a hook called after every round.
pub fn run_observed<F>(
    cfg: Configuration,
    topo: &Topology,
    strategy: &mut Strategy,
    epsilon: f64,
    max_steps: u64,
    mut observe: F,
) -> Result<TrialResult>
where
    F: FnMut(&StepOutcome) -> Result<()>,
{
    if max_steps < 1 {
        return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut metrics = vec![StepMetrics::of(&cfg, 0)];
    let mut current = cfg;
    let start = current.step;
    let mut converged = current.is_legitimate(topo, epsilon);
    while !converged && current.step - start < max_steps {
        let outcome = step(&current, topo, strategy, epsilon)?;
        observe(&outcome)?;
        metrics.push(outcome.metrics);
        current = outcome.config;
        converged = current.is_legitimate(topo, epsilon);
    }
    let (max_funds, min_funds) = current.funds_extent();
    Ok(TrialResult {
        trial: 0,
        seed: 0,
        steps: current.step - start,
        converged,
        equilibrium_price: current.equilibrium_price(),
        max_funds,
        min_funds,
        metrics,
        final_config: current,
    })
}

pub fn write_metrics_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "trial,step,p_max,p_min,diff,contracts,total_f,total_q")
}

/// Appends `trial,step,p_max,p_min,diff,contracts,total_f,total_q` rows.
pub fn write_metrics<W: Write>(
    mut w: W,
    trial: usize,
    metrics: &[StepMetrics],
) -> std::io::Result<()> {
    for m in metrics {
        writeln!(
            w,
            "{trial},{},{},{},{},{},{},{}",
            m.step, m.p_max, m.p_min, m.diff, m.contracts, m.total_f, m.total_q
        )?;
    }
    Ok(())
}

pub fn write_trace_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,seller,buyer,bid,quantity,pooled_price")
}

/// Appends `step,seller,buyer,bid,quantity,pooled_price` rows for one round.
pub fn write_trace<W: Write>(mut w: W, step: u64, contracts: &[Contract]) -> std::io::Result<()> {
    for c in contracts {
        writeln!(
            w,
            "{step},{},{},{},{},{}",
            c.seller, c.buyer, c.bid_price, c.quantity, c.pooled_price
        )?;
    }
    Ok(())
}
