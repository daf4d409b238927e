//! Bid-price policies and bidder-count estimators.
//!
//! Two policies are provided: a fixed interpolation constant `c`, and the Bayesian-Nash
//! first-price strategy `S(v) = v - (v - alpha) / B` against `B - 1` rivals, where the
//! bidder count `B` has to be estimated. In the protocol `v` is the buyer's own price and
//! `alpha` the seller's price.

use crate::error::{Error, Result};
use crate::market::Configuration;
use crate::topology::Topology;

/// How a Bayesian-Nash bidder estimates the number of bidders at the target node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Reuse the actual bidder count observed at the node in the previous step.
    Method1,
    /// Price-gap heuristic over the node's closed neighborhood.
    Method2,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Method1 => "method1",
            EstimatorKind::Method2 => "method2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    FixedC(f64),
    BayesNash(EstimatorKind),
}

impl StrategyKind {
    /// Parses the CLI/config names `fixed-c`, `bayes-m1`, `bayes-m2`.
    pub fn parse(name: &str, c: f64) -> Result<Self> {
        match name.trim() {
            "fixed-c" => {
                check_c(c)?;
                Ok(StrategyKind::FixedC(c))
            }
            "bayes-m1" => Ok(StrategyKind::BayesNash(EstimatorKind::Method1)),
            "bayes-m2" => Ok(StrategyKind::BayesNash(EstimatorKind::Method2)),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected fixed-c, bayes-m1, bayes-m2)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::FixedC(_) => "fixed-c",
            StrategyKind::BayesNash(EstimatorKind::Method1) => "bayes-m1",
            StrategyKind::BayesNash(EstimatorKind::Method2) => "bayes-m2",
        }
    }
}

fn check_c(c: f64) -> Result<()> {
    if c.is_finite() && c >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "bid parameter c must be >= 1, got {c}"
        )))
    }
}

/// `p_seller + (p_buyer - p_seller) / c`, clamped to the price interval against rounding.
pub fn compute_bid_fixed_c(p_buyer: f64, p_seller: f64, c: f64) -> Result<f64> {
    check_c(c)?;
    if p_seller.is_nan() || p_seller >= p_buyer {
        return Err(Error::Protocol(format!(
            "buyer price {p_buyer} is not above seller price {p_seller}; no bid"
        )));
    }
    Ok((p_seller + (p_buyer - p_seller) / c).clamp(p_seller, p_buyer))
}

/// `v - (v - alpha) / bidders`, clamped to `[alpha, v]` against rounding.
pub fn bayes_nash_bid(v: f64, alpha: f64, bidders: usize) -> Result<f64> {
    if bidders < 1 {
        return Err(Error::InvalidParameter("bidder count must be >= 1".into()));
    }
    if !(v >= alpha && alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need v >= alpha >= 0, got v = {v}, alpha = {alpha}"
        )));
    }
    Ok((v - (v - alpha) / bidders as f64).clamp(alpha, v))
}

/// Previous-step actual count, clamped to at least 1; `fallback` on the first step.
pub fn estimate_bidders_method1(history: Option<&[usize]>, h: usize, fallback: usize) -> usize {
    match history {
        Some(counts) => counts[h].max(1),
        None => fallback.max(1),
    }
}

/// `round(g_h / max(gap_h, 1) * |N_h|)`, clamped to at least 1.
///
/// `gap_h` is the price spread over `N_h ∪ {h}` and `g_h` the distance from the top of
/// that spread down to `p_h`. Rounding is half-up.
pub fn estimate_bidders_method2(cfg: &Configuration, topo: &Topology, h: usize) -> usize {
    let p_h = cfg.price(h);
    let (hi, lo) = topo
        .adj(h)
        .iter()
        .map(|&m| cfg.price(m))
        .fold((p_h, p_h), |(hi, lo), p| (hi.max(p), lo.min(p)));
    let gap = hi - lo;
    let g = hi - p_h;
    let raw = g / gap.max(1.0) * topo.degree(h) as f64;
    ((raw + 0.5).floor() as usize).max(1)
}

/// `Σ_i ((e_i - a_i) / |N_i|)^2`; lies in `[0, n]` when estimates and actuals stay within degree.
pub fn deviation_d(estimates: &[usize], actuals: &[usize], topo: &Topology) -> Result<f64> {
    if estimates.len() != topo.n() || actuals.len() != topo.n() {
        return Err(Error::InvalidParameter(format!(
            "deviation needs {} entries, got {} estimates and {} actuals",
            topo.n(),
            estimates.len(),
            actuals.len()
        )));
    }
    Ok(estimates
        .iter()
        .zip(actuals)
        .enumerate()
        .map(|(i, (&e, &a))| {
            let t = (e as f64 - a as f64) / topo.degree(i) as f64;
            t * t
        })
        .sum())
}

/// A strategy bound to one trial. Method 1 keeps the previous step's bidder counts.
#[derive(Debug, Clone)]
pub struct Strategy {
    kind: StrategyKind,
    previous_counts: Option<Vec<usize>>,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Result<Self> {
        if let StrategyKind::FixedC(c) = kind {
            check_c(c)?;
        }
        Ok(Strategy {
            kind,
            previous_counts: None,
        })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    /// Estimated bidder count at `h`, or `None` for the fixed-c policy.
    pub fn estimate(&self, cfg: &Configuration, topo: &Topology, h: usize) -> Option<usize> {
        match self.kind {
            StrategyKind::FixedC(_) => None,
            StrategyKind::BayesNash(EstimatorKind::Method1) => Some(estimate_bidders_method1(
                self.previous_counts.as_deref(),
                h,
                topo.degree(h),
            )),
            StrategyKind::BayesNash(EstimatorKind::Method2) => {
                Some(estimate_bidders_method2(cfg, topo, h))
            }
        }
    }

    /// Estimates for every node, or `None` for the fixed-c policy.
    pub fn estimate_all(&self, cfg: &Configuration, topo: &Topology) -> Option<Vec<usize>> {
        match self.kind {
            StrategyKind::FixedC(_) => None,
            _ => Some(
                (0..topo.n())
                    .map(|h| self.estimate(cfg, topo, h).unwrap_or(1))
                    .collect(),
            ),
        }
    }

    /// Bid of `buyer` on `seller`; requires `p_seller < p_buyer`.
    pub fn bid(
        &self,
        cfg: &Configuration,
        topo: &Topology,
        buyer: usize,
        seller: usize,
    ) -> Result<f64> {
        let (v, alpha) = (cfg.price(buyer), cfg.price(seller));
        match self.kind {
            StrategyKind::FixedC(c) => compute_bid_fixed_c(v, alpha, c),
            StrategyKind::BayesNash(_) => {
                let b = self.estimate(cfg, topo, seller).unwrap_or(1);
                bayes_nash_bid(v, alpha, b)
            }
        }
    }

    /// Records the raw (pre-cancellation) bidder counts of the step just played.
    pub fn observe(&mut self, counts: &[usize]) {
        if matches!(self.kind, StrategyKind::BayesNash(EstimatorKind::Method1)) {
            self.previous_counts = Some(counts.to_vec());
        }
    }
}
