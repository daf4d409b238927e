//! Per-node economic state and global conserved quantities.

use std::io::Write;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::topology::Topology;

/// Coins and funds held by one node. Price is always derived as `f / q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub q: f64,
    pub f: f64,
}

impl NodeState {
    pub fn new(q: f64, f: f64) -> Self {
        NodeState { q, f }
    }

    pub fn price(&self) -> f64 {
        self.f / self.q
    }
}

/// Free-function form of [`NodeState::price`].
pub fn price(s: &NodeState) -> f64 {
    s.price()
}

/// The state of every node at time step `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub states: Vec<NodeState>,
    pub step: u64,
}

impl Configuration {
    pub fn new(states: Vec<NodeState>) -> Self {
        Configuration { states, step: 0 }
    }

    /// Builds a configuration from `(f, q)` pairs.
    pub fn from_funds_coins(pairs: &[(f64, f64)]) -> Self {
        Self::new(pairs.iter().map(|&(f, q)| NodeState::new(q, f)).collect())
    }

    /// Builds a configuration where every node holds `q` coins and funds `price * q`.
    pub fn from_prices(prices: &[f64], q: f64) -> Self {
        Self::new(prices.iter().map(|&p| NodeState::new(q, p * q)).collect())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn price(&self, i: usize) -> f64 {
        self.states[i].price()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.states.iter().map(NodeState::price).collect()
    }

    pub fn total_funds(&self) -> f64 {
        self.states.iter().map(|s| s.f).sum()
    }

    pub fn total_coins(&self) -> f64 {
        self.states.iter().map(|s| s.q).sum()
    }

    /// `F / Q`.
    pub fn equilibrium_price(&self) -> f64 {
        self.total_funds() / self.total_coins()
    }

    /// Highest and lowest node price.
    pub fn price_extent(&self) -> (f64, f64) {
        self.states
            .iter()
            .map(NodeState::price)
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), p| {
                (hi.max(p), lo.min(p))
            })
    }

    pub fn funds_extent(&self) -> (f64, f64) {
        self.states
            .iter()
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), s| {
                (hi.max(s.f), lo.min(s.f))
            })
    }

    /// True when every edge joins two prices closer than `epsilon`.
    pub fn is_legitimate(&self, topo: &Topology, epsilon: f64) -> bool {
        topo.edges()
            .iter()
            .all(|&(u, v)| (self.price(u) - self.price(v)).abs() < epsilon)
    }

    /// Writes the `node,q,f,price` snapshot.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node,q,f,price")?;
        for (i, s) in self.states.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", s.q, s.f, s.price())?;
        }
        Ok(())
    }
}

/// `(Σf) / (Σq)` of a configuration.
pub fn equilibrium_price(cfg: &Configuration) -> f64 {
    cfg.equilibrium_price()
}

/// Inclusive integer range coins are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoinRange {
    pub lo: u64,
    pub hi: u64,
}

impl CoinRange {
    pub fn new(lo: u64, hi: u64) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(Error::InvalidParameter(format!(
                "coin range [{lo}, {hi}] must satisfy 0 < lo <= hi"
            )));
        }
        Ok(CoinRange { lo, hi })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.lo..=self.hi) as f64
    }
}

/// Every node gets `funds_per_node`; coins are drawn uniformly from the integer range.
pub fn init_uniform<R: Rng + ?Sized>(
    topo: &Topology,
    funds_per_node: f64,
    coins: CoinRange,
    rng: &mut R,
) -> Result<Configuration> {
    check_funds("funds_per_node", funds_per_node)?;
    let states = (0..topo.n())
        .map(|_| NodeState::new(coins.draw(rng), funds_per_node))
        .collect();
    Ok(Configuration::new(states))
}

/// `inject_count` distinct nodes get `inject_funds`, the rest `base_funds`.
///
/// Coins are drawn first, exactly as [`init_uniform`] draws them, so a matched seed gives
/// the same coin vector with and without injection.
pub fn init_injection<R: Rng + ?Sized>(
    topo: &Topology,
    base_funds: f64,
    inject_funds: f64,
    inject_count: usize,
    coins: CoinRange,
    rng: &mut R,
) -> Result<Configuration> {
    check_funds("base_funds", base_funds)?;
    check_funds("inject_funds", inject_funds)?;
    let n = topo.n();
    if inject_count == 0 || inject_count > n {
        return Err(Error::InvalidParameter(format!(
            "inject_count {inject_count} outside [1, {n}]"
        )));
    }
    let mut cfg = init_uniform(topo, base_funds, coins, rng)?;
    for i in index::sample(rng, n, inject_count) {
        cfg.states[i].f = inject_funds;
    }
    Ok(cfg)
}

fn check_funds(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{make_complete, make_cycle, make_path};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn price_examples() {
        assert_eq!(NodeState::new(20.0, 1000.0).price(), 50.0);
        assert_eq!(NodeState::new(20.0, 2200.0).price(), 110.0);
        assert_eq!(price(&NodeState::new(1.0, 37.5)), 37.5);
    }

    #[test]
    fn equilibrium_examples() {
        let cfg = Configuration::from_funds_coins(&[(1000.0, 20.0), (2200.0, 20.0)]);
        assert_eq!(equilibrium_price(&cfg), 80.0);
        let same = Configuration::from_funds_coins(&[(300.0, 4.0); 7]);
        assert_eq!(same.equilibrium_price(), 75.0);
    }

    #[test]
    fn uniform_init_price_bounds() {
        let topo = make_cycle(200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg =
            init_uniform(&topo, 10_000.0, CoinRange::new(50, 100).unwrap(), &mut rng).unwrap();
        for s in &cfg.states {
            assert_eq!(s.f, 10_000.0);
            assert_eq!(s.q.fract(), 0.0);
            assert!((100.0..=200.0).contains(&s.price()));
        }
    }

    #[test]
    fn degenerate_range_is_legitimate() {
        let topo = make_complete(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = init_uniform(&topo, 10_000.0, CoinRange::new(70, 70).unwrap(), &mut rng).unwrap();
        assert!(cfg.prices().iter().all(|&p| p == 10_000.0 / 70.0));
        assert!(cfg.is_legitimate(&topo, 1.0));
    }

    #[test]
    fn uniform_init_is_deterministic() {
        let topo = make_path(50).unwrap();
        let coins = CoinRange::new(50, 100).unwrap();
        let a = init_uniform(&topo, 10_000.0, coins, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = init_uniform(&topo, 10_000.0, coins, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_ranges() {
        assert!(CoinRange::new(0, 5).is_err());
        assert!(CoinRange::new(6, 5).is_err());
        let topo = make_path(3).unwrap();
        let coins = CoinRange::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_uniform(&topo, 0.0, coins, &mut rng).is_err());
        assert!(init_injection(&topo, 100.0, 300.0, 0, coins, &mut rng).is_err());
        assert!(init_injection(&topo, 100.0, 300.0, 4, coins, &mut rng).is_err());
    }

    #[test]
    fn injection_totals() {
        let topo = make_cycle(300).unwrap();
        let coins = CoinRange::new(50, 100).unwrap();
        let cfg = init_injection(
            &topo,
            100.0,
            30_000.0,
            1,
            coins,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(cfg.total_funds(), 59_900.0);
        assert_eq!(cfg.states.iter().filter(|s| s.f == 30_000.0).count(), 1);

        let all = init_injection(
            &topo,
            100.0,
            30_000.0,
            300,
            coins,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert!(all.states.iter().all(|s| s.f == 30_000.0));
    }

    #[test]
    fn snapshot_csv() {
        let cfg = Configuration::from_funds_coins(&[(1000.0, 20.0), (30.0, 2.0)]);
        let mut buf = Vec::new();
        cfg.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "node,q,f,price\n0,20,1000,50\n1,2,30,15\n"
        );
    }
}
