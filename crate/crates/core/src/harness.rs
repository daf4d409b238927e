//! Experiment configuration, batch trial execution and dataset emission.
//!
//! Trials are independent: trial `i` of a cell uses seed `base_seed + i`, so cells of
//! different families or sizes see matched seeds. Each seed drives two ChaCha8 streams,
//! stream 0 for the initial configuration and stream 1 for random topology edges, so the
//! coin draw for a seed does not depend on which family consumes it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{stabilization_stats, StabilizationStats};
use crate::engine::{run_observed, run_to_convergence, StepOutcome, TrialResult, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::market::{init_injection, init_uniform, CoinRange, Configuration};
use crate::strategy::{deviation_d, EstimatorKind, Strategy, StrategyKind};
use crate::topology::{make_klink, FamilySpec, Topology};

/// Name of the generator recorded in output metadata.
pub const RNG_NAME: &str =
    "ChaCha8Rng (rand_chacha 0.3), seed_from_u64; stream 0 = configuration, stream 1 = topology";

/// Everything a single trial needs besides the topology and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub funds_per_node: f64,
    pub coins: CoinRange,
    pub strategy: StrategyKind,
    pub epsilon: f64,
    /// `None` means `50 * n`.
    pub max_steps: Option<u64>,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            funds_per_node: 10_000.0,
            coins: CoinRange { lo: 50, hi: 100 },
            strategy: StrategyKind::FixedC(2.0),
            epsilon: DEFAULT_EPSILON,
            max_steps: None,
        }
    }
}

impl SimParams {
    pub fn max_steps_for(&self, n: usize) -> u64 {
        self.max_steps.unwrap_or(50 * n as u64)
    }
}

/// `(topology rng, configuration rng)` for one trial seed.
pub fn trial_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let config = ChaCha8Rng::seed_from_u64(seed);
    let mut topo = ChaCha8Rng::seed_from_u64(seed);
    topo.set_stream(1);
    (topo, config)
}

/// Topology and uniform initial configuration for `seed`.
pub fn build_trial(
    family: FamilySpec,
    n: usize,
    seed: u64,
    params: &SimParams,
) -> Result<(Topology, Configuration)> {
    let (mut trng, mut crng) = trial_rngs(seed);
    let topo = family.build(n, &mut trng)?;
    let cfg = init_uniform(&topo, params.funds_per_node, params.coins, &mut crng)?;
    Ok((topo, cfg))
}

/// Runs one uniform-funds trial and re-checks its invariants.
pub fn run_trial(
    family: FamilySpec,
    n: usize,
    trial: usize,
    seed: u64,
    params: &SimParams,
) -> Result<TrialResult> {
    let (topo, cfg) = build_trial(family, n, seed, params)?;
    run_prepared(&topo, cfg, trial, seed, params)
}

fn run_prepared(
    topo: &Topology,
    cfg: Configuration,
    trial: usize,
    seed: u64,
    params: &SimParams,
) -> Result<TrialResult> {
    let mut strategy = Strategy::new(params.strategy)?;
    let mut r = run_to_convergence(
        cfg,
        topo,
        &mut strategy,
        params.epsilon,
        params.max_steps_for(topo.n()),
    )?;
    r.trial = trial;
    r.seed = seed;
    verify_trial(&r, topo, params.epsilon)?;
    Ok(r)
}

/// Largest BFS distance from node 0; twice this bounds the diameter.
fn eccentricity_of_first(topo: &Topology) -> usize {
    let mut dist = vec![usize::MAX; topo.n()];
    dist[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    let mut ecc = 0;
    while let Some(u) = queue.pop_front() {
        for &v in topo.neighbors(u).unwrap_or(&[]) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                ecc = ecc.max(dist[v]);
                queue.push_back(v);
            }
        }
    }
    ecc
}

/// Invariants every emitted trial must satisfy.
///
/// `F / Q` must be unchanged from the initial configuration. A converged trial must be
/// legitimate, and since `F / Q` is a coin-weighted mean of node prices and every edge
/// differs by less than `epsilon`, every price lies within `epsilon * diameter` of it.
pub fn verify_trial(r: &TrialResult, topo: &Topology, epsilon: f64) -> Result<()> {
    let first = r
        .metrics
        .first()
        .ok_or_else(|| Error::Invariant("trial recorded no metrics".into()))?;
    let pe0 = first.total_f / first.total_q;
    if (r.equilibrium_price - pe0).abs() > 1e-9 * pe0 {
        return Err(Error::Invariant(format!(
            "trial {}: F/Q moved from {pe0} to {}",
            r.trial, r.equilibrium_price
        )));
    }
    if r.converged {
        if !r.final_config.is_legitimate(topo, epsilon) {
            return Err(Error::Invariant(format!(
                "trial {}: converged but not legitimate",
                r.trial
            )));
        }
        let bound = epsilon * (2 * eccentricity_of_first(topo)) as f64;
        if r.max_price_error() > bound {
            return Err(Error::Invariant(format!(
                "trial {}: node price {} away from F/Q exceeds {bound}",
                r.trial,
                r.max_price_error()
            )));
        }
    }
    Ok(())
}

/// Reading of the `funds` key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FundsMode {
    PerNode,
    /// `funds` is the network total, split evenly.
    Total,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionConfig {
    pub base_funds: f64,
    pub inject_funds: f64,
    pub points: usize,
    pub points_max: usize,
    /// Node count held fixed while the number of injection points varies.
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub families: Vec<FamilySpec>,
    pub nodes: usize,
    pub nodes_max: usize,
    pub nodes_step: usize,
    pub trials: usize,
    pub seed: u64,
    pub funds: f64,
    pub funds_mode: FundsMode,
    pub coins: CoinRange,
    pub strategy: StrategyKind,
    pub epsilon: f64,
    pub max_steps: Option<u64>,
    pub injection: Option<InjectionConfig>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    /// The common experiment constants: 500 trials, 50 to 500 nodes, 10,000 funds per node,
    /// coins in [50, 100], c = 2.
    fn default() -> Self {
        ExperimentConfig {
            families: vec![
                FamilySpec::Path,
                FamilySpec::Grid,
                FamilySpec::klink_sparse(),
                FamilySpec::Complete,
            ],
            nodes: 50,
            nodes_max: 500,
            nodes_step: 50,
            trials: 500,
            seed: 1,
            funds: 10_000.0,
            funds_mode: FundsMode::PerNode,
            coins: CoinRange { lo: 50, hi: 100 },
            strategy: StrategyKind::FixedC(2.0),
            epsilon: DEFAULT_EPSILON,
            max_steps: None,
            injection: None,
            out: PathBuf::from("out"),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "topology",
    "nodes",
    "nodes_max",
    "nodes_step",
    "trials",
    "seed",
    "funds",
    "funds_mode",
    "coins_min",
    "coins_max",
    "strategy",
    "c",
    "epsilon",
    "max_steps",
    "inject_base",
    "inject_funds",
    "inject_points",
    "inject_points_max",
    "inject_nodes",
    "out",
];

const REQUIRED_KEYS: &[&str] = &["topology", "nodes", "trials"];

impl ExperimentConfig {
    /// Node counts of a size sweep: `nodes, nodes + step, ...` up to `nodes_max`.
    pub fn node_sizes(&self) -> Vec<usize> {
        (self.nodes..=self.nodes_max.max(self.nodes))
            .step_by(self.nodes_step.max(1))
            .collect()
    }

    pub fn sim_params(&self, n: usize) -> SimParams {
        let funds_per_node = match self.funds_mode {
            FundsMode::PerNode => self.funds,
            FundsMode::Total => self.funds / n as f64,
        };
        SimParams {
            funds_per_node,
            coins: self.coins,
            strategy: self.strategy,
            epsilon: self.epsilon,
            max_steps: self.max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.families.is_empty() {
            return bad("topology", "no families listed".into());
        }
        if self.trials < 1 {
            return bad("trials", "must be >= 1".into());
        }
        if !(2..=1_000_000).contains(&self.nodes) {
            return bad("nodes", format!("{} outside [2, 1000000]", self.nodes));
        }
        if self.nodes_max < self.nodes || self.nodes_max > 1_000_000 {
            return bad(
                "nodes_max",
                format!("{} outside [nodes, 1000000]", self.nodes_max),
            );
        }
        if self.nodes_step < 1 {
            return bad("nodes_step", "must be >= 1".into());
        }
        if !(self.funds.is_finite() && self.funds > 0.0) {
            return bad("funds", format!("{} is not positive", self.funds));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon", format!("{} is not positive", self.epsilon));
        }
        if self.max_steps == Some(0) {
            return bad("max_steps", "must be >= 1".into());
        }
        if let Some(inj) = &self.injection {
            if !(inj.base_funds.is_finite() && inj.base_funds > 0.0) {
                return bad("inject_base", format!("{} is not positive", inj.base_funds));
            }
            if !(inj.inject_funds.is_finite() && inj.inject_funds > 0.0) {
                return bad(
                    "inject_funds",
                    format!("{} is not positive", inj.inject_funds),
                );
            }
            if inj.points < 1 || inj.points_max < inj.points {
                return bad(
                    "inject_points",
                    format!("range [{}, {}] invalid", inj.points, inj.points_max),
                );
            }
            if !(2..=1_000_000).contains(&inj.nodes) {
                return bad(
                    "inject_nodes",
                    format!("{} outside [2, 1000000]", inj.nodes),
                );
            }
        }
        Ok(())
    }

    /// Parses the flat `key = value` format. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut unknown = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {line_no}: expected `key = value`, got {line:?}"
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                unknown.push(format!("{key} (line {line_no})"));
                continue;
            }
            if let Some((prev, _)) = values.insert(key, (line_no, value)) {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate key `{key}` (first set on line {prev})"
                )));
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|k| !values.contains_key(k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing required key(s): {}",
                missing.join(", ")
            )));
        }

        fn get<T: std::str::FromStr>(
            values: &BTreeMap<&str, (usize, &str)>,
            key: &str,
        ) -> Result<Option<T>> {
            match values.get(key) {
                None => Ok(None),
                Some((line, v)) => v.parse().map(Some).map_err(|_| {
                    Error::Config(format!("line {line}: cannot parse `{key}` value {v:?}"))
                }),
            }
        }
        let at_line = |key: &str, e: Error| match (values.get(key), e) {
            (Some((line, _)), Error::Config(msg) | Error::InvalidParameter(msg)) => {
                Error::Config(format!("line {line}: {key}: {msg}"))
            }
            (_, e) => e,
        };

        let mut cfg = ExperimentConfig::default();
        let (_, topo_value) = values["topology"];
        cfg.families = topo_value
            .split(',')
            .map(FamilySpec::parse)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| at_line("topology", e))?;
        cfg.nodes = get(&values, "nodes")?.unwrap();
        cfg.nodes_max = get(&values, "nodes_max")?.unwrap_or(cfg.nodes);
        cfg.nodes_step = get(&values, "nodes_step")?.unwrap_or(cfg.nodes);
        cfg.trials = get(&values, "trials")?.unwrap();
        cfg.seed = get(&values, "seed")?.unwrap_or(cfg.seed);
        cfg.funds = get(&values, "funds")?.unwrap_or(cfg.funds);
        if let Some((line, v)) = values.get("funds_mode") {
            cfg.funds_mode = match *v {
                "per-node" => FundsMode::PerNode,
                "total" => FundsMode::Total,
                other => {
                    return Err(Error::Config(format!(
                        "line {line}: funds_mode {other:?} (expected per-node or total)"
                    )))
                }
            };
        }
        let lo = get(&values, "coins_min")?.unwrap_or(cfg.coins.lo);
        let hi = get(&values, "coins_max")?.unwrap_or(cfg.coins.hi);
        cfg.coins = CoinRange::new(lo, hi).map_err(|e| at_line("coins_min", e))?;
        let c: f64 = get(&values, "c")?.unwrap_or(2.0);
        if let Some((_, name)) = values.get("strategy") {
            cfg.strategy = StrategyKind::parse(name, c).map_err(|e| at_line("strategy", e))?;
        } else {
            cfg.strategy = StrategyKind::parse("fixed-c", c).map_err(|e| at_line("c", e))?;
        }
        cfg.epsilon = get(&values, "epsilon")?.unwrap_or(cfg.epsilon);
        cfg.max_steps = get(&values, "max_steps")?;
        let inject_keys = [
            "inject_base",
            "inject_funds",
            "inject_points",
            "inject_points_max",
            "inject_nodes",
        ];
        if inject_keys.iter().any(|k| values.contains_key(k)) {
            let points = get(&values, "inject_points")?.unwrap_or(1);
            cfg.injection = Some(InjectionConfig {
                base_funds: get(&values, "inject_base")?.unwrap_or(100.0),
                inject_funds: get(&values, "inject_funds")?.unwrap_or(30_000.0),
                points,
                points_max: get(&values, "inject_points_max")?.unwrap_or(points),
                nodes: get(&values, "inject_nodes")?.unwrap_or(300),
            });
        }
        if let Some((_, out)) = values.get("out") {
            cfg.out = PathBuf::from(out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes back into the `key = value` format accepted by [`ExperimentConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let families: Vec<String> = self.families.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "topology = {}", families.join(","));
        let _ = writeln!(s, "nodes = {}", self.nodes);
        let _ = writeln!(s, "nodes_max = {}", self.nodes_max);
        let _ = writeln!(s, "nodes_step = {}", self.nodes_step);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "funds = {}", self.funds);
        let mode = match self.funds_mode {
            FundsMode::PerNode => "per-node",
            FundsMode::Total => "total",
        };
        let _ = writeln!(s, "funds_mode = {mode}");
        let _ = writeln!(s, "coins_min = {}", self.coins.lo);
        let _ = writeln!(s, "coins_max = {}", self.coins.hi);
        let _ = writeln!(s, "strategy = {}", self.strategy.name());
        if let StrategyKind::FixedC(c) = self.strategy {
            let _ = writeln!(s, "c = {c}");
        }
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        if let Some(m) = self.max_steps {
            let _ = writeln!(s, "max_steps = {m}");
        }
        if let Some(inj) = &self.injection {
            let _ = writeln!(s, "inject_base = {}", inj.base_funds);
            let _ = writeln!(s, "inject_funds = {}", inj.inject_funds);
            let _ = writeln!(s, "inject_points = {}", inj.points);
            let _ = writeln!(s, "inject_points_max = {}", inj.points_max);
            let _ = writeln!(s, "inject_nodes = {}", inj.nodes);
        }
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family: String,
    pub n: usize,
    pub trials: usize,
    pub mean_steps: f64,
    pub median_steps: f64,
    pub stddev_steps: f64,
    pub max_steps: u64,
    pub converged_rate: f64,
}

impl SweepRow {
    fn new(family: &FamilySpec, n: usize, s: &StabilizationStats) -> Self {
        SweepRow {
            family: family.to_string(),
            n,
            trials: s.trials,
            mean_steps: s.mean,
            median_steps: s.median,
            stddev_steps: s.stddev,
            max_steps: s.max,
            converged_rate: s.converged_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BidderRow {
    pub family: String,
    pub n: usize,
    pub k: usize,
    pub method: String,
    pub mean_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectionRow {
    pub family: String,
    pub n: usize,
    pub inject_points: usize,
    pub max_funds: f64,
    pub min_funds: f64,
    pub steps: f64,
}

/// Rows produced by one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "rows", rename_all = "lowercase")]
pub enum Dataset {
    Sweep(Vec<SweepRow>),
    Bidders(Vec<BidderRow>),
    Injection(Vec<InjectionRow>),
}

impl Dataset {
    pub fn kind(&self) -> &'static str {
        match self {
            Dataset::Sweep(_) => "sweep",
            Dataset::Bidders(_) => "bidders",
            Dataset::Injection(_) => "inject",
        }
    }

    pub fn header(&self) -> &'static str {
        match self {
            Dataset::Sweep(_) => {
                "family,n,trials,mean_steps,median_steps,stddev_steps,max_steps,converged_rate"
            }
            Dataset::Bidders(_) => "family,n,k,method,mean_D",
            Dataset::Injection(_) => "family,n,inject_points,max_funds,min_funds,steps",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Sweep(r) => r.len(),
            Dataset::Bidders(r) => r.len(),
            Dataset::Injection(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(self.header());
        s.push('\n');
        match self {
            Dataset::Sweep(rows) => {
                for r in rows {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},{}",
                        r.family,
                        r.n,
                        r.trials,
                        r.mean_steps,
                        r.median_steps,
                        r.stddev_steps,
                        r.max_steps,
                        r.converged_rate
                    );
                }
            }
            Dataset::Bidders(rows) => {
                for r in rows {
                    let _ = writeln!(s, "{},{},{},{},{}", r.family, r.n, r.k, r.method, r.mean_d);
                }
            }
            Dataset::Injection(rows) => {
                for r in rows {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{}",
                        r.family, r.n, r.inject_points, r.max_funds, r.min_funds, r.steps
                    );
                }
            }
        }
        s
    }

    /// Sweep rows split per family, in first-seen order. Other kinds come back whole.
    pub fn split_by_family(&self) -> Vec<(String, Dataset)> {
        match self {
            Dataset::Sweep(rows) => {
                let mut order: Vec<String> = Vec::new();
                for r in rows {
                    if !order.contains(&r.family) {
                        order.push(r.family.clone());
                    }
                }
                order
                    .into_iter()
                    .map(|f| {
                        let subset = rows.iter().filter(|r| r.family == f).cloned().collect();
                        (f, Dataset::Sweep(subset))
                    })
                    .collect()
            }
            other => vec![(other.kind().to_string(), other.clone())],
        }
    }
}

pub fn emit_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, dataset.to_csv()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    version: &'a str,
    rng: &'a str,
    seed: u64,
    timestamp_unix: u64,
    config: BTreeMap<String, String>,
    dataset: &'a Dataset,
}

/// JSON mirror of the CSV rows plus run metadata.
pub fn emit_summary_json(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let config = cfg
        .to_config_string()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION"),
        rng: RNG_NAME,
        seed: cfg.seed,
        timestamp_unix,
        config,
        dataset,
    };
    let text =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(format!("json: {e}")))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

/// Runs `trials` matched-seed trials of one cell in parallel, ordered by trial id.
pub fn run_cell(
    family: FamilySpec,
    n: usize,
    trials: usize,
    base_seed: u64,
    params: &SimParams,
) -> Result<Vec<TrialResult>> {
    (0..trials)
        .into_par_iter()
        .map(|i| run_trial(family, n, i, trial_seed(base_seed, i), params))
        .collect()
}

/// Stabilization-time statistics for every `(family, n)` cell.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for family in &cfg.families {
        for n in cfg.node_sizes() {
            let results = run_cell(*family, n, cfg.trials, cfg.seed, &cfg.sim_params(n))?;
            rows.push(SweepRow::new(family, n, &stabilization_stats(&results)?));
        }
    }
    Ok(Dataset::Sweep(rows))
}

/// Mean deviation of bidder-count estimates over every step of one trial.
///
/// `estimates_of` picks the estimate vector scored against the actual counts; the normal
/// choice is the strategy's own estimates.
pub fn bidder_trial_deviation<F>(
    topo: &Topology,
    cfg: Configuration,
    params: &SimParams,
    estimates_of: F,
) -> Result<(f64, usize)>
where
    F: Fn(&StepOutcome) -> Option<Vec<usize>>,
{
    let mut strategy = Strategy::new(params.strategy)?;
    let mut total = 0.0;
    let mut count = 0usize;
    run_observed(
        cfg,
        topo,
        &mut strategy,
        params.epsilon,
        params.max_steps_for(topo.n()),
        |out| {
            if let Some(est) = estimates_of(out) {
                total += deviation_d(&est, &out.bidder_counts, topo)?;
                count += 1;
            }
            Ok(())
        },
    )?;
    Ok((total, count))
}

/// Estimator comparison on sparse and dense k-link graphs of `cfg.nodes` nodes.
pub fn run_bidder_eval(cfg: &ExperimentConfig, k_dense: usize, k_sparse: usize) -> Result<Dataset> {
    run_bidder_eval_with(cfg, k_dense, k_sparse, |out| out.estimates.clone())
}

/// [`run_bidder_eval`] with the scored estimate vector chosen by `estimates_of`.
pub fn run_bidder_eval_with<F>(
    cfg: &ExperimentConfig,
    k_dense: usize,
    k_sparse: usize,
    estimates_of: F,
) -> Result<Dataset>
where
    F: Fn(&StepOutcome) -> Option<Vec<usize>> + Sync,
{
    cfg.validate()?;
    let n = cfg.nodes;
    let mut rows = Vec::new();
    for k in [k_sparse, k_dense] {
        for method in [EstimatorKind::Method1, EstimatorKind::Method2] {
            let params = SimParams {
                strategy: StrategyKind::BayesNash(method),
                ..cfg.sim_params(n)
            };
            let per_trial: Vec<(f64, usize)> = (0..cfg.trials)
                .into_par_iter()
                .map(|i| {
                    let seed = trial_seed(cfg.seed, i);
                    let (mut trng, mut crng) = trial_rngs(seed);
                    let topo = make_klink(n, k, &mut trng)?;
                    let init = init_uniform(&topo, params.funds_per_node, params.coins, &mut crng)?;
                    bidder_trial_deviation(&topo, init, &params, &estimates_of)
                })
                .collect::<Result<_>>()?;
            let (sum, steps) = per_trial
                .iter()
                .fold((0.0, 0), |(s, c), (ts, tc)| (s + ts, c + tc));
            let mean_d = if steps == 0 { 0.0 } else { sum / steps as f64 };
            rows.push(BidderRow {
                family: "klink".to_string(),
                n,
                k,
                method: method.name().to_string(),
                mean_d,
            });
        }
    }
    Ok(Dataset::Bidders(rows))
}

/// One injection trial: topology from stream 1, funds and coins from stream 0.
pub fn run_injection_trial(
    family: FamilySpec,
    n: usize,
    points: usize,
    trial: usize,
    seed: u64,
    inj: &InjectionConfig,
    params: &SimParams,
) -> Result<TrialResult> {
    let (mut trng, mut crng) = trial_rngs(seed);
    let topo = family.build(n, &mut trng)?;
    let cfg = init_injection(
        &topo,
        inj.base_funds,
        inj.inject_funds,
        points,
        params.coins,
        &mut crng,
    )?;
    let r = run_prepared(&topo, cfg, trial, seed, params)?;
    let (f0, f1) = (r.metrics[0].total_f, r.final_config.total_funds());
    if (f1 - f0).abs() > 1e-9 * f0 {
        return Err(Error::Invariant(format!(
            "injection trial {trial}: funds {f0} -> {f1}"
        )));
    }
    Ok(r)
}

/// Mean max/min node funds at convergence, sweeping node count at the base number of
/// injection points, then injection points at the fixed node count.
pub fn run_injection(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let inj = cfg
        .injection
        .as_ref()
        .ok_or_else(|| Error::Config("injection experiment needs inject_* keys".into()))?;
    let mut cells: Vec<(usize, usize)> = cfg
        .node_sizes()
        .into_iter()
        .map(|n| (n, inj.points))
        .collect();
    cells.extend((inj.points..=inj.points_max).map(|p| (inj.nodes, p)));
    let mut seen = BTreeSet::new();
    cells.retain(|c| seen.insert(*c));

    let mut rows = Vec::new();
    for family in &cfg.families {
        for &(n, points) in &cells {
            if points > n {
                return Err(Error::Config(format!(
                    "inject_points {points} exceeds node count {n}"
                )));
            }
            let params = SimParams {
                funds_per_node: inj.base_funds,
                ..cfg.sim_params(n)
            };
            let results: Vec<TrialResult> = (0..cfg.trials)
                .into_par_iter()
                .map(|i| {
                    run_injection_trial(
                        *family,
                        n,
                        points,
                        i,
                        trial_seed(cfg.seed, i),
                        inj,
                        &params,
                    )
                })
                .collect::<Result<_>>()?;
            let t = results.len() as f64;
            rows.push(InjectionRow {
                family: family.to_string(),
                n,
                inject_points: points,
                max_funds: results.iter().map(|r| r.max_funds).sum::<f64>() / t,
                min_funds: results.iter().map(|r| r.min_funds).sum::<f64>() / t,
                steps: results.iter().map(|r| r.steps as f64).sum::<f64>() / t,
            });
        }
    }
    Ok(Dataset::Injection(rows))
}

/// Gnuplot script plotting `mean_steps` against `n` for each per-family sweep CSV.
pub fn gnuplot_script(files: &[(String, String)]) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'nodes'\nset ylabel 'mean steps'\nplot ",
    );
    let parts: Vec<String> = files
        .iter()
        .map(|(family, file)| format!("'{file}' using 2:4 with linespoints title '{family}'"))
        .collect();
    s.push_str(&parts.join(", \\\n     "));
    s.push('\n');
    s
}
