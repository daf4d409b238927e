//! Stabilization measurements and the analytical path model.
//!
//! The path model tracks the `m` price gaps of an `n = 2m` node path, observed every other
//! step. Interior gaps evolve as `d_i' = d_{i-1}/4 + d_i/2 + d_{i+1}/4`; the two end gaps
//! only have one neighbor, so the gap sum loses `(d_1 + d_m) / 4` per observation.

use std::fmt;

use statrs::function::gamma::ln_gamma;

use crate::engine::TrialResult;
use crate::error::{Error, Result};
use crate::harness::{run_trial, SimParams};
use crate::topology::FamilySpec;

#[derive(Debug, Clone, PartialEq)]
pub struct GapVector {
    pub gaps: Vec<f64>,
    pub t: u64,
}

impl GapVector {
    pub fn new(gaps: Vec<f64>) -> Result<Self> {
        if gaps.len() < 2 {
            return Err(Error::InvalidSize(format!(
                "gap vector needs m >= 2, got {}",
                gaps.len()
            )));
        }
        if gaps.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::InvalidParameter("gaps must be non-negative".into()));
        }
        Ok(GapVector { gaps, t: 0 })
    }

    pub fn sum(&self) -> f64 {
        self.gaps.iter().sum()
    }
}

/// One application of the gap recurrences.
pub fn evolve_gaps(g: &GapVector) -> Result<GapVector> {
    let d = &g.gaps;
    let m = d.len();
    if m < 2 {
        return Err(Error::InvalidSize(format!(
            "gap vector needs m >= 2, got {m}"
        )));
    }
    let next = (0..m)
        .map(|i| {
            let left = if i > 0 { d[i - 1] } else { 0.0 };
            let right = if i + 1 < m { d[i + 1] } else { 0.0 };
            0.25 * left + 0.5 * d[i] + 0.25 * right
        })
        .collect();
    Ok(GapVector {
        gaps: next,
        t: g.t + 1,
    })
}

/// Which display of the path bound to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundForm {
    /// `(3/4)^τ (1/3)^{m+1} C(τ, m+1)^{m+1}`, generalized binomial via the gamma function.
    Binomial,
    /// `(3/4)^τ (1/3)^{m+1} (τ/(m+1))^{m+1}`.
    Power,
}

impl BoundForm {
    pub fn name(&self) -> &'static str {
        match self {
            BoundForm::Binomial => "binomial",
            BoundForm::Power => "power",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "binomial" => Ok(BoundForm::Binomial),
            "power" => Ok(BoundForm::Power),
            other => Err(Error::Config(format!(
                "unknown bound form {other:?} (expected binomial or power)"
            ))),
        }
    }
}

impl fmt::Display for BoundForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lower end of the domain searched for a root: `τ > m` keeps the binomial positive.
fn domain_start(m: usize, form: BoundForm) -> f64 {
    match form {
        BoundForm::Binomial => m as f64,
        BoundForm::Power => 0.0,
    }
}

/// Natural log of the bound function at `tau`, or `None` outside its domain.
pub fn ln_bound(form: BoundForm, m: usize, tau: f64) -> Option<f64> {
    let k = (m + 1) as f64;
    let base = tau * (0.75f64).ln() - k * 3f64.ln();
    match form {
        BoundForm::Power => (tau > 0.0).then(|| base + k * (tau / k).ln()),
        BoundForm::Binomial => (tau > m as f64).then(|| {
            let ln_choose = ln_gamma(tau + 1.0) - ln_gamma(k + 1.0) - ln_gamma(tau - m as f64);
            base + k * ln_choose
        }),
    }
}

/// The bound function itself.
pub fn bound_value(form: BoundForm, m: usize, tau: f64) -> Option<f64> {
    ln_bound(form, m, tau).map(f64::exp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathBound {
    Solved {
        n: usize,
        m: usize,
        tau: f64,
        /// `2τ`, the stabilization time in protocol steps.
        steps: f64,
        form: BoundForm,
    },
    /// The bound never reaches 1; `max_value` is the largest value seen on the scan.
    NoSolution {
        n: usize,
        m: usize,
        max_value: f64,
        form: BoundForm,
    },
}

impl PathBound {
    pub fn tau(&self) -> Option<f64> {
        match self {
            PathBound::Solved { tau, .. } => Some(*tau),
            PathBound::NoSolution { .. } => None,
        }
    }

    /// `n,m,tau,steps_2tau,form`; empty tau/steps for no solution.
    pub fn csv_row(&self) -> String {
        match self {
            PathBound::Solved {
                n,
                m,
                tau,
                steps,
                form,
            } => format!("{n},{m},{tau},{steps},{form}"),
            PathBound::NoSolution { n, m, form, .. } => format!("{n},{m},,,{form}"),
        }
    }
}

pub const PATH_BOUND_CSV_HEADER: &str = "n,m,tau,steps_2tau,form";

const SCAN_STEP: f64 = 0.01;

/// Smallest `τ` where the bound function reaches 1, by a fixed-step scan and bisection.
pub fn solve_path_bound(n: usize, form: BoundForm) -> Result<PathBound> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidSize(format!(
            "path bound needs an even n >= 4, got {n}"
        )));
    }
    let m = n / 2;
    let start = domain_start(m, form);
    // Both forms peak or cross well before this; see the tests for the power-form peak.
    let end = start + 50.0 * (m + 1) as f64;
    let steps = ((end - start) / SCAN_STEP).ceil() as usize;

    let mut max_ln = f64::NEG_INFINITY;
    let mut prev = start;
    for i in 1..=steps {
        let tau = start + i as f64 * SCAN_STEP;
        let Some(v) = ln_bound(form, m, tau) else {
            continue;
        };
        max_ln = max_ln.max(v);
        if v >= 0.0 {
            let (mut lo, mut hi) = (prev, tau);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                match ln_bound(form, m, mid) {
                    Some(x) if x >= 0.0 => hi = mid,
                    _ => lo = mid,
                }
            }
            // `hi` is always on the >= 1 side; pick whichever end is closer to 1.
            let tau = [lo, hi]
                .into_iter()
                .filter_map(|t| ln_bound(form, m, t).map(|v| (t, v.abs())))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(hi, |(t, _)| t);
            return Ok(PathBound::Solved {
                n,
                m,
                tau,
                steps: 2.0 * tau,
                form,
            });
        }
        prev = tau;
    }
    Ok(PathBound::NoSolution {
        n,
        m,
        max_value: max_ln.exp(),
        form,
    })
}

/// Summary statistics of stabilization steps over a batch of trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationStats {
    pub trials: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub max: u64,
    pub converged_rate: f64,
}

pub fn stabilization_stats(results: &[TrialResult]) -> Result<StabilizationStats> {
    if results.is_empty() {
        return Err(Error::InvalidParameter(
            "stabilization_stats needs at least one trial".into(),
        ));
    }
    let n = results.len() as f64;
    let mut steps: Vec<u64> = results.iter().map(|r| r.steps).collect();
    steps.sort_unstable();
    let mean = steps.iter().map(|&s| s as f64).sum::<f64>() / n;
    let mid = steps.len() / 2;
    let median = if steps.len() % 2 == 1 {
        steps[mid] as f64
    } else {
        0.5 * (steps[mid - 1] + steps[mid]) as f64
    };
    let var = steps
        .iter()
        .map(|&s| (s as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(StabilizationStats {
        trials: results.len(),
        mean,
        median,
        stddev: var.sqrt(),
        max: *steps.last().unwrap(),
        converged_rate: results.iter().filter(|r| r.converged).count() as f64 / n,
    })
}

/// Stabilization time of an `n`-cycle against a `floor(3n/4)`-node path on matched seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePathReport {
    pub n: usize,
    pub path_n: usize,
    pub cycle_steps: Vec<u64>,
    pub path_steps: Vec<u64>,
    pub mean_cycle: f64,
    pub mean_path: f64,
    pub holds: bool,
}

/// Runs `trials` matched-seed trials (seed `seed + i`) on `cycle(n)` and `path(3n/4)`.
pub fn compare_cycle_path(
    n: usize,
    trials: usize,
    seed: u64,
    params: &SimParams,
) -> Result<CyclePathReport> {
    if n < 8 {
        return Err(Error::InvalidSize(format!(
            "cycle vs path check needs n >= 8, got {n}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let path_n = 3 * n / 4;
    let run = |family: FamilySpec, size: usize| -> Result<Vec<u64>> {
        (0..trials)
            .map(|i| {
                run_trial(family, size, i, seed.wrapping_add(i as u64), params).map(|r| r.steps)
            })
            .collect()
    };
    let cycle_steps = run(FamilySpec::Cycle, n)?;
    let path_steps = run(FamilySpec::Path, path_n)?;
    let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len() as f64;
    let (mean_cycle, mean_path) = (mean(&cycle_steps), mean(&path_steps));
    Ok(CyclePathReport {
        n,
        path_n,
        cycle_steps,
        path_steps,
        mean_cycle,
        mean_path,
        holds: mean_cycle <= mean_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{CoinRange, Configuration};

    #[test]
    fn equal_gaps() {
        let g = GapVector::new(vec![2.0; 5]).unwrap();
        let e = evolve_gaps(&g).unwrap();
        assert_eq!(e.gaps, vec![1.5, 2.0, 2.0, 2.0, 1.5]);
        assert_eq!(e.t, 1);
    }

    #[test]
    fn two_gaps() {
        let g = GapVector::new(vec![4.0, 0.0]).unwrap();
        assert_eq!(evolve_gaps(&g).unwrap().gaps, vec![2.0, 1.0]);
    }

    #[test]
    fn gap_sum_identity() {
        let g = GapVector::new(vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0]).unwrap();
        let e = evolve_gaps(&g).unwrap();
        assert!((e.sum() - (g.sum() - 0.25 * (3.0 + 9.0))).abs() < 1e-12);
    }

    #[test]
    fn gap_validation() {
        assert!(GapVector::new(vec![1.0]).is_err());
        assert!(GapVector::new(vec![1.0, -1.0]).is_err());
        let bad = GapVector {
            gaps: vec![1.0],
            t: 0,
        };
        assert!(evolve_gaps(&bad).is_err());
    }

    #[test]
    fn power_form_peak_is_below_one() {
        // ln g peaks at τ = (m+1)/ln(4/3) with value (m+1)(ln(1/ln(4/3)) - 1 - ln 3) < 0.
        for m in [2usize, 5, 10, 50] {
            let k = (m + 1) as f64;
            let peak_tau = k / (4.0f64 / 3.0).ln();
            let peak = ln_bound(BoundForm::Power, m, peak_tau).unwrap();
            let closed = k * ((1.0 / (4.0f64 / 3.0).ln()).ln() - 1.0 - 3f64.ln());
            assert!((peak - closed).abs() < 1e-9);
            assert!(peak < 0.0);
        }
    }

    #[test]
    fn n4_scan_oracle() {
        // Dense scan of the binomial form on (m, 200] to find the first crossing.
        let m = 2;
        let first = (1..=200_000)
            .map(|i| m as f64 + i as f64 * 1e-3)
            .find(|&t| bound_value(BoundForm::Binomial, m, t).unwrap() >= 1.0)
            .unwrap();
        let PathBound::Solved { tau, steps, .. } =
            solve_path_bound(4, BoundForm::Binomial).unwrap()
        else {
            panic!("expected a root for n = 4");
        };
        assert!(tau <= first && tau > first - 1e-3);
        assert_eq!(steps, 2.0 * tau);
        assert!((bound_value(BoundForm::Binomial, m, tau).unwrap() - 1.0).abs() < 1e-9);

        assert!(matches!(
            solve_path_bound(4, BoundForm::Power).unwrap(),
            PathBound::NoSolution { .. }
        ));
    }

    #[test]
    fn path_bound_validation() {
        assert!(solve_path_bound(5, BoundForm::Binomial).is_err());
        assert!(solve_path_bound(2, BoundForm::Binomial).is_err());
    }

    #[test]
    fn csv_rows() {
        let s = solve_path_bound(10, BoundForm::Binomial).unwrap();
        assert!(s.csv_row().starts_with("10,5,"));
        assert!(s.csv_row().ends_with(",binomial"));
        assert_eq!(
            solve_path_bound(10, BoundForm::Power).unwrap().csv_row(),
            "10,5,,,power"
        );
    }

    fn fake(steps: u64, converged: bool) -> TrialResult {
        let cfg = Configuration::from_prices(&[1.0, 1.0], 1.0);
        TrialResult {
            trial: 0,
            seed: 0,
            steps,
            converged,
            equilibrium_price: 1.0,
            max_funds: 1.0,
            min_funds: 1.0,
            metrics: Vec::new(),
            final_config: cfg,
        }
    }

    #[test]
    fn stats_basics() {
        let s = stabilization_stats(&[fake(7, true)]).unwrap();
        assert_eq!(
            (s.mean, s.median, s.max, s.stddev, s.converged_rate),
            (7.0, 7.0, 7, 0.0, 1.0)
        );
        let s = stabilization_stats(&[fake(1, true), fake(3, false), fake(5, true), fake(7, true)])
            .unwrap();
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 4.0);
        assert_eq!(s.stddev, 5f64.sqrt());
        assert_eq!(s.converged_rate, 0.75);
        assert!(stabilization_stats(&[]).is_err());
    }

    #[test]
    fn cycle_vs_path_on_flat_prices() {
        let params = SimParams {
            coins: CoinRange::new(70, 70).unwrap(),
            ..SimParams::default()
        };
        let r = compare_cycle_path(8, 3, 11, &params).unwrap();
        assert_eq!(r.path_n, 6);
        assert_eq!(r.cycle_steps, vec![0, 0, 0]);
        assert_eq!(r.path_steps, vec![0, 0, 0]);
        assert!(r.holds);
        assert!(compare_cycle_path(7, 3, 11, &params).is_err());
    }
}
