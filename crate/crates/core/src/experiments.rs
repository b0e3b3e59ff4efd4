//! Simulation studies: null-law validation, prefix trajectories and the
//! convergence-rate dichotomy.
//!
//! Replicate `r` of every study draws from stream `r` of the base seed
//! (see [`crate::seeding`]), and results are gathered in replicate order,
//! so output is identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{count_blocks, BlockCounts, SymbolSeries, WindowIndices, DEFAULT_CELL_BUDGET};
use crate::causality::{self, ccdi_plugin, degrees_of_freedom, project_sample, test_counts, Mode, TestConfig};
use crate::distfns::{self, ChiSquare};
use crate::error::{Error, Result};
use crate::markov::{self, MarkovModel};
use crate::seeding::rng_for;

/// KS critical-value coefficient at the 1% level.
pub const KS_COEFFICIENT_1PCT: f64 = 1.63;

/// Below this many replicates a dichotomy study is flagged as noisy.
pub const MIN_DICHOTOMY_REPS: usize = 100;

/// Exact rates at or below this count as zero.
pub const ZERO_RATE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: u64,
    pub estimate: f64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Histogram of a sample with a reference density at the bin midpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub density_overlay: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullValidationReport {
    pub reps: usize,
    pub sample_length: usize,
    pub k: usize,
    pub mode: Mode,
    pub dof: u64,
    pub exact_rate: f64,
    pub ks_distance: f64,
    pub ks_threshold: f64,
    pub pass: bool,
    pub mean: f64,
    pub variance: f64,
    pub histogram: Histogram,
}

/// Simulates `reps` samples of length `len` from a model under which the
/// tested rate is zero and compares the statistics with χ²(dof).
pub fn validate_null(model: &MarkovModel, cfg: &TestConfig, len: usize, reps: usize, seed: u64) -> Result<NullValidationReport> {
    if reps == 0 {
        return Err(Error::Config("null validation needs at least one replicate".into()));
    }
    causality::check_model(model, cfg)?;
    let exact = markov::exact_ccdi_rate(model, cfg.k, cfg.mode)?;
    if exact > ZERO_RATE {
        return Err(Error::Regime(format!(
            "exact rate is {exact:.4} nats, not zero; the χ² law holds only under the null"
        )));
    }
    let dof = degrees_of_freedom(cfg)?;
    let mut stats = null_statistics(model, cfg, len, reps, seed)?;
    let mean = stats.iter().sum::<f64>() / reps as f64;
    let variance = if reps > 1 {
        stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    stats.sort_by(f64::total_cmp);
    let ks_distance = distfns::ks_distance(&stats, dof)?;
    let ks_threshold = KS_COEFFICIENT_1PCT / (reps as f64).sqrt();
    let chi = ChiSquare::new(dof)?;
    let histogram = freedman_diaconis(&stats, |x| chi.density(x).unwrap_or(0.0));
    Ok(NullValidationReport {
        reps,
        sample_length: len,
        k: cfg.k,
        mode: cfg.mode,
        dof,
        exact_rate: exact,
        ks_distance,
        ks_threshold,
        pass: ks_distance < ks_threshold,
        mean,
        variance,
        histogram,
    })
}

/// The likelihood-ratio statistic of each replicate, in replicate order.
pub fn null_statistics(model: &MarkovModel, cfg: &TestConfig, len: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sample = markov::simulate_with(model, len, &mut rng_for(seed, rep))?;
            let (x, y, z) = project_sample(&sample, cfg)?;
            Ok(test_counts(&count_blocks(&x, &y, &z, cfg.k)?, cfg)?.statistic)
        })
        .collect()
}

/// Freedman–Diaconis binning of a sorted sample.
pub fn freedman_diaconis(sorted: &[f64], density: impl Fn(f64) -> f64) -> Histogram {
    const MAX_BINS: usize = 1000;
    let n = sorted.len();
    if n == 0 {
        return Histogram {
            edges: vec![],
            masses: vec![],
            density_overlay: vec![],
        };
    }
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let width = 2.0 * iqr / (n as f64).cbrt();
    let bins = if width > 0.0 && hi > lo {
        (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        1
    };
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram {
        density_overlay: edges.windows(2).map(|e| density(0.5 * (e[0] + e[1]))).collect(),
        masses: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        edges,
    }
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// Test results on the prefixes of `n` windows for each `n` in the grid.
/// One count table is updated incrementally along the series.
pub fn trajectory(
    x: &SymbolSeries,
    y: &SymbolSeries,
    z: Option<&SymbolSeries>,
    cfg: &TestConfig,
    n_grid: &[u64],
) -> Result<Vec<TrajectoryPoint>> {
    let z = match cfg.mode {
        Mode::Unconditional => SymbolSeries::constant(x.len())?,
        Mode::Conditional => z
            .ok_or_else(|| Error::Config("conditional mode needs a confounder series".into()))?
            .clone(),
    };
    let windows = WindowIndices::new(x, y, &z, cfg.k)?;
    check_grid(n_grid, windows.len() as u64)?;
    let mut counts = BlockCounts::empty(cfg.layout(), DEFAULT_CELL_BUDGET)?;
    let mut out = Vec::with_capacity(n_grid.len());
    let mut windows = windows;
    for &n in n_grid {
        while counts.n() < n {
            counts.record(windows.next().ok_or_else(|| Error::Internal("window iterator ended early".into()))?);
        }
        let r = test_counts(&counts, cfg)?;
        out.push(TrajectoryPoint {
            n,
            estimate: r.estimate,
            statistic: r.statistic,
            p_value: r.p_value,
        });
    }
    Ok(out)
}

fn check_grid(n_grid: &[u64], available: u64) -> Result<()> {
    if n_grid.is_empty() {
        return Err(Error::Config("empty sample-size grid".into()));
    }
    if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("sample-size grid {n_grid:?} must be positive and strictly increasing")));
    }
    let last = n_grid[n_grid.len() - 1];
    if last > available {
        return Err(Error::Config(format!("grid asks for {last} windows but the data has {available}")));
    }
    Ok(())
}

/// `2^lo, 2^(lo+1), ..., 2^hi`.
pub fn octave_grid(lo: u32, hi: u32) -> Vec<u64> {
    (lo..=hi).map(|e| 1u64 << e).collect()
}

/// One model and test configuration in a dichotomy study.
#[derive(Clone, Debug)]
pub struct DichotomyCase {
    pub label: String,
    pub model: MarkovModel,
    pub cfg: TestConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyRegime {
    pub label: String,
    pub k: usize,
    pub mode: Mode,
    pub exact_rate: f64,
    pub n_grid: Vec<u64>,
    /// Mean over replicates of `|estimate - exact_rate|` at each grid point.
    pub mean_abs_error: Vec<f64>,
    /// Least-squares slope of log error against log n.
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub reps: usize,
    pub high_variance: bool,
    pub regimes: Vec<DichotomyRegime>,
}

/// Error-decay slopes for each case over a grid spanning at least three
/// octaves. Replicates are nested: each simulates one series of the largest
/// length and evaluates the estimator on its prefixes.
pub fn rate_dichotomy_study(cases: &[DichotomyCase], n_grid: &[u64], reps: usize, seed: u64) -> Result<DichotomyReport> {
    if reps == 0 {
        return Err(Error::Config("dichotomy study needs at least one replicate".into()));
    }
    if cases.is_empty() {
        return Err(Error::Config("dichotomy study needs at least one model".into()));
    }
    check_grid(n_grid, u64::MAX)?;
    if n_grid.len() < 2 || n_grid[n_grid.len() - 1] < 8 * n_grid[0] {
        return Err(Error::Config(format!("sample-size grid {n_grid:?} spans fewer than three octaves")));
    }
    let regimes = cases
        .iter()
        .enumerate()
        .map(|(i, case)| dichotomy_regime(case, n_grid, reps, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    Ok(DichotomyReport {
        reps,
        high_variance: reps < MIN_DICHOTOMY_REPS,
        regimes,
    })
}

fn dichotomy_regime(case: &DichotomyCase, n_grid: &[u64], reps: usize, seed: u64) -> Result<DichotomyRegime> {
    let cfg = &case.cfg;
    causality::check_model(&case.model, cfg)?;
    let exact = markov::exact_ccdi_rate(&case.model, cfg.k, cfg.mode)?;
    let len = usize::try_from(n_grid[n_grid.len() - 1])
        .ok()
        .and_then(|n| n.checked_add(cfg.k))
        .ok_or_else(|| Error::Config("sample-size grid too large".into()))?;
    let errors: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sample = markov::simulate_with(&case.model, len, &mut rng_for(seed, rep))?;
            let (x, y, z) = project_sample(&sample, cfg)?;
            let mut windows = WindowIndices::new(&x, &y, &z, cfg.k)?;
            let mut counts = BlockCounts::empty(cfg.layout(), DEFAULT_CELL_BUDGET)?;
            n_grid
                .iter()
                .map(|&n| {
                    while counts.n() < n {
                        counts.record(windows.next().ok_or_else(|| Error::Internal("window iterator ended early".into()))?);
                    }
                    Ok((ccdi_plugin(&counts)? - exact).abs())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mean_abs_error: Vec<f64> = (0..n_grid.len())
        .map(|j| errors.iter().map(|e| e[j]).sum::<f64>() / reps as f64)
        .collect();
    if mean_abs_error.iter().any(|&e| e <= 0.0) {
        return Err(Error::Regime(format!(
            "{}: zero mean error at some grid point; the log-log fit is undefined",
            case.label
        )));
    }
    let log_n: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let log_e: Vec<f64> = mean_abs_error.iter().map(|e| e.ln()).collect();
    let (slope, intercept) = least_squares(&log_n, &log_e);
    Ok(DichotomyRegime {
        label: case.label.clone(),
        k: cfg.k,
        mode: cfg.mode,
        exact_rate: exact,
        n_grid: n_grid.to_vec(),
        mean_abs_error,
        slope,
        intercept,
    })
}

/// Ordinary least-squares line through `(x, y)`: `(slope, intercept)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::AlphabetSpec;
    use crate::causality::run_test;
    use crate::markov::build_lagged_xor_process;

    fn lagged_xor() -> MarkovModel {
        build_lagged_xor_process(0.01).unwrap().compile().unwrap()
    }

    fn uc1() -> TestConfig {
        TestConfig::unconditional(1, 2, 2).unwrap()
    }

    #[test]
    fn null_validation_small_run() {
        let r = validate_null(&lagged_xor(), &uc1(), 3000, 200, 11).unwrap();
        assert_eq!(r.dof, 6);
        assert!((r.histogram.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.histogram.edges.len(), r.histogram.masses.len() + 1);
        assert!((r.mean - 6.0).abs() < 1.0, "{}", r.mean);
        assert!(r.ks_distance < 0.15, "{}", r.ks_distance);
    }

    #[test]
    fn null_validation_is_deterministic() {
        let a = null_statistics(&lagged_xor(), &uc1(), 500, 16, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| null_statistics(&lagged_xor(), &uc1(), 500, 16, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn null_validation_refuses_positive_rate() {
        let cc3 = TestConfig::conditional(3, 2, 2, 2).unwrap();
        match validate_null(&lagged_xor(), &cc3, 1000, 10, 1) {
            Err(Error::Regime(msg)) => assert!(msg.contains("0.6103"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(validate_null(&lagged_xor(), &uc1(), 1000, 0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn histogram_edges_cover_sample() {
        let sample: Vec<f64> = (0..1000).map(|i| (i as f64 / 10.0).sqrt()).collect();
        let h = freedman_diaconis(&sample, |_| 1.0);
        assert_eq!(h.edges[0], sample[0]);
        assert!((h.edges[h.edges.len() - 1] - sample[999]).abs() < 1e-9);
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let single = freedman_diaconis(&[2.0, 2.0], |_| 0.0);
        assert_eq!(single.masses, vec![1.0]);
    }

    #[test]
    fn trajectory_endpoint_matches_run_test() {
        let s = markov::simulate(&lagged_xor(), 20_003, 5).unwrap();
        let cfg = TestConfig::conditional(3, 2, 2, 2).unwrap();
        let pts = trajectory(&s.x, &s.y, Some(&s.z), &cfg, &[1000, 5000, 20_000]).unwrap();
        let full = run_test(&s.x, &s.y, Some(&s.z), &cfg).unwrap();
        let last = pts.last().unwrap();
        assert_eq!(last.estimate.to_bits(), full.estimate.to_bits());
        assert_eq!(last.p_value.to_bits(), full.p_value.to_bits());
        for p in &pts {
            assert!((p.statistic - 2.0 * p.n as f64 * p.estimate).abs() <= 1e-9 * p.statistic.max(1.0));
        }
    }

    #[test]
    fn trajectory_grid_errors() {
        let s = markov::simulate(&lagged_xor(), 100, 5).unwrap();
        let cfg = uc1();
        assert!(trajectory(&s.x, &s.y, None, &cfg, &[10, 10]).is_err());
        assert!(trajectory(&s.x, &s.y, None, &cfg, &[10, 100]).is_err());
        assert!(trajectory(&s.x, &s.y, None, &cfg, &[]).is_err());
        assert!(trajectory(&s.x, &s.y, None, &cfg, &[10, 99]).is_ok());
    }

    #[test]
    fn trajectory_of_constant_series() {
        let c = SymbolSeries::new(vec![1; 300], 2).unwrap();
        let cfg = TestConfig::new(2, AlphabetSpec::new(2, 2, 2).unwrap(), 0.05, Mode::Conditional).unwrap();
        for p in trajectory(&c, &c, Some(&c), &cfg, &[50, 100, 298]).unwrap() {
            assert_eq!(p.estimate, 0.0);
            assert_eq!(p.p_value, 1.0);
        }
    }

    #[test]
    fn dichotomy_flags_and_errors() {
        let case = DichotomyCase {
            label: "null".into(),
            model: lagged_xor(),
            cfg: uc1(),
        };
        let grid = octave_grid(8, 11);
        let r = rate_dichotomy_study(std::slice::from_ref(&case), &grid, 1, 2).unwrap();
        assert!(r.high_variance);
        assert_eq!(r.regimes[0].mean_abs_error.len(), 4);
        assert!(rate_dichotomy_study(std::slice::from_ref(&case), &[256, 512], 5, 2).is_err());
        assert!(rate_dichotomy_study(std::slice::from_ref(&case), &grid, 0, 2).is_err());
    }

    #[test]
    fn least_squares_recovers_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 2.0).collect();
        let (s, c) = least_squares(&x, &y);
        assert!((s + 0.5).abs() < 1e-12 && (c - 2.0).abs() < 1e-12);
    }
}
