//! Plug-in estimation of the causal conditional directed information rate
//! and the likelihood-ratio tests built on it.
//!
//! The estimator is the conditional mutual information
//! `I(Y_k; X_0..X_k | Y_0..Y_{k-1}, Z_0..Z_k)` of the empirical block law.
//! Twice the window count times the estimate is the likelihood-ratio
//! statistic of the null "X has no temporally causal influence on Y
//! (causally conditioned on Z)", asymptotically χ² with
//! `|B|^k |C|^(k+1) (|A|^(k+1) - 1)(|B| - 1)` degrees of freedom.
//! With a one-letter confounder alphabet the same code is the
//! unconditional test.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{count_blocks, AlphabetSpec, BlockCounts, BlockLayout, SymbolSeries, WindowIndices};
use crate::distfns::{self, ChiSquare};
use crate::error::{Error, Result};
use crate::info::{self, JointPmf};
use crate::markov::{self, MarkovModel, Sample};
use crate::seeding::rng_for;

/// Warn when the window count is below this multiple of the degrees of
/// freedom.
pub const SMALL_SAMPLE_FACTOR: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// No confounder.
    #[serde(rename = "uc")]
    Unconditional,
    /// Causally conditioned on a third series.
    #[serde(rename = "cc")]
    Conditional,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uc" | "UC" => Ok(Mode::Unconditional),
            "cc" | "CC" => Ok(Mode::Conditional),
            other => Err(Error::Config(format!("unknown mode {other:?}, expected uc or cc"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub k: usize,
    pub alphabet: AlphabetSpec,
    pub significance: f64,
    pub mode: Mode,
}

impl TestConfig {
    /// Unconditional configurations always carry a one-letter confounder
    /// alphabet, whatever `alphabet.z` says.
    pub fn new(k: usize, alphabet: AlphabetSpec, significance: f64, mode: Mode) -> Result<Self> {
        if !(significance > 0.0 && significance < 1.0) {
            return Err(Error::Config(format!("significance level {significance} outside (0, 1)")));
        }
        let alphabet = match mode {
            Mode::Unconditional => AlphabetSpec::unconditional(alphabet.x, alphabet.y)?,
            Mode::Conditional => AlphabetSpec::new(alphabet.x, alphabet.y, alphabet.z)?,
        };
        Ok(Self {
            k,
            alphabet,
            significance,
            mode,
        })
    }

    pub fn unconditional(k: usize, x: usize, y: usize) -> Result<Self> {
        Self::new(k, AlphabetSpec::unconditional(x, y)?, 0.05, Mode::Unconditional)
    }

    pub fn conditional(k: usize, x: usize, y: usize, z: usize) -> Result<Self> {
        Self::new(k, AlphabetSpec::new(x, y, z)?, 0.05, Mode::Conditional)
    }

    pub fn with_significance(self, significance: f64) -> Result<Self> {
        Self::new(self.k, self.alphabet, significance, self.mode)
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(self.k, self.alphabet)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub mode: Mode,
    pub k: usize,
    /// Plug-in estimate in nats.
    pub estimate: f64,
    /// `2 n estimate`.
    pub statistic: f64,
    pub n: u64,
    pub dof: u64,
    pub p_value: f64,
    pub significance: f64,
    pub reject: bool,
    /// Fewer than ten windows per degree of freedom.
    pub small_sample: bool,
    /// Distinct conditioning contexts (target past and confounder window)
    /// observed, out of all possible ones.
    pub contexts_seen: u64,
    pub contexts_total: u64,
}

/// The plug-in functional on any block law laid out as `layout`.
pub fn ccdi_functional(law: &JointPmf, layout: &BlockLayout) -> Result<f64> {
    info::conditional_mutual_information(law, &[layout.y_now_axis()], &layout.x_axes(), &layout.context_axes())
}

/// The plug-in estimate from block counts.
pub fn ccdi_plugin(counts: &BlockCounts) -> Result<f64> {
    ccdi_functional(&counts.to_pmf()?, counts.layout())
}

/// `|B|^k |C|^(k+1) (|A|^(k+1) - 1)(|B| - 1)`, checked against `i64::MAX`.
pub fn degrees_of_freedom(cfg: &TestConfig) -> Result<u64> {
    let a = cfg.alphabet;
    let overflow = || Error::Config(format!("degrees of freedom overflow for k = {} over {a:?}", cfg.k));
    let k = u32::try_from(cfg.k).map_err(|_| overflow())?;
    let pow = |base: usize, e: u32| (base as u64).checked_pow(e).ok_or_else(overflow);
    let dof = pow(a.y, k)?
        .checked_mul(pow(a.z, k + 1)?)
        .and_then(|v| v.checked_mul(pow(a.x, k + 1).ok()? - 1))
        .and_then(|v| v.checked_mul(a.y as u64 - 1))
        .filter(|&v| v <= i64::MAX as u64)
        .ok_or_else(overflow)?;
    Ok(dof)
}

/// Runs the test on three aligned series. In unconditional mode `z` is
/// ignored and may be `None`.
pub fn run_test(x: &SymbolSeries, y: &SymbolSeries, z: Option<&SymbolSeries>, cfg: &TestConfig) -> Result<TestResult> {
    let constant;
    let z = match cfg.mode {
        Mode::Unconditional => {
            constant = SymbolSeries::constant(x.len())?;
            &constant
        }
        Mode::Conditional => z.ok_or_else(|| Error::Config("conditional test needs a confounder series".into()))?,
    };
    check_alphabets(x, y, z, cfg)?;
    let counts = count_blocks(x, y, z, cfg.k)?;
    test_counts(&counts, cfg)
}

fn check_alphabets(x: &SymbolSeries, y: &SymbolSeries, z: &SymbolSeries, cfg: &TestConfig) -> Result<()> {
    let got = (x.cardinality(), y.cardinality(), z.cardinality());
    let want = (cfg.alphabet.x, cfg.alphabet.y, cfg.alphabet.z);
    if got != want {
        return Err(Error::Series(format!(
            "series alphabets {got:?} do not match the configured alphabets {want:?}"
        )));
    }
    Ok(())
}

/// The test statistic and decision from already-counted blocks.
pub fn test_counts(counts: &BlockCounts, cfg: &TestConfig) -> Result<TestResult> {
    if counts.layout() != &cfg.layout() {
        return Err(Error::Config(format!(
            "counts laid out as {:?}, configuration expects {:?}",
            counts.layout(),
            cfg.layout()
        )));
    }
    let estimate = ccdi_plugin(counts)?;
    let n = counts.n();
    let statistic = 2.0 * n as f64 * estimate;
    let dof = degrees_of_freedom(cfg)?;
    let p_value = ChiSquare::new(dof)?.survival(statistic)?.clamp(0.0, 1.0);
    let (contexts_seen, contexts_total) = context_coverage(counts)?;
    Ok(TestResult {
        mode: cfg.mode,
        k: cfg.k,
        estimate,
        statistic,
        n,
        dof,
        p_value,
        significance: cfg.significance,
        reject: p_value < cfg.significance,
        small_sample: n < SMALL_SAMPLE_FACTOR.saturating_mul(dof),
        contexts_seen,
        contexts_total,
    })
}

fn context_coverage(counts: &BlockCounts) -> Result<(u64, u64)> {
    let context = counts.layout().context_axes();
    if context.is_empty() {
        return Ok((1, 1));
    }
    let (_, marginal) = counts.marginal_counts(&context)?;
    let seen = marginal.iter().filter(|&&c| c > 0).count() as u64;
    Ok((seen, marginal.len() as u64))
}

/// Likelihood-ratio statistic from the closed-form maximized
/// log-likelihoods, computed without touching the entropy code path:
/// `2 [Σ c ln c over full blocks - over (x block, y past, z block)
///   - over (y block, z block) + over (y past, z block)]`.
pub fn loglik_ratio_oracle(counts: &BlockCounts) -> Result<f64> {
    if counts.n() == 0 {
        return Err(Error::Series("no windows counted".into()));
    }
    let layout = counts.layout();
    let w = layout.width();
    let k = layout.k;
    let mut full = 0.0;
    let mut x_past: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut y_block: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut past: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for (cell, &c) in counts.counts().iter().enumerate() {
        if c == 0 {
            continue;
        }
        full += xlogx(c);
        let s = layout.unflatten(cell);
        let (xs, rest) = s.split_at(w);
        let (ys, zs) = rest.split_at(w);
        let key = |parts: &[&[usize]]| parts.concat();
        *x_past.entry(key(&[xs, &ys[..k], zs])).or_default() += c;
        *y_block.entry(key(&[ys, zs])).or_default() += c;
        *past.entry(key(&[&ys[..k], zs])).or_default() += c;
    }
    let sum = |m: &BTreeMap<Vec<usize>, u64>| m.values().map(|&c| xlogx(c)).sum::<f64>();
    let stat = 2.0 * (full - sum(&x_past) - sum(&y_block) + sum(&past));
    Ok(stat.max(0.0))
}

fn xlogx(c: u64) -> f64 {
    let c = c as f64;
    c * c.ln()
}

/// Long-run variance estimate of the per-window log-ratio terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub batch_length: usize,
    pub n_batches: usize,
    /// Mean of the per-window terms (equals the plug-in estimate when the
    /// empirical law is used).
    pub mean_term: f64,
    /// Windows whose context has zero mass under the law used.
    pub skipped_windows: u64,
    /// Fewer than 100 batches or batches shorter than 30.
    pub warning: bool,
}

/// Batch-means estimate of the asymptotic variance, using the empirical
/// block law of the data itself.
pub fn sigma2_batch_means(
    x: &SymbolSeries,
    y: &SymbolSeries,
    z: Option<&SymbolSeries>,
    cfg: &TestConfig,
) -> Result<VarianceEstimate> {
    let (x, y, z) = aligned(x, y, z, cfg)?;
    let counts = count_blocks(x, y, &z, cfg.k)?;
    let law = counts.to_pmf()?;
    sigma2_with_law(x, y, Some(&z), cfg, &law)
}

/// Batch-means variance of the log-ratio terms
/// `ln[P(x block, y_k | ctx) / (P(y_k | ctx) P(x block | ctx))]` under a
/// given block law, with `ctx` the target past and confounder window.
pub fn sigma2_with_law(
    x: &SymbolSeries,
    y: &SymbolSeries,
    z: Option<&SymbolSeries>,
    cfg: &TestConfig,
    law: &JointPmf,
) -> Result<VarianceEstimate> {
    let (x, y, z) = aligned(x, y, z, cfg)?;
    let layout = cfg.layout();
    if law.axes() != layout.axes() {
        return Err(Error::Axes(format!(
            "law axes {:?} do not match the block layout {:?}",
            law.axes(),
            layout.axes()
        )));
    }
    let terms = log_ratio_terms(law, &layout)?;
    let mut values = Vec::with_capacity(x.len() - cfg.k);
    let mut skipped = 0u64;
    for cell in WindowIndices::new(x, y, &z, cfg.k)? {
        match terms[cell] {
            Some(t) => values.push(t),
            None => skipped += 1,
        }
    }
    Ok(batch_means(&values, skipped))
}

fn aligned<'a>(
    x: &'a SymbolSeries,
    y: &'a SymbolSeries,
    z: Option<&SymbolSeries>,
    cfg: &TestConfig,
) -> Result<(&'a SymbolSeries, &'a SymbolSeries, SymbolSeries)> {
    let z = match (cfg.mode, z) {
        (Mode::Unconditional, _) => SymbolSeries::constant(x.len())?,
        (Mode::Conditional, Some(z)) => z.clone(),
        (Mode::Conditional, None) => return Err(Error::Config("conditional mode needs a confounder series".into())),
    };
    check_alphabets(x, y, &z, cfg)?;
    Ok((x, y, z))
}

/// Per-cell log-ratio term, `None` where the cell's context has no mass.
fn log_ratio_terms(law: &JointPmf, layout: &BlockLayout) -> Result<Vec<Option<f64>>> {
    let axes = layout.axes();
    let ctx = layout.context_axes();
    let with_y: Vec<usize> = std::iter::once(layout.y_now_axis()).chain(ctx.iter().copied()).collect();
    let with_x: Vec<usize> = layout.x_axes().into_iter().chain(ctx.iter().copied()).collect();
    let marginal = |keep: &[usize]| -> (Vec<usize>, Vec<f64>) {
        let (_, probs) = info::marginal_sums(&axes, law.probs(), keep);
        (info::projection(&axes, keep), probs)
    };
    let (to_ctx, p_ctx) = marginal(&ctx);
    let (to_y, p_y) = marginal(&with_y);
    let (to_x, p_x) = marginal(&with_x);
    Ok(law
        .probs()
        .iter()
        .enumerate()
        .map(|(cell, &p)| {
            let (c, py, px) = (p_ctx[to_ctx[cell]], p_y[to_y[cell]], p_x[to_x[cell]]);
            if p > 0.0 {
                Some((p * c / (py * px)).ln())
            } else if c > 0.0 && py > 0.0 && px > 0.0 {
                // the window's context is known but the full cell is not:
                // the ratio is zero and the log term undefined
                None
            } else {
                None
            }
        })
        .collect())
}

fn batch_means(values: &[f64], skipped: u64) -> VarianceEstimate {
    let n = values.len();
    let mean_term = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
    let batch_length = (n as f64).sqrt().floor().max(1.0) as usize;
    let n_batches = n / batch_length.max(1);
    let warning = n_batches < 100 || batch_length < 30;
    if n_batches < 2 {
        return VarianceEstimate {
            sigma2: 0.0,
            batch_length,
            n_batches,
            mean_term,
            skipped_windows: skipped,
            warning: true,
        };
    }
    let means: Vec<f64> = values
        .chunks_exact(batch_length)
        .map(|b| b.iter().sum::<f64>() / batch_length as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let spread = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    VarianceEstimate {
        sigma2: (batch_length as f64 * spread / (n_batches - 1) as f64).max(0.0),
        batch_length,
        n_batches,
        mean_term,
        skipped_windows: skipped,
        warning,
    }
}

/// Result of the standardized-error normality check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub reps: usize,
    pub sample_length: usize,
    pub k: usize,
    pub mode: Mode,
    pub exact_rate: f64,
    /// KS distance of `√n (estimate - exact) / σ̂` to the standard normal.
    pub ks_distance: f64,
    /// Fraction of replicates whose `estimate ± 2 σ̂ / √n` covers the exact rate.
    pub coverage: f64,
    pub mean_standardized: f64,
    pub variance_standardized: f64,
    pub mean_estimate: f64,
    pub mean_sigma: f64,
}

/// Simulates `reps` independent samples of length `len` and compares the
/// standardized estimation error with the standard normal.
pub fn normality_check(model: &MarkovModel, cfg: &TestConfig, len: usize, reps: usize, seed: u64) -> Result<NormalityReport> {
    if reps < 2 {
        return Err(Error::Config(format!("normality check needs at least 2 replicates, got {reps}")));
    }
    check_model(model, cfg)?;
    let exact = markov::exact_ccdi_rate(model, cfg.k, cfg.mode)?;
    if exact <= 1e-12 {
        return Err(Error::Regime(format!(
            "exact rate {exact:e} is zero; the normal limit applies only to positive rates"
        )));
    }
    let runs: Vec<(f64, f64)> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sample = markov::simulate_with(model, len, &mut rng_for(seed, rep))?;
            let (x, y, z) = project_sample(&sample, cfg)?;
            let counts = count_blocks(&x, &y, &z, cfg.k)?;
            let estimate = ccdi_plugin(&counts)?;
            let var = sigma2_with_law(&x, &y, Some(&z), cfg, &counts.to_pmf()?)?;
            Ok((estimate, var.sigma2.sqrt()))
        })
        .collect::<Result<_>>()?;
    let n = (len - cfg.k) as f64;
    let mut standardized: Vec<f64> = runs.iter().map(|(e, s)| n.sqrt() * (e - exact) / s).collect();
    let covered = runs
        .iter()
        .filter(|(e, s)| (e - exact).abs() <= 2.0 * s / n.sqrt())
        .count();
    if standardized.iter().any(|v| !v.is_finite()) {
        return Err(Error::Regime("degenerate variance estimate in some replicate".into()));
    }
    let mean = standardized.iter().sum::<f64>() / reps as f64;
    let variance = standardized.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    standardized.sort_by(f64::total_cmp);
    Ok(NormalityReport {
        reps,
        sample_length: len,
        k: cfg.k,
        mode: cfg.mode,
        exact_rate: exact,
        ks_distance: distfns::ks_distance_normal(&standardized)?,
        coverage: covered as f64 / reps as f64,
        mean_standardized: mean,
        variance_standardized: variance,
        mean_estimate: runs.iter().map(|r| r.0).sum::<f64>() / reps as f64,
        mean_sigma: runs.iter().map(|r| r.1).sum::<f64>() / reps as f64,
    })
}

pub(crate) fn check_model(model: &MarkovModel, cfg: &TestConfig) -> Result<()> {
    let (m, c) = (model.alphabet(), cfg.alphabet);
    if m.x != c.x || m.y != c.y || (cfg.mode == Mode::Conditional && m.z != c.z) {
        return Err(Error::Config(format!(
            "model alphabets {m:?} do not match the test configuration {c:?}"
        )));
    }
    Ok(())
}

/// The series a test in `cfg.mode` sees: the confounder is replaced by a
/// constant in unconditional mode.
pub(crate) fn project_sample(sample: &Sample, cfg: &TestConfig) -> Result<(SymbolSeries, SymbolSeries, SymbolSeries)> {
    let z = match cfg.mode {
        Mode::Unconditional => SymbolSeries::constant(sample.x.len())?,
        Mode::Conditional => sample.z.clone(),
    };
    Ok((sample.x.clone(), sample.y.clone(), z))
}
