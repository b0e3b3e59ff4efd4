//! Spike-train ingestion and the pairwise scan.
//!
//! Spike file:
//!
//! ```text
//! # unit: A1
//! # region: V4
//! # trials: 3
//! # duration_ms: 1000
//! 0.4 1.2 3.7          one line per trial, spike times in ms
//! -                    a trial without spikes
//! 12.5 980.25
//! ```
//!
//! Event file (one designated epoch per trial, `-` when absent):
//!
//! ```text
//! # epoch: cue
//! # trials: 3
//! # duration_ms: 1000
//! 200 450
//! -
//! 210 455.5
//! ```
//!
//! Blank lines are ignored; header keys may appear in any order before the
//! first trial line.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockCounter, SymbolSeries};
use crate::causality::{test_counts, Mode, TestConfig, TestResult};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub unit_id: String,
    pub region: String,
    pub duration_ms: f64,
    /// Spike times per trial, strictly increasing, in `[0, duration_ms)`.
    pub trials: Vec<Vec<f64>>,
}

impl SpikeTrain {
    pub fn new(unit_id: impl Into<String>, region: impl Into<String>, duration_ms: f64, trials: Vec<Vec<f64>>) -> Result<Self> {
        let unit_id = unit_id.into();
        check_duration(duration_ms)?;
        for (r, times) in trials.iter().enumerate() {
            check_trial(times, duration_ms).map_err(|msg| Error::Series(format!("unit {unit_id}, trial {r}: {msg}")))?;
        }
        Ok(Self {
            unit_id,
            region: region.into(),
            duration_ms,
            trials,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (headers, lines) = split_headers(text)?;
        let unit = header(&headers, "unit")?;
        let region = header(&headers, "region")?;
        let duration_ms = header_number(&headers, "duration_ms")?;
        let trials = trial_lines(&headers, &lines)?;
        let mut parsed = Vec::with_capacity(trials);
        for (line, body) in lines {
            let times = if body == "-" {
                Vec::new()
            } else {
                body.split_whitespace()
                    .map(|f| {
                        f.parse::<f64>()
                            .map_err(|_| Error::Parse { line, msg: format!("cannot parse spike time {f:?}") })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            check_trial(&times, duration_ms).map_err(|msg| Error::Parse { line, msg })?;
            parsed.push(times);
        }
        debug_assert_eq!(parsed.len(), trials);
        Self::new(unit, region, duration_ms, parsed)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# unit: {}\n# region: {}\n# trials: {}\n# duration_ms: {}\n",
            self.unit_id,
            self.region,
            self.trials.len(),
            self.duration_ms
        );
        for t in &self.trials {
            if t.is_empty() {
                out.push_str("-\n");
            } else {
                let fields: Vec<String> = t.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", fields.join(" "));
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Bins every trial; returns the per-trial series and the number of
    /// spikes lost to clipping.
    pub fn bin(&self, bin_ms: f64) -> Result<(Vec<SymbolSeries>, u64)> {
        let mut clipped = 0;
        let mut out = Vec::with_capacity(self.trials.len());
        for times in &self.trials {
            let b = bin_spikes(times, bin_ms, self.duration_ms)?;
            clipped += b.clipped;
            out.push(b.series);
        }
        Ok((out, clipped))
    }
}

/// One designated epoch per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub epoch: String,
    pub duration_ms: f64,
    pub intervals: Vec<Option<(f64, f64)>>,
}

impl EventLog {
    pub fn new(epoch: impl Into<String>, duration_ms: f64, intervals: Vec<Option<(f64, f64)>>) -> Result<Self> {
        check_duration(duration_ms)?;
        for (r, iv) in intervals.iter().enumerate() {
            if let Some((s, e)) = iv {
                check_interval(*s, *e, duration_ms).map_err(|msg| Error::Series(format!("trial {r}: {msg}")))?;
            }
        }
        Ok(Self {
            epoch: epoch.into(),
            duration_ms,
            intervals,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (headers, lines) = split_headers(text)?;
        let epoch = header(&headers, "epoch")?;
        let duration_ms = header_number(&headers, "duration_ms")?;
        trial_lines(&headers, &lines)?;
        let mut intervals = Vec::with_capacity(lines.len());
        for (line, body) in lines {
            if body == "-" {
                intervals.push(None);
                continue;
            }
            let v: Vec<f64> = body
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("cannot parse time {f:?}") }))
                .collect::<Result<_>>()?;
            let [s, e] = v[..] else {
                return Err(Error::Parse {
                    line,
                    msg: "expected `start_ms end_ms` or `-`".into(),
                });
            };
            check_interval(s, e, duration_ms).map_err(|msg| Error::Parse { line, msg })?;
            intervals.push(Some((s, e)));
        }
        Self::new(epoch, duration_ms, intervals)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# epoch: {}\n# trials: {}\n# duration_ms: {}\n",
            self.epoch,
            self.intervals.len(),
            self.duration_ms
        );
        for iv in &self.intervals {
            match iv {
                Some((s, e)) => {
                    let _ = writeln!(out, "{s} {e}");
                }
                None => out.push_str("-\n"),
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Per-trial binary series: bin `b` is 1 when its start time
    /// `b * bin_ms` lies in `[start, end)`.
    pub fn bin(&self, bin_ms: f64) -> Result<Vec<SymbolSeries>> {
        let len = bin_count(bin_ms, self.duration_ms)?;
        self.intervals
            .iter()
            .map(|iv| {
                let values = (0..len)
                    .map(|b| {
                        let t = b as f64 * bin_ms;
                        u32::from(matches!(iv, Some((s, e)) if *s <= t && t < *e))
                    })
                    .collect();
                SymbolSeries::new(values, 2)
            })
            .collect()
    }
}

fn check_duration(duration_ms: f64) -> Result<()> {
    if !(duration_ms.is_finite() && duration_ms > 0.0) {
        return Err(Error::Config(format!("trial duration {duration_ms} ms must be positive")));
    }
    Ok(())
}

fn check_trial(times: &[f64], duration_ms: f64) -> std::result::Result<(), String> {
    for (i, &t) in times.iter().enumerate() {
        if !(t.is_finite() && (0.0..duration_ms).contains(&t)) {
            return Err(format!("spike time {t} outside [0, {duration_ms})"));
        }
        if i > 0 && times[i - 1] >= t {
            return Err(format!("spike times not strictly increasing at {t}"));
        }
    }
    Ok(())
}

fn check_interval(s: f64, e: f64, duration_ms: f64) -> std::result::Result<(), String> {
    if !(s.is_finite() && e.is_finite() && 0.0 <= s && s <= e && e <= duration_ms) {
        return Err(format!("epoch [{s}, {e}) not inside [0, {duration_ms}]"));
    }
    Ok(())
}

type Headers = BTreeMap<String, (usize, String)>;

fn split_headers(text: &str) -> Result<(Headers, Vec<(usize, String)>)> {
    let mut headers = Headers::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if !lines.is_empty() {
                continue;
            }
            if let Some((key, value)) = rest.split_once(':') {
                headers.insert(key.trim().to_string(), (line, value.trim().to_string()));
            }
            continue;
        }
        lines.push((line, trimmed.to_string()));
    }
    Ok((headers, lines))
}

fn header(headers: &Headers, key: &str) -> Result<String> {
    headers
        .get(key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing `# {key}:` header") })
}

fn header_number<T: FromStr>(headers: &Headers, key: &str) -> Result<T> {
    let value = header(headers, key)?;
    let line = headers[key].0;
    value
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("cannot parse {key} value {value:?}") })
}

fn trial_lines(headers: &Headers, lines: &[(usize, String)]) -> Result<usize> {
    let trials: usize = header_number(headers, "trials")?;
    if trials != lines.len() {
        let line = headers["trials"].0;
        return Err(Error::Parse {
            line,
            msg: format!("header declares {trials} trials, file has {}", lines.len()),
        });
    }
    Ok(trials)
}

fn bin_count(bin_ms: f64, duration_ms: f64) -> Result<usize> {
    if !(bin_ms.is_finite() && bin_ms > 0.0) {
        return Err(Error::Config(format!("bin width {bin_ms} ms must be positive")));
    }
    check_duration(duration_ms)?;
    Ok((duration_ms / bin_ms).ceil() as usize)
}

/// A binned trial and the number of spikes that fell into already occupied
/// bins.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedTrial {
    pub series: SymbolSeries,
    pub clipped: u64,
}

/// Bin `b` is 1 when some spike falls in `[b * bin_ms, (b + 1) * bin_ms)`.
/// The series has `ceil(duration_ms / bin_ms)` bins.
pub fn bin_spikes(timestamps: &[f64], bin_ms: f64, duration_ms: f64) -> Result<BinnedTrial> {
    let len = bin_count(bin_ms, duration_ms)?;
    check_trial(timestamps, duration_ms).map_err(Error::Series)?;
    let mut values = vec![0u32; len];
    let mut clipped = 0;
    for &t in timestamps {
        let b = ((t / bin_ms).floor() as usize).min(len - 1);
        if values[b] == 1 {
            clipped += 1;
        }
        values[b] = 1;
    }
    Ok(BinnedTrial {
        series: SymbolSeries::new(values, 2)?,
        clipped,
    })
}

/// Trials joined end to end, with the start index of every trial after the
/// first.
#[derive(Clone, Debug, PartialEq)]
pub struct Concatenated {
    pub series: SymbolSeries,
    pub boundaries: Vec<usize>,
}

pub fn concat_trials(trials: &[SymbolSeries]) -> Result<Concatenated> {
    let first = trials.first().ok_or_else(|| Error::Series("no trials to concatenate".into()))?;
    let card = first.cardinality();
    let mut values = Vec::with_capacity(trials.iter().map(SymbolSeries::len).sum());
    let mut boundaries = Vec::with_capacity(trials.len() - 1);
    for (i, t) in trials.iter().enumerate() {
        if t.cardinality() != card {
            return Err(Error::Series(format!(
                "trial {i} has alphabet {} but trial 0 has {card}",
                t.cardinality()
            )));
        }
        if i > 0 {
            boundaries.push(values.len());
        }
        values.extend_from_slice(t.values());
    }
    Ok(Concatenated {
        series: SymbolSeries::new(values, card)?,
        boundaries,
    })
}

/// The defined part of `s` shifted by `lag`: `output[i] = s[i - lag]`.
/// A positive lag returns `s[..len - lag]`, the values at indices
/// `lag..len`; a negative lag returns `s[|lag|..]`, the values at indices
/// `0..len - |lag|`.
pub fn shift_series(s: &SymbolSeries, lag: i64) -> Result<SymbolSeries> {
    let len = s.len();
    let shift = lag.unsigned_abs() as usize;
    if lag.unsigned_abs() >= len as u64 {
        return Err(Error::Series(format!("lag {lag} not shorter than the series ({len})")));
    }
    if lag >= 0 {
        s.slice(0..len - shift)
    } else {
        s.slice(shift..len)
    }
}

/// The index range that survives a shift by `lag`.
fn common_range(len: usize, lag: i64) -> std::ops::Range<usize> {
    let shift = lag.unsigned_abs() as usize;
    if lag >= 0 {
        shift..len
    } else {
        0..len - shift
    }
}

/// Delays `target` by `lag` and trims the other series to the common
/// segment.
pub fn align_shifted(
    source: &SymbolSeries,
    target: &SymbolSeries,
    confounder: &SymbolSeries,
    lag: i64,
) -> Result<(SymbolSeries, SymbolSeries, SymbolSeries)> {
    let shifted = shift_series(target, lag)?;
    let range = common_range(target.len(), lag);
    Ok((source.slice(range.clone())?, shifted, confounder.slice(range)?))
}

/// Which third series a scan conditions on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfounderPolicy {
    None,
    Events,
    Unit(String),
}

impl FromStr for ConfounderPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "events" => Ok(Self::Events),
            other => match other.strip_prefix("unit:") {
                Some(id) if !id.is_empty() => Ok(Self::Unit(id.to_string())),
                _ => Err(Error::Config(format!(
                    "confounder policy {other:?}: expected none, events or unit:<id>"
                ))),
            },
        }
    }
}

/// Units and the optional epoch log of one recording session.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub units: Vec<SpikeTrain>,
    pub events: Option<EventLog>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanConfig {
    pub k: usize,
    pub significance: f64,
    pub bin_ms: f64,
    pub policy: ConfounderPolicy,
    /// Drop windows that straddle trial boundaries.
    pub exclude_boundaries: bool,
    /// Re-test rejected pairs with the target delayed by this many bins.
    pub shift_lag: Option<i64>,
    /// Test same-region pairs as well.
    pub include_same_region: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            k: 2,
            significance: 0.05,
            bin_ms: 1.0,
            policy: ConfounderPolicy::None,
            exclude_boundaries: false,
            shift_lag: None,
            include_same_region: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub source: String,
    pub target: String,
    pub confounder: Option<String>,
    pub direction: String,
    pub sample_length: u64,
    pub result: TestResult,
    pub shifted: Option<TestResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub tested: usize,
    pub rejections: usize,
    pub rejection_fraction: f64,
    pub significance: f64,
    pub shift_lag: Option<i64>,
    /// Rejected pairs still rejected after the shift.
    pub persisting: Option<usize>,
    pub clipped_spikes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    pub summary: ScanSummary,
}

impl ScanReport {
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>9} {:>12} {:>12} {:>7}{}",
            "pair",
            "n",
            "statistic",
            "p-value",
            "reject",
            if self.summary.shift_lag.is_some() { "  shifted p" } else { "" }
        );
        for r in &self.rows {
            let shifted = r.shifted.as_ref().map(|s| format!("  {:.3e}", s.p_value)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<24} {:>9} {:>12.3} {:>12.3e} {:>7}{}",
                r.direction,
                r.sample_length,
                r.result.statistic,
                r.result.p_value,
                if r.result.reject { "yes" } else { "no" },
                shifted
            );
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "rejected {}/{} pairs ({:.1}%) at alpha = {}",
            s.rejections,
            s.tested,
            100.0 * s.rejection_fraction,
            s.significance
        );
        if let (Some(lag), Some(p)) = (s.shift_lag, s.persisting) {
            let _ = writeln!(out, "{p}/{} rejections persist with the target shifted by {lag} bins", s.rejections);
        }
        if s.clipped_spikes > 0 {
            let _ = writeln!(out, "{} spikes clipped by binning", s.clipped_spikes);
        }
        out
    }
}

struct BinnedUnit {
    id: String,
    region: String,
    series: SymbolSeries,
}

/// Tests every ordered cross-region pair of units.
pub fn scan_pairs(session: &Session, cfg: &ScanConfig) -> Result<ScanReport> {
    if session.units.len() < 2 {
        return Err(Error::Config("a scan needs at least two units".into()));
    }
    let reference = &session.units[0];
    let mut clipped = 0;
    let mut boundaries = Vec::new();
    let mut units = Vec::with_capacity(session.units.len());
    let mut seen = std::collections::BTreeSet::new();
    for u in &session.units {
        if u.trials.len() != reference.trials.len() || u.duration_ms != reference.duration_ms {
            return Err(Error::Series(format!(
                "unit {} has {} trials of {} ms; unit {} has {} of {} ms",
                u.unit_id,
                u.trials.len(),
                u.duration_ms,
                reference.unit_id,
                reference.trials.len(),
                reference.duration_ms
            )));
        }
        if !seen.insert(u.unit_id.clone()) {
            return Err(Error::Series(format!("duplicate unit id {}", u.unit_id)));
        }
        let (trials, c) = u.bin(cfg.bin_ms)?;
        clipped += c;
        let joined = concat_trials(&trials)?;
        boundaries = joined.boundaries;
        units.push(BinnedUnit {
            id: u.unit_id.clone(),
            region: u.region.clone(),
            series: joined.series,
        });
    }
    units.sort_by(|a, b| a.id.cmp(&b.id));
    let len = units[0].series.len();

    let (confounder, confounder_id, mode) = match &cfg.policy {
        ConfounderPolicy::None => (SymbolSeries::constant(len)?, None, Mode::Unconditional),
        ConfounderPolicy::Events => {
            let events = session
                .events
                .as_ref()
                .ok_or_else(|| Error::Config("confounder policy `events` but no event file given".into()))?;
            if events.intervals.len() != reference.trials.len() || events.duration_ms != reference.duration_ms {
                return Err(Error::Series("event file trials do not match the spike files".into()));
            }
            let joined = concat_trials(&events.bin(cfg.bin_ms)?)?;
            (joined.series, Some(events.epoch.clone()), Mode::Conditional)
        }
        ConfounderPolicy::Unit(id) => {
            let u = units
                .iter()
                .find(|u| &u.id == id)
                .ok_or_else(|| Error::Config(format!("confounder unit {id} not in the session")))?;
            (u.series.clone(), Some(id.clone()), Mode::Conditional)
        }
    };
    let test_cfg = TestConfig::new(
        cfg.k,
        crate::blocks::AlphabetSpec::new(2, 2, confounder.cardinality())?,
        cfg.significance,
        mode,
    )?;
    let excluded = match &cfg.policy {
        ConfounderPolicy::Unit(id) => Some(id.as_str()),
        _ => None,
    };
    let pairs: Vec<(usize, usize)> = (0..units.len())
        .flat_map(|a| (0..units.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b)
        .filter(|&(a, b)| cfg.include_same_region || units[a].region != units[b].region)
        .filter(|&(a, b)| excluded.is_none_or(|id| units[a].id != id && units[b].id != id))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Config("no unit pairs to test (all units share one region?)".into()));
    }
    let counter = BlockCounter::default();
    let count = |x: &SymbolSeries, y: &SymbolSeries, z: &SymbolSeries, bounds: &[usize]| {
        if cfg.exclude_boundaries {
            counter.count_segmented(x, y, z, cfg.k, bounds)
        } else {
            counter.count(x, y, z, cfg.k)
        }
    };
    let rows: Vec<ScanRow> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (src, dst) = (&units[a], &units[b]);
            let counts = count(&src.series, &dst.series, &confounder, &boundaries)?;
            let result = test_counts(&counts, &test_cfg)?;
            let shifted = match cfg.shift_lag {
                Some(lag) if result.reject => {
                    let (x, y, z) = align_shifted(&src.series, &dst.series, &confounder, lag)?;
                    let start = common_range(len, lag).start;
                    let mut bounds: Vec<usize> = boundaries
                        .iter()
                        .flat_map(|&b| [b.checked_sub(start), (b as i64 - lag - start as i64).try_into().ok()])
                        .flatten()
                        .filter(|&b| b > 0 && b < x.len())
                        .collect();
                    bounds.sort_unstable();
                    bounds.dedup();
                    Some(test_counts(&count(&x, &y, &z, &bounds)?, &test_cfg)?)
                }
                _ => None,
            };
            Ok(ScanRow {
                source: src.id.clone(),
                target: dst.id.clone(),
                confounder: confounder_id.clone(),
                direction: format!("{} -> {}", src.id, dst.id),
                sample_length: counts.n(),
                result,
                shifted,
            })
        })
        .collect::<Result<_>>()?;
    let rejections = rows.iter().filter(|r| r.result.reject).count();
    let persisting = cfg
        .shift_lag
        .map(|_| rows.iter().filter(|r| r.shifted.as_ref().is_some_and(|s| s.reject)).count());
    Ok(ScanReport {
        summary: ScanSummary {
            tested: rows.len(),
            rejections,
            rejection_fraction: rejections as f64 / rows.len() as f64,
            significance: cfg.significance,
            shift_lag: cfg.shift_lag,
            persisting,
            clipped_spikes: clipped,
        },
        rows,
    })
}

/// Synthetic sessions with known ground truth.
pub mod synthetic {
    use super::*;

    fn spikes_from_bins(bins: &[bool], trial_bins: usize, rng: &mut crate::seeding::Rng) -> Vec<Vec<f64>> {
        bins.chunks(trial_bins)
            .map(|trial| {
                trial
                    .iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(|(b, _)| b as f64 + rng.random_range(0.0..1.0))
                    .collect()
            })
            .collect()
    }

    /// Two units over `trials` trials of `trial_ms` 1 ms bins. Unit `A`
    /// (region V4) fires independently with probability `rate` per bin;
    /// unit `B` (region FEF) copies `A` one bin later, with each bin flipped
    /// with probability `flip`. The copy runs across trial boundaries.
    pub fn planted_pair(trials: usize, trial_ms: usize, rate: f64, flip: f64, seed: u64) -> Result<Session> {
        let mut rng = rng_for(seed, 0);
        let total = trials * trial_ms;
        let a: Vec<bool> = (0..total).map(|_| rng.random_bool(rate)).collect();
        let b: Vec<bool> = (0..total)
            .map(|i| {
                let copied = i > 0 && a[i - 1];
                copied ^ rng.random_bool(flip)
            })
            .collect();
        Ok(Session {
            units: vec![
                SpikeTrain::new("A", "V4", trial_ms as f64, spikes_from_bins(&a, trial_ms, &mut rng))?,
                SpikeTrain::new("B", "FEF", trial_ms as f64, spikes_from_bins(&b, trial_ms, &mut rng))?,
            ],
            events: None,
        })
    }

    /// `units_per_region` independent units in each of V4 and FEF, each
    /// firing with probability `rate` per 1 ms bin, plus a cue epoch from
    /// 200 to 400 ms in every trial.
    pub fn independent(units_per_region: usize, trials: usize, trial_ms: usize, rate: f64, seed: u64) -> Result<Session> {
        let total = trials * trial_ms;
        let mut units = Vec::with_capacity(2 * units_per_region);
        for (r, region) in ["V4", "FEF"].iter().enumerate() {
            for i in 0..units_per_region {
                let mut rng = rng_for(seed, (r * units_per_region + i) as u64);
                let bins: Vec<bool> = (0..total).map(|_| rng.random_bool(rate)).collect();
                let id = format!("{region}-{i:02}");
                units.push(SpikeTrain::new(id, *region, trial_ms as f64, spikes_from_bins(&bins, trial_ms, &mut rng))?);
            }
        }
        let cue = (trial_ms as f64 * 0.2, trial_ms as f64 * 0.4);
        Ok(Session {
            units,
            events: Some(EventLog::new("cue", trial_ms as f64, vec![Some(cue); trials])?),
        })
    }
}

/// Orders rows by source, then target.
pub fn row_order(a: &ScanRow, b: &ScanRow) -> Ordering {
    (&a.source, &a.target).cmp(&(&b.source, &b.target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::count_blocks;

    fn bits(s: &SymbolSeries) -> Vec<u32> {
        s.values().to_vec()
    }

    #[test]
    fn binning_examples() {
        let b = bin_spikes(&[0.4, 1.2, 3.7], 1.0, 5.0).unwrap();
        assert_eq!(bits(&b.series), [1, 1, 0, 1, 0]);
        assert_eq!(b.clipped, 0);
        let b = bin_spikes(&[1.1, 1.9], 1.0, 5.0).unwrap();
        assert_eq!(bits(&b.series), [0, 1, 0, 0, 0]);
        assert_eq!(b.clipped, 1);
        assert_eq!(bits(&bin_spikes(&[], 1.0, 5.0).unwrap().series), [0; 5]);
        assert_eq!(bin_spikes(&[], 2.0, 5.0).unwrap().series.len(), 3);
    }

    #[test]
    fn binning_rejects_bad_times() {
        assert!(bin_spikes(&[1.0, 0.5], 1.0, 5.0).is_err());
        assert!(bin_spikes(&[1.0, 1.0], 1.0, 5.0).is_err());
        assert!(bin_spikes(&[5.0], 1.0, 5.0).is_err());
        assert!(bin_spikes(&[-0.1], 1.0, 5.0).is_err());
        assert!(bin_spikes(&[1.0], 0.0, 5.0).is_err());
    }

    #[test]
    fn concatenation() {
        let a = SymbolSeries::new(vec![1, 0], 2).unwrap();
        let b = SymbolSeries::new(vec![0, 1], 2).unwrap();
        let c = concat_trials(&[a.clone(), b]).unwrap();
        assert_eq!(bits(&c.series), [1, 0, 0, 1]);
        assert_eq!(c.boundaries, [2]);
        let one = concat_trials(std::slice::from_ref(&a)).unwrap();
        assert_eq!(one.series, a);
        assert!(one.boundaries.is_empty());
        assert!(concat_trials(&[]).is_err());
    }

    #[test]
    fn boundary_exclusion_drops_k_windows_per_boundary() {
        let trials: Vec<SymbolSeries> = (0..4).map(|_| SymbolSeries::new(vec![0, 1, 1, 0, 1, 0, 0, 1], 2).unwrap()).collect();
        let c = concat_trials(&trials).unwrap();
        let z = SymbolSeries::constant(c.series.len()).unwrap();
        let k = 2;
        let all = count_blocks(&c.series, &c.series, &z, k).unwrap().n();
        let cut = BlockCounter::default()
            .count_segmented(&c.series, &c.series, &z, k, &c.boundaries)
            .unwrap()
            .n();
        assert_eq!(all, 32 - 2);
        assert_eq!(all - cut, (k * c.boundaries.len()) as u64);
    }

    #[test]
    fn shifting() {
        let s = SymbolSeries::new(vec![1, 0, 0, 0], 2).unwrap();
        assert_eq!(shift_series(&s, 0).unwrap(), s);
        let z = SymbolSeries::constant(4).unwrap();
        let (x, y, _) = align_shifted(&s, &s, &z, 1).unwrap();
        assert_eq!(y.len(), 3);
        assert_eq!(x.len(), 3);
        // y at aligned index 0 is original index 1 shifted: s[0]
        assert_eq!(y.values()[0], 1);
        assert_eq!(bits(&x), [0, 0, 0]);
        let t = SymbolSeries::new(vec![0, 1, 2, 3, 4], 5).unwrap();
        let back = shift_series(&shift_series(&t, 2).unwrap(), -2).unwrap();
        assert_eq!(bits(&back), [2]);
        assert!(shift_series(&s, 4).is_err());
        assert!(shift_series(&s, -4).is_err());
    }

    #[test]
    fn spike_file_round_trip() {
        let t = SpikeTrain::new("u7", "FEF", 10.0, vec![vec![0.5, 3.25], vec![], vec![9.0]]).unwrap();
        let parsed = SpikeTrain::parse(&t.to_text()).unwrap();
        assert_eq!(parsed, t);
        let e = EventLog::new("cue", 10.0, vec![Some((2.0, 4.0)), None, Some((0.0, 10.0))]).unwrap();
        assert_eq!(EventLog::parse(&e.to_text()).unwrap(), e);
        let binned = e.bin(1.0).unwrap();
        assert_eq!(bits(&binned[0]), [0, 0, 1, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bits(&binned[1]), [0; 10]);
    }

    #[test]
    fn spike_file_errors_name_the_line() {
        let text = "# unit: a\n# region: V4\n# trials: 2\n# duration_ms: 10\n1 2\n3 x\n";
        assert!(matches!(SpikeTrain::parse(text), Err(Error::Parse { line: 6, .. })));
        let unsorted = "# unit: a\n# region: V4\n# trials: 1\n# duration_ms: 10\n3 2\n";
        assert!(matches!(SpikeTrain::parse(unsorted), Err(Error::Parse { line: 5, .. })));
        let short = "# unit: a\n# region: V4\n# trials: 3\n# duration_ms: 10\n3\n";
        assert!(matches!(SpikeTrain::parse(short), Err(Error::Parse { line: 3, .. })));
        assert!(SpikeTrain::parse("# region: V4\n# trials: 0\n# duration_ms: 10\n").is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("none".parse::<ConfounderPolicy>().unwrap(), ConfounderPolicy::None);
        assert_eq!("events".parse::<ConfounderPolicy>().unwrap(), ConfounderPolicy::Events);
        assert_eq!("unit:c3".parse::<ConfounderPolicy>().unwrap(), ConfounderPolicy::Unit("c3".into()));
        assert!("unit:".parse::<ConfounderPolicy>().is_err());
        assert!("all".parse::<ConfounderPolicy>().is_err());
    }

    #[test]
    fn planted_direction_is_recovered() {
        let s = synthetic::planted_pair(20, 1000, 0.2, 0.01, 3).unwrap();
        let r = scan_pairs(&s, &ScanConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 2);
        let ab = r.rows.iter().find(|r| r.direction == "A -> B").unwrap();
        assert!(ab.result.p_value < 1e-4);
        assert_eq!(r.rows.iter().filter(|r| r.result.reject).count(), r.summary.rejections);
    }

    #[test]
    fn scan_policy_errors() {
        let s = synthetic::planted_pair(2, 100, 0.2, 0.01, 3).unwrap();
        let events = ScanConfig {
            policy: ConfounderPolicy::Events,
            ..ScanConfig::default()
        };
        assert!(matches!(scan_pairs(&s, &events), Err(Error::Config(_))));
        let missing = ScanConfig {
            policy: ConfounderPolicy::Unit("Q".into()),
            ..ScanConfig::default()
        };
        assert!(matches!(scan_pairs(&s, &missing), Err(Error::Config(_))));
        let lone = Session {
            units: vec![s.units[0].clone()],
            events: None,
        };
        assert!(scan_pairs(&lone, &ScanConfig::default()).is_err());
    }

    #[test]
    fn scan_is_deterministic_and_sorted() {
        let s = synthetic::independent(3, 5, 400, 0.1, 9).unwrap();
        let cfg = ScanConfig {
            policy: ConfounderPolicy::Events,
            exclude_boundaries: true,
            shift_lag: Some(10),
            ..ScanConfig::default()
        };
        let a = scan_pairs(&s, &cfg).unwrap();
        let b = scan_pairs(&s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 18);
        assert!(a.rows.windows(2).all(|w| row_order(&w[0], &w[1]) == Ordering::Less));
        assert_eq!(a.rows[0].sample_length, (5 * 400 - 2 * 5) as u64);
    }

    #[test]
    fn unit_confounder_excludes_its_own_pairs() {
        let s = synthetic::independent(2, 2, 300, 0.1, 1).unwrap();
        let cfg = ScanConfig {
            policy: ConfounderPolicy::Unit("V4-00".into()),
            ..ScanConfig::default()
        };
        let r = scan_pairs(&s, &cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|r| r.confounder.as_deref() == Some("V4-00") && r.result.mode == Mode::Conditional));
    }
}
