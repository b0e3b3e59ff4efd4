//! The `ccdi` command line.
//!
//! Records go to `--out` (or stdout) as JSON lines; human-readable
//! summaries go to stderr. Exit status: 0 success, 1 usage or
//! configuration error, 2 invalid data, 3 internal consistency violation.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::blocks::{AlphabetSpec, SymbolSeries};
use crate::causality::{self, loglik_ratio_oracle, Mode, TestConfig};
use crate::error::{Error, ErrorClass, Result};
use crate::experiments::{self, DichotomyCase};
use crate::markov::model_file::ModelSpec;
use crate::markov::{self, build_lagged_xor_process, MarkovModel};
use crate::report::json_line;
use crate::series_io::{read_series, render_series, write_atomic};
use crate::spike::{self, ConfounderPolicy, EventLog, ScanConfig, Session, SpikeTrain};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ccdi", version, about = "Causal conditional directed information: estimation and tests")]
pub struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test for causal influence of X on Y, optionally conditioned on Z.
    Test(TestArgs),
    /// Simulate a model and write x, y and z series files.
    Simulate(SimulateArgs),
    /// Compare null statistics with their χ² limit by simulation.
    ValidateNull(ValidateNullArgs),
    /// Test results on growing prefixes of one data set.
    Trajectory(TrajectoryArgs),
    /// Error-decay slopes of the estimator under null and alternative.
    Dichotomy(DichotomyArgs),
    /// Standardized estimation error against the normal limit.
    Normality(NormalityArgs),
    /// Exact value of the functional under a model's stationary law.
    ExactRate(ExactRateArgs),
    /// Test every cross-region pair of spike trains in a session.
    Scan(ScanArgs),
}

#[derive(Debug, Args)]
pub struct TestSpec {
    /// uc (no confounder) or cc (conditioned on Z).
    #[arg(long, default_value = "cc")]
    pub mode: Mode,
    /// Memory: windows of k + 1 symbols.
    #[arg(long)]
    pub k: usize,
    /// Alphabet sizes of X, Y and Z.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 2, 2])]
    pub alphabet: Vec<usize>,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

impl TestSpec {
    fn config(&self) -> Result<TestConfig> {
        let [x, y, z] = self.alphabet[..] else {
            return Err(Error::Config("--alphabet takes three sizes".into()));
        };
        let alphabet = match self.mode {
            Mode::Unconditional => AlphabetSpec::unconditional(x, y)?,
            Mode::Conditional => AlphabetSpec::new(x, y, z)?,
        };
        TestConfig::new(self.k, alphabet, self.alpha, self.mode)
    }
}

#[derive(Debug, Args)]
pub struct SeriesInputs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    /// Required in cc mode, ignored in uc mode.
    #[arg(long)]
    pub z: Option<PathBuf>,
}

impl SeriesInputs {
    fn load(&self, cfg: &TestConfig) -> Result<(SymbolSeries, SymbolSeries, Option<SymbolSeries>)> {
        let x = read_series(&self.x, Some(cfg.alphabet.x))?;
        let y = read_series(&self.y, Some(cfg.alphabet.y))?;
        let z = match (cfg.mode, &self.z) {
            (Mode::Conditional, Some(p)) => Some(read_series(p, Some(cfg.alphabet.z))?),
            (Mode::Conditional, None) => return Err(Error::Config("cc mode needs --z".into())),
            (Mode::Unconditional, _) => None,
        };
        let lens = [Some(x.len()), Some(y.len()), z.as_ref().map(SymbolSeries::len)];
        if lens.iter().flatten().any(|&l| l != x.len()) {
            return Err(Error::Series(format!("series lengths differ: {lens:?}")));
        }
        Ok((x, y, z))
    }
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Built-in model: lagged-xor (order-2 binary source, Y = X xor Z three steps back xor noise).
    #[arg(long, conflicts_with = "model")]
    pub builtin: Option<String>,
    /// Model file (see MANIFEST.md for the grammar).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Flip probability of the built-in model's target noise.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
}

impl ModelSource {
    fn load(&self) -> Result<MarkovModel> {
        match (&self.builtin, &self.model) {
            (Some(name), None) if name == "lagged-xor" || name == "section4" => build_lagged_xor_process(self.noise)?.compile(),
            (Some(name), None) => Err(Error::Config(format!("unknown built-in model {name:?}; available: lagged-xor"))),
            (None, Some(path)) => load_model(path),
            _ => Err(Error::Config("give either --builtin or --model".into())),
        }
    }
}

fn load_model(path: &Path) -> Result<MarkovModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    text.parse::<ModelSpec>()?.compile()
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write records here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Output {
    fn emit(&self, lines: &[String]) -> Result<()> {
        let mut text = lines.join("\n");
        text.push('\n');
        match &self.out {
            Some(path) => write_atomic(path, &text),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                Ok(stdout.flush()?)
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub inputs: SeriesInputs,
    #[command(flatten)]
    pub spec: TestSpec,
    /// Recompute the statistic from closed-form log-likelihoods and fail
    /// (exit 3) if the two disagree.
    #[arg(long)]
    pub self_check: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long)]
    pub length: usize,
    #[arg(long)]
    pub seed: u64,
    /// Directory for x.txt, y.txt and z.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// File name prefix, e.g. `run1-` gives run1-x.txt.
    #[arg(long, default_value = "")]
    pub prefix: String,
}

#[derive(Debug, Args)]
pub struct ValidateNullArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[command(flatten)]
    pub spec: TestSpec,
    #[arg(long, default_value_t = 30_000)]
    pub length: usize,
    /// Replicates (default 2000, or 10000 with --full-scale).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, alias = "paper-scale")]
    pub full_scale: bool,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub inputs: SeriesInputs,
    #[command(flatten)]
    pub spec: TestSpec,
    /// Window counts, increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<u64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct DichotomyArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Study case `LABEL:MODE:K[:MODEL_FILE]`; repeatable. Defaults to
    /// `alternative:cc:3` and `null:uc:1` on the given model.
    #[arg(long = "case")]
    pub cases: Vec<String>,
    /// Grid 2^LO ..= 2^HI.
    #[arg(long, default_value = "10:17")]
    pub octaves: String,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct NormalityArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[command(flatten)]
    pub spec: TestSpec,
    #[arg(long, default_value_t = 100_000)]
    pub length: usize,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ExactRateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, default_value = "cc")]
    pub mode: Mode,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Spike files, one per unit.
    #[arg(long, num_args = 1.., required = true)]
    pub units: Vec<PathBuf>,
    /// Event file for `--policy events`.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// none, events or unit:<id>.
    #[arg(long, default_value = "none")]
    pub policy: ConfounderPolicy,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub bin_ms: f64,
    /// Drop windows that straddle trial boundaries.
    #[arg(long)]
    pub exclude_boundaries: bool,
    /// Re-test rejected pairs with the target delayed by this many bins.
    #[arg(long, allow_hyphen_values = true)]
    pub shift_lag: Option<i64>,
    /// Also test pairs within one region.
    #[arg(long)]
    pub include_same_region: bool,
    #[command(flatten)]
    pub output: Output,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Internal => EXIT_INTERNAL,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        // only the first configuration in a process takes effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::ValidateNull(a) => cmd_validate_null(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::Dichotomy(a) => cmd_dichotomy(a),
        Command::Normality(a) => cmd_normality(a),
        Command::ExactRate(a) => cmd_exact_rate(a),
        Command::Scan(a) => cmd_scan(a),
    }
}

fn cmd_test(a: TestArgs) -> Result<()> {
    let cfg = a.spec.config()?;
    let (x, y, z) = a.inputs.load(&cfg)?;
    let result = if a.self_check {
        let z_full = z.clone().map_or_else(|| SymbolSeries::constant(x.len()), Ok)?;
        let (result, oracle) = rayon::join(
            || causality::run_test(&x, &y, z.as_ref(), &cfg),
            || crate::blocks::count_blocks(&x, &y, &z_full, cfg.k).and_then(|c| loglik_ratio_oracle(&c)),
        );
        let (result, oracle) = (result?, oracle?);
        if (oracle - result.statistic).abs() > 1e-9 * result.statistic.max(1.0) {
            return Err(Error::Internal(format!(
                "likelihood-ratio statistic {oracle} disagrees with 2n times the estimate {}",
                result.statistic
            )));
        }
        eprintln!("self-check passed: statistic {} matches {oracle}", result.statistic);
        result
    } else {
        causality::run_test(&x, &y, z.as_ref(), &cfg)?
    };
    if result.small_sample {
        eprintln!(
            "warning: {} windows for {} degrees of freedom; the χ² approximation may be poor",
            result.n, result.dof
        );
    }
    eprintln!(
        "{} k={}: estimate {:.6} nats, statistic {:.3}, dof {}, p = {:.4e}, {}",
        mode_name(cfg.mode),
        cfg.k,
        result.estimate,
        result.statistic,
        result.dof,
        result.p_value,
        if result.reject { "reject" } else { "no rejection" }
    );
    a.output.emit(&[json_line("test_result", &result)?])
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Unconditional => "uc",
        Mode::Conditional => "cc",
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let model = a.source.load()?;
    let sample = markov::simulate(&model, a.length, a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (name, series) in [("x", &sample.x), ("y", &sample.y), ("z", &sample.z)] {
        let headers = [
            ("process", name.to_string()),
            ("length", a.length.to_string()),
            ("seed", a.seed.to_string()),
        ];
        let path = a.out_dir.join(format!("{}{name}.txt", a.prefix));
        write_atomic(&path, &render_series(series, &headers))?;
    }
    eprintln!("wrote {} symbols per series to {}", a.length, a.out_dir.display());
    Ok(())
}

fn cmd_validate_null(a: ValidateNullArgs) -> Result<()> {
    let model = a.source.load()?;
    let cfg = a.spec.config()?;
    let reps = a.reps.unwrap_or(if a.full_scale { 10_000 } else { 2000 });
    let r = experiments::validate_null(&model, &cfg, a.length, reps, a.seed)?;
    eprintln!(
        "{} reps: KS {:.4} (threshold {:.4}, {}), mean {:.3} (χ² mean {}), variance {:.3} (χ² variance {})",
        r.reps,
        r.ks_distance,
        r.ks_threshold,
        if r.pass { "pass" } else { "fail" },
        r.mean,
        r.dof,
        r.variance,
        2 * r.dof
    );
    a.output.emit(&[json_line("null_validation", &r)?])
}

fn cmd_trajectory(a: TrajectoryArgs) -> Result<()> {
    let cfg = a.spec.config()?;
    let (x, y, z) = a.inputs.load(&cfg)?;
    let points = experiments::trajectory(&x, &y, z.as_ref(), &cfg, &a.grid)?;
    let lines = points
        .iter()
        .map(|p| json_line("trajectory_point", p))
        .collect::<Result<Vec<_>>>()?;
    a.output.emit(&lines)
}

fn parse_octaves(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("--octaves {s:?}: expected LO:HI with LO < HI < 63"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let (lo, hi): (u32, u32) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
    if lo >= hi || hi >= 63 {
        return Err(bad());
    }
    Ok(experiments::octave_grid(lo, hi))
}

fn parse_case(s: &str, default_model: &MarkovModel) -> Result<DichotomyCase> {
    let parts: Vec<&str> = s.splitn(4, ':').collect();
    let bad = |why: &str| Error::Config(format!("--case {s:?}: {why}; expected LABEL:MODE:K[:MODEL_FILE]"));
    if parts.len() < 3 {
        return Err(bad("too few fields"));
    }
    let mode: Mode = parts[1].parse()?;
    let k: usize = parts[2].parse().map_err(|_| bad("K is not an integer"))?;
    let model = match parts.get(3) {
        Some(path) => load_model(Path::new(path))?,
        None => default_model.clone(),
    };
    let a = model.alphabet();
    let cfg = TestConfig::new(k, a, 0.05, mode)?;
    Ok(DichotomyCase {
        label: parts[0].to_string(),
        model,
        cfg,
    })
}

fn cmd_dichotomy(a: DichotomyArgs) -> Result<()> {
    let model = a.source.load()?;
    let specs = if a.cases.is_empty() {
        vec!["alternative:cc:3".to_string(), "null:uc:1".to_string()]
    } else {
        a.cases.clone()
    };
    let cases = specs.iter().map(|s| parse_case(s, &model)).collect::<Result<Vec<_>>>()?;
    let grid = parse_octaves(&a.octaves)?;
    let r = experiments::rate_dichotomy_study(&cases, &grid, a.reps, a.seed)?;
    if r.high_variance {
        eprintln!("warning: {} replicates; slopes will be noisy", r.reps);
    }
    for g in &r.regimes {
        eprintln!("{}: exact rate {:.6}, slope {:.3}", g.label, g.exact_rate, g.slope);
    }
    a.output.emit(&[json_line("dichotomy", &r)?])
}

fn cmd_normality(a: NormalityArgs) -> Result<()> {
    let model = a.source.load()?;
    let cfg = a.spec.config()?;
    let r = causality::normality_check(&model, &cfg, a.length, a.reps, a.seed)?;
    eprintln!(
        "{} reps: KS to N(0,1) {:.4}, coverage {:.3}, standardized mean {:.3}, variance {:.3}",
        r.reps, r.ks_distance, r.coverage, r.mean_standardized, r.variance_standardized
    );
    a.output.emit(&[json_line("normality", &r)?])
}

fn cmd_exact_rate(a: ExactRateArgs) -> Result<()> {
    let model = a.source.load()?;
    let r = markov::exact_rate_report(&model, a.k, a.mode)?;
    eprintln!("{} k={}: {:.7} nats ({:?})", mode_name(a.mode), a.k, r.value, r.kind);
    a.output.emit(&[json_line("exact_rate", &r)?])
}

fn cmd_scan(a: ScanArgs) -> Result<()> {
    let units = a.units.iter().map(|p| load_with_path(p, SpikeTrain::load)).collect::<Result<Vec<_>>>()?;
    let events = a.events.as_deref().map(|p| load_with_path(p, EventLog::load)).transpose()?;
    let session = Session { units, events };
    let cfg = ScanConfig {
        k: a.k,
        significance: a.alpha,
        bin_ms: a.bin_ms,
        policy: a.policy.clone(),
        exclude_boundaries: a.exclude_boundaries,
        shift_lag: a.shift_lag,
        include_same_region: a.include_same_region,
    };
    let report = spike::scan_pairs(&session, &cfg)?;
    eprint!("{}", report.summary_table());
    let mut lines = report
        .rows
        .iter()
        .map(|r| json_line("scan_row", r))
        .collect::<Result<Vec<_>>>()?;
    lines.push(json_line("scan_summary", &report.summary)?);
    a.output.emit(&lines)
}

fn load_with_path<T>(path: &Path, load: impl Fn(&Path) -> Result<T>) -> Result<T> {
    load(path).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octave_parsing() {
        assert_eq!(parse_octaves("2:4").unwrap(), vec![4, 8, 16]);
        assert!(parse_octaves("4:2").is_err());
        assert!(parse_octaves("x").is_err());
    }

    #[test]
    fn case_parsing() {
        let m = build_lagged_xor_process(0.01).unwrap().compile().unwrap();
        let c = parse_case("null:uc:1", &m).unwrap();
        assert_eq!(c.cfg.mode, Mode::Unconditional);
        assert_eq!(c.cfg.alphabet.z, 1);
        assert!(parse_case("null:uc", &m).is_err());
        assert!(parse_case("null:xx:1", &m).is_err());
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        assert_eq!(main_with_args(["ccdi", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["ccdi"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["ccdi", "--help"]), EXIT_OK);
    }
}
