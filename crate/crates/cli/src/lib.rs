// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Command-line driver: single runs, parameter sweeps, the S1-S5 violation
//! table, and trace verification.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use aipaging_core::metrics::oracle::OracleError;
use aipaging_core::sim::{ConfigError, TraceError};
use aipaging_core::{
    aggregate, oracle_check, run_scenario, Aggregate, MetricsError, MetricsReport, PolicyKind,
    ScenarioConfig, SetupId, SimError, Trace,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

const SHIPPED: [(SetupId, &str); 5] = [
    (SetupId::S1, include_str!("../configs/s1.toml")),
    (SetupId::S2, include_str!("../configs/s2.toml")),
    (SetupId::S3, include_str!("../configs/s3.toml")),
    (SetupId::S4, include_str!("../configs/s4.toml")),
    (SetupId::S5, include_str!("../configs/s5.toml")),
];

pub const ALL_POLICIES: [PolicyKind; 3] = [
    PolicyKind::AiPaging,
    PolicyKind::EndpointBound,
    PolicyKind::BestEffort,
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: malformed trace: {source}")]
    Trace { path: String, source: TraceError },
    #[error("{path}: {source}")]
    Oracle { path: String, source: OracleError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} invariant violation(s) found")]
    Verify(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Sim(SimError::InvariantAbort(_)) | CliError::Sim(SimError::Metrics(_)) => {
                EXIT_INVARIANT
            }
            CliError::Metrics(_) => EXIT_INVARIANT,
            CliError::Verify(_) => EXIT_VERIFY,
            _ => EXIT_USAGE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "aipaging",
    version,
    about = "Lease-gated execution anchoring simulator",
    long_about = "Runs scenarios under AiPaging and the two baselines, sweeps one \
                  parameter, prints the S1-S5 violation table, and checks traces \
                  against the safety invariants.\n\nExit codes: 0 ok, 2 usage or \
                  config error, 3 internal invariant abort, 4 verification failure."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one config for each (policy, seed); writes a trace and a metrics CSV per run.
    Run(RunArgs),
    /// Sweep one parameter; writes one aggregated CSV per policy.
    Sweep(SweepArgs),
    /// Seed-averaged violation rate for S1-S5 under all three policies.
    Table2(TableArgs),
    /// Check traces against the invariants. Exit 4 when any is violated.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunSel {
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed list or inclusive range, e.g. `1,2,7` or `1-10`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    /// Policy to run; repeat for several. Default: all three.
    #[arg(long = "policy", value_parser = parse_policy)]
    pub policies: Vec<PolicyKind>,
    /// Output directory.
    #[arg(long, env = "AIPAGING_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Also run the invariant checker on every trace produced.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario TOML; keys not given fall back to the preset of its `setup`.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub sel: RunSel,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long = "sweep-axis", value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long = "sweep-values", value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub sel: RunSel,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Directory holding s1.toml..s5.toml. Default: the shipped configs.
    #[arg(long)]
    pub configs: Option<PathBuf>,
    #[command(flatten)]
    pub sel: RunSel,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Trace files.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    #[value(name = "relocation_probability")]
    RelocationProbability,
    /// Uses the stress mapping, which also sets the path-change probability.
    #[value(name = "stress_level")]
    StressLevel,
    #[value(name = "overload_threshold")]
    OverloadThreshold,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::RelocationProbability => "relocation_probability",
            SweepAxis::StressLevel => "stress_level",
            SweepAxis::OverloadThreshold => "overload_threshold",
        }
    }

    pub fn apply(self, cfg: &mut ScenarioConfig, v: f64) {
        match self {
            SweepAxis::RelocationProbability => cfg.relocation_probability = v,
            SweepAxis::StressLevel => cfg.apply_stress(v),
            SweepAxis::OverloadThreshold => cfg.overload_threshold = v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("bad seed list `{s}`");
    let v: Vec<u64> = if let Some((a, b)) = s.split_once('-') {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if v.is_empty() {
        return Err(bad());
    }
    Ok(Seeds(v))
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

/// Resolved invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyKind>,
    pub out: PathBuf,
    pub verify: bool,
}

impl RunSpec {
    fn resolve(sel: &RunSel, default_seeds: Vec<u64>) -> Result<RunSpec, CliError> {
        let seeds = match (&sel.seed, &sel.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(Seeds(v))) => v.clone(),
            (None, None) => default_seeds,
        };
        if seeds.is_empty() {
            return Err(CliError::Usage("no seeds given".into()));
        }
        let requested: &[PolicyKind] = if sel.policies.is_empty() {
            &ALL_POLICIES
        } else {
            &sel.policies
        };
        let mut policies = Vec::new();
        for p in requested {
            if !policies.contains(p) {
                policies.push(*p);
            }
        }
        Ok(RunSpec {
            seeds,
            policies,
            out: sel.out.clone(),
            verify: sel.verify,
        })
    }

    /// One config per (policy, seed), policy-major.
    pub fn expand(&self, base: &ScenarioConfig) -> Vec<ScenarioConfig> {
        let mut out = Vec::with_capacity(self.policies.len() * self.seeds.len());
        for p in &self.policies {
            for s in &self.seeds {
                let mut c = base.clone();
                c.policy = *p;
                c.seed = *s;
                out.push(c);
            }
        }
        out
    }
}

/// The shipped config for one of S1-S5.
pub fn shipped_config(setup: SetupId) -> ScenarioConfig {
    let text = SHIPPED
        .iter()
        .find(|(s, _)| *s == setup)
        .map(|(_, t)| *t)
        .expect("only S1-S5 are shipped");
    ScenarioConfig::from_toml_str(text).expect("shipped configs are valid")
}

pub fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn fo(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn file_stem(c: &ScenarioConfig) -> String {
    format!(
        "{}-{}-seed{}",
        c.setup.to_string().to_ascii_lowercase(),
        c.policy,
        c.seed
    )
}

const RUN_COLUMNS: [&str; 18] = [
    "setup",
    "policy",
    "seed",
    "horizon_s",
    "sessions",
    "transaction_time_p50_ms",
    "requests",
    "failed_requests",
    "request_failure_rate",
    "injected_failures",
    "recovered_failures",
    "recovery_success_probability",
    "evidence_records",
    "evidence_traffic_rate",
    "violation_rate_percent",
    "relocation_count",
    "relocation_failures",
    "overlap_max_ms",
];

fn run_row(r: &MetricsReport) -> Vec<String> {
    let p50 = aipaging_core::metrics::stats::percentile(&r.transaction_time_samples, 50.0);
    vec![
        r.setup.clone(),
        r.policy.to_string(),
        r.seed.to_string(),
        f(r.horizon_s),
        r.sessions.to_string(),
        fo(p50),
        r.requests.to_string(),
        r.failed_requests.to_string(),
        f(r.request_failure_rate),
        r.injected_failures.to_string(),
        r.recovered_failures.to_string(),
        fo(r.recovery_success_probability),
        r.evidence_records.to_string(),
        f(r.evidence_traffic_rate),
        f(r.violation_rate_percent),
        r.relocation_count.to_string(),
        r.relocation_failures.to_string(),
        fo(r.overlap_max_ms),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn count_violations(trace: &Trace, name: &str) -> Result<usize, CliError> {
    let v = oracle_check(trace).map_err(|source| CliError::Oracle {
        path: name.to_owned(),
        source,
    })?;
    for x in &v {
        eprintln!("{name}: {x}");
    }
    Ok(v.len())
}

/// Runs each config, keeping only the report (and oracle count when asked).
fn run_reports(
    cfgs: &[ScenarioConfig],
    verify: bool,
) -> Result<(Vec<MetricsReport>, usize), CliError> {
    let out: Vec<Result<(MetricsReport, usize), CliError>> = cfgs
        .par_iter()
        .map(|c| {
            let o = run_scenario(c)?;
            let bad = if verify {
                count_violations(&o.trace, &file_stem(c))?
            } else {
                0
            };
            Ok((o.report, bad))
        })
        .collect();
    let mut reports = Vec::with_capacity(out.len());
    let mut bad = 0;
    for r in out {
        let (rep, n) = r?;
        reports.push(rep);
        bad += n;
    }
    Ok((reports, bad))
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let base = ScenarioConfig::load(&args.config)?;
    let spec = RunSpec::resolve(&args.sel, vec![base.seed])?;
    ensure_dir(&spec.out)?;
    let cfgs = spec.expand(&base);
    let results: Vec<Result<(String, usize), CliError>> = cfgs
        .par_iter()
        .map(|c| {
            let o = run_scenario(c)?;
            let stem = file_stem(c);
            let trace_path = spec.out.join(format!("{stem}.trace"));
            fs::write(&trace_path, o.trace.to_text()).map_err(io_err(&trace_path))?;
            let csv_path = spec.out.join(format!("{stem}.metrics.csv"));
            write_csv(&csv_path, &RUN_COLUMNS, &[run_row(&o.report)])?;
            let bad = if spec.verify {
                count_violations(&o.trace, &stem)?
            } else {
                0
            };
            Ok((stem, bad))
        })
        .collect();
    let mut bad = 0;
    for r in results {
        let (stem, n) = r?;
        println!("{}", spec.out.join(stem).display());
        bad += n;
    }
    if bad > 0 {
        return Err(CliError::Verify(bad));
    }
    Ok(())
}

pub type SweepTable = Vec<(PolicyKind, Vec<SweepPoint>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub agg: Aggregate,
}

/// Seed-aggregated sweep, per policy in `spec.policies` order. The second
/// value counts oracle violations when `spec.verify` is set.
pub fn sweep(
    base: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    spec: &RunSpec,
) -> Result<(SweepTable, usize), CliError> {
    let mut cfgs = Vec::new();
    for v in values {
        let mut c = base.clone();
        axis.apply(&mut c, *v);
        c.validate()?;
        cfgs.extend(spec.expand(&c));
    }
    let (reports, bad) = run_reports(&cfgs, spec.verify)?;
    let n = spec.seeds.len();
    let per_value = spec.policies.len() * n;
    let mut out = Vec::new();
    for (pi, p) in spec.policies.iter().enumerate() {
        let mut points = Vec::new();
        for (vi, v) in values.iter().enumerate() {
            let start = vi * per_value + pi * n;
            points.push(SweepPoint {
                value: *v,
                agg: aggregate(&reports[start..start + n])?,
            });
        }
        out.push((*p, points));
    }
    Ok((out, bad))
}

pub fn sweep_columns(axis: SweepAxis) -> Vec<&'static str> {
    vec![
        axis.name(),
        "runs",
        "request_failure_rate",
        "recovery_success_probability",
        "injected_failures",
        "evidence_traffic_rate",
        "violation_rate_percent",
        "transaction_time_p50_ms",
        "relocation_count",
        "overlap_mean_ms",
        "overlap_max_ms",
    ]
}

fn sweep_row(p: &SweepPoint) -> Vec<String> {
    let a = &p.agg;
    vec![
        f(p.value),
        a.runs.to_string(),
        f(a.request_failure_rate.mean),
        fo(a.recovery_success_probability),
        a.injected_failures.to_string(),
        f(a.evidence_traffic_rate.mean),
        f(a.violation_rate_percent.mean),
        fo(a.transaction_time.map(|s| s.p50)),
        f(a.relocation_count.mean),
        fo(a.overlap_mean_ms),
        fo(a.overlap_max_ms),
    ]
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base = ScenarioConfig::load(&args.config)?;
    let spec = RunSpec::resolve(&args.sel, default_seeds())?;
    ensure_dir(&spec.out)?;
    let (table, bad) = sweep(&base, args.axis, &args.values, &spec)?;
    for (p, points) in &table {
        let path = spec
            .out
            .join(format!("sweep-{}-{}.csv", args.axis.name(), p));
        let rows: Vec<_> = points.iter().map(sweep_row).collect();
        write_csv(&path, &sweep_columns(args.axis), &rows)?;
        println!("{}", path.display());
    }
    if bad > 0 {
        return Err(CliError::Verify(bad));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub setup: SetupId,
    /// Seed-averaged violation rate per policy, in `spec.policies` order.
    pub cells: Vec<(PolicyKind, f64)>,
}

pub fn table2(configs: &[ScenarioConfig], spec: &RunSpec) -> Result<(Vec<TableRow>, usize), CliError> {
    let cfgs: Vec<ScenarioConfig> = configs.iter().flat_map(|c| spec.expand(c)).collect();
    let (reports, bad) = run_reports(&cfgs, spec.verify)?;
    let n = spec.seeds.len();
    let rows = configs
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let per_cfg = &reports[ci * spec.policies.len() * n..][..spec.policies.len() * n];
            let cells = spec
                .policies
                .iter()
                .zip(per_cfg.chunks(n))
                .map(|(p, rs)| {
                    let sum: f64 = rs.iter().map(|r| r.violation_rate_percent).sum();
                    (*p, sum / n as f64)
                })
                .collect();
            TableRow {
                setup: c.setup,
                cells,
            }
        })
        .collect();
    Ok((rows, bad))
}

fn load_table_configs(dir: Option<&Path>) -> Result<Vec<ScenarioConfig>, CliError> {
    SetupId::SHIPPED
        .iter()
        .map(|s| match dir {
            None => Ok(shipped_config(*s)),
            Some(d) => {
                let path = d.join(format!("{}.toml", s.to_string().to_ascii_lowercase()));
                Ok(ScenarioConfig::load(&path)?)
            }
        })
        .collect()
}

pub fn render_table(rows: &[TableRow]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<18}", "Setup");
    if let Some(r) = rows.first() {
        for (p, _) in &r.cells {
            let _ = write!(s, "{:>16}", p.to_string());
        }
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<18}", format!("{} {}", r.setup, r.setup.label()));
        for (_, v) in &r.cells {
            let _ = write!(s, "{v:>16.3}");
        }
        s.push('\n');
    }
    s
}

pub fn cmd_table2(args: &TableArgs) -> Result<(), CliError> {
    let configs = load_table_configs(args.configs.as_deref())?;
    let spec = RunSpec::resolve(&args.sel, default_seeds())?;
    ensure_dir(&spec.out)?;
    let (rows, bad) = table2(&configs, &spec)?;
    print!("{}", render_table(&rows));
    let mut header = vec!["setup".to_string(), "label".to_string()];
    header.extend(spec.policies.iter().map(|p| p.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.setup.to_string(), r.setup.label().to_string()];
            v.extend(r.cells.iter().map(|(_, x)| f(*x)));
            v
        })
        .collect();
    let path = spec.out.join("table2.csv");
    write_csv(&path, &header, &csv_rows)?;
    println!("{}", path.display());
    if bad > 0 {
        return Err(CliError::Verify(bad));
    }
    Ok(())
}

/// Violations per file. Malformed input is an error, not a violation.
pub fn verify_paths(paths: &[PathBuf]) -> Result<BTreeMap<PathBuf, Vec<String>>, CliError> {
    let mut out = BTreeMap::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        let name = p.display().to_string();
        let trace = Trace::parse(&text).map_err(|source| CliError::Trace {
            path: name.clone(),
            source,
        })?;
        let v = oracle_check(&trace).map_err(|source| CliError::Oracle { path: name, source })?;
        out.insert(p.clone(), v.iter().map(ToString::to_string).collect());
    }
    Ok(out)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let found = verify_paths(&args.traces)?;
    let mut bad = 0;
    for (p, v) in &found {
        if v.is_empty() {
            println!("{}: ok", p.display());
        }
        for x in v {
            println!("{}: {x}", p.display());
        }
        bad += v.len();
    }
    if bad > 0 {
        return Err(CliError::Verify(bad));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Table2(a) => cmd_table2(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
