//! The `htawgm` command line.
//!
//! Every subcommand reads an optional flat config file of `section.key=value`
//! lines; any key can be overridden on the command line as `--section.key=value`
//! or `--section.key value`. Logs go to `run.log_dir`, or to `$HTAWGM_LOG_DIR`
//! when that is set.

use crate::awgm::{ht_awgm_with, validate_params, AwgmError, AwgmParams, ConvergenceRecord, Observer, OnesLoad, ParamError, Setup};
use crate::diagnostics::{diagonal_family, ratio_experiment, RatioConfig, Structure};
use crate::operator::laplacian;
use crate::precond::ExpSumPrecond;
use crate::wavelet::Basis1D;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable overriding `run.log_dir`.
pub const LOG_DIR_ENV: &str = "HTAWGM_LOG_DIR";

#[derive(Parser, Debug)]
#[command(name = "htawgm", version, about = "Adaptive wavelet Galerkin solver in the hierarchical Tucker format")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve −Δu = 1 on the unit cube and log the convergence history.
    Solve(Opts),
    /// Solve for every dimension in `bench.dims` and write a combined summary.
    Bench(Opts),
    /// Check the exponential sum accuracy on the (δ, T) grid.
    PrecondCheck(Opts),
    /// Compare exact and contraction-based index set sizes.
    DiagRatio(Opts),
    /// Validate solver parameters for the dimensions in `params.dims`.
    ParamsCheck(Opts),
}

#[derive(Args, Debug)]
pub struct Opts {
    /// Config file with `section.key=value` lines.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Overrides, `--section.key=value` or `--section.key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Awgm(#[from] AwgmError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Awgm(AwgmError::Params(_)) => EXIT_CONFIG,
            CliError::Awgm(AwgmError::MaxOuter { .. }) => EXIT_NO_CONVERGENCE,
            _ => EXIT_INTERNAL,
        }
    }
}

const KEYS: &[&str] = &[
    "problem.d",
    "awgm.eps",
    "awgm.delta",
    "awgm.alpha",
    "awgm.omega0",
    "awgm.omega1",
    "awgm.omega2",
    "awgm.omega3",
    "awgm.omega4",
    "awgm.omega5",
    "awgm.max_inner",
    "awgm.max_outer",
    "awgm.c_ad",
    "awgm.pcg_max_iter",
    "awgm.spectrum_level",
    "awgm.power_steps",
    "awgm.safety",
    "awgm.rhs_level",
    "run.seed",
    "run.log_dir",
    "run.name",
    "run.csv",
    "bench.dims",
    "bench.parallel",
    "precond.deltas",
    "precond.t_max",
    "precond.eta",
    "precond.points",
    "diag.dims",
    "diag.sizes",
    "diag.alphas",
    "diag.trials",
    "diag.structure",
    "diag.family_t",
    "diag.family_alpha",
    "diag.family_mass",
    "params.dims",
    "params.kappa",
    "params.omega0",
];

/// Flat `section.key → value` configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = Config::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config(format!("line {}: expected key=value", no + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `--key=value` and `--key value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let flag = a.strip_prefix("--").ok_or_else(|| CliError::Config(format!("expected --section.key, got '{a}'")))?;
            match flag.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it.next().ok_or_else(|| CliError::Config(format!("missing value for --{flag}")))?;
                    self.set(flag, v)?
                }
            }
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| CliError::Config(format!("{key}={v}: {e}"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.values.get(key).map(|v| v.parse().map_err(|e| CliError::Config(format!("{key}={v}: {e}")))).transpose()
    }

    pub fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let raw = self.values.get(key).map(String::as_str).unwrap_or(default);
        raw.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("{key}: '{s}': {e}"))))
            .collect()
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Defaults for dimension `d` with every `awgm.*` key applied.
    pub fn awgm_params(&self, d: usize) -> Result<AwgmParams, CliError> {
        let mut p = AwgmParams::defaults(d);
        p.eps = self.get("awgm.eps", p.eps)?;
        p.delta = self.get("awgm.delta", p.delta)?;
        p.alpha = self.get("awgm.alpha", p.alpha)?;
        p.omega0 = self.opt("awgm.omega0")?.or(p.omega0);
        p.omega1 = self.get("awgm.omega1", p.omega1)?;
        p.omega2 = self.opt("awgm.omega2")?.or(p.omega2);
        p.omega3 = self.get("awgm.omega3", p.omega3)?;
        p.omega4 = self.get("awgm.omega4", p.omega4)?;
        p.omega5 = self.get("awgm.omega5", p.omega5)?;
        p.max_inner = self.opt("awgm.max_inner")?.or(p.max_inner);
        p.max_outer = self.get("awgm.max_outer", p.max_outer)?;
        p.c_ad = self.get("awgm.c_ad", p.c_ad)?;
        p.pcg_max_iter = self.get("awgm.pcg_max_iter", p.pcg_max_iter)?;
        p.spectrum_level = self.get("awgm.spectrum_level", p.spectrum_level)?;
        p.power_steps = self.get("awgm.power_steps", p.power_steps)?;
        p.safety = self.get("awgm.safety", p.safety)?;
        p.rhs_level = self.get("awgm.rhs_level", p.rhs_level)?;
        Ok(p)
    }

    fn log_dir(&self) -> Result<PathBuf, CliError> {
        let dir = match std::env::var_os(LOG_DIR_ENV) {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from(self.get("run.log_dir", "logs".to_string())?),
        };
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

/// Writes the JSON-lines log (and optionally a CSV copy) while a solve runs.
struct RunLog {
    json: BufWriter<File>,
    csv: Option<csv::Writer<File>>,
    header: Value,
    records: Vec<ConvergenceRecord>,
    setup: Option<Setup>,
    error: Option<std::io::Error>,
}

impl RunLog {
    fn create(dir: &Path, name: &str, csv: bool, header: Value) -> Result<Self, CliError> {
        let json = BufWriter::new(File::create(dir.join(format!("{name}.jsonl")))?);
        let csv = if csv { Some(csv::Writer::from_path(dir.join(format!("{name}.csv"))).map_err(|e| CliError::Internal(e.to_string()))?) } else { None };
        Ok(RunLog { json, csv, header, records: Vec::new(), setup: None, error: None })
    }

    fn write(&mut self, v: &Value) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.json, "{v}").and_then(|_| self.json.flush()) {
                self.error = Some(e);
            }
        }
    }

    fn finish(mut self) -> Result<(Vec<ConvergenceRecord>, Option<Setup>), CliError> {
        self.json.flush()?;
        if let Some(c) = self.csv.as_mut() {
            c.flush()?;
        }
        match self.error {
            Some(e) => Err(e.into()),
            None => Ok((self.records, self.setup)),
        }
    }
}

impl Observer for RunLog {
    fn setup(&mut self, s: &Setup) {
        let mut h = self.header.clone();
        h["lambda_min"] = json!(s.spectrum.lambda_min);
        h["lambda_max"] = json!(s.spectrum.lambda_max);
        h["kappa"] = json!(s.spectrum.kappa());
        h["raw_lambda_min"] = json!(s.raw_spectrum.lambda_min);
        h["raw_lambda_max"] = json!(s.raw_spectrum.lambda_max);
        h["omega0"] = json!(s.omega0);
        h["omega2"] = json!(s.validated.omega2);
        h["m_star"] = json!(s.validated.m_star);
        h["k_star"] = json!(s.validated.k_star);
        self.setup = Some(*s);
        self.write(&h);
    }

    fn record(&mut self, r: &ConvergenceRecord) {
        let mut v = serde_json::to_value(r).expect("records serialise");
        v["kind"] = json!("record");
        self.write(&v);
        if let Some(c) = self.csv.as_mut() {
            if let Err(e) = c.serialize(r) {
                self.error.get_or_insert(std::io::Error::other(e.to_string()));
            }
        }
        self.records.push(r.clone());
    }
}

/// Outcome of one logged solve.
#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub d: usize,
    pub converged: bool,
    pub error: Option<String>,
    pub exit_code: i32,
    pub setup: Option<Setup>,
    pub records: Vec<ConvergenceRecord>,
}

/// Solves the Poisson problem in `d` dimensions, logging to `dir/name.jsonl`.
pub fn solve_logged(cfg: &Config, d: usize, dir: &Path, name: &str, command: &str) -> Result<SolveSummary, CliError> {
    let params = cfg.awgm_params(d)?;
    let header = json!({
        "kind": "header",
        "command": command,
        "d": d,
        "seed": cfg.get("run.seed", 42u64)?,
        "config": cfg.values(),
        "params": params,
    });
    let mut log = RunLog::create(dir, name, cfg.get("run.csv", false)?, header)?;
    let basis = Arc::new(Basis1D::new());
    let op = laplacian(basis.clone(), d).map_err(|e| CliError::Config(e.to_string()))?;
    let result = ht_awgm_with(&op, &OnesLoad(basis.clone()), &basis, &params, &mut log);
    let (records, setup) = log.finish()?;
    Ok(match result {
        Ok(_) => SolveSummary { d, converged: true, error: None, exit_code: EXIT_OK, setup, records },
        Err(e) => {
            let e = CliError::from(e);
            SolveSummary { d, converged: false, error: Some(e.to_string()), exit_code: e.exit_code(), setup, records }
        }
    })
}

fn print_summary(s: &SolveSummary) {
    let last = s.records.iter().rev().find(|r| r.event == "inner");
    match (last, &s.error) {
        (Some(r), None) => println!(
            "d={} converged: residual {:.3e} after {} iterations, max rank {}, support {}, {:.1} s",
            s.d,
            r.residual,
            s.records.iter().filter(|r| r.event == "inner").count(),
            r.max_rank,
            r.support,
            r.time_s
        ),
        (_, Some(e)) => println!("d={} failed: {e}", s.d),
        (None, None) => println!("d={} converged before the first iteration (zero load)", s.d),
    }
}

fn cmd_solve(cfg: &Config) -> Result<i32, CliError> {
    let d = cfg.get("problem.d", 2usize)?;
    let dir = cfg.log_dir()?;
    let name = cfg.get("run.name", format!("solve_d{d}"))?;
    let s = solve_logged(cfg, d, &dir, &name, "solve")?;
    print_summary(&s);
    println!("log: {}", dir.join(format!("{name}.jsonl")).display());
    Ok(s.exit_code)
}

/// The data behind the residual, rank, support and PCG plots for one dimension.
#[derive(Clone, Debug, Serialize)]
pub struct BenchSeries {
    pub d: usize,
    pub converged: bool,
    pub error: Option<String>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub residual: Vec<f64>,
    pub max_rank: Vec<usize>,
    pub support: Vec<usize>,
    pub pcg_iterations: Vec<usize>,
    pub time_s: f64,
}

impl From<&SolveSummary> for BenchSeries {
    fn from(s: &SolveSummary) -> Self {
        let inner: Vec<&ConvergenceRecord> = s.records.iter().filter(|r| r.event == "inner").collect();
        BenchSeries {
            d: s.d,
            converged: s.converged,
            error: s.error.clone(),
            lambda_min: s.setup.map(|x| x.spectrum.lambda_min),
            lambda_max: s.setup.map(|x| x.spectrum.lambda_max),
            residual: inner.iter().map(|r| r.residual).collect(),
            max_rank: inner.iter().map(|r| r.max_rank).collect(),
            support: inner.iter().map(|r| r.support).collect(),
            pcg_iterations: inner.iter().map(|r| r.pcg_iterations).collect(),
            time_s: s.records.last().map(|r| r.time_s).unwrap_or(0.0),
        }
    }
}

fn cmd_bench(cfg: &Config) -> Result<i32, CliError> {
    let dims: Vec<usize> = cfg.list("bench.dims", "2,4")?;
    let dir = cfg.log_dir()?;
    let run = |d: usize| solve_logged(cfg, d, &dir, &format!("bench_d{d}"), "bench");
    let summaries: Vec<SolveSummary> = if cfg.get("bench.parallel", false)? {
        std::thread::scope(|s| {
            let handles: Vec<_> = dims.iter().map(|&d| s.spawn(move || run(d))).collect();
            handles.into_iter().map(|h| h.join().map_err(|_| CliError::Internal("bench worker panicked".into()))?).collect::<Result<_, _>>()
        })?
    } else {
        dims.iter().map(|&d| run(d)).collect::<Result<_, _>>()?
    };
    let series: Vec<BenchSeries> = summaries.iter().map(BenchSeries::from).collect();
    let mut f = BufWriter::new(File::create(dir.join("bench_summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &series).map_err(|e| CliError::Internal(e.to_string()))?;
    f.flush()?;
    for s in &summaries {
        print_summary(s);
    }
    Ok(summaries.iter().map(|s| s.exit_code).max().unwrap_or(EXIT_OK))
}

/// One `(δ, T)` cell of the accuracy check.
#[derive(Clone, Debug, Serialize)]
pub struct PrecondRow {
    pub delta: f64,
    pub t_max: f64,
    pub terms: usize,
    pub sup_error: f64,
    pub ok: bool,
}

pub fn precond_check(cfg: &Config) -> Result<Vec<PrecondRow>, CliError> {
    let deltas: Vec<f64> = cfg.list("precond.deltas", "0.5,0.1,0.01")?;
    let ts: Vec<f64> = cfg.list("precond.t_max", "1e3,1e6")?;
    let points = cfg.get("precond.points", 10_000usize)?;
    let eta: Option<f64> = cfg.opt("precond.eta")?;
    let mut rows = Vec::new();
    for &delta in &deltas {
        for &t in &ts {
            let p = ExpSumPrecond::new(delta, eta.unwrap_or(delta / 10.0), t).map_err(|e| CliError::Config(e.to_string()))?;
            let err = p.sup_error(points);
            rows.push(PrecondRow { delta, t_max: t, terms: p.num_terms(), sup_error: err, ok: err <= delta });
        }
    }
    Ok(rows)
}

fn cmd_precond_check(cfg: &Config) -> Result<i32, CliError> {
    let rows = precond_check(cfg)?;
    println!("{:>8} {:>10} {:>6} {:>12} {:>4}", "delta", "T", "terms", "sup error", "ok");
    for r in &rows {
        println!("{:>8} {:>10.0e} {:>6} {:>12.4e} {:>4}", r.delta, r.t_max, r.terms, r.sup_error, if r.ok { "yes" } else { "NO" });
    }
    Ok(if rows.iter().all(|r| r.ok) { EXIT_OK } else { EXIT_CONFIG })
}

fn cmd_diag_ratio(cfg: &Config) -> Result<i32, CliError> {
    let structure: Structure = cfg.get("diag.structure", Structure::Random)?;
    let rc = RatioConfig {
        dims: cfg.list("diag.dims", "2,3")?,
        sizes: cfg.list("diag.sizes", "4")?,
        alphas: cfg.list("diag.alphas", "0.3,0.5,0.7,0.9")?,
        trials: cfg.get("diag.trials", 100usize)?,
        structure,
        seed: cfg.get("run.seed", 42u64)?,
    };
    let report = ratio_experiment(&rc).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = cfg.log_dir()?;
    let path = dir.join(format!("{}.csv", cfg.get("run.name", "diag_ratio".to_string())?));
    report.write_csv(File::create(&path)?).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{:>2} {:>9} {:>5} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "d", "shape", "alpha", "min", "mean", "max", "in", "below", "above", "NQ<NE");
    for s in &report.summary {
        println!(
            "{:>2} {:>9} {:>5} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>6} {:>6} {:>6}",
            s.d, s.shape, s.alpha, s.ratio_min, s.ratio_mean, s.ratio_max, s.within, s.below_low, s.above_high, s.nq_below_ne
        );
    }
    let ts: Vec<f64> = cfg.list("diag.family_t", "0.5,0.1,0.01")?;
    let fam = diagonal_family(2, cfg.get("diag.family_alpha", 0.7)?, &ts, cfg.get("diag.family_mass", 0.5)?).map_err(|e| CliError::Config(e.to_string()))?;
    println!("diagonal family (d=2):");
    for p in &fam {
        println!("  t={:<6} n={:<6} NE={:<4} NQ={:<6} NQ/NE={:.2}", p.t, p.n, p.ne, p.nq, p.ratio);
    }
    println!("csv: {}", path.display());
    let growing = fam.windows(2).all(|w| w[1].ratio > w[0].ratio);
    Ok(if report.violations() == 0 && growing { EXIT_OK } else { EXIT_CONFIG })
}

/// Result of validating the parameters for one dimension.
#[derive(Clone, Debug, Serialize)]
pub struct ParamsOutcome {
    pub d: usize,
    pub accepted: bool,
    pub violated: Option<&'static str>,
    pub message: Option<String>,
    pub m_star: Option<usize>,
    pub k_star: Option<usize>,
}

pub fn params_check(cfg: &Config) -> Result<Vec<ParamsOutcome>, CliError> {
    let dims: Vec<usize> = cfg.list("params.dims", "2,4,8,16")?;
    let kappa = cfg.get("params.kappa", 15.0)?;
    let omega0 = cfg.get("params.omega0", 1.0)?;
    dims.iter()
        .map(|&d| {
            let p = cfg.awgm_params(d)?;
            Ok(match validate_params(&p, d, kappa, p.omega0.unwrap_or(omega0)) {
                Ok(v) => ParamsOutcome { d, accepted: true, violated: None, message: None, m_star: Some(v.m_star), k_star: Some(v.k_star) },
                Err(e) => ParamsOutcome { d, accepted: false, violated: Some(e.name()), message: Some(e.to_string()), m_star: None, k_star: None },
            })
        })
        .collect()
}

fn cmd_params_check(cfg: &Config) -> Result<i32, CliError> {
    let out = params_check(cfg)?;
    for o in &out {
        match &o.message {
            None => println!("d={:<3} accepted  M*={} K*={}", o.d, o.m_star.unwrap(), o.k_star.unwrap()),
            Some(m) => println!("d={:<3} rejected  {}: {m}", o.d, o.violated.unwrap()),
        }
    }
    Ok(if out.iter().all(|o| o.accepted) { EXIT_OK } else { EXIT_CONFIG })
}

fn load(opts: &Opts) -> Result<Config, CliError> {
    let mut cfg = match &opts.config {
        Some(p) => Config::parse(&std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)?,
        None => Config::default(),
    };
    cfg.apply_overrides(&opts.overrides)?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the subcommand; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (opts, f): (&Opts, fn(&Config) -> Result<i32, CliError>) = match &cli.command {
        Command::Solve(o) => (o, cmd_solve),
        Command::Bench(o) => (o, cmd_bench),
        Command::PrecondCheck(o) => (o, cmd_precond_check),
        Command::DiagRatio(o) => (o, cmd_diag_ratio),
        Command::ParamsCheck(o) => (o, cmd_params_check),
    };
    match load(opts).and_then(|c| f(&c)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Awgm(e.into())
    }
}
