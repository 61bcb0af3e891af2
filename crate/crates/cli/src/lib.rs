//! Command-line harness for the coupling experiments.
//!
//! Every command writes its results plus a `*.manifest.json` describing the
//! exact invocation and the SHA-256 of each output; `iic replay` re-runs a
//! manifest and compares digests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use iic_core::coupling::{CouplingEngine, CouplingOptions, CouplingSummary};
use iic_core::error::{CouplingError, EstimatorError, LatticeError, OracleError};
use iic_core::estimator::{
    empirical_tv, estimate_arm, exact_crossing_probability, exact_tv, fit_exponent, ArmEngine,
    ArmKind, TvMode, TvRegion, TvReport,
};
use iic_core::lattice::ball_size;
use iic_core::numeric::{wilson_halfwidth, Z95};
use iic_core::oracle::{BackendMode, OracleBackend, DEFAULT_EXACT_LIMIT};
use iic_core::verification::{self, VerifyConfig};
use iic_core::Color;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "IIC_WORKERS";

/// Acceptance band for the dual-arm exponent estimate.
pub const EXPONENT_BAND: (f64, f64) = (0.07, 0.15);

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "iic",
    version,
    about = "Site-by-site coupling experiments for one-arm-conditioned percolation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "lowercase")]
pub enum Command {
    /// Exact identity suites and per-replica assertions.
    Verify(VerifyArgs),
    /// Coupling replicas with per-replica assertions.
    Couple(CoupleArgs),
    /// Total-variation distance against the dual-arm bound.
    Tv(TvArgs),
    /// Arm-event probability estimate.
    Arm(ArmArgs),
    /// Dual-arm exponent fit across scales.
    Exponent(ExponentArgs),
    /// Re-run a manifest and compare its output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Mc,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Common {
    /// Site probability.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    pub out: OutFormat,
    /// Directory for results and manifests.
    #[arg(long, default_value = "results")]
    #[serde(skip, default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = Backend::Exact)]
    pub backend: Backend,
    /// Largest number of unrevealed sites enumerated exactly.
    #[arg(long, default_value_t = DEFAULT_EXACT_LIMIT)]
    pub exact_limit: usize,
    /// Target 95% half-width of Monte-Carlo thresholds.
    #[arg(long, default_value_t = 1e-3)]
    pub mc_tolerance: f64,
}

impl BackendArgs {
    pub fn backend(&self, seed: u64) -> OracleBackend {
        let mode = match self.backend {
            Backend::Exact => BackendMode::Exact,
            Backend::Mc => BackendMode::MonteCarlo,
            Backend::Auto => BackendMode::Auto,
        };
        OracleBackend {
            mode,
            exact_limit: self.exact_limit,
            mc_tolerance: self.mc_tolerance,
            mc_seed: seed,
            ..OracleBackend::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 2)]
    pub n: u32,
    /// Sampled (circuit, revealed set, data) triples.
    #[arg(long, default_value_t = 500)]
    pub triples: u64,
    /// Replicas behind the coupled-law check.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Replicas per radius triple in the proof-step suite.
    #[arg(long, default_value_t = 100_000)]
    pub replicas: u64,
    #[arg(long, default_value_t = 0.005)]
    pub tv_tolerance: f64,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CoupleArgs {
    #[arg(long, default_value_t = 0)]
    pub k: u32,
    #[arg(long, default_value_t = 1)]
    pub m: u32,
    #[arg(long, default_value_t = 2)]
    pub n: u32,
    #[arg(long, default_value_t = 100_000)]
    pub replicas: u64,
    /// First replica index.
    #[arg(long, default_value_t = 0)]
    pub replica_start: u64,
    /// Also write per-step traces as JSON lines.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvModeArg {
    Exact,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionArg {
    /// The ball of radius k.
    Ball,
    /// The six neighbors of the origin.
    Ring1,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TvArgs {
    #[arg(long, default_value_t = 0)]
    pub k: u32,
    #[arg(long, default_value_t = 1)]
    pub m: u32,
    #[arg(long, default_value_t = 2)]
    pub n: u32,
    #[arg(long, value_enum, default_value_t = TvModeArg::Exact)]
    pub mode: TvModeArg,
    #[arg(long, value_enum, default_value_t = RegionArg::Ball)]
    pub region: RegionArg,
    /// Samples per measure in empirical mode.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Black,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineArg {
    Reference,
    UnionFind,
    Lazy,
}

impl From<EngineArg> for ArmEngine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Reference => ArmEngine::Reference,
            EngineArg::UnionFind => ArmEngine::UnionFind,
            EngineArg::Lazy => ArmEngine::Lazy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ArmArgs {
    #[arg(long, value_enum, default_value_t = KindArg::White)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    #[arg(long, default_value_t = 2)]
    pub m: u32,
    #[arg(long, alias = "samples", default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, value_enum, default_value_t = EngineArg::Lazy)]
    pub engine: EngineArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExponentArgs {
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    /// Comma-separated increasing radii.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
    pub m_list: Vec<u32>,
    #[arg(long, alias = "samples", default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, value_enum, default_value_t = EngineArg::Lazy)]
    pub engine: EngineArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Where to write the re-run outputs (default: a `replay` directory next
    /// to the manifest).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub invocation: Command,
    pub seed: u64,
    pub replica_range: [u64; 2],
    pub version: String,
    pub timestamp: String,
    pub outputs: Vec<OutputFile>,
    pub passed: bool,
}

/// Result of a command: pass/fail plus the files written.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub passed: bool,
    pub manifest: Option<PathBuf>,
    pub lines: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Exit code for an error: usage and capacity problems are 2, failed
/// invariants are 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let capacity_or_usage = |e: &anyhow::Error| -> bool {
        if let Some(e) = e.downcast_ref::<EstimatorError>() {
            return match e {
                EstimatorError::CapacityExceeded { .. } | EstimatorError::InvalidParameters(_) => {
                    true
                }
                EstimatorError::Oracle(o) => oracle_usage(o),
                EstimatorError::Coupling(c) => coupling_usage(c),
                EstimatorError::Lattice(_) | EstimatorError::Config(_) => true,
                _ => false,
            };
        }
        if let Some(c) = e.downcast_ref::<CouplingError>() {
            return coupling_usage(c);
        }
        if let Some(o) = e.downcast_ref::<OracleError>() {
            return oracle_usage(o);
        }
        e.downcast_ref::<LatticeError>().is_some() || e.downcast_ref::<UsageError>().is_some()
    };
    if capacity_or_usage(err) {
        EXIT_USAGE
    } else {
        EXIT_FAIL
    }
}

fn oracle_usage(e: &OracleError) -> bool {
    matches!(
        e,
        OracleError::CapacityExceeded { .. }
            | OracleError::InvalidQuery(_)
            | OracleError::Config(_)
            | OracleError::Lattice(_)
    )
}

fn coupling_usage(e: &CouplingError) -> bool {
    match e {
        CouplingError::InvalidRadii { .. } | CouplingError::Lattice(_) => true,
        CouplingError::Oracle(o) => oracle_usage(o),
        CouplingError::Replica { source, .. } => coupling_usage(source),
        _ => false,
    }
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Sizes the global thread pool from the environment. Results never depend
/// on it.
pub fn init_workers() {
    if let Some(n) = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

struct Writer<'a> {
    dir: &'a Path,
    stem: &'static str,
    outputs: Vec<OutputFile>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path, stem: &'static str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Writer {
            dir,
            stem,
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, suffix: &str, bytes: Vec<u8>) -> Result<()> {
        let name = format!("{}{}", self.stem, suffix);
        fs::write(self.dir.join(&name), &bytes).with_context(|| format!("writing {name}"))?;
        self.outputs.push(OutputFile {
            name,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Rows as CSV (header always present) or as a pretty JSON array.
    fn table<T: Serialize>(
        &mut self,
        suffix: &str,
        format: OutFormat,
        header: &[&str],
        rows: &[T],
    ) -> Result<()> {
        match format {
            OutFormat::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .has_headers(false)
                    .from_writer(Vec::new());
                w.write_record(header)?;
                for r in rows {
                    w.serialize(r)?;
                }
                self.write(&format!("{suffix}.csv"), w.into_inner()?)
            }
            OutFormat::Json => {
                let mut bytes = serde_json::to_vec_pretty(rows)?;
                bytes.push(b'\n');
                self.write(&format!("{suffix}.json"), bytes)
            }
        }
    }

    fn finish(
        self,
        invocation: &Command,
        seed: u64,
        range: [u64; 2],
        passed: bool,
    ) -> Result<PathBuf> {
        let manifest = RunManifest {
            invocation: invocation.clone(),
            seed,
            replica_range: range,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs: self.outputs,
            passed,
        };
        let path = self.dir.join(format!("{}.manifest.json", self.stem));
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

pub fn run(command: &Command) -> Result<Report> {
    match command {
        Command::Verify(a) => cmd_verify(command, a),
        Command::Couple(a) => cmd_couple(command, a),
        Command::Tv(a) => cmd_tv(command, a),
        Command::Arm(a) => cmd_arm(command, a),
        Command::Exponent(a) => cmd_exponent(command, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

#[derive(Debug, Serialize)]
struct SuiteRow {
    suite: String,
    passed: bool,
    checks: u64,
    failures: u64,
    max_error: f64,
    detail: String,
}

pub fn cmd_verify(command: &Command, a: &VerifyArgs) -> Result<Report> {
    let cfg = VerifyConfig {
        n: a.n,
        p: a.common.p,
        seed: a.common.seed,
        triples: a.triples,
        samples: a.samples,
        replicas: a.replicas,
        tv_tolerance: a.tv_tolerance,
        backend: a.backend.backend(a.common.seed),
    };
    let suites = verification::run_all(&cfg)?;
    let passed = suites.iter().all(|s| s.passed);
    let mut lines = vec![format!(
        "{:<15} {:<6} {:>10} {:>9} {:>12}  detail",
        "suite", "status", "checks", "failures", "max_error"
    )];
    for s in &suites {
        lines.push(format!(
            "{:<15} {:<6} {:>10} {:>9} {:>12.3e}  {}",
            s.name,
            if s.passed { "PASS" } else { "FAIL" },
            s.checks,
            s.failures,
            s.max_error,
            s.detail
        ));
    }
    let rows: Vec<SuiteRow> = suites
        .into_iter()
        .map(|s| SuiteRow {
            suite: s.name,
            passed: s.passed,
            checks: s.checks,
            failures: s.failures,
            max_error: s.max_error,
            detail: s.detail,
        })
        .collect();
    let mut w = Writer::new(&a.common.out_dir, "verify")?;
    w.table(
        "",
        a.common.out,
        &[
            "suite",
            "passed",
            "checks",
            "failures",
            "max_error",
            "detail",
        ],
        &rows,
    )?;
    let manifest = w.finish(
        command,
        a.common.seed,
        [0, a.samples.max(a.replicas)],
        passed,
    )?;
    Ok(Report {
        passed,
        manifest: Some(manifest),
        lines,
    })
}

#[derive(Debug, Serialize)]
struct CoupleRow {
    k: u32,
    m: u32,
    n: u32,
    p: f64,
    backend: Backend,
    approximate: bool,
    replicas: u64,
    hits: u64,
    duals: u64,
    hit_rate: Option<f64>,
    hit_ci: Option<f64>,
    dual_rate: Option<f64>,
    dual_exact: Option<f64>,
    agree_rate: Option<f64>,
    non_hit: u64,
    event_mismatches: u64,
    coincidence_violations: u64,
    circuits_verified: u64,
    markov_checks: u64,
    markov_violations: u64,
    fkg_violations: u64,
}

const COUPLE_HEADER: [&str; 21] = [
    "k",
    "m",
    "n",
    "p",
    "backend",
    "approximate",
    "replicas",
    "hits",
    "duals",
    "hit_rate",
    "hit_ci",
    "dual_rate",
    "dual_exact",
    "agree_rate",
    "non_hit",
    "event_mismatches",
    "coincidence_violations",
    "circuits_verified",
    "markov_checks",
    "markov_violations",
    "fkg_violations",
];

#[derive(Serialize)]
struct TraceLine<'a> {
    replica: u64,
    #[serde(flatten)]
    entry: &'a iic_core::coupling::TraceEntry,
}

pub fn cmd_couple(command: &Command, a: &CoupleArgs) -> Result<Report> {
    let c = &a.common;
    let backend = a.backend.backend(c.seed);
    let engine = CouplingEngine::new(a.k, a.m, a.n, c.p, backend)?;
    let range = a.replica_start..a.replica_start + a.replicas;
    let summary: CouplingSummary = engine.run_replicas(c.seed, range.clone(), &[])?;
    let stats = engine.oracle_stats();
    let rate = |x: u64| (summary.replicas > 0).then(|| x as f64 / summary.replicas as f64);
    let dual_exact = (ball_size(a.m) <= DEFAULT_EXACT_LIMIT)
        .then(|| exact_crossing_probability(a.k, a.m, c.p, Color::White).ok())
        .flatten();
    let row = CoupleRow {
        k: a.k,
        m: a.m,
        n: a.n,
        p: c.p,
        backend: a.backend.backend,
        approximate: summary.approximate,
        replicas: summary.replicas,
        hits: summary.hits,
        duals: summary.duals,
        hit_rate: rate(summary.hits),
        hit_ci: (summary.replicas > 0)
            .then(|| wilson_halfwidth(summary.hits, summary.replicas, Z95)),
        dual_rate: rate(summary.duals),
        dual_exact,
        agree_rate: rate(summary.agree),
        non_hit: summary.non_hit,
        event_mismatches: summary.event_mismatches,
        coincidence_violations: summary.coincidence_violations,
        circuits_verified: summary.circuits_verified,
        markov_checks: summary.markov_checks,
        markov_violations: summary.markov_violations,
        fkg_violations: stats.fkg_violations,
    };
    let passed = summary.all_consistent() && stats.fkg_violations == 0;
    let mut w = Writer::new(&c.out_dir, "couple")?;
    w.table("", c.out, &COUPLE_HEADER, std::slice::from_ref(&row))?;
    if a.trace {
        let traced =
            CouplingEngine::new(a.k, a.m, a.n, c.p, backend)?.with_options(CouplingOptions {
                trace: true,
                check_circuit: true,
            });
        let mut bytes = Vec::new();
        for r in range.clone() {
            let out = traced.run(&iic_core::UniformField::new(c.seed, r))?;
            for entry in &out.trace {
                serde_json::to_writer(&mut bytes, &TraceLine { replica: r, entry })?;
                bytes.push(b'\n');
            }
        }
        w.write(".trace.jsonl", bytes)?;
    }
    let manifest = w.finish(command, c.seed, [range.start, range.end], passed)?;
    let mut lines = vec![format!(
        "({},{},{}) replicas {} hits {} duals {} non-hit {} mismatches {} coincidence violations {} circuits {}{}",
        a.k,
        a.m,
        a.n,
        summary.replicas,
        summary.hits,
        summary.duals,
        summary.non_hit,
        summary.event_mismatches,
        summary.coincidence_violations,
        summary.circuits_verified,
        if summary.approximate { " (approximate)" } else { "" }
    )];
    if let (Some(h), Some(e)) = (row.hit_rate, dual_exact) {
        lines.push(format!(
            "hit rate {h:.6} vs exact dual-arm probability {e:.6}"
        ));
    }
    Ok(Report {
        passed,
        manifest: Some(manifest),
        lines,
    })
}

#[derive(Debug, Serialize)]
struct TvRow {
    k: u32,
    m: u32,
    n: u32,
    mode: TvMode,
    tv: f64,
    bound: f64,
    trials: Option<u64>,
    ci: Option<f64>,
    region: TvRegion,
    p: f64,
    noise: Option<f64>,
    within_bound: bool,
}

pub fn cmd_tv(command: &Command, a: &TvArgs) -> Result<Report> {
    let c = &a.common;
    let region = match a.region {
        RegionArg::Ball => TvRegion::Ball,
        RegionArg::Ring1 => TvRegion::Ring1,
    };
    let report: TvReport = match a.mode {
        TvModeArg::Exact => match exact_tv(a.k, a.m, a.n, c.p, region) {
            Err(EstimatorError::BoundViolation { tv, bound }) => TvReport {
                k: a.k,
                m: a.m,
                n: a.n,
                p: c.p,
                mode: TvMode::Exact,
                region,
                tv,
                bound,
                samples: None,
                bound_sigma: None,
                noise: None,
                counts_m: Vec::new(),
                counts_n: Vec::new(),
            },
            other => other?,
        },
        TvModeArg::Empirical => empirical_tv(a.k, a.m, a.n, c.p, a.samples, c.seed, region)?,
    };
    let passed = report.within_bound(3.0);
    let row = TvRow {
        k: report.k,
        m: report.m,
        n: report.n,
        mode: report.mode,
        tv: report.tv,
        bound: report.bound,
        trials: report.samples,
        ci: report.bound_sigma.map(|s| Z95 * s),
        region: report.region,
        p: report.p,
        noise: report.noise,
        within_bound: passed,
    };
    let mut w = Writer::new(&c.out_dir, "tv")?;
    w.table(
        "",
        c.out,
        &[
            "k",
            "m",
            "n",
            "mode",
            "tv",
            "bound",
            "trials",
            "ci",
            "region",
            "p",
            "noise",
            "within_bound",
        ],
        std::slice::from_ref(&row),
    )?;
    let samples = if a.mode == TvModeArg::Empirical {
        a.samples
    } else {
        0
    };
    let manifest = w.finish(command, c.seed, [0, samples], passed)?;
    let lines = vec![format!(
        "({},{},{}) {:?} tv {:.6e} bound {:.6}{}",
        a.k,
        a.m,
        a.n,
        report.mode,
        report.tv,
        report.bound,
        report
            .bound_sigma
            .map(|s| format!(" ± {:.2e} (1σ)", s))
            .unwrap_or_default()
    )];
    Ok(Report {
        passed,
        manifest: Some(manifest),
        lines,
    })
}

#[derive(Debug, Serialize)]
struct ArmRow {
    kind: KindArg,
    k: u32,
    m: u32,
    p: f64,
    trials: u64,
    hits: u64,
    p_hat: f64,
    ci_halfwidth: f64,
    exact: Option<f64>,
    engine: EngineArg,
}

pub fn cmd_arm(command: &Command, a: &ArmArgs) -> Result<Report> {
    let c = &a.common;
    let kind = match a.kind {
        KindArg::Black => ArmKind::Black,
        KindArg::White => ArmKind::White,
    };
    let stats = estimate_arm(kind, a.k, a.m, c.p, a.trials, c.seed, a.engine.into())?;
    let exact = exact_crossing_probability(a.k, a.m, c.p, kind.color()).ok();
    let row = ArmRow {
        kind: a.kind,
        k: a.k,
        m: a.m,
        p: c.p,
        trials: stats.trials,
        hits: stats.hits,
        p_hat: stats.p_hat(),
        ci_halfwidth: stats.ci_halfwidth(),
        exact,
        engine: a.engine,
    };
    let mut w = Writer::new(&c.out_dir, "arm")?;
    w.table(
        "",
        c.out,
        &[
            "kind",
            "k",
            "m",
            "p",
            "trials",
            "hits",
            "p_hat",
            "ci_halfwidth",
            "exact",
            "engine",
        ],
        std::slice::from_ref(&row),
    )?;
    let manifest = w.finish(command, c.seed, [0, a.trials], true)?;
    let mut line = format!(
        "{:?} ({}, {}) p̂ = {:.6} ± {:.2e}",
        a.kind, a.k, a.m, row.p_hat, row.ci_halfwidth
    );
    if let Some(e) = exact {
        line.push_str(&format!(" (exact {e:.6})"));
    }
    Ok(Report {
        passed: true,
        manifest: Some(manifest),
        lines: vec![line],
    })
}

#[derive(Debug, Serialize)]
struct ScaleRow {
    k: u32,
    m: u32,
    trials: u64,
    hits: u64,
    p_hat: f64,
    ci_halfwidth: f64,
}

#[derive(Debug, Serialize)]
struct FitRow {
    k: u32,
    scales: usize,
    trials: u64,
    exponent: f64,
    stderr: f64,
    intercept: f64,
    monotone: bool,
    band_low: f64,
    band_high: f64,
    in_band: bool,
}

pub fn cmd_exponent(command: &Command, a: &ExponentArgs) -> Result<Report> {
    let c = &a.common;
    if c.p != 0.5 {
        return Err(UsageError("the exponent fit runs at p = 1/2 only".into()).into());
    }
    let fit = fit_exponent(a.k, &a.m_list, a.trials, c.seed, a.engine.into())?;
    let in_band = (EXPONENT_BAND.0..=EXPONENT_BAND.1).contains(&fit.exponent);
    let passed = in_band && fit.monotone;
    let scales: Vec<ScaleRow> = fit
        .stats
        .iter()
        .map(|s| ScaleRow {
            k: s.k,
            m: s.m,
            trials: s.trials,
            hits: s.hits,
            p_hat: s.p_hat(),
            ci_halfwidth: s.ci_halfwidth(),
        })
        .collect();
    let summary = FitRow {
        k: a.k,
        scales: a.m_list.len(),
        trials: a.trials,
        exponent: fit.exponent,
        stderr: fit.stderr,
        intercept: fit.intercept,
        monotone: fit.monotone,
        band_low: EXPONENT_BAND.0,
        band_high: EXPONENT_BAND.1,
        in_band,
    };
    let mut w = Writer::new(&c.out_dir, "exponent")?;
    w.table(
        "",
        c.out,
        &["k", "m", "trials", "hits", "p_hat", "ci_halfwidth"],
        &scales,
    )?;
    w.table(
        ".fit",
        c.out,
        &[
            "k",
            "scales",
            "trials",
            "exponent",
            "stderr",
            "intercept",
            "monotone",
            "band_low",
            "band_high",
            "in_band",
        ],
        std::slice::from_ref(&summary),
    )?;
    let manifest = w.finish(command, c.seed, [0, a.trials], passed)?;
    let mut lines: Vec<String> = scales
        .iter()
        .map(|s| {
            format!(
                "m = {:>4}: p̂ = {:.5} ± {:.1e}",
                s.m, s.p_hat, s.ci_halfwidth
            )
        })
        .collect();
    lines.push(format!(
        "exponent {:.4} ± {:.4} (band [{}, {}], monotone {})",
        fit.exponent, fit.stderr, EXPONENT_BAND.0, EXPONENT_BAND.1, fit.monotone
    ));
    Ok(Report {
        passed,
        manifest: Some(manifest),
        lines,
    })
}

fn with_out_dir(command: &Command, dir: &Path) -> Result<Command> {
    let mut command = command.clone();
    let common = match &mut command {
        Command::Verify(a) => &mut a.common,
        Command::Couple(a) => &mut a.common,
        Command::Tv(a) => &mut a.common,
        Command::Arm(a) => &mut a.common,
        Command::Exponent(a) => &mut a.common,
        Command::Replay(_) => bail!(UsageError(
            "a replay manifest cannot replay another replay".into()
        )),
    };
    common.out_dir = dir.to_path_buf();
    Ok(command)
}

/// Digests of a manifest's outputs that differ on re-run, as
/// `(file, recorded, replayed)`.
pub fn replay_manifest(path: &Path, out_dir: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{}: not a run manifest: {e}", path.display())))?;
    let command = with_out_dir(&manifest.invocation, out_dir)?;
    let report = run(&command)?;
    let replayed: RunManifest = serde_json::from_str(&fs::read_to_string(
        report.manifest.expect("commands write manifests"),
    )?)?;
    let mut diffs = Vec::new();
    for old in &manifest.outputs {
        let new = replayed
            .outputs
            .iter()
            .find(|o| o.name == old.name)
            .map(|o| o.sha256.clone())
            .unwrap_or_default();
        if new != old.sha256 {
            diffs.push((old.name.clone(), old.sha256.clone(), new));
        }
    }
    Ok(diffs)
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<Report> {
    let out_dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| a.manifest.parent().unwrap_or(Path::new(".")).join("replay"));
    let diffs = replay_manifest(&a.manifest, &out_dir)?;
    let lines = if diffs.is_empty() {
        vec![format!(
            "replay of {} reproduced every output",
            a.manifest.display()
        )]
    } else {
        diffs
            .iter()
            .map(|(f, old, new)| format!("{f}: recorded {old}, replayed {new}"))
            .collect()
    };
    Ok(Report {
        passed: diffs.is_empty(),
        manifest: None,
        lines,
    })
}
