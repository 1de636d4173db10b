//! `orp-sim` command line.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 filesystem error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::CliConfig;
use crate::error::{Error, Result};
use crate::ingest::ingest_traces;
use crate::report::{
    allocations_csv, comparison_csv, cumulative_csv, metrics_csv, sweep_csv, trace_csv,
    write_atomic,
};
use crate::simulator::{self, summarize, SimConfig, Strategy, SweepGrid};
use crate::workload::{generate_synthetic, load_workload, save_workload, SyntheticSpec, Workload};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "ORP_SIM_THREADS";

const SWEPT_REWARD: (f64, f64) = (0.7, 0.9);
const SWEPT_PENALTY: (f64, f64) = (0.0, 0.1);

#[derive(Debug, Parser)]
#[command(
    name = "orp-sim",
    version,
    about = "Cost-aware VM provisioning simulator driven by learning automata",
    after_help = "Flags override values from --config, which override built-in defaults.\n\
                  Set ORP_SIM_THREADS to cap parallelism. Exit codes: 0 ok, 1 invalid input, 2 io error."
)]
pub struct Cli {
    /// JSON configuration file; every key is optional
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one strategy over a workload with one seed
    Run(RunArgs),
    /// Sweep the learning rates and report mean iterations per cell
    Sweep(SweepArgs),
    /// Compare strategies over several seeds
    Compare(CompareArgs),
    /// Build a workload CSV from a directory of Bitbrains traces
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Workload CSV, or synthetic:COUNT[:TEMPLATE=WEIGHT,...] with templates
    /// class1, class2, class3, data, process, normal [default mix: equal class1/2/3]
    #[arg(long, value_name = "FILE|SPEC")]
    pub workload: Option<String>,

    /// Seed for synthetic workload generation [default: 0]
    #[arg(long, value_name = "N")]
    pub workload_seed: Option<u64>,

    /// VM catalog CSV [default: built-in catalog of 11 types]
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,

    /// Starting pool: spawn:MIN:MAX, each:N or fixed:TYPE=N,... [default: spawn:20:50]
    #[arg(long, value_name = "SPEC")]
    pub pool: Option<String>,

    /// Buy VMs from the catalog when the pool cannot host a request [default: off]
    #[arg(long)]
    pub elastic: bool,

    /// Provisioning delay per purchased VM, seconds [default: 60]
    #[arg(long, value_name = "S")]
    pub delay_per_vm: Option<f64>,

    /// Reward rate a, in (0,1] [default: 0.8]
    #[arg(long, value_name = "A")]
    pub lambda_reward: Option<f64>,

    /// Penalty rate b, in [0,1) [default: 0.05]
    #[arg(long, value_name = "B")]
    pub lambda_penalty: Option<f64>,

    /// Favorable-response threshold on the normalized score [default: 0.5]
    #[arg(long, value_name = "T")]
    pub threshold: Option<f64>,

    /// Action probability that ends learning [default: 0.95]
    #[arg(long, value_name = "P")]
    pub prob_threshold: Option<f64>,

    /// Iteration cap per service [default: 500]
    #[arg(long, value_name = "N")]
    pub max_iterations: Option<u64>,

    /// Hours billed per allocated VM [default: 1]
    #[arg(long, value_name = "H")]
    pub billing_hours: Option<f64>,

    /// Return VMs to the pool after each request [default: off]
    #[arg(long)]
    pub release_after_request: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub sim: SimArgs,

    /// orp, random or greedy
    #[arg(long, default_value = "orp")]
    pub strategy: String,

    /// Run seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory for metrics.csv, allocations.csv and cumulative_cost.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Also write the per-iteration automaton trace to trace.csv
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sim: SimArgs,

    /// Grid as lambda_r=START:END:STEP,lambda_p=START:END:STEP (single values allowed)
    #[arg(long, default_value = "lambda_r=0.7:0.9:0.05,lambda_p=0:0.1:0.025")]
    pub grid: String,

    /// Number of seeds per cell
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,

    /// First seed; seeds are consecutive from here
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory for sweep.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub sim: SimArgs,

    /// Comma-separated strategies, at least two distinct
    #[arg(long, default_value = "orp,random,greedy")]
    pub strategies: String,

    /// Number of seeds per strategy
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,

    /// First seed; seeds are consecutive from here
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory for comparison.csv, metrics.csv and cumulative_cost.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of per-VM trace files
    #[arg(long, value_name = "DIR")]
    pub traces: PathBuf,

    /// Workload CSV to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Nearest-rank percentile for memory and network, in [0,100] [default: 95]
    #[arg(long, value_name = "P")]
    pub percentile: Option<f64>,

    /// Services per request as MIN:MAX, or a single fixed count [default: 1:5]
    #[arg(long, value_name = "MIN:MAX")]
    pub services_per_request: Option<String>,

    /// Field delimiter of the trace files [default: ;]
    #[arg(long, value_name = "CHAR")]
    pub delimiter: Option<char>,

    /// Seed for grouping services into requests [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,

    /// Skip unparsable files with a warning instead of failing [default: off]
    #[arg(long)]
    pub lenient: bool,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|()| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Validation(format!(
            "{THREADS_ENV} must be a positive integer, got '{v}'"
        ))
    })?;
    // the global pool can only be set once per process
    if rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_err()
    {
        info!("thread pool already initialized");
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    match &cli.command {
        Command::Run(a) => cmd_run(&file, a),
        Command::Sweep(a) => cmd_sweep(&file, a),
        Command::Compare(a) => cmd_compare(&file, a),
        Command::Ingest(a) => cmd_ingest(&file, a),
    }
}

fn merged_config(file: &CliConfig, a: &SimArgs) -> Result<SimConfig> {
    let mut c = file.clone();
    if let Some(p) = &a.catalog {
        c.catalog = Some(p.clone());
    }
    if a.lambda_reward.is_some() {
        c.lambda_reward = a.lambda_reward;
    }
    if a.lambda_penalty.is_some() {
        c.lambda_penalty = a.lambda_penalty;
    }
    if a.threshold.is_some() {
        c.threshold = a.threshold;
    }
    if a.billing_hours.is_some() {
        c.billing_hours = a.billing_hours;
    }
    if a.release_after_request {
        c.release_after_request = Some(true);
    }
    let mut elastic = c.elastic.unwrap_or_default();
    if a.elastic {
        elastic.enabled = true;
    }
    if let Some(d) = a.delay_per_vm {
        elastic.delay_per_vm_s = d;
    }
    c.elastic = Some(elastic);
    let mut conv = c.convergence.unwrap_or_default();
    if let Some(p) = a.prob_threshold {
        conv.prob_threshold = p;
    }
    if let Some(m) = a.max_iterations {
        conv.max_iterations = m;
    }
    c.convergence = Some(conv);
    if let Some(p) = &a.pool {
        c.pool = Some(p.parse()?);
    }
    let mut cfg = c.sim_config()?;
    cfg.pool = cfg.pool.clone().resolve(&cfg.catalog);
    cfg.validate()?;
    Ok(cfg)
}

fn load_input_workload(file: &CliConfig, a: &SimArgs) -> Result<Workload> {
    let spec = a
        .workload
        .as_deref()
        .ok_or_else(|| Error::Validation("workload: --workload is required".into()))?;
    let w = if spec.starts_with("synthetic:") {
        let spec: SyntheticSpec = spec.parse()?;
        let seed = a.workload_seed.or(file.workload_seed).unwrap_or(0);
        generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?
    } else {
        load_workload(spec)?
    };
    if w.is_empty() {
        return Err(Error::Validation("workload: no requests".into()));
    }
    Ok(w)
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn seed_range(base: u64, count: u64) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::Validation("seeds: must be at least 1".into()));
    }
    let end = base
        .checked_add(count)
        .ok_or_else(|| Error::Validation("seeds: range overflows".into()))?;
    Ok((base..end).collect())
}

pub fn cmd_run(file: &CliConfig, a: &RunArgs) -> Result<()> {
    let strategy: Strategy = a.strategy.parse()?;
    let mut cfg = merged_config(file, &a.sim)?;
    cfg.trace = a.trace;
    let w = load_input_workload(file, &a.sim)?;
    let res = simulator::run(&cfg, &w, strategy, a.seed)?;
    out_dir(&a.out)?;
    write_atomic(&a.out.join("metrics.csv"), metrics_csv([&res]).as_bytes())?;
    write_atomic(
        &a.out.join("allocations.csv"),
        allocations_csv(&res).as_bytes(),
    )?;
    write_atomic(
        &a.out.join("cumulative_cost.csv"),
        cumulative_csv([&res]).as_bytes(),
    )?;
    if a.trace {
        write_atomic(&a.out.join("trace.csv"), trace_csv(&res).as_bytes())?;
    }
    let m = &res.metrics;
    println!(
        "{strategy} seed={}: processed {}/{} requests, cost ${:.4}, mean utilization {:.4}",
        a.seed,
        m.processed(),
        m.requests_total,
        m.total_cost_usd,
        m.mean_utilization
    );
    Ok(())
}

pub fn cmd_sweep(file: &CliConfig, a: &SweepArgs) -> Result<()> {
    let grid: SweepGrid = a.grid.parse()?;
    let outside = |v: f64, (lo, hi): (f64, f64)| v < lo - 1e-12 || v > hi + 1e-12;
    for &r in &grid.lambda_reward {
        if outside(r, SWEPT_REWARD) {
            warn!("lambda_r={r} lies outside the conventional range 0.7..0.9");
        }
    }
    for &p in &grid.lambda_penalty {
        if outside(p, SWEPT_PENALTY) {
            warn!("lambda_p={p} lies outside the conventional range 0..0.1");
        }
    }
    let cfg = merged_config(file, &a.sim)?;
    let w = load_input_workload(file, &a.sim)?;
    let seeds = seed_range(a.seed, a.seeds)?;
    let rows = simulator::sweep(&cfg, &w, &grid, &seeds)?;
    out_dir(&a.out)?;
    write_atomic(&a.out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    if let Some(best) = rows
        .iter()
        .min_by(|x, y| x.mean_iterations.total_cmp(&y.mean_iterations))
    {
        println!(
            "{} cells; minimum mean iterations {:.3} at ({}, {})",
            rows.len(),
            best.mean_iterations,
            best.lambda_reward,
            best.lambda_penalty
        );
    }
    if let Some(def) = rows
        .iter()
        .find(|r| (r.lambda_reward - 0.8).abs() < 1e-9 && (r.lambda_penalty - 0.05).abs() < 1e-9)
    {
        println!(
            "cell (0.8, 0.05): mean iterations {:.3}",
            def.mean_iterations
        );
    }
    Ok(())
}

/// Parses a comma list of strategies, dropping repeats with a warning.
pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    let mut out: Vec<Strategy> = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let k: Strategy = name.parse()?;
        if out.contains(&k) {
            warn!("strategy '{name}' listed more than once; ignoring the repeat");
        } else {
            out.push(k);
        }
    }
    if out.len() < 2 {
        return Err(Error::Validation(format!(
            "strategies: need at least two distinct strategies, got '{s}'"
        )));
    }
    Ok(out)
}

pub fn cmd_compare(file: &CliConfig, a: &CompareArgs) -> Result<()> {
    let strategies = parse_strategies(&a.strategies)?;
    let cfg = merged_config(file, &a.sim)?;
    let w = load_input_workload(file, &a.sim)?;
    let seeds = seed_range(a.seed, a.seeds)?;
    let matrix = simulator::run_matrix(&cfg, &w, &strategies, &seeds)?;
    let rows = summarize(&strategies, &matrix);
    out_dir(&a.out)?;
    let all: Vec<_> = matrix.iter().flatten().collect();
    write_atomic(
        &a.out.join("comparison.csv"),
        comparison_csv(&rows).as_bytes(),
    )?;
    write_atomic(
        &a.out.join("metrics.csv"),
        metrics_csv(all.iter().copied()).as_bytes(),
    )?;
    write_atomic(
        &a.out.join("cumulative_cost.csv"),
        cumulative_csv(all.iter().copied()).as_bytes(),
    )?;
    for r in &rows {
        println!(
            "{}: throughput {:.4} ± {:.4}, cost ${:.4} ± {:.4}",
            r.strategy, r.throughput.mean, r.throughput.std, r.total_cost.mean, r.total_cost.std
        );
    }
    Ok(())
}

fn parse_services_per_request(s: &str) -> Result<(usize, usize)> {
    let bad = || {
        Error::Validation(format!(
            "services-per-request: expected MIN:MAX or N, got '{s}'"
        ))
    };
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
    match s.split_once(':') {
        Some((lo, hi)) => Ok((num(lo)?, num(hi)?)),
        None => {
            let n = num(s)?;
            Ok((n, n))
        }
    }
}

pub fn cmd_ingest(file: &CliConfig, a: &IngestArgs) -> Result<()> {
    let mut cfg = file.ingest.clone().unwrap_or_default();
    if let Some(p) = a.percentile {
        cfg.percentile = p;
    }
    if let Some(s) = &a.services_per_request {
        cfg.services_per_request = parse_services_per_request(s)?;
    }
    if let Some(d) = a.delimiter {
        cfg.delimiter = d;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.lenient {
        cfg.lenient = true;
    }
    let ing = ingest_traces(&a.traces, &cfg)?;
    save_workload(&ing.workload, &a.out)?;
    println!(
        "files read: {}, files skipped: {}, requests produced: {}",
        ing.files_read,
        ing.files_skipped,
        ing.workload.len()
    );
    Ok(())
}
