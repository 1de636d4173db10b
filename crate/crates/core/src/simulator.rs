//! Experiment harness: runs a workload against a provisioning strategy and
//! aggregates rejections, utilization, and cost; compares strategies across
//! seeds; sweeps the learning rates.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{spawn_pool, Pool, PoolSizing, VmType};
use crate::engine::{
    provision_with, Allocation, ElasticConfig, Outcome, ProvisionParams, RngStreams, Selector,
};
use crate::error::{Error, Result};
use crate::learning::{ConvergencePolicy, LearningParams};
use crate::scoring::WeightPresets;
use crate::workload::{Request, Workload};

/// How a run's starting pool is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSpec {
    /// Listed `(type name, count)` entries, instantiated in order.
    Fixed { types: Vec<(String, usize)> },
    /// Size uniform on `[min, max]`, types uniform over the catalog.
    Spawn { min: usize, max: usize },
}

impl Default for PoolSpec {
    fn default() -> Self {
        let s = PoolSizing::default();
        PoolSpec::Spawn {
            min: s.min,
            max: s.max,
        }
    }
}

impl PoolSpec {
    /// `copies` instances of every catalog type.
    pub fn each_type(catalog: &[VmType], copies: usize) -> Self {
        PoolSpec::Fixed {
            types: catalog.iter().map(|t| (t.name.clone(), copies)).collect(),
        }
    }
}

impl FromStr for PoolSpec {
    type Err = Error;

    /// `spawn:<min>:<max>`, `each:<copies>` (needs a catalog, see
    /// [`PoolSpec::resolve`]) or `fixed:<type>=<count>,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Validation(format!(
                "bad pool '{s}', expected spawn:MIN:MAX, each:N or fixed:TYPE=N,..."
            ))
        };
        let (mode, rest) = s.split_once(':').ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        match mode {
            "spawn" => {
                let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
                Ok(PoolSpec::Spawn {
                    min: num(lo)?,
                    max: num(hi)?,
                })
            }
            "each" => Ok(PoolSpec::Fixed {
                types: vec![(EACH_TYPE.to_string(), num(rest)?)],
            }),
            "fixed" => {
                let types = rest
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        let (name, n) = p.split_once('=').ok_or_else(bad)?;
                        Ok((name.trim().to_string(), num(n)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PoolSpec::Fixed { types })
            }
            _ => Err(bad()),
        }
    }
}

/// Placeholder type name meaning "every catalog type".
const EACH_TYPE: &str = "*";

impl PoolSpec {
    /// Expands an `each:N` placeholder against the catalog.
    pub fn resolve(self, catalog: &[VmType]) -> Self {
        match self {
            PoolSpec::Fixed { types } => PoolSpec::Fixed {
                types: types
                    .into_iter()
                    .flat_map(|(name, n)| {
                        if name == EACH_TYPE {
                            catalog.iter().map(|t| (t.name.clone(), n)).collect()
                        } else {
                            vec![(name, n)]
                        }
                    })
                    .collect(),
            },
            spawn => spawn,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub catalog: Vec<VmType>,
    pub pool: PoolSpec,
    pub elastic: ElasticConfig,
    pub learning: LearningParams<f64>,
    pub convergence: ConvergencePolicy,
    pub weights: WeightPresets<f64>,
    /// Hours billed per allocated VM per request.
    pub billing_hours: f64,
    /// Return a request's VMs to the pool once it is accounted.
    pub release_after_request: bool,
    pub trace: bool,
}

impl SimConfig {
    pub fn new(catalog: Vec<VmType>, pool: PoolSpec) -> Self {
        let pool = pool.resolve(&catalog);
        Self {
            catalog,
            pool,
            elastic: ElasticConfig::default(),
            learning: LearningParams::default(),
            convergence: ConvergencePolicy::default(),
            weights: WeightPresets::default(),
            billing_hours: 1.0,
            release_after_request: false,
            trace: false,
        }
    }

    pub fn provision_params(&self) -> ProvisionParams {
        ProvisionParams {
            learning: self.learning,
            convergence: self.convergence,
            weights: self.weights,
            elastic: self.elastic,
            catalog: self.catalog.iter().cloned().map(Arc::new).collect(),
            trace: self.trace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.catalog.is_empty() {
            return Err(Error::Validation("catalog is empty".into()));
        }
        if !(self.billing_hours > 0.0) || !self.billing_hours.is_finite() {
            return Err(Error::Validation(format!(
                "billing_hours must be positive, got {}",
                self.billing_hours
            )));
        }
        match &self.pool {
            PoolSpec::Fixed { types } => {
                for (name, _) in types {
                    if !self.catalog.iter().any(|t| &t.name == name) {
                        return Err(Error::Validation(format!(
                            "pool references unknown VM type '{name}'"
                        )));
                    }
                }
            }
            PoolSpec::Spawn { min, max } => {
                if min > max {
                    return Err(Error::Validation(format!(
                        "pool min {min} exceeds max {max}"
                    )));
                }
            }
        }
        self.provision_params().validate()
    }

    /// The starting pool for a run with `seed`.
    pub fn build_pool(&self, seed: u64) -> Result<Pool> {
        match &self.pool {
            PoolSpec::Fixed { types } => {
                let mut pool = Pool::new("provider");
                for (name, count) in types {
                    let t = self
                        .catalog
                        .iter()
                        .find(|t| &t.name == name)
                        .ok_or_else(|| Error::Validation(format!("unknown VM type '{name}'")))?;
                    let t = Arc::new(t.clone());
                    for _ in 0..*count {
                        pool.push(Arc::clone(&t));
                    }
                }
                Ok(pool)
            }
            PoolSpec::Spawn { min, max } => {
                let mut rng = RngStreams::new(seed).aux(0);
                spawn_pool(
                    &self.catalog,
                    PoolSizing {
                        min: *min,
                        max: *max,
                    },
                    &mut rng,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Learning-automaton provisioning.
    Orp,
    /// Uniform choice among feasible instances.
    RandomSelect,
    /// Cheapest feasible instance.
    GreedyCheapest,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Orp,
        Strategy::RandomSelect,
        Strategy::GreedyCheapest,
    ];

    pub fn selector(&self) -> Selector {
        match self {
            Strategy::Orp => Selector::Automaton,
            Strategy::RandomSelect => Selector::Random,
            Strategy::GreedyCheapest => Selector::Cheapest,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Orp => "orp",
            Strategy::RandomSelect => "random",
            Strategy::GreedyCheapest => "greedy",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown strategy '{s}' (expected orp, random or greedy)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub requests_total: usize,
    pub requests_rejected: usize,
    pub throughput: f64,
    pub mean_utilization: f64,
    pub total_cost_usd: f64,
    pub mean_iterations: f64,
    pub total_negotiation_delay_s: f64,
}

impl Metrics {
    pub fn processed(&self) -> usize {
        self.requests_total - self.requests_rejected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CumulativePoint {
    pub request_index: usize,
    pub cumulative_cost_usd: f64,
    pub processed_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub outcomes: Vec<Outcome>,
    pub metrics: Metrics,
    pub cumulative: Vec<CumulativePoint>,
    /// Per processed request, in order.
    pub utilizations: Vec<f64>,
    /// Pool state at the end of the run.
    pub pool: Pool,
}

impl RunResult {
    /// Every automaton iteration count of the run, in request/service order.
    pub fn iteration_counts(&self) -> impl Iterator<Item = u64> + '_ {
        self.outcomes
            .iter()
            .filter_map(Outcome::allocation)
            .flat_map(|a| a.iterations_per_service.iter().copied())
    }
}

/// Mean over the allocated VMs of the mean cpu/memory/storage demand-to-capacity ratio.
pub fn utilization(alloc: &Allocation, req: &Request, pool: &Pool) -> Result<f64> {
    if alloc.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty allocation".into()));
    }
    let mut sum = 0.0;
    for &(k, id) in &alloc.pairs {
        let svc = req
            .services
            .get(k)
            .ok_or_else(|| Error::Internal(format!("service {k} not in request {}", req.id)))?;
        let vm = &pool
            .get(id)
            .ok_or_else(|| Error::Internal(format!("unknown instance {id}")))?
            .vm_type;
        let cpu = svc.vcpu as f64 / vm.vcpu as f64;
        let mem = svc.memory_gb / vm.memory_gb;
        let disk = svc.storage.total_gb() / vm.storage.total_gb();
        sum += (cpu + mem + disk) / 3.0;
    }
    Ok(sum / alloc.pairs.len() as f64)
}

/// Hourly price of every VM in the allocation times `billing_hours`.
pub fn allocation_cost(alloc: &Allocation, pool: &Pool, billing_hours: f64) -> Result<f64> {
    alloc.pairs.iter().try_fold(0.0, |acc, &(_, id)| {
        let inst = pool
            .get(id)
            .ok_or_else(|| Error::Internal(format!("unknown instance {id}")))?;
        Ok(acc + inst.vm_type.hour_cost_usd * billing_hours)
    })
}

/// Total provisioning cost of a run.
pub fn total_cost(result: &RunResult) -> f64 {
    result.metrics.total_cost_usd
}

/// Checks the allocation invariants: one distinct, fitting instance per service.
pub fn check_allocation(alloc: &Allocation, req: &Request, pool: &Pool) -> Result<()> {
    if alloc.pairs.len() != req.services.len() {
        return Err(Error::Internal(format!(
            "request {}: {} pairs for {} services",
            req.id,
            alloc.pairs.len(),
            req.services.len()
        )));
    }
    let mut ids: Vec<_> = alloc.pairs.iter().map(|p| p.1).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != alloc.pairs.len() {
        return Err(Error::Internal(format!(
            "request {}: instance reused",
            req.id
        )));
    }
    for (k, &(idx, id)) in alloc.pairs.iter().enumerate() {
        let inst = pool
            .get(id)
            .ok_or_else(|| Error::Internal(format!("unknown instance {id}")))?;
        if idx != k || !crate::catalog::type_fits(&inst.vm_type, &req.services[k]) {
            return Err(Error::Internal(format!(
                "request {}: instance {id} cannot host service {k}",
                req.id
            )));
        }
    }
    Ok(())
}

/// Executes `workload` in order against one strategy.
pub fn run(
    cfg: &SimConfig,
    workload: &Workload,
    strategy: Strategy,
    seed: u64,
) -> Result<RunResult> {
    cfg.validate()?;
    workload.validate()?;
    let params = cfg.provision_params();
    let streams = RngStreams::new(seed);
    let mut pool = cfg.build_pool(seed)?;

    let mut outcomes = Vec::with_capacity(workload.len());
    let mut cumulative = Vec::with_capacity(workload.len());
    let mut utilizations = Vec::new();
    let mut cost = 0.0;
    let mut delay = 0.0;
    let mut processed = 0;
    let mut iterations: Vec<u64> = Vec::new();

    for (index, req) in workload.requests.iter().enumerate() {
        let outcome = provision_with(&mut pool, req, &params, strategy.selector(), &streams)?;
        if let Outcome::Allocated(a) = &outcome {
            processed += 1;
            cost += allocation_cost(a, &pool, cfg.billing_hours)?;
            utilizations.push(utilization(a, req, &pool)?);
            iterations.extend(&a.iterations_per_service);
            if let Some(n) = &a.negotiation {
                delay += n.delay_s;
            }
            if cfg.release_after_request {
                for &(_, id) in &a.pairs {
                    pool.release(id)?;
                }
            }
        }
        cumulative.push(CumulativePoint {
            request_index: index,
            cumulative_cost_usd: cost,
            processed_count: processed,
        });
        outcomes.push(outcome);
    }

    let total = workload.len();
    let metrics = Metrics {
        requests_total: total,
        requests_rejected: total - processed,
        throughput: processed as f64 / total as f64,
        mean_utilization: mean(&utilizations),
        total_cost_usd: cost,
        mean_iterations: mean(&iterations.iter().map(|&i| i as f64).collect::<Vec<_>>()),
        total_negotiation_delay_s: delay,
    };
    Ok(RunResult {
        strategy,
        seed,
        outcomes,
        metrics,
        cumulative,
        utilizations,
        pool,
    })
}

/// Random-selection baseline for one request.
pub fn baseline_random(
    pool: &mut Pool,
    req: &Request,
    params: &ProvisionParams,
    streams: &RngStreams,
) -> Result<Outcome> {
    provision_with(pool, req, params, Selector::Random, streams)
}

/// Cheapest-feasible baseline for one request. Deterministic.
pub fn baseline_greedy(
    pool: &mut Pool,
    req: &Request,
    params: &ProvisionParams,
) -> Result<Outcome> {
    provision_with(pool, req, params, Selector::Cheapest, &RngStreams::new(0))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let m = mean(xs);
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean: m, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub seeds: usize,
    pub throughput: Summary,
    pub rejected: Summary,
    pub utilization: Summary,
    pub total_cost: Summary,
}

/// Runs every strategy on every seed. Runs are independent and execute in
/// parallel; results come back in (strategy, seed) order.
pub fn run_matrix(
    cfg: &SimConfig,
    workload: &Workload,
    strategies: &[Strategy],
    seeds: &[u64],
) -> Result<Vec<Vec<RunResult>>> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = (0..strategies.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(s, seed)| run(cfg, workload, strategies[s], seed))
        .collect::<Result<Vec<_>>>()?;
    let mut it = results.into_iter();
    Ok(strategies
        .iter()
        .map(|_| it.by_ref().take(seeds.len()).collect())
        .collect())
}

/// Per-strategy mean and spread of the run metrics across seeds.
pub fn compare(
    cfg: &SimConfig,
    workload: &Workload,
    strategies: &[Strategy],
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>> {
    if strategies.len() < 2 {
        return Err(Error::Validation(
            "compare needs at least two strategies".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::Validation("compare needs at least one seed".into()));
    }
    let matrix = run_matrix(cfg, workload, strategies, seeds)?;
    Ok(summarize(strategies, &matrix))
}

/// Aggregates a [`run_matrix`] result into one row per strategy.
pub fn summarize(strategies: &[Strategy], matrix: &[Vec<RunResult>]) -> Vec<ComparisonRow> {
    strategies
        .iter()
        .zip(matrix)
        .map(|(&strategy, runs)| {
            let pick = |f: fn(&Metrics) -> f64| {
                Summary::of(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
            };
            ComparisonRow {
                strategy,
                seeds: runs.len(),
                throughput: pick(|m| m.throughput),
                rejected: pick(|m| m.requests_rejected as f64),
                utilization: pick(|m| m.mean_utilization),
                total_cost: pick(|m| m.total_cost_usd),
            }
        })
        .collect()
}

/// Learning-rate grid for [`sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub lambda_reward: Vec<f64>,
    pub lambda_penalty: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        "lambda_r=0.7:0.9:0.05,lambda_p=0:0.1:0.025"
            .parse()
            .expect("default grid parses")
    }
}

fn parse_axis(spec: &str) -> Result<Vec<f64>> {
    let bad = || {
        Error::Validation(format!(
            "bad grid axis '{spec}', expected v or start:end:step"
        ))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    match parts.as_slice() {
        [v] => Ok(vec![num(v)?]),
        [start, end, step] => {
            let (start, end, step) = (num(start)?, num(end)?, num(step)?);
            if !(step > 0.0) || end < start || !start.is_finite() || !end.is_finite() {
                return Err(bad());
            }
            let n = ((end - start) / step + 1e-9).floor() as usize;
            if n > 10_000 {
                return Err(bad());
            }
            Ok((0..=n)
                .map(|k| {
                    let v = start + k as f64 * step;
                    (v * 1e12).round() / 1e12
                })
                .collect())
        }
        _ => Err(bad()),
    }
}

impl FromStr for SweepGrid {
    type Err = Error;

    /// `lambda_r=<axis>,lambda_p=<axis>`, each axis `v` or `start:end:step`.
    fn from_str(s: &str) -> Result<Self> {
        let mut reward = None;
        let mut penalty = None;
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, axis) = part
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("bad grid entry '{part}'")))?;
            match key.trim() {
                "lambda_r" => reward = Some(parse_axis(axis)?),
                "lambda_p" => penalty = Some(parse_axis(axis)?),
                other => return Err(Error::Validation(format!("unknown grid key '{other}'"))),
            }
        }
        match (reward, penalty) {
            (Some(lambda_reward), Some(lambda_penalty)) => Ok(SweepGrid {
                lambda_reward,
                lambda_penalty,
            }),
            _ => Err(Error::Validation(
                "grid needs both lambda_r and lambda_p".into(),
            )),
        }
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.lambda_reward
            .iter()
            .flat_map(|&r| self.lambda_penalty.iter().map(move |&p| (r, p)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_reward.is_empty() || self.lambda_penalty.is_empty() {
            return Err(Error::Validation("sweep grid is empty".into()));
        }
        for (r, p) in self.cells() {
            LearningParams {
                lambda_reward: r,
                lambda_penalty: p,
                threshold: 0.5,
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda_reward: f64,
    pub lambda_penalty: f64,
    pub mean_iterations: f64,
    pub stddev_iterations: f64,
}

/// Mean automaton iterations per grid cell, pooled over every service of
/// every request across `seeds`.
pub fn sweep(
    cfg: &SimConfig,
    workload: &Workload,
    grid: &SweepGrid,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    if seeds.is_empty() {
        return Err(Error::Validation("sweep needs at least one seed".into()));
    }
    cfg.validate()?;
    grid.cells()
        .par_iter()
        .map(|&(r, p)| {
            let mut cell = cfg.clone();
            cell.learning.lambda_reward = r;
            cell.learning.lambda_penalty = p;
            let mut counts = Vec::new();
            for &seed in seeds {
                let res = run(&cell, workload, Strategy::Orp, seed)?;
                counts.extend(res.iteration_counts().map(|i| i as f64));
            }
            let s = Summary::of(&counts);
            Ok(SweepRow {
                lambda_reward: r,
                lambda_penalty: p,
                mean_iterations: s.mean,
                stddev_iterations: s.std,
            })
        })
        .collect()
}
