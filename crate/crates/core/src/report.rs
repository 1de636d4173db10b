//! CSV report emission.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::{ComparisonRow, RunResult, SweepRow};
use crate::workload::Workload;

pub const METRICS_HEADER: &str = "strategy,seed,requests_total,requests_rejected,throughput,mean_utilization,total_cost_usd,mean_iterations,total_negotiation_delay_s";
pub const CUMULATIVE_HEADER: &str =
    "strategy,seed,request_index,cumulative_cost_usd,processed_count";
pub const SWEEP_HEADER: &str = "lambda_reward,lambda_penalty,mean_iterations,stddev_iterations";
pub const ALLOCATIONS_HEADER: &str = "request_id,service_index,instance_id,vm_type,rho";
pub const TRACE_HEADER: &str = "request_id,service_index,iteration,action_instance_id,rho,max_prob";
pub const COMPARISON_HEADER: &str = "strategy,seeds,throughput_mean,throughput_std,rejected_mean,rejected_std,utilization_mean,utilization_std,total_cost_mean,total_cost_std";

fn f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn metrics_csv<'a, I: IntoIterator<Item = &'a RunResult>>(results: I) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in results {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.strategy,
            r.seed,
            m.requests_total,
            m.requests_rejected,
            f(m.throughput),
            f(m.mean_utilization),
            f(m.total_cost_usd),
            f(m.mean_iterations),
            f(m.total_negotiation_delay_s),
        ));
    }
    out
}

pub fn cumulative_csv<'a, I: IntoIterator<Item = &'a RunResult>>(results: I) -> String {
    let mut out = String::from(CUMULATIVE_HEADER);
    out.push('\n');
    for r in results {
        for p in &r.cumulative {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.strategy,
                r.seed,
                p.request_index,
                f(p.cumulative_cost_usd),
                p.processed_count
            ));
        }
    }
    out
}

pub fn allocations_csv(result: &RunResult) -> String {
    let mut out = String::from(ALLOCATIONS_HEADER);
    out.push('\n');
    for a in result.outcomes.iter().filter_map(|o| o.allocation()) {
        for (&(k, id), rho) in a.pairs.iter().zip(&a.rhos) {
            let vm = result
                .pool
                .get(id)
                .map(|i| i.vm_type.name.as_str())
                .unwrap_or("?");
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                a.request_id,
                k,
                id,
                vm,
                f(*rho)
            ));
        }
    }
    out
}

pub fn trace_csv(result: &RunResult) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for a in result.outcomes.iter().filter_map(|o| o.allocation()) {
        for t in &a.trace {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.request_id,
                t.service_index,
                t.iteration,
                t.action_instance,
                f(t.rho),
                f(t.max_prob)
            ));
        }
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.strategy,
            r.seeds,
            f(r.throughput.mean),
            f(r.throughput.std),
            f(r.rejected.mean),
            f(r.rejected.std),
            f(r.utilization.mean),
            f(r.utilization.std),
            f(r.total_cost.mean),
            f(r.total_cost.std),
        ));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.lambda_reward,
            r.lambda_penalty,
            f(r.mean_iterations),
            f(r.stddev_iterations)
        ));
    }
    out
}

pub fn workload_csv(w: &Workload) -> Result<Vec<u8>> {
    crate::workload::workload_to_csv(w)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
