//! Conversion of per-VM performance traces (Bitbrains fastStorage layout)
//! into a request workload.
//!
//! Each trace file becomes one service. Cores take the maximum observed value,
//! provisioned memory and network traffic take a nearest-rank percentile over
//! the rows. Traces carry no disk capacity, so storage comes from a table keyed
//! by the derived memory class. Services are then grouped, in file-name order,
//! into requests whose size is drawn from `services_per_request`.

use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Storage;
use crate::error::{Error, Result};
use crate::workload::{AppClass, Request, ServiceSpec, Workload, APP_ID_CYCLE};

pub const COL_CORES: &str = "CPU cores";
pub const COL_MEM_PROVISIONED: &str = "Memory capacity provisioned [KB]";
pub const COL_NET_RX: &str = "Network received throughput [KB/s]";
pub const COL_NET_TX: &str = "Network transmitted throughput [KB/s]";

const KB_PER_GB: f64 = 1024.0 * 1024.0;

/// Storage assigned per memory class: below `medium_from_gb`, up to and
/// including `large_above_gb`, and above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageTable {
    pub medium_from_gb: f64,
    pub large_above_gb: f64,
    pub small: Storage,
    pub medium: Storage,
    pub large: Storage,
}

impl Default for StorageTable {
    fn default() -> Self {
        Self {
            medium_from_gb: 8.0,
            large_above_gb: 16.0,
            small: Storage::new(1, 4.0),
            medium: Storage::new(1, 32.0),
            large: Storage::new(1, 80.0),
        }
    }
}

impl StorageTable {
    pub fn for_memory(&self, memory_gb: f64) -> Storage {
        if memory_gb < self.medium_from_gb {
            self.small
        } else if memory_gb <= self.large_above_gb {
            self.medium
        } else {
            self.large
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub delimiter: char,
    /// Nearest-rank percentile in [0, 100] used for memory and network.
    pub percentile: f64,
    /// Inclusive range of services per request.
    pub services_per_request: (usize, usize),
    pub storage: StorageTable,
    /// Skip malformed rows with a warning instead of failing.
    pub lenient: bool,
    /// Seed for the grouping draw.
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            delimiter: ';',
            percentile: 95.0,
            services_per_request: (1, 5),
            storage: StorageTable::default(),
            lenient: false,
            seed: 0,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::Validation(format!(
                "percentile must be in [0,100], got {}",
                self.percentile
            )));
        }
        let (lo, hi) = self.services_per_request;
        if lo == 0 || lo > hi {
            return Err(Error::Validation(format!(
                "services_per_request must satisfy 1 <= min <= max, got {lo}:{hi}"
            )));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Validation(
                "delimiter must be a single ASCII character".into(),
            ));
        }
        Ok(())
    }
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it. `p = 0` gives the minimum, `p = 100` the maximum.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0 - 1e-9).ceil().max(1.0) as usize;
    Some(sorted[rank.min(n) - 1])
}

/// Per-file summary before grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub path: PathBuf,
    pub rows: usize,
    pub skipped_rows: usize,
    pub service: ServiceSpec,
}

/// Reads one trace file into a service demand.
pub fn summarize_trace(path: &Path, cfg: &IngestConfig) -> Result<TraceSummary> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter as u8)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let parse_err = |line: u64, msg: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        msg,
    };
    let cores_col =
        col(COL_CORES).ok_or_else(|| parse_err(1, format!("missing column '{COL_CORES}'")))?;
    let mem_col = col(COL_MEM_PROVISIONED)
        .ok_or_else(|| parse_err(1, format!("missing column '{COL_MEM_PROVISIONED}'")))?;
    let rx_col = col(COL_NET_RX);
    let tx_col = col(COL_NET_TX);

    let mut cores = Vec::new();
    let mut mem = Vec::new();
    let mut net = Vec::new();
    let mut rows = 0;
    let mut skipped = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |k: usize, name: &str| -> std::result::Result<f64, String> {
            let raw = rec
                .get(k)
                .ok_or_else(|| format!("missing field '{name}'"))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| format!("bad '{name}' value '{raw}'"))?;
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(format!(
                    "'{name}' must be finite and non-negative, got {raw}"
                ))
            }
        };
        let parsed = (|| {
            let c = get(cores_col, COL_CORES)?;
            let m = get(mem_col, COL_MEM_PROVISIONED)?;
            let rx = rx_col.map(|k| get(k, COL_NET_RX)).transpose()?;
            let tx = tx_col.map(|k| get(k, COL_NET_TX)).transpose()?;
            let n = match (rx, tx) {
                (None, None) => None,
                (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
            };
            Ok::<_, String>((c, m, n))
        })();
        match parsed {
            Ok((c, m, n)) => {
                rows += 1;
                cores.push(c);
                mem.push(m);
                if let Some(n) = n {
                    net.push(n);
                }
            }
            Err(msg) if cfg.lenient => {
                warn!("{}:{line}: skipping row: {msg}", path.display());
                skipped += 1;
            }
            Err(msg) => return Err(parse_err(line, msg)),
        }
    }
    if rows == 0 {
        return Err(parse_err(1, "no usable rows".into()));
    }
    let vcpu = cores.iter().copied().fold(0.0, f64::max).round() as u32;
    let memory_gb = percentile(&mem, cfg.percentile).expect("rows > 0") / KB_PER_GB;
    if vcpu == 0 || memory_gb <= 0.0 {
        return Err(parse_err(
            1,
            "trace reports zero cores or zero memory".into(),
        ));
    }
    let throughput_kbps = percentile(&net, cfg.percentile).filter(|&t| t > 0.0);
    Ok(TraceSummary {
        path: path.to_path_buf(),
        rows,
        skipped_rows: skipped,
        service: ServiceSpec {
            vcpu,
            memory_gb,
            storage: cfg.storage.for_memory(memory_gb),
            throughput_kbps,
            size_rank: None,
        },
    })
}

/// Regular files in `dir`, sorted by file name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let ft = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if ft.is_file() {
            files.push(entry.path());
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Result of [`ingest_traces`].
#[derive(Debug, Clone)]
pub struct Ingested {
    pub workload: Workload,
    pub files_read: usize,
    pub files_skipped: usize,
}

/// Builds a workload from every trace file in `dir`.
pub fn ingest_traces(dir: impl AsRef<Path>, cfg: &IngestConfig) -> Result<Ingested> {
    let dir = dir.as_ref();
    cfg.validate()?;
    let files = trace_files(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no trace files in {}",
            dir.display()
        )));
    }
    let summaries: Vec<Result<TraceSummary>> =
        files.par_iter().map(|p| summarize_trace(p, cfg)).collect();

    let mut services = Vec::with_capacity(files.len());
    let mut skipped = 0;
    for s in summaries {
        match s {
            Ok(s) => services.push(s.service),
            Err(e) if cfg.lenient && !e.is_io() => {
                warn!("skipping trace: {e}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if services.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no usable trace files in {}",
            dir.display()
        )));
    }

    let (lo, hi) = cfg.services_per_request;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut requests = Vec::new();
    let mut rest = services.as_slice();
    while !rest.is_empty() {
        let s = rng.gen_range(lo..=hi).min(rest.len());
        let (head, tail) = rest.split_at(s);
        let id = requests.len() as u64;
        requests.push(Request {
            id,
            app_id: id as u32 % APP_ID_CYCLE,
            services: head.to_vec(),
            deadline_s: None,
            app_class: AppClass::Unclassified,
        });
        rest = tail;
    }
    Ok(Ingested {
        workload: Workload {
            requests,
            source: dir.display().to_string(),
        },
        files_read: files.len() - skipped,
        files_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Timestamp [ms];\tCPU cores;\tCPU capacity provisioned [MHZ];\tCPU usage [MHZ];\tCPU usage [%];\tMemory capacity provisioned [KB];\tMemory usage [KB];\tDisk read throughput [KB/s];\tDisk write throughput [KB/s];\tNetwork received throughput [KB/s];\tNetwork transmitted throughput [KB/s]";

    fn row(ts: u64, cores: u32, mem_kb: u64, rx: f64, tx: f64) -> String {
        format!("{ts};\t{cores};\t5000;\t100;\t2.0;\t{mem_kb};\t1000;\t0;\t0;\t{rx};\t{tx}")
    }

    fn write_trace(dir: &Path, name: &str, rows: &[String]) {
        let mut body = String::from(HEADER);
        for r in rows {
            body.push('\n');
            body.push_str(r);
        }
        body.push('\n');
        std::fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn percentile_rule() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), Some(19.0));
        assert_eq!(percentile(&v, 100.0), Some(20.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 50.0), Some(10.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn constant_trace() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (0..5).map(|i| row(i * 300, 2, 4194304, 1.0, 2.0)).collect();
        write_trace(dir.path(), "1.csv", &rows);
        let s = summarize_trace(&dir.path().join("1.csv"), &IngestConfig::default()).unwrap();
        assert_eq!(s.service.vcpu, 2);
        assert_eq!(s.service.memory_gb, 4.0);
        assert_eq!(s.service.throughput_kbps, Some(3.0));
        assert_eq!(s.service.storage, Storage::new(1, 4.0));
    }

    #[test]
    fn empty_dir_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_traces(dir.path(), &IngestConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(
            ingest_traces(dir.path().join("nope"), &IngestConfig::default())
                .unwrap_err()
                .is_io()
        );
    }

    #[test]
    fn fixed_grouping() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.csv", "b.csv"] {
            write_trace(dir.path(), name, &[row(0, 1, 1048576, 0.0, 0.0)]);
        }
        let cfg = IngestConfig {
            services_per_request: (2, 2),
            ..Default::default()
        };
        let out = ingest_traces(dir.path(), &cfg).unwrap();
        assert_eq!(out.workload.len(), 1);
        assert_eq!(out.workload.requests[0].services.len(), 2);
        // zero traffic leaves throughput absent
        assert_eq!(out.workload.requests[0].services[0].throughput_kbps, None);
    }

    #[test]
    fn strict_and_lenient_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = vec![row(0, 2, 2097152, 1.0, 1.0)];
        rows.push("300;\tabc;\t5000;\t1;\t1;\t2097152;\t1;\t0;\t0;\t0;\t0".into());
        write_trace(dir.path(), "x.csv", &rows);
        match ingest_traces(dir.path(), &IngestConfig::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let lenient = IngestConfig {
            lenient: true,
            ..Default::default()
        };
        let out = ingest_traces(dir.path(), &lenient).unwrap();
        assert_eq!(out.workload.requests[0].services[0].memory_gb, 2.0);
    }

    #[test]
    fn storage_classes() {
        let t = StorageTable::default();
        assert_eq!(t.for_memory(7.9), Storage::new(1, 4.0));
        assert_eq!(t.for_memory(8.0), Storage::new(1, 32.0));
        assert_eq!(t.for_memory(16.0), Storage::new(1, 32.0));
        assert_eq!(t.for_memory(16.5), Storage::new(1, 80.0));
    }
}
