//! VM type catalog, provider pools of VM instances, and feasibility.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::ServiceSpec;

/// Block storage as a number of equally sized volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Storage {
    pub volume_count: u32,
    pub volume_gb: f64,
}

impl Storage {
    pub const fn new(volume_count: u32, volume_gb: f64) -> Self {
        Self {
            volume_count,
            volume_gb,
        }
    }

    pub fn total_gb(&self) -> f64 {
        self.volume_count as f64 * self.volume_gb
    }
}

impl fmt::Display for Storage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.volume_count, self.volume_gb)
    }
}

/// One row of the VM catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct VmType {
    pub name: String,
    pub vcpu: u32,
    pub memory_gb: f64,
    pub storage: Storage,
    pub throughput_kbps: Option<f64>,
    pub hour_cost_usd: f64,
    /// Categorical size derived from the core count.
    pub size_rank: u32,
}

impl VmType {
    /// Builds and validates a type; `size_rank` is derived from `vcpu`.
    pub fn new(
        name: impl Into<String>,
        vcpu: u32,
        memory_gb: f64,
        storage: Storage,
        throughput_kbps: Option<f64>,
        hour_cost_usd: f64,
    ) -> Result<Self> {
        let name = name.into();
        let bad = |what: &str| Err(Error::Validation(format!("VM type '{name}': {what}")));
        if vcpu == 0 {
            return bad("vcpu must be >= 1");
        }
        if !(memory_gb > 0.0) || !memory_gb.is_finite() {
            return bad("memory_gb must be positive");
        }
        if storage.volume_count == 0 || !(storage.volume_gb > 0.0) || !storage.volume_gb.is_finite()
        {
            return bad("storage must be positive");
        }
        if let Some(t) = throughput_kbps {
            if !(t > 0.0) || !t.is_finite() {
                return bad("throughput_kbps must be positive when present");
            }
        }
        if !(hour_cost_usd > 0.0) || !hour_cost_usd.is_finite() {
            return bad("hour_cost_usd must be positive");
        }
        Ok(Self {
            size_rank: size_rank_for(vcpu),
            name,
            vcpu,
            memory_gb,
            storage,
            throughput_kbps,
            hour_cost_usd,
        })
    }
}

/// 1 core -> 1, 2 -> 2, 4 -> 3, 8 -> 4, doubling thereafter.
pub fn size_rank_for(vcpu: u32) -> u32 {
    assert!(vcpu > 0);
    32 - vcpu.leading_zeros()
}

const TABLE: [(&str, u32, f64, u32, f64, f64); 11] = [
    ("t2.small", 1, 2.0, 1, 4.0, 0.026),
    ("t2.medium", 2, 4.0, 1, 4.0, 0.052),
    ("m3.medium", 1, 3.75, 1, 4.0, 0.070),
    ("m4.large", 2, 8.0, 1, 32.0, 0.1041),
    ("c3.large", 2, 3.75, 2, 16.0, 0.141),
    ("c4.xlarge", 4, 7.5, 2, 40.0, 0.2067),
    ("c4.2xlarge", 8, 15.0, 2, 80.0, 0.412),
    ("r3.large", 2, 15.0, 1, 32.0, 0.175),
    ("i3.large", 2, 15.25, 1, 32.0, 0.109),
    ("i3.xlarge", 4, 30.5, 1, 80.0, 0.218),
    ("i3.2xlarge", 8, 61.0, 1, 160.0, 0.436),
];

/// The eleven EC2 instance types (Feb 2017 Windows on-demand prices).
pub fn builtin_catalog() -> Vec<VmType> {
    TABLE
        .iter()
        .map(|&(name, vcpu, mem, count, vol, cost)| {
            VmType::new(name, vcpu, mem, Storage::new(count, vol), None, cost)
                .expect("builtin catalog rows are valid")
        })
        .collect()
}

#[derive(Debug, Deserialize, Serialize)]
struct CatalogRow {
    name: String,
    vcpu: i64,
    memory_gb: f64,
    volume_count: i64,
    volume_gb: f64,
    throughput_kbps: Option<f64>,
    hour_cost_usd: f64,
}

pub const CATALOG_HEADER: [&str; 7] = [
    "name",
    "vcpu",
    "memory_gb",
    "volume_count",
    "volume_gb",
    "throughput_kbps",
    "hour_cost_usd",
];

/// Reads a catalog CSV (`name,vcpu,memory_gb,volume_count,volume_gb,throughput_kbps,hour_cost_usd`).
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Vec<VmType>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CATALOG_HEADER {
        return Err(Error::Validation(format!(
            "{}: catalog header must be '{}'",
            path.display(),
            CATALOG_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CatalogRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: line as u64,
            msg: e.to_string(),
        })?;
        let row_err =
            |msg: String| Error::Validation(format!("{} row {line}: {msg}", path.display()));
        let vcpu = u32::try_from(row.vcpu)
            .map_err(|_| row_err(format!("vcpu {} out of range", row.vcpu)))?;
        let count = u32::try_from(row.volume_count)
            .map_err(|_| row_err(format!("volume_count {} out of range", row.volume_count)))?;
        let vm = VmType::new(
            row.name,
            vcpu,
            row.memory_gb,
            Storage::new(count, row.volume_gb),
            row.throughput_kbps,
            row.hour_cost_usd,
        )
        .map_err(|e| row_err(e.to_string()))?;
        out.push(vm);
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "{}: catalog is empty",
            path.display()
        )));
    }
    Ok(out)
}

/// Writes a catalog in the format read by [`load_catalog`].
pub fn save_catalog(catalog: &[VmType], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CATALOG_HEADER)?;
    for t in catalog {
        w.write_record([
            t.name.clone(),
            t.vcpu.to_string(),
            t.memory_gb.to_string(),
            t.storage.volume_count.to_string(),
            t.storage.volume_gb.to_string(),
            t.throughput_kbps.map(|v| v.to_string()).unwrap_or_default(),
            t.hour_cost_usd.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceState {
    Available,
    Allocated {
        request_id: u64,
        service_index: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmInstance {
    pub id: InstanceId,
    pub vm_type: Arc<VmType>,
    pub state: InstanceState,
}

impl VmInstance {
    pub fn is_available(&self) -> bool {
        self.state == InstanceState::Available
    }
}

/// Pool sizing rule: instance count uniform on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSizing {
    pub min: usize,
    pub max: usize,
}

impl Default for PoolSizing {
    fn default() -> Self {
        Self { min: 20, max: 50 }
    }
}

/// A provider's multiset of VM instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub owner: String,
    instances: Vec<VmInstance>,
}

impl Pool {
    pub fn new(owner: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            instances: Vec::new(),
        }
    }

    /// One available instance per entry, ids assigned in order.
    pub fn from_types<I>(owner: impl Into<String>, types: I) -> Self
    where
        I: IntoIterator<Item = Arc<VmType>>,
    {
        let mut pool = Self::new(owner);
        for t in types {
            pool.push(t);
        }
        pool
    }

    /// Appends a fresh available instance and returns its id.
    pub fn push(&mut self, vm_type: Arc<VmType>) -> InstanceId {
        let id = InstanceId(self.instances.len() as u32);
        self.instances.push(VmInstance {
            id,
            vm_type,
            state: InstanceState::Available,
        });
        id
    }

    pub fn instances(&self) -> &[VmInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: InstanceId) -> Option<&VmInstance> {
        self.instances.get(id.0 as usize).filter(|i| i.id == id)
    }

    pub fn available(&self) -> impl Iterator<Item = &VmInstance> {
        self.instances.iter().filter(|i| i.is_available())
    }

    pub fn available_count(&self) -> usize {
        self.available().count()
    }

    pub fn allocated_count(&self) -> usize {
        self.len() - self.available_count()
    }

    pub fn allocate(
        &mut self,
        id: InstanceId,
        request_id: u64,
        service_index: usize,
    ) -> Result<()> {
        let inst = self
            .instances
            .get_mut(id.0 as usize)
            .ok_or_else(|| Error::Internal(format!("unknown instance {id}")))?;
        if !inst.is_available() {
            return Err(Error::Internal(format!("instance {id} already allocated")));
        }
        inst.state = InstanceState::Allocated {
            request_id,
            service_index,
        };
        Ok(())
    }

    pub fn release(&mut self, id: InstanceId) -> Result<()> {
        let inst = self
            .instances
            .get_mut(id.0 as usize)
            .ok_or_else(|| Error::Internal(format!("unknown instance {id}")))?;
        inst.state = InstanceState::Available;
        Ok(())
    }

    /// Drops instances appended after the pool had `len` entries.
    pub(crate) fn truncate(&mut self, len: usize) {
        self.instances.truncate(len);
    }
}

/// Draws a pool: size uniform on `[min, max]`, each type uniform over the catalog.
pub fn spawn_pool<R: Rng + ?Sized>(
    catalog: &[VmType],
    sizing: PoolSizing,
    rng: &mut R,
) -> Result<Pool> {
    if catalog.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot spawn a pool from an empty catalog".into(),
        ));
    }
    if sizing.min > sizing.max {
        return Err(Error::InvalidArgument(format!(
            "pool sizing min {} exceeds max {}",
            sizing.min, sizing.max
        )));
    }
    let types: Vec<Arc<VmType>> = catalog.iter().cloned().map(Arc::new).collect();
    let size = rng.gen_range(sizing.min..=sizing.max);
    let mut pool = Pool::new("provider");
    for _ in 0..size {
        let t = types.choose(rng).expect("non-empty catalog");
        pool.push(Arc::clone(t));
    }
    Ok(pool)
}

/// Capacity check of a VM type against one service's demand.
pub fn type_fits(vm: &VmType, svc: &ServiceSpec) -> bool {
    let throughput_ok = match (vm.throughput_kbps, svc.throughput_kbps) {
        (Some(cap), Some(need)) => cap >= need,
        _ => true,
    };
    let size_ok = svc.size_rank.is_none_or(|need| vm.size_rank >= need);
    vm.vcpu >= svc.vcpu
        && vm.memory_gb >= svc.memory_gb
        && vm.storage.total_gb() >= svc.storage.total_gb()
        && throughput_ok
        && size_ok
}

/// An allocated instance is never feasible.
pub fn feasible(inst: &VmInstance, svc: &ServiceSpec) -> bool {
    inst.is_available() && type_fits(&inst.vm_type, svc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn by_name(name: &str) -> VmType {
        builtin_catalog()
            .into_iter()
            .find(|t| t.name == name)
            .unwrap()
    }

    fn inst(t: VmType) -> VmInstance {
        VmInstance {
            id: InstanceId(0),
            vm_type: Arc::new(t),
            state: InstanceState::Available,
        }
    }

    #[test]
    fn builtin_rows() {
        let cat = builtin_catalog();
        assert_eq!(cat.len(), 11);
        let small = by_name("t2.small");
        assert_eq!(
            (
                small.vcpu,
                small.memory_gb,
                small.storage,
                small.hour_cost_usd
            ),
            (1, 2.0, Storage::new(1, 4.0), 0.026)
        );
        let big = by_name("i3.2xlarge");
        assert_eq!(
            (big.vcpu, big.memory_gb, big.storage, big.hour_cost_usd),
            (8, 61.0, Storage::new(1, 160.0), 0.436)
        );
        assert!(cat.iter().all(|t| t.throughput_kbps.is_none()));
        assert_eq!(builtin_catalog(), cat);
    }

    #[test]
    fn size_rank_mapping() {
        assert_eq!([1, 2, 4, 8].map(size_rank_for), [1, 2, 3, 4]);
        assert_eq!(by_name("c4.2xlarge").size_rank, 4);
    }

    #[test]
    fn load_minimal_and_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(
            &p,
            format!("{}\nx,2,4,1,4,,0.05\n", CATALOG_HEADER.join(",")),
        )
        .unwrap();
        let cat = load_catalog(&p).unwrap();
        assert_eq!(cat.len(), 1);
        assert_eq!(cat[0].throughput_kbps, None);
        assert_eq!(cat[0].vcpu, 2);

        std::fs::write(&p, format!("{}\nx,2,4,1,4,,-1\n", CATALOG_HEADER.join(","))).unwrap();
        match load_catalog(&p) {
            Err(Error::Validation(msg)) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
        std::fs::write(&p, format!("{}\ny,0,4,1,4,,1\n", CATALOG_HEADER.join(","))).unwrap();
        assert!(matches!(load_catalog(&p), Err(Error::Validation(_))));

        assert!(load_catalog(dir.path().join("missing.csv"))
            .unwrap_err()
            .is_io());
    }

    #[test]
    fn catalog_file_reproduces_builtin() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("table.csv");
        save_catalog(&builtin_catalog(), &p).unwrap();
        assert_eq!(load_catalog(&p).unwrap(), builtin_catalog());
    }

    #[test]
    fn spawn_sizes_and_determinism() {
        let cat = builtin_catalog();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = spawn_pool(&cat, PoolSizing::default(), &mut rng).unwrap();
            assert!((20..=50).contains(&pool.len()));
            assert_eq!(pool.available_count(), pool.len());
            assert!(pool
                .instances()
                .iter()
                .enumerate()
                .all(|(i, inst)| inst.id == InstanceId(i as u32)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = spawn_pool(&cat, PoolSizing { min: 5, max: 5 }, &mut rng).unwrap();
        assert_eq!(pool.len(), 5);

        let mk = || {
            spawn_pool(
                &cat,
                PoolSizing::default(),
                &mut ChaCha8Rng::seed_from_u64(9),
            )
            .unwrap()
        };
        assert_eq!(mk(), mk());

        assert!(spawn_pool(&[], PoolSizing::default(), &mut rng).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let svc = ServiceSpec::new(2, 4.0, Storage::new(1, 4.0));
        assert!(feasible(&inst(by_name("t2.medium")), &svc));
        assert!(!feasible(&inst(by_name("t2.small")), &svc));

        let zero = ServiceSpec {
            vcpu: 0,
            memory_gb: 0.0,
            storage: Storage::new(0, 0.0),
            throughput_kbps: None,
            size_rank: None,
        };
        assert!(builtin_catalog()
            .into_iter()
            .all(|t| feasible(&inst(t), &zero)));

        let mut taken = inst(by_name("i3.2xlarge"));
        taken.state = InstanceState::Allocated {
            request_id: 0,
            service_index: 0,
        };
        assert!(!feasible(&taken, &svc));
    }

    #[test]
    fn throughput_gate() {
        let vm = VmType::new("net", 2, 4.0, Storage::new(1, 4.0), Some(100.0), 0.1).unwrap();
        let mut svc = ServiceSpec::new(1, 1.0, Storage::new(1, 1.0));
        svc.throughput_kbps = Some(150.0);
        assert!(!type_fits(&vm, &svc));
        svc.throughput_kbps = Some(50.0);
        assert!(type_fits(&vm, &svc));
        // absent on the VM side drops the check
        assert!(type_fits(&by_name("t2.medium"), &svc));
    }

    #[test]
    fn pool_bookkeeping() {
        let mut pool = Pool::from_types("p", builtin_catalog().into_iter().map(Arc::new));
        assert_eq!(pool.len(), 11);
        pool.allocate(InstanceId(3), 7, 1).unwrap();
        assert_eq!(pool.allocated_count(), 1);
        assert_eq!(pool.available_count() + pool.allocated_count(), pool.len());
        assert!(pool.allocate(InstanceId(3), 8, 0).is_err());
        pool.release(InstanceId(3)).unwrap();
        assert_eq!(pool.allocated_count(), 0);
    }
}
