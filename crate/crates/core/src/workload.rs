//! Application requests, the synthetic request templates, and the workload file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Storage;
use crate::error::{Error, Result};

/// Resource demand of one service of an application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub vcpu: u32,
    pub memory_gb: f64,
    pub storage: Storage,
    pub throughput_kbps: Option<f64>,
    pub size_rank: Option<u32>,
}

impl ServiceSpec {
    pub const fn new(vcpu: u32, memory_gb: f64, storage: Storage) -> Self {
        Self {
            vcpu,
            memory_gb,
            storage,
            throughput_kbps: None,
            size_rank: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.vcpu == 0
            || !positive(self.memory_gb)
            || self.storage.volume_count == 0
            || !positive(self.storage.volume_gb)
        {
            return Err(Error::Validation(format!(
                "service demands must be positive: {self:?}"
            )));
        }
        if self.throughput_kbps.is_some_and(|t| !positive(t)) {
            return Err(Error::Validation("throughput_kbps must be positive".into()));
        }
        if self.size_rank == Some(0) {
            return Err(Error::Validation("size_rank must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppClass {
    Normal,
    DataIntensive,
    ProcessIntensive,
    Unclassified,
}

impl AppClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            AppClass::Normal => "normal",
            AppClass::DataIntensive => "data_intensive",
            AppClass::ProcessIntensive => "process_intensive",
            AppClass::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for AppClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AppClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(AppClass::Normal),
            "data_intensive" => Ok(AppClass::DataIntensive),
            "process_intensive" => Ok(AppClass::ProcessIntensive),
            "unclassified" => Ok(AppClass::Unclassified),
            other => Err(Error::Validation(format!("unknown app_class '{other}'"))),
        }
    }
}

/// One application request: an ordered list of services to host on distinct VMs.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub app_id: u32,
    pub services: Vec<ServiceSpec>,
    /// Carried through files and reports; provisioning never reads it.
    pub deadline_s: Option<f64>,
    pub app_class: AppClass,
}

impl Request {
    pub fn validate(&self) -> Result<()> {
        if self.services.is_empty() {
            return Err(Error::Validation(format!(
                "request {} has no services",
                self.id
            )));
        }
        for svc in &self.services {
            svc.validate()
                .map_err(|e| Error::Validation(format!("request {}: {e}", self.id)))?;
        }
        if self.deadline_s.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Validation(format!(
                "request {}: deadline must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

/// An ordered request stream. Equality ignores `source`.
#[derive(Debug, Clone)]
pub struct Workload {
    pub requests: Vec<Request>,
    pub source: String,
}

impl PartialEq for Workload {
    fn eq(&self, other: &Self) -> bool {
        self.requests == other.requests
    }
}

impl Workload {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.requests.is_empty() {
            return Err(Error::Validation("workload is empty".into()));
        }
        self.requests.iter().try_for_each(Request::validate)
    }
}

/// Request shapes used by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// Small demand, two services.
    Class1,
    /// Medium demand, three services.
    Class2,
    /// High demand, five services.
    Class3,
    DataIntensive,
    ProcessIntensive,
    Normal,
}

const fn svc(vcpu: u32, mem: f64, count: u32, vol: f64) -> ServiceSpec {
    ServiceSpec::new(vcpu, mem, Storage::new(count, vol))
}

const CLASS1: [ServiceSpec; 2] = [svc(1, 1.0, 1, 4.0), svc(1, 4.0, 1, 4.0)];
const CLASS2: [ServiceSpec; 3] = [
    svc(2, 4.0, 1, 4.0),
    svc(2, 8.0, 1, 32.0),
    svc(4, 8.0, 2, 40.0),
];
const CLASS3: [ServiceSpec; 5] = [
    svc(2, 15.0, 2, 32.0),
    svc(4, 15.0, 2, 80.0),
    svc(4, 30.0, 1, 32.0),
    svc(8, 15.0, 1, 32.0),
    svc(8, 30.0, 1, 80.0),
];
const DATA: [ServiceSpec; 3] = [
    svc(1, 15.0, 2, 40.0),
    svc(1, 30.0, 1, 32.0),
    svc(2, 60.0, 1, 80.0),
];
const PROCESS: [ServiceSpec; 3] = [
    svc(4, 2.0, 1, 4.0),
    svc(8, 4.0, 1, 4.0),
    svc(8, 8.0, 2, 16.0),
];
const NORMAL: [ServiceSpec; 3] = [
    svc(1, 4.0, 1, 4.0),
    svc(2, 8.0, 1, 32.0),
    svc(4, 15.0, 2, 80.0),
];

impl Template {
    pub const ALL: [Template; 6] = [
        Template::Class1,
        Template::Class2,
        Template::Class3,
        Template::DataIntensive,
        Template::ProcessIntensive,
        Template::Normal,
    ];

    pub fn services(&self) -> &'static [ServiceSpec] {
        match self {
            Template::Class1 => &CLASS1,
            Template::Class2 => &CLASS2,
            Template::Class3 => &CLASS3,
            Template::DataIntensive => &DATA,
            Template::ProcessIntensive => &PROCESS,
            Template::Normal => &NORMAL,
        }
    }

    pub fn app_class(&self) -> AppClass {
        match self {
            Template::Class1 | Template::Class2 | Template::Class3 => AppClass::Unclassified,
            Template::DataIntensive => AppClass::DataIntensive,
            Template::ProcessIntensive => AppClass::ProcessIntensive,
            Template::Normal => AppClass::Normal,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Template::Class1 => "class1",
            Template::Class2 => "class2",
            Template::Class3 => "class3",
            Template::DataIntensive => "data",
            Template::ProcessIntensive => "process",
            Template::Normal => "normal",
        }
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown request template '{s}'")))
    }
}

/// Number of distinct application ids handed out round-robin.
pub const APP_ID_CYCLE: u32 = 20;

/// Request count and template mix for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub mix: Vec<(Template, f64)>,
}

impl SyntheticSpec {
    pub fn single(template: Template, count: usize) -> Self {
        Self {
            count,
            mix: vec![(template, 1.0)],
        }
    }

    /// Equal thirds of the three demand classes.
    pub fn mixed_classes(count: usize) -> Self {
        let third = 1.0 / 3.0;
        Self {
            count,
            mix: vec![
                (Template::Class1, third),
                (Template::Class2, third),
                (Template::Class3, third),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument(
                "synthetic count must be >= 1".into(),
            ));
        }
        if self.mix.is_empty() {
            return Err(Error::InvalidArgument("synthetic mix is empty".into()));
        }
        if self.mix.iter().any(|&(_, w)| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "mix weights must be non-negative".into(),
            ));
        }
        let total: f64 = self.mix.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mix weights must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "synthetic:{}", self.count)?;
        for (i, (t, w)) in self.mix.iter().enumerate() {
            let sep = if i == 0 { ':' } else { ',' };
            write!(f, "{sep}{}={w}", t.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    /// `<count>[:<template>=<weight>,...]`, e.g. `50:class1=0.5,class2=0.5`.
    /// Without a mix the three demand classes are drawn in equal parts.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("synthetic:").unwrap_or(s);
        let (count, mix) = match s.split_once(':') {
            Some((c, m)) => (c, Some(m)),
            None => (s, None),
        };
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("bad synthetic request count '{count}'")))?;
        let spec = match mix {
            None => SyntheticSpec::mixed_classes(count),
            Some(m) => {
                let mut mix = Vec::new();
                for part in m.split(',').filter(|p| !p.trim().is_empty()) {
                    let (name, w) = part.split_once('=').ok_or_else(|| {
                        Error::Validation(format!("bad mix entry '{part}', expected name=weight"))
                    })?;
                    let w: f64 = w
                        .trim()
                        .parse()
                        .map_err(|_| Error::Validation(format!("bad mix weight '{w}'")))?;
                    mix.push((name.trim().parse()?, w));
                }
                SyntheticSpec { count, mix }
            }
        };
        spec.validate()
            .map_err(|e| Error::Validation(e.to_string()))?;
        Ok(spec)
    }
}

/// Draws `spec.count` requests from the template mix.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Workload> {
    spec.validate()?;
    let dist = WeightedIndex::new(spec.mix.iter().map(|&(_, w)| w))
        .map_err(|e| Error::InvalidArgument(format!("bad mix: {e}")))?;
    let requests = (0..spec.count)
        .map(|i| {
            let template = spec.mix[dist.sample(rng)].0;
            Request {
                id: i as u64,
                app_id: i as u32 % APP_ID_CYCLE,
                services: template.services().to_vec(),
                deadline_s: None,
                app_class: template.app_class(),
            }
        })
        .collect();
    Ok(Workload {
        requests,
        source: spec.to_string(),
    })
}

pub const WORKLOAD_HEADER: [&str; 10] = [
    "request_id",
    "app_id",
    "app_class",
    "service_index",
    "vcpu",
    "memory_gb",
    "volume_count",
    "volume_gb",
    "throughput_kbps",
    "deadline_s",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes a workload into CSV bytes.
pub fn workload_to_csv(w: &Workload) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(WORKLOAD_HEADER)?;
    for r in &w.requests {
        for (i, s) in r.services.iter().enumerate() {
            wr.write_record([
                r.id.to_string(),
                r.app_id.to_string(),
                r.app_class.to_string(),
                i.to_string(),
                s.vcpu.to_string(),
                s.memory_gb.to_string(),
                s.storage.volume_count.to_string(),
                s.storage.volume_gb.to_string(),
                opt(s.throughput_kbps),
                opt(r.deadline_s),
            ])?;
        }
    }
    wr.into_inner()
        .map_err(|e| Error::Internal(format!("csv buffer: {e}")))
}

pub fn save_workload(w: &Workload, path: impl AsRef<Path>) -> Result<()> {
    let bytes = workload_to_csv(w)?;
    crate::report::write_atomic(path.as_ref(), &bytes)
}

/// Reads a workload CSV, validating row grouping and every request.
pub fn load_workload(path: impl AsRef<Path>) -> Result<Workload> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != WORKLOAD_HEADER {
        return Err(Error::Validation(format!(
            "{}: workload header must be '{}'",
            path.display(),
            WORKLOAD_HEADER.join(",")
        )));
    }
    let mut requests: Vec<Request> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let err = |msg: String| Error::Validation(format!("{} row {row}: {msg}", path.display()));
        let field = |k: usize| rec.get(k).unwrap_or("");
        fn num<T: FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {name} '{s}'"))
        }
        fn opt_num(s: &str, name: &str) -> std::result::Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, name).map(Some)
            }
        }
        let id: u64 = num(field(0), "request_id").map_err(err)?;
        let app_id: u32 = num(field(1), "app_id").map_err(err)?;
        let app_class: AppClass = field(2).parse().map_err(|e: Error| err(e.to_string()))?;
        let deadline = opt_num(field(9), "deadline_s").map_err(err)?;
        if field(3).is_empty() {
            return Err(err(format!("request {id} has no services")));
        }
        let index: usize = num(field(3), "service_index").map_err(err)?;
        let spec = ServiceSpec {
            vcpu: num(field(4), "vcpu").map_err(err)?,
            memory_gb: num(field(5), "memory_gb").map_err(err)?,
            storage: Storage::new(
                num(field(6), "volume_count").map_err(err)?,
                num(field(7), "volume_gb").map_err(err)?,
            ),
            throughput_kbps: opt_num(field(8), "throughput_kbps").map_err(err)?,
            size_rank: None,
        };
        spec.validate().map_err(|e| err(e.to_string()))?;

        match requests.last_mut() {
            Some(last) if last.id == id => {
                if index != last.services.len() {
                    return Err(err(format!(
                        "service_index {index} out of order, expected {}",
                        last.services.len()
                    )));
                }
                if last.app_id != app_id
                    || last.app_class != app_class
                    || last.deadline_s != deadline
                {
                    return Err(err(format!("request {id} fields differ between rows")));
                }
                last.services.push(spec);
            }
            _ => {
                if requests.iter().any(|r| r.id == id) {
                    return Err(err(format!("rows of request {id} are not contiguous")));
                }
                if index != 0 {
                    return Err(err(format!("request {id} must start at service_index 0")));
                }
                requests.push(Request {
                    id,
                    app_id,
                    services: vec![spec],
                    deadline_s: deadline,
                    app_class,
                });
            }
        }
    }
    let w = Workload {
        requests,
        source: path.display().to_string(),
    };
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{builtin_catalog, type_fits};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn template_contents() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = generate_synthetic(&SyntheticSpec::single(Template::Class2, 1), &mut rng).unwrap();
        let dims: Vec<_> = w.requests[0]
            .services
            .iter()
            .map(|s| {
                (
                    s.vcpu,
                    s.memory_gb,
                    s.storage.volume_count,
                    s.storage.volume_gb,
                )
            })
            .collect();
        assert_eq!(
            dims,
            vec![(2, 4.0, 1, 4.0), (2, 8.0, 1, 32.0), (4, 8.0, 2, 40.0)]
        );

        let w = generate_synthetic(&SyntheticSpec::single(Template::DataIntensive, 1), &mut rng)
            .unwrap();
        let dims: Vec<_> = w.requests[0]
            .services
            .iter()
            .map(|s| {
                (
                    s.vcpu,
                    s.memory_gb,
                    s.storage.volume_count,
                    s.storage.volume_gb,
                )
            })
            .collect();
        assert_eq!(
            dims,
            vec![(1, 15.0, 2, 40.0), (1, 30.0, 1, 32.0), (2, 60.0, 1, 80.0)]
        );
        assert_eq!(w.requests[0].app_class, AppClass::DataIntensive);
    }

    #[test]
    fn point_mass_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = generate_synthetic(&SyntheticSpec::single(Template::Class1, 50), &mut rng).unwrap();
        assert_eq!(w.len(), 50);
        assert!(w.requests.iter().all(|r| r.services.len() == 2));
        assert_eq!(w.requests[21].app_id, 1);
    }

    #[test]
    fn bad_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let empty = SyntheticSpec {
            count: 3,
            mix: vec![],
        };
        assert!(matches!(
            generate_synthetic(&empty, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        let lopsided = SyntheticSpec {
            count: 3,
            mix: vec![(Template::Class1, 0.4)],
        };
        assert!(generate_synthetic(&lopsided, &mut rng).is_err());
    }

    #[test]
    fn synthetic_spec_parsing() {
        let s: SyntheticSpec = "synthetic:50:class1=0.5,normal=0.5".parse().unwrap();
        assert_eq!(s.count, 50);
        assert_eq!(
            s.mix,
            vec![(Template::Class1, 0.5), (Template::Normal, 0.5)]
        );
        let d: SyntheticSpec = "12".parse().unwrap();
        assert_eq!(d, SyntheticSpec::mixed_classes(12));
        assert!("x:class1=1".parse::<SyntheticSpec>().is_err());
        assert!("5:bogus=1".parse::<SyntheticSpec>().is_err());
        let again: SyntheticSpec = s.to_string().parse().unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn every_template_service_fits_some_builtin_type() {
        let cat = builtin_catalog();
        for t in Template::ALL {
            for s in t.services() {
                assert!(cat.iter().any(|vm| type_fits(vm, s)), "{t:?} {s:?}");
            }
        }
    }

    #[test]
    fn save_load_roundtrip_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut w = generate_synthetic(&SyntheticSpec::mixed_classes(50), &mut rng).unwrap();
        w.requests[3].deadline_s = Some(120.5);
        w.requests[4].services[0].throughput_kbps = Some(33.25);
        save_workload(&w, &p).unwrap();
        let back = load_workload(&p).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.len(), 50);
        assert!(back
            .requests
            .iter()
            .enumerate()
            .all(|(i, r)| r.id == i as u64));
    }

    #[test]
    fn load_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let header = WORKLOAD_HEADER.join(",");
        let cases = [
            // request without services
            format!("{header}\n0,1,normal,,,,,,,\n"),
            // index gap
            format!("{header}\n0,1,normal,0,1,1,1,4,,\n0,1,normal,2,1,1,1,4,,\n"),
            // non-contiguous
            format!("{header}\n0,1,normal,0,1,1,1,4,,\n1,1,normal,0,1,1,1,4,,\n0,1,normal,1,1,1,1,4,,\n"),
            // zero vcpu
            format!("{header}\n0,1,normal,0,0,1,1,4,,\n"),
        ];
        for body in cases {
            std::fs::write(&p, &body).unwrap();
            match load_workload(&p) {
                Err(Error::Validation(msg)) => assert!(msg.contains("row"), "{msg}"),
                other => panic!("expected validation error for {body:?}, got {other:?}"),
            }
        }
    }
}
