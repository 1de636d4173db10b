//! Compatibility-per-cost scoring of a VM for a service.
//!
//! Each attribute contributes `demand / capacity` (1 for an exact fit, smaller
//! the more the VM is over-provisioned). The weighted sum over attributes
//! present on both sides, divided by the hourly price, is the raw score; min-max
//! normalization over the candidate set maps it into [0, 1].

use serde::{Deserialize, Serialize};

use crate::catalog::{type_fits, Pool, VmType};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::workload::{AppClass, ServiceSpec};

/// Attribute weights, in the order size, memory, core, storage, throughput.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights<T> {
    pub v_size: T,
    pub v_memory: T,
    pub v_core: T,
    pub v_storage: T,
    pub v_throughput: T,
}

impl<T: Scalar> Weights<T> {
    pub fn new(v_size: f64, v_memory: f64, v_core: f64, v_storage: f64, v_throughput: f64) -> Self {
        Self {
            v_size: T::of(v_size),
            v_memory: T::of(v_memory),
            v_core: T::of(v_core),
            v_storage: T::of(v_storage),
            v_throughput: T::of(v_throughput),
        }
    }

    pub fn normal() -> Self {
        Self::new(0.0, 0.25, 0.25, 0.25, 0.25)
    }

    pub fn data_intensive() -> Self {
        Self::new(0.0, 0.30, 0.10, 0.35, 0.25)
    }

    pub fn process_intensive() -> Self {
        Self::new(0.0, 0.15, 0.55, 0.15, 0.15)
    }

    fn all(&self) -> [T; 5] {
        [
            self.v_size,
            self.v_memory,
            self.v_core,
            self.v_storage,
            self.v_throughput,
        ]
    }

    /// Weights must be non-negative, and memory/core/storage (always present)
    /// must carry some mass.
    pub fn validate(&self) -> Result<()> {
        if self
            .all()
            .iter()
            .any(|&w| !(w >= T::zero()) || !w.is_finite())
        {
            return Err(Error::Validation(format!(
                "weights must be finite and non-negative: {self:?}"
            )));
        }
        if self.v_memory + self.v_core + self.v_storage <= T::zero() {
            return Err(Error::Validation(
                "memory, core and storage weights are all zero".into(),
            ));
        }
        Ok(())
    }
}

/// Weight sets selected by application class. Unclassified requests use `normal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightPresets<T> {
    pub normal: Weights<T>,
    pub data_intensive: Weights<T>,
    pub process_intensive: Weights<T>,
}

impl<T: Scalar> Default for WeightPresets<T> {
    fn default() -> Self {
        Self {
            normal: Weights::normal(),
            data_intensive: Weights::data_intensive(),
            process_intensive: Weights::process_intensive(),
        }
    }
}

impl<T: Scalar> WeightPresets<T> {
    pub fn uniform(w: Weights<T>) -> Self {
        Self {
            normal: w,
            data_intensive: w,
            process_intensive: w,
        }
    }

    pub fn for_class(&self, class: AppClass) -> &Weights<T> {
        match class {
            AppClass::Normal | AppClass::Unclassified => &self.normal,
            AppClass::DataIntensive => &self.data_intensive,
            AppClass::ProcessIntensive => &self.process_intensive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.normal.validate()?;
        self.data_intensive.validate()?;
        self.process_intensive.validate()
    }
}

/// Compatibility of a capacity to a demand: `demand / capacity`, in (0, 1].
pub fn adapted<T: Scalar>(vm_value: T, req_value: T) -> Result<T> {
    if !(req_value > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "demand must be positive, got {req_value}"
        )));
    }
    if vm_value < req_value {
        return Err(Error::Internal(format!(
            "capacity {vm_value} below demand {req_value}"
        )));
    }
    Ok(req_value / vm_value)
}

/// Weighted compatibility of a VM type for a service, renormalized over the
/// attributes present on both sides.
pub fn total_compat<T: Scalar>(vm: &VmType, svc: &ServiceSpec, w: &Weights<T>) -> Result<T> {
    if !type_fits(vm, svc) {
        return Err(Error::Internal(format!(
            "{} cannot host service {svc:?}",
            vm.name
        )));
    }
    let mut terms: Vec<(T, T)> = Vec::with_capacity(5);
    if let Some(need) = svc.size_rank {
        terms.push((
            w.v_size,
            adapted(T::of(vm.size_rank as f64), T::of(need as f64))?,
        ));
    }
    terms.push((
        w.v_memory,
        adapted(T::of(vm.memory_gb), T::of(svc.memory_gb))?,
    ));
    terms.push((
        w.v_core,
        adapted(T::of(vm.vcpu as f64), T::of(svc.vcpu as f64))?,
    ));
    terms.push((
        w.v_storage,
        adapted(T::of(vm.storage.total_gb()), T::of(svc.storage.total_gb()))?,
    ));
    if let (Some(cap), Some(need)) = (vm.throughput_kbps, svc.throughput_kbps) {
        terms.push((w.v_throughput, adapted(T::of(cap), T::of(need))?));
    }
    let mass = terms.iter().fold(T::zero(), |acc, &(wt, _)| acc + wt);
    if !(mass > T::zero()) {
        return Err(Error::InvalidArgument(
            "weights of the present attributes sum to zero".into(),
        ));
    }
    let sum = terms.iter().fold(T::zero(), |acc, &(wt, c)| acc + wt * c);
    Ok(sum / mass)
}

/// Compatibility per dollar-hour, before normalization.
pub fn raw_score<T: Scalar>(vm: &VmType, svc: &ServiceSpec, w: &Weights<T>) -> Result<T> {
    Ok(total_compat(vm, svc, w)? / T::of(vm.hour_cost_usd))
}

/// Minimum and maximum raw score over a candidate set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationBounds<T> {
    pub a_min: T,
    pub b_max: T,
}

impl<T: Scalar> NormalizationBounds<T> {
    pub fn new(a_min: T, b_max: T) -> Result<Self> {
        if !(b_max >= a_min) {
            return Err(Error::InvalidArgument(format!(
                "bounds out of order: A={a_min} B={b_max}"
            )));
        }
        Ok(Self { a_min, b_max })
    }

    /// Bounds of a non-empty sequence of raw scores.
    pub fn of<I: IntoIterator<Item = T>>(raws: I) -> Option<Self> {
        raws.into_iter().fold(None, |acc, x| match acc {
            None => Some(Self { a_min: x, b_max: x }),
            Some(b) => Some(Self {
                a_min: b.a_min.min(x),
                b_max: b.b_max.max(x),
            }),
        })
    }
}

/// `(p - A) / (B - A)`; a degenerate range (`A == B`) maps to 1.
pub fn normalize<T: Scalar>(p: T, bounds: &NormalizationBounds<T>) -> Result<T> {
    let NormalizationBounds { a_min, b_max } = *bounds;
    if !(p >= a_min && p <= b_max) {
        return Err(Error::InvalidArgument(format!(
            "{p} outside normalization range [{a_min}, {b_max}]"
        )));
    }
    if b_max == a_min {
        return Ok(T::one());
    }
    Ok(((p - a_min) / (b_max - a_min)).min(T::one()).max(T::zero()))
}

/// Bounds over every available instance of `pool` that can host `svc`.
pub fn normalization_bounds<T: Scalar>(
    pool: &Pool,
    svc: &ServiceSpec,
    w: &Weights<T>,
) -> Result<NormalizationBounds<T>> {
    let raws = pool
        .available()
        .filter(|i| type_fits(&i.vm_type, svc))
        .map(|i| raw_score(&i.vm_type, svc, w))
        .collect::<Result<Vec<T>>>()?;
    NormalizationBounds::of(raws).ok_or(Error::NoFeasibleVm)
}

/// Normalized performance factor of one (VM, service) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfScore<T> {
    pub rho: T,
    pub raw: T,
}

pub fn perf_factor<T: Scalar>(
    vm: &VmType,
    svc: &ServiceSpec,
    w: &Weights<T>,
    bounds: &NormalizationBounds<T>,
) -> Result<PerfScore<T>> {
    let raw = raw_score(vm, svc, w)?;
    Ok(PerfScore {
        rho: normalize(raw, bounds)?,
        raw,
    })
}

/// Request-level performance: the sum of the per-service factors.
pub fn request_perf<T: Scalar>(rhos: &[T]) -> T {
    rhos.iter().fold(T::zero(), |acc, &r| acc + r)
}
