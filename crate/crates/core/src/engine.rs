//! Request provisioning: feasibility (tackle), elastic purchase (negotiate),
//! and per-service VM selection by a learning automaton.
//!
//! Services are provisioned in listed order. Each chosen instance is reserved
//! before the next service starts, and a service only considers instances that
//! leave the remaining services matchable, so a request that passes `tackle`
//! always completes.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{feasible, type_fits, InstanceId, Pool, VmType};
use crate::error::{Error, Result};
use crate::learning::{Automaton, ConvergencePolicy, ConvergenceStatus, LearningParams};
use crate::matching::{is_perfect_on_left, max_matching};
use crate::scoring::{
    raw_score, request_perf, NormalizationBounds, PerfScore, WeightPresets, Weights,
};
use crate::workload::{Request, ServiceSpec};

/// Purchasing from the infrastructure provider when the pool falls short.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElasticConfig {
    pub enabled: bool,
    /// Accounted provisioning delay per purchased VM, in seconds.
    pub delay_per_vm_s: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            delay_per_vm_s: 60.0,
        }
    }
}

/// Everything the engine needs besides the pool and the request.
#[derive(Debug, Clone)]
pub struct ProvisionParams {
    pub learning: LearningParams<f64>,
    pub convergence: ConvergencePolicy,
    pub weights: WeightPresets<f64>,
    pub elastic: ElasticConfig,
    /// Types available for purchase.
    pub catalog: Vec<Arc<VmType>>,
    /// Keep per-iteration automaton traces.
    pub trace: bool,
}

impl ProvisionParams {
    pub fn new(catalog: &[VmType]) -> Self {
        Self {
            learning: LearningParams::default(),
            convergence: ConvergencePolicy::default(),
            weights: WeightPresets::default(),
            elastic: ElasticConfig::default(),
            catalog: catalog.iter().cloned().map(Arc::new).collect(),
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.learning.validate()?;
        self.convergence.validate()?;
        self.weights.validate()?;
        if !(self.elastic.delay_per_vm_s >= 0.0) {
            return Err(Error::Validation(
                "delay_per_vm_s must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-service choice rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Learning-automaton search over the candidates.
    Automaton,
    /// Uniform over the candidates.
    Random,
    /// Lowest hourly price, lowest id on ties.
    Cheapest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    NoFeasibleAssignment,
    ElasticDisabled,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::NoFeasibleAssignment => "no_feasible_assignment",
            RejectReason::ElasticDisabled => "elastic_disabled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub request_id: u64,
    pub reason: RejectReason,
}

/// VMs bought for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct Negotiation {
    pub bought: Vec<InstanceId>,
    pub delay_s: f64,
}

/// One automaton iteration, kept when tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub service_index: usize,
    pub iteration: u64,
    pub action_instance: InstanceId,
    pub rho: f64,
    pub max_prob: f64,
}

/// Result of choosing a VM for one service.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceChoice {
    pub instance: InstanceId,
    pub score: PerfScore<f64>,
    pub iterations: u64,
    pub status: ConvergenceStatus,
    pub trace: Vec<TraceStep>,
}

/// A provisioned request: one distinct instance per service.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub request_id: u64,
    /// `(service index, instance)` in service order.
    pub pairs: Vec<(usize, InstanceId)>,
    pub rhos: Vec<f64>,
    pub request_rho: f64,
    pub iterations_per_service: Vec<u64>,
    pub negotiation: Option<Negotiation>,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Allocated(Allocation),
    Rejected(Rejection),
}

impl Outcome {
    pub fn allocation(&self) -> Option<&Allocation> {
        match self {
            Outcome::Allocated(a) => Some(a),
            Outcome::Rejected(_) => None,
        }
    }
}

/// Deterministic random streams, one per (request, service) pair, derived
/// from a single run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    pub seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Stream for auxiliary draws such as pool spawning.
    pub fn aux(&self, which: u64) -> ChaCha8Rng {
        self.stream(u64::MAX - which)
    }

    pub fn service(&self, request_index: u64, service_index: usize) -> ChaCha8Rng {
        self.stream((request_index << 12) | (service_index as u64 & 0xfff))
    }
}

/// Available instances, and for each service the indices (into that list)
/// of instances that can host it.
fn availability(pool: &Pool, services: &[ServiceSpec]) -> (Vec<InstanceId>, Vec<Vec<usize>>) {
    let avail: Vec<_> = pool.available().collect();
    let adj = services
        .iter()
        .map(|s| {
            avail
                .iter()
                .enumerate()
                .filter(|(_, i)| type_fits(&i.vm_type, s))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    (avail.iter().map(|i| i.id).collect(), adj)
}

/// Whether the pool can host every service of the request on distinct
/// available instances.
pub fn tackle(pool: &Pool, req: &Request) -> bool {
    let (avail, adj) = availability(pool, &req.services);
    is_perfect_on_left(&adj, avail.len())
}

/// Types to buy so that the request becomes hostable: the cheapest fitting
/// catalog type for each service left unmatched. Empty when `tackle` holds.
pub fn plan_negotiation(
    pool: &Pool,
    req: &Request,
    params: &ProvisionParams,
) -> std::result::Result<Vec<Arc<VmType>>, RejectReason> {
    let (avail, adj) = availability(pool, &req.services);
    let matched = max_matching(&adj, avail.len());
    let mut buy = Vec::new();
    for (svc, m) in req.services.iter().zip(&matched) {
        if m.is_some() {
            continue;
        }
        let cheapest = params.catalog.iter().filter(|t| type_fits(t, svc)).fold(
            None::<&Arc<VmType>>,
            |best, t| match best {
                Some(b) if b.hour_cost_usd <= t.hour_cost_usd => Some(b),
                _ => Some(t),
            },
        );
        match cheapest {
            Some(t) => buy.push(Arc::clone(t)),
            None => return Err(RejectReason::NoFeasibleAssignment),
        }
    }
    if !buy.is_empty() && !params.elastic.enabled {
        return Err(RejectReason::ElasticDisabled);
    }
    Ok(buy)
}

/// Buys the planned instances into `pool`.
pub fn negotiate(
    pool: &mut Pool,
    req: &Request,
    params: &ProvisionParams,
) -> std::result::Result<Negotiation, RejectReason> {
    let plan = plan_negotiation(pool, req, params)?;
    let bought: Vec<InstanceId> = plan.into_iter().map(|t| pool.push(t)).collect();
    Ok(Negotiation {
        delay_s: params.elastic.delay_per_vm_s * bought.len() as f64,
        bought,
    })
}

struct Candidate {
    id: InstanceId,
    price: f64,
    score: PerfScore<f64>,
}

fn score_candidates(
    pool: &Pool,
    svc: &ServiceSpec,
    ids: &[InstanceId],
    w: &Weights<f64>,
) -> Result<Vec<Candidate>> {
    let raws = ids
        .iter()
        .map(|&id| {
            let inst = pool
                .get(id)
                .ok_or_else(|| Error::Internal(format!("unknown instance {id}")))?;
            Ok((
                id,
                inst.vm_type.hour_cost_usd,
                raw_score(&inst.vm_type, svc, w)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let bounds = NormalizationBounds::of(raws.iter().map(|r| r.2)).ok_or(Error::NoFeasibleVm)?;
    raws.into_iter()
        .map(|(id, price, raw)| {
            Ok(Candidate {
                id,
                price,
                score: PerfScore {
                    rho: crate::scoring::normalize(raw, &bounds)?,
                    raw,
                },
            })
        })
        .collect()
}

fn run_automaton<R: Rng + ?Sized>(
    cands: &[Candidate],
    svc_index: usize,
    learning: &LearningParams<f64>,
    policy: &ConvergencePolicy,
    trace: bool,
    rng: &mut R,
) -> Result<ServiceChoice> {
    let mut aut = Automaton::<f64>::new(cands.len())?;
    let mut history = Vec::new();
    let mut steps = Vec::new();
    let status = loop {
        let status = aut.check_convergence(&history, policy);
        if status.is_terminal() {
            break status;
        }
        let action = aut.select_action(rng);
        let rho = cands[action].score.rho;
        history.push(rho);
        aut.respond(action, rho, learning)?;
        if trace {
            steps.push(TraceStep {
                service_index: svc_index,
                iteration: aut.iterations(),
                action_instance: cands[action].id,
                rho,
                max_prob: aut.max_prob(),
            });
        }
    };
    let chosen = &cands[status.action().expect("terminal status carries an action")];
    Ok(ServiceChoice {
        instance: chosen.id,
        score: chosen.score,
        iterations: aut.iterations(),
        status,
        trace: steps,
    })
}

fn choose<R: Rng + ?Sized>(
    cands: &[Candidate],
    svc_index: usize,
    selector: Selector,
    params: &ProvisionParams,
    rng: &mut R,
) -> Result<ServiceChoice> {
    let pick = |k: usize| ServiceChoice {
        instance: cands[k].id,
        score: cands[k].score,
        iterations: 0,
        status: ConvergenceStatus::ConvergedByProbability(k),
        trace: Vec::new(),
    };
    match selector {
        Selector::Automaton => run_automaton(
            cands,
            svc_index,
            &params.learning,
            &params.convergence,
            params.trace,
            rng,
        ),
        Selector::Random => Ok(pick(rng.gen_range(0..cands.len()))),
        Selector::Cheapest => {
            let mut best = 0;
            for (k, c) in cands.iter().enumerate().skip(1) {
                let b = &cands[best];
                if c.price < b.price || (c.price == b.price && c.id < b.id) {
                    best = k;
                }
            }
            Ok(pick(best))
        }
    }
}

/// Runs the automaton over every available instance that can host `svc`
/// and returns the instance it settles on. The pool is not modified.
pub fn provision_service<R: Rng + ?Sized>(
    pool: &Pool,
    svc: &ServiceSpec,
    weights: &Weights<f64>,
    params: &ProvisionParams,
    rng: &mut R,
) -> Result<ServiceChoice> {
    let ids: Vec<InstanceId> = pool
        .available()
        .filter(|i| feasible(i, svc))
        .map(|i| i.id)
        .collect();
    if ids.is_empty() {
        return Err(Error::NoFeasibleVm);
    }
    let cands = score_candidates(pool, svc, &ids, weights)?;
    run_automaton(
        &cands,
        0,
        &params.learning,
        &params.convergence,
        params.trace,
        rng,
    )
}

/// Instances that can host `services[k]` while leaving `services[k+1..]`
/// hostable on the rest of the pool.
fn extendable_candidates(pool: &Pool, services: &[ServiceSpec], k: usize) -> Vec<InstanceId> {
    let (avail, adj) = availability(pool, services);
    let rest = &adj[k + 1..];
    adj[k]
        .iter()
        .copied()
        .filter(|&c| {
            let without: Vec<Vec<usize>> = rest
                .iter()
                .map(|a| a.iter().copied().filter(|&x| x != c).collect())
                .collect();
            is_perfect_on_left(&without, avail.len())
        })
        .map(|c| avail[c])
        .collect()
}

/// Provisions one request against `pool` with the given selection rule.
///
/// On success the chosen instances are marked allocated. A rejected request
/// leaves the pool untouched.
pub fn provision_with(
    pool: &mut Pool,
    req: &Request,
    params: &ProvisionParams,
    selector: Selector,
    streams: &RngStreams,
) -> Result<Outcome> {
    let reject = |reason| {
        Ok(Outcome::Rejected(Rejection {
            request_id: req.id,
            reason,
        }))
    };
    if req.services.is_empty() {
        return reject(RejectReason::NoFeasibleAssignment);
    }
    let base_len = pool.len();
    let negotiation = if tackle(pool, req) {
        None
    } else {
        match negotiate(pool, req, params) {
            Ok(n) => Some(n),
            Err(reason) => return reject(reason),
        }
    };

    let mut reserved: Vec<InstanceId> = Vec::with_capacity(req.services.len());
    let result = (|| {
        let weights = params.weights.for_class(req.app_class);
        let mut alloc = Allocation {
            request_id: req.id,
            pairs: Vec::new(),
            rhos: Vec::new(),
            request_rho: 0.0,
            iterations_per_service: Vec::new(),
            negotiation: negotiation.clone(),
            trace: Vec::new(),
        };
        for (k, svc) in req.services.iter().enumerate() {
            let ids = extendable_candidates(pool, &req.services, k);
            if ids.is_empty() {
                return Err(Error::Internal(format!(
                    "request {} service {k}: no candidate after a successful tackle",
                    req.id
                )));
            }
            let cands = score_candidates(pool, svc, &ids, weights)?;
            let mut rng = streams.service(req.id, k);
            let choice = choose(&cands, k, selector, params, &mut rng)?;
            pool.allocate(choice.instance, req.id, k)?;
            reserved.push(choice.instance);
            alloc.pairs.push((k, choice.instance));
            alloc.rhos.push(choice.score.rho);
            alloc.iterations_per_service.push(choice.iterations);
            alloc.trace.extend(choice.trace);
        }
        alloc.request_rho = request_perf(&alloc.rhos);
        Ok(alloc)
    })();

    match result {
        Ok(a) => Ok(Outcome::Allocated(a)),
        Err(e) => {
            for id in reserved {
                pool.release(id)?;
            }
            pool.truncate(base_len);
            Err(e)
        }
    }
}

/// Learning-automaton provisioning of one request.
pub fn provision(
    pool: &mut Pool,
    req: &Request,
    params: &ProvisionParams,
    streams: &RngStreams,
) -> Result<Outcome> {
    provision_with(pool, req, params, Selector::Automaton, streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{builtin_catalog, Storage};
    use crate::workload::AppClass;

    fn one_of_each() -> Pool {
        Pool::from_types("p", builtin_catalog().into_iter().map(Arc::new))
    }

    fn req(id: u64, services: Vec<ServiceSpec>) -> Request {
        Request {
            id,
            app_id: 0,
            services,
            deadline_s: None,
            app_class: AppClass::Normal,
        }
    }

    fn s(vcpu: u32, mem: f64, count: u32, vol: f64) -> ServiceSpec {
        ServiceSpec::new(vcpu, mem, Storage::new(count, vol))
    }

    fn type_of(pool: &Pool, id: InstanceId) -> String {
        pool.get(id).unwrap().vm_type.name.clone()
    }

    #[test]
    fn tackle_examples() {
        let only = Pool::from_types(
            "p",
            builtin_catalog()
                .into_iter()
                .filter(|t| t.name == "i3.2xlarge")
                .map(Arc::new),
        );
        let r = req(0, vec![s(8, 30.0, 1, 80.0), s(8, 30.0, 1, 80.0)]);
        assert!(!tackle(&only, &r));

        let mut big = Pool::new("p");
        for t in builtin_catalog() {
            let t = Arc::new(t);
            for _ in 0..3 {
                big.push(Arc::clone(&t));
            }
        }
        assert!(tackle(&big, &req(1, vec![s(1, 1.0, 1, 4.0); 3])));

        let class2 = req(
            2,
            vec![s(2, 4.0, 1, 4.0), s(2, 8.0, 1, 32.0), s(4, 8.0, 2, 40.0)],
        );
        assert!(tackle(&one_of_each(), &class2));
    }

    #[test]
    fn negotiation_buys_cheapest_fit() {
        let mut params = ProvisionParams::new(&builtin_catalog());
        params.elastic.enabled = true;
        let mut pool = Pool::new("p");
        let r = req(0, vec![s(2, 4.0, 1, 4.0)]);
        let n = negotiate(&mut pool, &r, &params).unwrap();
        assert_eq!(n.bought.len(), 1);
        assert_eq!(type_of(&pool, n.bought[0]), "t2.medium");
        assert_eq!(n.delay_s, 60.0);
        assert!(tackle(&pool, &r));

        let again = negotiate(&mut pool, &r, &params).unwrap();
        assert!(again.bought.is_empty());
        assert_eq!(again.delay_s, 0.0);

        let huge = req(1, vec![s(1, 128.0, 1, 4.0)]);
        assert_eq!(
            negotiate(&mut pool, &huge, &params),
            Err(RejectReason::NoFeasibleAssignment)
        );
        params.elastic.enabled = false;
        let r2 = req(2, vec![s(8, 8.0, 1, 4.0)]);
        assert_eq!(
            negotiate(&mut pool, &r2, &params),
            Err(RejectReason::ElasticDisabled)
        );
    }

    #[test]
    fn singleton_returns_immediately() {
        let pool = one_of_each();
        let params = ProvisionParams::new(&builtin_catalog());
        let svc = s(8, 30.0, 1, 80.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = provision_service(&pool, &svc, &Weights::normal(), &params, &mut rng).unwrap();
        assert_eq!(type_of(&pool, c.instance), "i3.2xlarge");
        assert_eq!(c.iterations, 0);
        assert_eq!(c.status, ConvergenceStatus::ConvergedByProbability(0));
        assert_eq!(c.score.rho, 1.0);

        let none = s(1, 100.0, 1, 4.0);
        assert!(matches!(
            provision_service(&pool, &none, &Weights::normal(), &params, &mut rng),
            Err(Error::NoFeasibleVm)
        ));
    }

    #[test]
    fn rejection_leaves_pool_unchanged() {
        let mut pool = one_of_each();
        let before = pool.clone();
        let params = ProvisionParams::new(&builtin_catalog());
        let r = req(9, vec![s(1, 100.0, 1, 4.0)]);
        let out = provision(&mut pool, &r, &params, &RngStreams::new(0)).unwrap();
        assert_eq!(
            out,
            Outcome::Rejected(Rejection {
                request_id: 9,
                reason: RejectReason::NoFeasibleAssignment
            })
        );
        assert_eq!(pool, before);

        // fits the catalog but not the pool, and buying is off
        let mut small = Pool::new("p");
        let r = req(3, vec![s(1, 1.0, 1, 4.0)]);
        let out = provision(&mut small, &r, &params, &RngStreams::new(0)).unwrap();
        assert!(matches!(
            out,
            Outcome::Rejected(Rejection {
                reason: RejectReason::ElasticDisabled,
                ..
            })
        ));
    }

    #[test]
    fn sequential_reservation_never_dead_ends() {
        // The first service fits both i3.xlarge and i3.2xlarge, the second
        // only the i3.2xlarge: the first must avoid it.
        let pool_types = ["i3.xlarge", "i3.2xlarge"];
        let mut pool = Pool::from_types(
            "p",
            builtin_catalog()
                .into_iter()
                .filter(|t| pool_types.contains(&t.name.as_str()))
                .map(Arc::new),
        );
        let r = req(0, vec![s(4, 30.0, 1, 32.0), s(8, 30.0, 1, 80.0)]);
        for sel in [Selector::Automaton, Selector::Random, Selector::Cheapest] {
            let mut p = pool.clone();
            let out = provision_with(
                &mut p,
                &r,
                &ProvisionParams::new(&builtin_catalog()),
                sel,
                &RngStreams::new(4),
            )
            .unwrap();
            let a = out.allocation().expect("allocated");
            assert_eq!(type_of(&p, a.pairs[1].1), "i3.2xlarge");
        }
        let out = provision(
            &mut pool,
            &r,
            &ProvisionParams::new(&builtin_catalog()),
            &RngStreams::new(4),
        )
        .unwrap();
        assert_eq!(pool.allocated_count(), 2);
        let a = out.allocation().unwrap();
        assert_ne!(a.pairs[0].1, a.pairs[1].1);
        assert!(a.rhos.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn provisioning_is_deterministic() {
        let params = ProvisionParams::new(&builtin_catalog());
        let r = req(5, vec![s(1, 1.0, 1, 4.0), s(1, 4.0, 1, 4.0)]);
        let run = || {
            let mut pool = one_of_each();
            provision(&mut pool, &r, &params, &RngStreams::new(77)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trace_does_not_perturb_choice() {
        let mut params = ProvisionParams::new(&builtin_catalog());
        let r = req(5, vec![s(2, 8.0, 1, 32.0), s(1, 4.0, 1, 4.0)]);
        let mut p1 = one_of_each();
        let plain = provision(&mut p1, &r, &params, &RngStreams::new(3)).unwrap();
        params.trace = true;
        let mut p2 = one_of_each();
        let traced = provision(&mut p2, &r, &params, &RngStreams::new(3)).unwrap();
        let (a, b) = (plain.allocation().unwrap(), traced.allocation().unwrap());
        assert_eq!(a.pairs, b.pairs);
        assert!(a.trace.is_empty());
        let total: u64 = b.iterations_per_service.iter().sum();
        assert_eq!(b.trace.len() as u64, total);
    }

    #[test]
    fn greedy_picks_cheapest() {
        let mut pool = one_of_each();
        let params = ProvisionParams::new(&builtin_catalog());
        let r = req(0, vec![s(2, 4.0, 1, 4.0)]);
        let out = provision_with(
            &mut pool,
            &r,
            &params,
            Selector::Cheapest,
            &RngStreams::new(0),
        )
        .unwrap();
        let a = out.allocation().unwrap();
        assert_eq!(type_of(&pool, a.pairs[0].1), "t2.medium");
    }
}
