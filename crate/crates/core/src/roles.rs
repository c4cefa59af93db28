//! Decision logic of vehicular edges and the bridge router.
//!
//! These functions are pure apart from the tables they are handed; the
//! simulation world wires their outcomes to packets.

use std::collections::{BTreeMap, BTreeSet};

use crate::compute::{exec_duration, MicroserviceSpec, NodeResources};
use crate::forwarder::FaceId;
use crate::naming::FeName;
use crate::packet::{Data, Interest};
use crate::time::{secs_to_ticks, ticks_to_secs, Ticks};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeDecision {
    ExecuteLocal,
    Offload {
        adhoc_response: bool,
        microservice_availability: bool,
    },
}

/// What the first edge knows when a consumer request arrives.
#[derive(Debug, Clone, Copy)]
pub struct EdgeContext<'a> {
    pub resources: &'a NodeResources,
    /// Sum of execution times of requests already queued.
    pub queue_wait: Ticks,
    pub queue_len: usize,
    pub holds_code: bool,
    /// Seconds before the consumer leaves this edge's radio range.
    pub time_in_range: f64,
    /// Extra time assumed for a remote execution to come back.
    pub offload_margin: Ticks,
}

/// Local execution needs free units, the code, nobody queued ahead, and a
/// predicted completion before the consumer drives out of range.
pub fn edge_decide(ctx: &EdgeContext<'_>, spec: &MicroserviceSpec) -> EdgeDecision {
    let exec = exec_duration(spec, ctx.resources);
    let finish = ticks_to_secs(ctx.queue_wait + exec);
    if ctx.holds_code
        && ctx.queue_len == 0
        && ctx.resources.can_admit(spec.demand)
        && finish <= ctx.time_in_range
    {
        return EdgeDecision::ExecuteLocal;
    }
    let remote = ticks_to_secs(exec + ctx.offload_margin);
    EdgeDecision::Offload {
        adhoc_response: remote > ctx.time_in_range,
        microservice_availability: ctx.holds_code,
    }
}

/// The Interest an edge re-expresses upstream after deciding to offload.
pub fn offload_interest(i: &Interest, decision: EdgeDecision, next_edge: Option<u16>) -> Interest {
    let mut out = i.clone();
    if let EdgeDecision::Offload {
        adhoc_response,
        microservice_availability,
    } = decision
    {
        out.offloading = true;
        out.adhoc_response = adhoc_response;
        out.microservice_availability = microservice_availability;
        out.next_edge = next_edge;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudReason {
    CodeUnavailable,
    QueueFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextEdgePlan {
    Execute,
    Queue,
    /// Acknowledge with a `microservice_fetch` Data and wait for the code.
    FetchCode,
    ToCloud(CloudReason),
}

/// Plan of an edge receiving an offloaded Interest from the bridge.
pub fn next_edge_on_offload(
    resources: &NodeResources,
    queue_len: usize,
    queue_full: bool,
    holds_code: bool,
    spec: &MicroserviceSpec,
    i: &Interest,
) -> NextEdgePlan {
    if !holds_code {
        return if i.microservice_availability {
            NextEdgePlan::FetchCode
        } else {
            NextEdgePlan::ToCloud(CloudReason::CodeUnavailable)
        };
    }
    if queue_len == 0 && resources.can_admit(spec.demand) {
        NextEdgePlan::Execute
    } else if !queue_full {
        NextEdgePlan::Queue
    } else {
        NextEdgePlan::ToCloud(CloudReason::QueueFull)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VecFibEntry {
    pub name: FeName,
    pub next_edge_face: FaceId,
    pub offloaded_at: Ticks,
    pub expiry: Ticks,
}

/// Requests the bridge recently pushed to a neighbouring edge.
#[derive(Debug, Clone, Default)]
pub struct VecFib {
    entries: BTreeMap<FeName, VecFibEntry>,
    expired: u64,
}

impl VecFib {
    pub fn insert(&mut self, name: FeName, face: FaceId, now: Ticks, lifetime: Ticks) {
        self.entries.insert(
            name.clone(),
            VecFibEntry {
                name,
                next_edge_face: face,
                offloaded_at: now,
                expiry: now + lifetime,
            },
        );
    }

    pub fn remove(&mut self, name: &FeName) -> Option<VecFibEntry> {
        self.entries.remove(name)
    }

    pub fn get(&self, name: &FeName) -> Option<&VecFibEntry> {
        self.entries.get(name)
    }

    pub fn count_for(&self, face: FaceId, now: Ticks) -> usize {
        self.entries
            .values()
            .filter(|e| e.next_edge_face == face && e.expiry > now)
            .count()
    }

    pub fn purge(&mut self, now: Ticks) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.expiry > now);
        let n = before - self.entries.len();
        self.expired += n as u64;
        n
    }

    pub fn expired(&self) -> u64 {
        self.expired
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &VecFibEntry> {
        self.entries.values()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VfcFibEntry {
    pub fog_face: FaceId,
    pub outstanding: usize,
    pub names: BTreeSet<FeName>,
}

/// Requests the bridge pushed to each fog gateway and is still waiting on.
#[derive(Debug, Clone, Default)]
pub struct VfcFib {
    fogs: BTreeMap<FaceId, VfcFibEntry>,
}

impl VfcFib {
    pub fn register(&mut self, face: FaceId) {
        self.fogs.entry(face).or_insert_with(|| VfcFibEntry {
            fog_face: face,
            ..Default::default()
        });
    }

    pub fn has_fog(&self) -> bool {
        !self.fogs.is_empty()
    }

    /// Fog with the fewest outstanding requests, lowest face on ties.
    pub fn least_loaded(&self) -> Option<FaceId> {
        self.fogs
            .values()
            .min_by_key(|e| (e.outstanding, e.fog_face))
            .map(|e| e.fog_face)
    }

    pub fn add(&mut self, face: FaceId, name: FeName) {
        let e = self.fogs.get_mut(&face).expect("fog face registered");
        if e.names.insert(name) {
            e.outstanding += 1;
        }
    }

    /// Settles `name` at whichever fog holds it.
    pub fn complete(&mut self, name: &FeName) -> Option<FaceId> {
        for e in self.fogs.values_mut() {
            if e.names.remove(name) {
                e.outstanding -= 1;
                return Some(e.fog_face);
            }
        }
        None
    }

    pub fn get(&self, face: FaceId) -> Option<&VfcFibEntry> {
        self.fogs.get(&face)
    }

    pub fn outstanding(&self) -> usize {
        self.fogs.values().map(|e| e.outstanding).sum()
    }

    pub fn is_consistent(&self) -> bool {
        self.fogs.values().all(|e| e.outstanding == e.names.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeDecision {
    ToNextEdge(FaceId),
    ToFog(FaceId),
    ToCloud,
}

#[derive(Debug, Clone)]
pub struct BridgePolicy {
    pub edge_load_threshold: usize,
    pub vec_fib_lifetime: Ticks,
}

impl Default for BridgePolicy {
    fn default() -> Self {
        BridgePolicy {
            edge_load_threshold: 0,
            vec_fib_lifetime: secs_to_ticks(2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decided {
    pub decision: BridgeDecision,
    /// The fog layer would have been chosen but none is registered.
    pub no_fog: bool,
}

/// Routes an offloaded Interest and records it in VEC-FIB or VFC-FIB.
pub fn bridge_decide(
    vec_fib: &mut VecFib,
    vfc_fib: &mut VfcFib,
    policy: &BridgePolicy,
    name: &FeName,
    next_edge: Option<FaceId>,
    now: Ticks,
) -> Decided {
    let to_edge = |vec_fib: &mut VecFib, face: FaceId, no_fog: bool| {
        vec_fib.insert(name.clone(), face, now, policy.vec_fib_lifetime);
        Decided {
            decision: BridgeDecision::ToNextEdge(face),
            no_fog,
        }
    };
    if let Some(face) = next_edge {
        if vec_fib.count_for(face, now) <= policy.edge_load_threshold {
            return to_edge(vec_fib, face, false);
        }
    }
    match vfc_fib.least_loaded() {
        Some(fog) => {
            vfc_fib.add(fog, name.clone());
            Decided {
                decision: BridgeDecision::ToFog(fog),
                no_fog: false,
            }
        }
        None => match next_edge {
            Some(face) => to_edge(vec_fib, face, true),
            None => Decided {
                decision: BridgeDecision::ToCloud,
                no_fog: true,
            },
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeDataAction {
    /// Hand to the next edge for re-emission on its ad-hoc face.
    ToNextEdge(FaceId),
    /// Ordinary PIT consumption toward the originating edge.
    FollowPit,
}

/// Bookkeeping for a computed result passing through the bridge.
pub fn bridge_on_data(
    vec_fib: &mut VecFib,
    vfc_fib: &mut VfcFib,
    d: &Data,
    adhoc_target: Option<FaceId>,
) -> BridgeDataAction {
    vfc_fib.complete(&d.name);
    vec_fib.remove(&d.name);
    match (d.adhoc_response, adhoc_target) {
        (true, Some(face)) => BridgeDataAction::ToNextEdge(face),
        _ => BridgeDataAction::FollowPit,
    }
}
