//! The simulated network: consumer vehicles on a straight road, roadside
//! edges, one bridge router, an optional parking-lot fog and the cloud, all
//! driven by a single event queue.
//!
//! Face numbering is fixed per node kind. Every node uses face 0 for its
//! local application and face 1 for its ad-hoc radio. Edges and the fog
//! gateway reach the bridge on face 2; the fog gateway reaches the cloud on
//! face 3. The bridge numbers edge `k` as face `2 + k`, then the fog
//! gateway, then the cloud. The cloud sees the bridge on face 2 and the fog
//! gateway on face 3.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::access::{
    apply_batch, compute_hmac, load_bootstrap, sync_step, sync_to_completion, verify, AccessError,
    AccessStore, HmmRecord, Verdict, Vin,
};
use crate::compute::{
    exec_duration, snapshot_instance, FifoQueue, Instance, MicroserviceSpec, NodeResources,
};
use crate::config::{ConfigError, Mode, ScenarioConfig};
use crate::engine::{time_in_range_on_road, EventQueue, Kinematics, Link, Waypoint};
use crate::fog::{FogTask, VfRat};
use crate::forwarder::{DataAction, FaceId, Forwarder, ForwarderConfig, InterestAction, APP_FACE};
use crate::metrics::{RequestDrop, RequestRecord};
use crate::naming::{FeName, RegionPrefix};
use crate::packet::{
    encode, wire_size, AdmissionInfo, Data, InstanceState, Interest, Packet, Payload,
};
use crate::roles::{
    bridge_decide, bridge_on_data, edge_decide, next_edge_on_offload, offload_interest,
    BridgeDataAction, BridgeDecision, BridgePolicy, CloudReason, EdgeContext, EdgeDecision,
    NextEdgePlan, VecFib, VfcFib,
};
use crate::time::{secs_to_ticks, Ticks};
use crate::trace::{RecordKind, TraceWriter};

pub const ADHOC: FaceId = FaceId(1);
pub const UPLINK: FaceId = FaceId(2);
pub const VFG_CLOUD: FaceId = FaceId(3);
const CLOUD_FROM_BRIDGE: FaceId = FaceId(2);
const CLOUD_FROM_VFG: FaceId = FaceId(3);

pub const HMM_SYNC: &str = "hmm_sync";
pub const VFG_ADMISSION: &str = "vfg_admission";
pub const VFG_DEPARTURE: &str = "vfg_departure";

const VIN_ALPHABET: &[u8] = b"ABCDEFGHJKLMNPRSTUVWXYZ0123456789";
const MAX_INDEX: usize = 0x0fff;
/// Trace record bodies are length-prefixed with 16 bits.
const MAX_TRACE_BODY: usize = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("access store bootstrap: {0}")]
    Access(#[from] AccessError),
    #[error("mobility trace: {0}")]
    Mobility(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Consumer(u16),
    Edge(u16),
    Bridge,
    Vfg,
    Parked(u16),
    Cloud,
}

impl NodeId {
    /// Stable 16-bit identifier used in traces.
    pub fn code(self) -> u16 {
        match self {
            NodeId::Consumer(i) => 0x1000 | i,
            NodeId::Edge(k) => 0x2000 | k,
            NodeId::Bridge => 0x3000,
            NodeId::Vfg => 0x4000,
            NodeId::Parked(i) => 0x5000 | i,
            NodeId::Cloud => 0x6000,
        }
    }

    pub fn from_code(c: u16) -> Option<NodeId> {
        let i = c & 0x0fff;
        Some(match c >> 12 {
            1 => NodeId::Consumer(i),
            2 => NodeId::Edge(i),
            3 if i == 0 => NodeId::Bridge,
            4 if i == 0 => NodeId::Vfg,
            5 => NodeId::Parked(i),
            6 if i == 0 => NodeId::Cloud,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum Timer {
    PitExpiry(FeName),
    VecFibPurge,
    Retry { request: u64 },
}

#[derive(Debug, Clone)]
enum Event {
    Arrival {
        to: NodeId,
        face: FaceId,
        from: NodeId,
        packet: Packet,
    },
    ExecComplete {
        node: NodeId,
        instance: u64,
    },
    Timer {
        node: NodeId,
        timer: Timer,
    },
    Mobility {
        node: NodeId,
    },
    Generate {
        consumer: u16,
    },
    Scripted {
        consumer: u16,
        microservice: String,
        params: Option<Vec<String>>,
    },
}

impl Event {
    /// Background events never keep a finished run alive.
    fn is_background(&self) -> bool {
        matches!(
            self,
            Event::Mobility { .. }
                | Event::Timer {
                    timer: Timer::VecFibPurge,
                    ..
                }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    First,
    Next,
    Cloud,
}

#[derive(Debug, Clone)]
struct Job {
    interest: Interest,
    role: Role,
}

#[derive(Debug, Clone)]
struct Running {
    instance: Instance,
    job: Job,
}

#[derive(Debug, Clone)]
struct Host {
    res: NodeResources,
    queue: FifoQueue<Job>,
    running: BTreeMap<u64, Running>,
}

impl Host {
    fn new(units: u32, speed: f64, queue: usize) -> Self {
        Host {
            res: NodeResources::new(units, speed),
            queue: FifoQueue::new(queue),
            running: BTreeMap::new(),
        }
    }

    fn queue_wait(&self, catalog: &crate::compute::Catalog) -> Ticks {
        self.queue
            .iter()
            .filter_map(|j| catalog.get(j.interest.name.microservice()))
            .map(|s| exec_duration(s, &self.res))
            .sum()
    }
}

#[derive(Debug, Clone)]
struct Consumer {
    vin: Vin,
    kin: Kinematics,
    fw: Forwarder,
    pending: BTreeMap<FeName, u64>,
    seq: u64,
    waypoints: Vec<Waypoint>,
    next_waypoint: usize,
    mobility_due: Option<Ticks>,
}

#[derive(Debug, Clone)]
struct Edge {
    pos: f64,
    fw: Forwarder,
    host: Host,
    codes: BTreeSet<String>,
    access: AccessStore,
    sync_in_flight: bool,
    sync_seq: u64,
    awaiting_sync: Vec<Interest>,
    awaiting_code: BTreeMap<FeName, Job>,
}

#[derive(Debug, Clone)]
struct Bridge {
    fw: Forwarder,
    vec_fib: VecFib,
    vfc_fib: VfcFib,
    policy: BridgePolicy,
    adhoc_targets: BTreeMap<FeName, FaceId>,
}

#[derive(Debug, Clone)]
struct Vfg {
    fw: Forwarder,
    rat: VfRat,
    tasks: BTreeMap<u64, Interest>,
    by_name: BTreeMap<FeName, BTreeSet<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LotState {
    Arriving,
    Parked,
    Departing,
    Gone,
}

#[derive(Debug, Clone)]
struct ParkedVehicle {
    vin: String,
    res: NodeResources,
    parking: Ticks,
    stays_for: Ticks,
    state: LotState,
    running: BTreeMap<u64, Instance>,
    /// Instances in flight to this vehicle that must follow it to a new host.
    forward: BTreeMap<u64, String>,
    handed_over: bool,
}

#[derive(Debug, Clone)]
struct Cloud {
    fw: Forwarder,
    host: Host,
    access: AccessStore,
}

/// Counters describing what the network did during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub edge_local: u64,
    pub edge_offloads: u64,
    pub next_executed: u64,
    pub next_queued: u64,
    pub code_fetches: u64,
    pub code_served: u64,
    pub to_cloud_code: u64,
    pub to_cloud_queue: u64,
    pub bridge_to_edge: u64,
    pub bridge_to_fog: u64,
    pub bridge_to_cloud: u64,
    pub bridge_bounces: u64,
    pub fog_dispatches: u64,
    pub fog_to_cloud: u64,
    pub handovers: u64,
    pub handovers_to_cloud: u64,
    pub lot_rejections: u64,
    pub sync_rounds: u64,
    pub access_denied: u64,
    pub retries: u64,
    pub stale_jobs: u64,
    pub no_coverage: u64,
    pub queue_overflow: u64,
    pub lost_instances: u64,
    pub vec_fib_expired: u64,
}

/// Work accounting of an instance that changed hosts at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoverOutcome {
    pub instance: u64,
    pub microservice: String,
    pub handovers: u32,
    pub work_done: u64,
    pub total_work: u64,
}

struct Streams {
    arrivals: ChaCha8Rng,
    services: ChaCha8Rng,
    vins: ChaCha8Rng,
    nonces: ChaCha8Rng,
    mobility: ChaCha8Rng,
    fog: ChaCha8Rng,
}

impl Streams {
    /// Each purpose gets its own generator so changing one kind of draw
    /// leaves the others untouched.
    fn new(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || ChaCha8Rng::seed_from_u64(master.random());
        Streams {
            arrivals: next(),
            services: next(),
            vins: next(),
            nonces: next(),
            mobility: next(),
            fog: next(),
        }
    }
}

fn random_vin(rng: &mut ChaCha8Rng) -> Vin {
    let s: String = (0..17)
        .map(|_| VIN_ALPHABET[rng.random_range(0..VIN_ALPHABET.len())] as char)
        .collect();
    Vin::new(&s).expect("alphabet excludes I, O and Q")
}

pub struct World {
    cfg: ScenarioConfig,
    q: EventQueue<Event>,
    active: usize,
    generating: bool,
    consumers: Vec<Consumer>,
    edges: Vec<Edge>,
    bridge: Bridge,
    vfg: Option<Vfg>,
    parked: Vec<ParkedVehicle>,
    parked_by_vin: BTreeMap<String, u16>,
    cloud: Cloud,
    records: Vec<RequestRecord>,
    origin: BTreeMap<FeName, u16>,
    exec_case: BTreeMap<FeName, u8>,
    armed: BTreeSet<(NodeId, FeName)>,
    transit: BTreeMap<u64, Instance>,
    trace: TraceWriter,
    rng: Streams,
    next_instance: u64,
    stats: SimStats,
    adhoc: Link,
    wired: Link,
    cloud_link: Link,
    handed_over: Vec<HandoverOutcome>,
    violations: Vec<String>,
    finished: bool,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        let waypoints = match &cfg.mobility_trace {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: path.clone(),
                    why: e.to_string(),
                })?;
                crate::engine::parse_waypoints(&text)
                    .map_err(|e| SimError::Mobility(e.to_string()))?
            }
            None => BTreeMap::new(),
        };
        let bootstrap = match &cfg.hmm_bootstrap {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: path.clone(),
                    why: e.to_string(),
                })?;
                Some(load_bootstrap(&text)?)
            }
            None => None,
        };
        Self::build(cfg, waypoints, bootstrap)
    }

    fn build(
        cfg: ScenarioConfig,
        waypoints: BTreeMap<String, Vec<Waypoint>>,
        bootstrap: Option<AccessStore>,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        if cfg.consumers > MAX_INDEX || cfg.edges > MAX_INDEX {
            return Err(ConfigError::BadValue {
                key: "scenario.consumers".into(),
                why: format!("at most {MAX_INDEX} consumers and edges"),
            }
            .into());
        }
        let mut rng = Streams::new(cfg.seed);
        let region = RegionPrefix::new(&cfg.region).expect("validated region");
        let fw_cfg = ForwarderConfig {
            pit_lifetime: secs_to_ticks(cfg.pit_lifetime_s),
            rpit_lifetime: secs_to_ticks(cfg.rpit_lifetime_s),
            cs_capacity: cfg.cs_capacity,
            default_freshness: secs_to_ticks(1.0),
            freshness: cfg
                .catalog
                .specs()
                .map(|s| (s.microservice().to_string(), s.freshness))
                .collect(),
        };
        let forwarder = |faces: Vec<FaceId>, prefix: &RegionPrefix| {
            let mut f = Forwarder::new(fw_cfg.clone());
            f.fib.insert(prefix.clone(), faces);
            f
        };
        let e = cfg.edges as u16;
        let has_fog = cfg.mode == Mode::FoggyEdge;

        let mut consumers = Vec::with_capacity(cfg.consumers);
        let traced: Vec<Vec<Waypoint>> = waypoints.into_values().collect();
        for i in 0..cfg.consumers {
            let vin = random_vin(&mut rng.vins);
            let wps = traced.get(i).cloned().unwrap_or_default();
            let kin = match wps.first() {
                Some(w) => w.kinematics(),
                None => {
                    let pos = rng.mobility.random_range(0.0..=cfg.road_length_m);
                    let speed = if cfg.consumer_max_speed > cfg.consumer_min_speed {
                        rng.mobility
                            .random_range(cfg.consumer_min_speed..=cfg.consumer_max_speed)
                    } else {
                        cfg.consumer_min_speed
                    };
                    let dir = if rng.mobility.random_bool(0.5) { 1 } else { -1 };
                    Kinematics::new(pos, speed, dir, 0)
                }
            };
            consumers.push(Consumer {
                vin,
                kin,
                fw: forwarder(vec![ADHOC], &RegionPrefix::root()),
                pending: BTreeMap::new(),
                seq: 0,
                waypoints: wps,
                next_waypoint: 1,
                mobility_due: None,
            });
        }

        let mut cloud_access = AccessStore::new();
        match bootstrap {
            Some(store) => cloud_access = store,
            None => {
                let mut idx = 0;
                for c in &consumers {
                    for s in cfg.catalog.specs().filter(|s| s.protected) {
                        idx += 1;
                        cloud_access.register(HmmRecord {
                            hmac: compute_hmac(&s.name, &c.vin),
                            microservice_name: s.name.to_string(),
                            created_at: idx,
                        })?;
                    }
                }
            }
        }

        let edges = (0..cfg.edges)
            .map(|k| {
                let mut access = AccessStore::new();
                if cfg.presync {
                    sync_to_completion(&mut access, &cloud_access, cfg.batch_limit);
                }
                Edge {
                    pos: cfg.edge_position(k),
                    fw: forwarder(vec![APP_FACE, UPLINK], &region),
                    host: Host::new(cfg.edge_units, cfg.edge_speed, cfg.edge_queue_capacity),
                    codes: cfg
                        .catalog
                        .names()
                        .into_iter()
                        .filter(|m| cfg.code_at(k).contains(m))
                        .collect(),
                    access,
                    sync_in_flight: false,
                    sync_seq: 0,
                    awaiting_sync: Vec::new(),
                    awaiting_code: BTreeMap::new(),
                }
            })
            .collect();

        let mut vfc_fib = VfcFib::default();
        if has_fog {
            vfc_fib.register(FaceId(2 + e));
        }
        let bridge = Bridge {
            fw: forwarder(vec![FaceId(3 + e)], &region),
            vec_fib: VecFib::default(),
            vfc_fib,
            policy: BridgePolicy {
                edge_load_threshold: cfg.edge_load_threshold,
                vec_fib_lifetime: secs_to_ticks(cfg.vec_fib_lifetime_s),
            },
            adhoc_targets: BTreeMap::new(),
        };
        let vfg = has_fog.then(|| Vfg {
            fw: forwarder(vec![APP_FACE, VFG_CLOUD], &region),
            rat: VfRat::new(cfg.fog_slots, cfg.fog_speed),
            tasks: BTreeMap::new(),
            by_name: BTreeMap::new(),
        });
        let cloud = Cloud {
            fw: forwarder(vec![APP_FACE], &region),
            host: Host::new(cfg.cloud_units, cfg.cloud_speed, cfg.cloud_queue_capacity),
            access: cloud_access,
        };

        let mut world = World {
            adhoc: Link::adhoc(
                cfg.link.adhoc_latency_s,
                cfg.link.adhoc_bandwidth,
                cfg.link.adhoc_range_m,
            ),
            wired: Link::wired(cfg.link.wired_latency_s, cfg.link.wired_bandwidth),
            cloud_link: Link::wired(cfg.link.cloud_latency_s, cfg.link.cloud_bandwidth),
            q: EventQueue::new(),
            active: 0,
            generating: true,
            consumers,
            edges,
            bridge,
            vfg,
            parked: Vec::new(),
            parked_by_vin: BTreeMap::new(),
            cloud,
            records: Vec::new(),
            origin: BTreeMap::new(),
            exec_case: BTreeMap::new(),
            armed: BTreeSet::new(),
            transit: BTreeMap::new(),
            trace: TraceWriter::new(),
            rng,
            next_instance: 1,
            stats: SimStats::default(),
            handed_over: Vec::new(),
            violations: Vec::new(),
            finished: false,
            cfg,
        };
        world.setup_events();
        Ok(world)
    }

    fn setup_events(&mut self) {
        let duration = self.cfg.duration();
        for c in 0..self.consumers.len() {
            self.schedule_mobility(c as u16);
        }
        let per_consumer = self.cfg.rate / self.cfg.consumers as f64;
        if per_consumer > 0.0 {
            let exp = Exp::new(per_consumer).expect("positive rate");
            for c in 0..self.consumers.len() {
                let at = secs_to_ticks(exp.sample(&mut self.rng.arrivals));
                if at < duration {
                    self.push(at, Event::Generate { consumer: c as u16 });
                }
            }
        }
        if self.vfg.is_some() {
            self.setup_lot(duration);
        }
    }

    /// The whole parking schedule is drawn up front.
    fn setup_lot(&mut self, duration: Ticks) {
        let mut arrivals: Vec<Ticks> = (0..self.cfg.fog_initial_vehicles)
            .map(|k| k as Ticks * 1000)
            .collect();
        if self.cfg.fog_arrival_rate > 0.0 {
            let exp = Exp::new(self.cfg.fog_arrival_rate).expect("positive rate");
            let mut t = 0.0;
            loop {
                t += exp.sample(&mut self.rng.fog);
                let at = secs_to_ticks(t);
                if at >= duration || arrivals.len() >= MAX_INDEX {
                    break;
                }
                arrivals.push(at);
            }
        }
        let stay = Exp::new(1.0 / self.cfg.fog_mean_parking_s.max(1e-3)).expect("positive mean");
        for at in arrivals {
            let vin = random_vin(&mut self.rng.vins).as_str().to_string();
            if self.parked_by_vin.contains_key(&vin) {
                continue;
            }
            let parking = secs_to_ticks(stay.sample(&mut self.rng.fog).max(1.0));
            let stays_for = if self.rng.fog.random_bool(self.cfg.fog_early_departure_prob) {
                (parking as f64 * self.rng.fog.random_range(0.2..0.9)) as Ticks
            } else {
                parking
            };
            let idx = self.parked.len() as u16;
            self.parked_by_vin.insert(vin.clone(), idx);
            self.parked.push(ParkedVehicle {
                vin,
                res: NodeResources::new(self.cfg.fog_vehicle_units, self.cfg.fog_speed),
                parking,
                stays_for,
                state: LotState::Arriving,
                running: BTreeMap::new(),
                forward: BTreeMap::new(),
                handed_over: false,
            });
            self.push(
                at,
                Event::Mobility {
                    node: NodeId::Parked(idx),
                },
            );
        }
    }

    /// Stops Poisson request generation; scripted requests still run.
    pub fn disable_generation(&mut self) {
        self.generating = false;
    }

    /// Replaces a consumer's motion from the current clock onward.
    pub fn set_consumer_kinematics(&mut self, consumer: u16, k: Kinematics) {
        let c = &mut self.consumers[consumer as usize];
        c.kin = k;
        c.waypoints.clear();
        self.schedule_mobility(consumer);
    }

    /// Issues one request from `consumer` at `at`. Default parameters
    /// make the name unique per consumer.
    pub fn script_request(
        &mut self,
        at: Ticks,
        consumer: u16,
        microservice: &str,
        params: Option<Vec<String>>,
    ) {
        self.push(
            at,
            Event::Scripted {
                consumer,
                microservice: microservice.to_string(),
                params,
            },
        );
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> Ticks {
        self.q.now()
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn trace(&self) -> &TraceWriter {
        &self.trace
    }

    pub fn handed_over(&self) -> &[HandoverOutcome] {
        &self.handed_over
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn consumer_vin(&self, consumer: u16) -> &Vin {
        &self.consumers[consumer as usize].vin
    }

    pub fn edge_store(&self, k: usize) -> &AccessStore {
        &self.edges[k].access
    }

    pub fn edge_resources(&self, k: usize) -> &NodeResources {
        &self.edges[k].host.res
    }

    pub fn cloud_resources(&self) -> &NodeResources {
        &self.cloud.host.res
    }

    /// Resource views of all parked vehicles that ever joined the lot.
    pub fn parked_resources(&self) -> impl Iterator<Item = &NodeResources> {
        self.parked.iter().map(|p| &p.res)
    }

    pub fn fog_table(&self) -> Option<&VfRat> {
        self.vfg.as_ref().map(|v| &v.rat)
    }

    /// Runs to quiescence after the configured duration, then checks the
    /// end-of-run invariants.
    pub fn run(&mut self) -> &[String] {
        if self.finished {
            return &self.violations;
        }
        let duration = self.cfg.duration();
        let lifetime = secs_to_ticks(self.cfg.pit_lifetime_s);
        let cap = duration + (self.cfg.max_retries as u64 + 2) * lifetime + secs_to_ticks(60.0);
        let mut quiescent = false;
        while let Some(t) = self.q.peek_time() {
            if t >= duration && self.active == 0 {
                quiescent = true;
                break;
            }
            if t > cap {
                break;
            }
            let (_, _, ev) = self.q.pop().expect("peeked");
            if !ev.is_background() {
                self.active -= 1;
            }
            self.handle(ev);
        }
        if self.q.peek_time().is_none() {
            quiescent = true;
        }
        self.finished = true;
        let now = self.q.now();
        for r in &mut self.records {
            if !r.is_resolved() {
                r.drop_reason = Some(RequestDrop::InFlight);
            }
        }
        if quiescent {
            self.check_invariants();
        } else {
            self.violations
                .push(format!("network still busy at the hard stop t={now}"));
        }
        &self.violations
    }

    fn push(&mut self, at: Ticks, ev: Event) {
        if !ev.is_background() {
            self.active += 1;
        }
        self.q
            .schedule(at, ev)
            .expect("events are never scheduled in the past");
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Arrival {
                to,
                face,
                from,
                packet,
            } => self.on_arrival(to, face, from, packet),
            Event::ExecComplete { node, instance } => match node {
                NodeId::Parked(p) => self.parked_exec_complete(p, instance),
                _ => self.host_exec_complete(node, instance),
            },
            Event::Timer { node, timer } => self.on_timer(node, timer),
            Event::Mobility { node } => match node {
                NodeId::Consumer(c) => self.consumer_mobility(c),
                NodeId::Parked(p) => self.parked_mobility(p),
                _ => {}
            },
            Event::Generate { consumer } => self.on_generate(consumer),
            Event::Scripted {
                consumer,
                microservice,
                params,
            } => self.new_request(consumer, &microservice, params),
        }
    }

    // ---- links ----

    fn position(&self, node: NodeId) -> Option<f64> {
        let now = self.q.now();
        match node {
            NodeId::Consumer(c) => Some(
                self.consumers[c as usize]
                    .kin
                    .position_at(now)
                    .clamp(0.0, self.cfg.road_length_m),
            ),
            NodeId::Edge(k) => Some(self.edges[k as usize].pos),
            _ => None,
        }
    }

    fn wired_peer(&self, from: NodeId, face: FaceId) -> Option<(NodeId, FaceId, Link)> {
        let e = self.edges.len() as u16;
        match (from, face) {
            (NodeId::Edge(k), UPLINK) => Some((NodeId::Bridge, FaceId(2 + k), self.wired)),
            (NodeId::Bridge, FaceId(f)) if f >= 2 && f < 2 + e => {
                Some((NodeId::Edge(f - 2), UPLINK, self.wired))
            }
            (NodeId::Bridge, FaceId(f)) if f == 2 + e && self.vfg.is_some() => {
                Some((NodeId::Vfg, UPLINK, self.wired))
            }
            (NodeId::Bridge, FaceId(f)) if f == 3 + e => {
                Some((NodeId::Cloud, CLOUD_FROM_BRIDGE, self.cloud_link))
            }
            (NodeId::Vfg, UPLINK) => Some((NodeId::Bridge, FaceId(2 + e), self.wired)),
            (NodeId::Vfg, VFG_CLOUD) => Some((NodeId::Cloud, CLOUD_FROM_VFG, self.cloud_link)),
            (NodeId::Cloud, CLOUD_FROM_BRIDGE) => {
                Some((NodeId::Bridge, FaceId(3 + e), self.cloud_link))
            }
            (NodeId::Cloud, CLOUD_FROM_VFG) if self.vfg.is_some() => {
                Some((NodeId::Vfg, VFG_CLOUD, self.cloud_link))
            }
            _ => None,
        }
    }

    /// Ad-hoc receivers. Road radios reach whoever is in range; the lot
    /// channel reaches every vehicle currently in the lot.
    fn adhoc_peers(&self, from: NodeId, to: Option<NodeId>) -> Vec<NodeId> {
        let range = self.adhoc.range;
        let in_lot = |p: u16| {
            matches!(
                self.parked[p as usize].state,
                LotState::Arriving | LotState::Parked | LotState::Departing
            )
        };
        match from {
            NodeId::Consumer(_) => match to {
                Some(t @ NodeId::Edge(_)) => {
                    let (a, b) = (self.position(from), self.position(t));
                    match (a, b) {
                        (Some(a), Some(b)) if (a - b).abs() <= range => vec![t],
                        _ => vec![],
                    }
                }
                _ => vec![],
            },
            NodeId::Edge(k) => {
                let pos = self.edges[k as usize].pos;
                crate::engine::adhoc_receivers(
                    pos,
                    range,
                    (0..self.consumers.len() as u16).map(|c| {
                        let n = NodeId::Consumer(c);
                        (n, self.position(n).expect("consumers have positions"))
                    }),
                )
            }
            NodeId::Vfg => match to {
                Some(NodeId::Parked(p)) if in_lot(p) => vec![NodeId::Parked(p)],
                Some(_) => vec![],
                None => (0..self.parked.len() as u16)
                    .filter(|&p| in_lot(p))
                    .map(NodeId::Parked)
                    .collect(),
            },
            NodeId::Parked(_) => match to {
                Some(NodeId::Vfg) => vec![NodeId::Vfg],
                Some(NodeId::Parked(p)) if in_lot(p) => vec![NodeId::Parked(p)],
                _ => vec![],
            },
            _ => vec![],
        }
    }

    fn trace_packet(
        &mut self,
        kind: RecordKind,
        node: NodeId,
        face: FaceId,
        peer: Option<NodeId>,
        p: &Packet,
    ) {
        let body = encode(p);
        let body: &[u8] = if body.len() > MAX_TRACE_BODY {
            &[]
        } else {
            &body
        };
        let now = self.q.now();
        self.trace.record(
            kind,
            now,
            node.code(),
            face.0,
            peer.map_or(0xffff, NodeId::code),
            body,
        );
    }

    fn send(&mut self, from: NodeId, face: FaceId, packet: impl Into<Packet>, to: Option<NodeId>) {
        let mut packet = packet.into();
        if let Packet::Interest(i) = &mut packet {
            i.hop_budget = i.hop_budget.saturating_sub(1);
        }
        let size = wire_size(&packet);
        let now = self.q.now();
        let targets: Vec<(NodeId, FaceId, Link)> = if face == ADHOC {
            self.adhoc_peers(from, to)
                .into_iter()
                .map(|n| (n, ADHOC, self.adhoc))
                .collect()
        } else {
            self.wired_peer(from, face).into_iter().collect()
        };
        if targets.is_empty() {
            self.trace_packet(RecordKind::Send, from, face, None, &packet);
            return;
        }
        for (peer, pface, link) in targets {
            self.trace_packet(RecordKind::Send, from, face, Some(peer), &packet);
            self.push(
                now + link.delivery_delay(size),
                Event::Arrival {
                    to: peer,
                    face: pface,
                    from,
                    packet: packet.clone(),
                },
            );
        }
    }

    fn decision(&mut self, node: NodeId, case: u8, face: FaceId, name: &FeName) {
        let f = face.0.to_be_bytes();
        let now = self.q.now();
        self.trace.with_name(
            RecordKind::Decision,
            now,
            node.code(),
            &[case, f[0], f[1]],
            name,
        );
    }

    fn fw_mut(&mut self, node: NodeId) -> Option<&mut Forwarder> {
        match node {
            NodeId::Consumer(c) => Some(&mut self.consumers[c as usize].fw),
            NodeId::Edge(k) => Some(&mut self.edges[k as usize].fw),
            NodeId::Bridge => Some(&mut self.bridge.fw),
            NodeId::Vfg => self.vfg.as_mut().map(|v| &mut v.fw),
            NodeId::Cloud => Some(&mut self.cloud.fw),
            NodeId::Parked(_) => None,
        }
    }

    /// Makes sure a PIT expiry timer is pending for the entry.
    fn arm(&mut self, node: NodeId, name: &FeName) {
        let key = (node, name.clone());
        if self.armed.contains(&key) {
            return;
        }
        let Some(expiry) = self
            .fw_mut(node)
            .and_then(|f| f.pit_entry(name))
            .map(|e| e.expiry)
        else {
            return;
        };
        self.armed.insert(key);
        let at = expiry.max(self.q.now());
        self.push(
            at,
            Event::Timer {
                node,
                timer: Timer::PitExpiry(name.clone()),
            },
        );
    }

    fn deliver_all(&mut self, node: NodeId, faces: Vec<FaceId>, d: &Data) {
        for f in faces {
            if f != APP_FACE {
                self.send(node, f, d.clone(), None);
            }
        }
    }

    fn on_arrival(&mut self, to: NodeId, face: FaceId, from: NodeId, packet: Packet) {
        self.trace_packet(RecordKind::Deliver, to, face, Some(from), &packet);
        match (to, packet) {
            (NodeId::Consumer(c), Packet::Data(d)) => self.consumer_data(c, d),
            (NodeId::Edge(k), Packet::Interest(i)) => self.edge_interest(k, face, i),
            (NodeId::Edge(k), Packet::Data(d)) => self.edge_data(k, face, d),
            (NodeId::Bridge, Packet::Interest(i)) => self.bridge_interest(face, i),
            (NodeId::Bridge, Packet::Data(d)) => self.bridge_data(face, d),
            (NodeId::Vfg, Packet::Interest(i)) => self.vfg_interest(face, from, i),
            (NodeId::Vfg, Packet::Data(d)) => self.vfg_data(face, from, d),
            (NodeId::Parked(p), Packet::Data(d)) => self.parked_data(p, d),
            (NodeId::Cloud, Packet::Interest(i)) => self.cloud_interest(face, i),
            _ => {}
        }
    }

    fn on_timer(&mut self, node: NodeId, timer: Timer) {
        let now = self.q.now();
        match timer {
            Timer::PitExpiry(name) => {
                self.armed.remove(&(node, name.clone()));
                let Some(fw) = self.fw_mut(node) else { return };
                match fw.expire(&name, now) {
                    Some(_) => self.pit_expired(node, &name),
                    None => self.arm(node, &name),
                }
            }
            Timer::VecFibPurge => {
                self.stats.vec_fib_expired += self.bridge.vec_fib.purge(now) as u64;
            }
            Timer::Retry { request } => self.on_retry(request),
        }
    }

    fn pit_expired(&mut self, node: NodeId, name: &FeName) {
        match node {
            NodeId::Bridge => {
                self.bridge.vec_fib.remove(name);
                self.bridge.vfc_fib.complete(name);
                self.bridge.adhoc_targets.remove(name);
            }
            NodeId::Edge(k) => {
                let e = &mut self.edges[k as usize];
                e.awaiting_code.remove(name);
                e.awaiting_sync.retain(|i| &i.name != name);
                if name.microservice() == HMM_SYNC {
                    e.sync_in_flight = false;
                }
            }
            _ => {}
        }
    }

    // ---- consumers ----

    fn schedule_mobility(&mut self, c: u16) {
        let now = self.q.now();
        let len = self.cfg.road_length_m;
        let con = &mut self.consumers[c as usize];
        let due = if let Some(w) = con.waypoints.get(con.next_waypoint) {
            Some(w.time.max(now))
        } else if !con.waypoints.is_empty() || con.kin.speed == 0.0 {
            None
        } else {
            let x = con.kin.position_at(now).clamp(0.0, len);
            let dist = if con.kin.direction > 0 { len - x } else { x };
            Some(now + secs_to_ticks(dist / con.kin.speed).max(1))
        };
        con.mobility_due = due;
        if let Some(at) = due {
            self.push(
                at,
                Event::Mobility {
                    node: NodeId::Consumer(c),
                },
            );
        }
    }

    fn consumer_mobility(&mut self, c: u16) {
        let now = self.q.now();
        let len = self.cfg.road_length_m;
        let con = &mut self.consumers[c as usize];
        if con.mobility_due != Some(now) {
            return;
        }
        if let Some(w) = con.waypoints.get(con.next_waypoint) {
            con.kin = w.kinematics();
            con.next_waypoint += 1;
        } else {
            let mut k = con.kin.advanced_to(now);
            k.position = k.position.clamp(0.0, len);
            let at_end = (k.direction > 0 && k.position >= len - 1e-6)
                || (k.direction < 0 && k.position <= 1e-6);
            if at_end {
                k.direction = -k.direction;
            }
            con.kin = k;
        }
        self.schedule_mobility(c);
    }

    fn on_generate(&mut self, c: u16) {
        let now = self.q.now();
        if !self.generating || now >= self.cfg.duration() {
            return;
        }
        let names = self.cfg.catalog.names();
        let ms = names[self.rng.services.random_range(0..names.len())].clone();
        self.new_request(c, &ms, None);
        let per_consumer = self.cfg.rate / self.cfg.consumers as f64;
        let dt = secs_to_ticks(
            Exp::new(per_consumer)
                .expect("positive rate")
                .sample(&mut self.rng.arrivals),
        );
        if now + dt < self.cfg.duration() {
            self.push(now + dt, Event::Generate { consumer: c });
        }
    }

    fn new_request(&mut self, c: u16, ms: &str, params: Option<Vec<String>>) {
        let now = self.q.now();
        let con = &mut self.consumers[c as usize];
        let seq = con.seq;
        con.seq += 1;
        let params = params.unwrap_or_else(|| vec![format!("c{c}"), seq.to_string()]);
        let [a, b, d] = self.cfg.region.clone();
        let Ok(name) = FeName::new(a, b, d, ms.to_string(), params) else {
            return;
        };
        let id = self.records.len() as u64;
        self.records.push(RequestRecord {
            id,
            name: name.clone(),
            consumer: c,
            created_at: now,
            satisfied_at: None,
            case: None,
            drop_reason: None,
            attempts: 0,
        });
        self.origin.entry(name.clone()).or_insert(c);
        self.consumers[c as usize].pending.insert(name, id);
        self.express(id);
    }

    fn express(&mut self, id: u64) {
        let now = self.q.now();
        let rec = &mut self.records[id as usize];
        rec.attempts += 1;
        let (c, name) = (rec.consumer, rec.name.clone());
        let nonce = self.rng.nonces.random();
        let mut i = Interest::new(name.clone(), nonce);
        if self
            .cfg
            .catalog
            .get(name.microservice())
            .is_some_and(|s| s.protected)
        {
            i.access_rights = Some(compute_hmac(
                &name.without_params(),
                &self.consumers[c as usize].vin,
            ));
        }
        let con = &mut self.consumers[c as usize];
        con.fw.expire(&name, now);
        if let InterestAction::Forward(_) = con.fw.on_interest(APP_FACE, &i, now) {
            con.fw.add_outgoing(&name, ADHOC);
            match self.nearest_edge(NodeId::Consumer(c)) {
                Some(k) => self.send(NodeId::Consumer(c), ADHOC, i, Some(NodeId::Edge(k))),
                None => self.stats.no_coverage += 1,
            }
        }
        let lifetime = secs_to_ticks(self.cfg.pit_lifetime_s);
        self.push(
            now + lifetime,
            Event::Timer {
                node: NodeId::Consumer(c),
                timer: Timer::Retry { request: id },
            },
        );
    }

    fn nearest_edge(&self, node: NodeId) -> Option<u16> {
        let x = self.position(node)?;
        self.edges
            .iter()
            .enumerate()
            .map(|(k, e)| (k as u16, (e.pos - x).abs()))
            .filter(|&(_, d)| d <= self.adhoc.range)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k)
    }

    fn on_retry(&mut self, id: u64) {
        let rec = &self.records[id as usize];
        if rec.is_resolved() {
            return;
        }
        if rec.attempts <= self.cfg.max_retries {
            self.stats.retries += 1;
            self.express(id);
        } else {
            self.drop_request(id, RequestDrop::Timeout);
        }
    }

    fn drop_request(&mut self, id: u64, why: RequestDrop) {
        let now = self.q.now();
        let rec = &mut self.records[id as usize];
        if rec.is_resolved() {
            return;
        }
        rec.drop_reason = Some(why);
        let (c, name) = (rec.consumer, rec.name.clone());
        let con = &mut self.consumers[c as usize];
        con.pending.remove(&name);
        con.fw.consume(&name);
        let mut prefix = id.to_be_bytes().to_vec();
        prefix.push(why as u8);
        self.trace.with_name(
            RecordKind::Dropped,
            now,
            NodeId::Consumer(c).code(),
            &prefix,
            &name,
        );
    }

    /// Drops every pending request for `name`, across consumers.
    fn drop_by_name(&mut self, name: &FeName, why: RequestDrop) {
        let ids: Vec<u64> = self
            .consumers
            .iter()
            .filter_map(|c| c.pending.get(name).copied())
            .collect();
        for id in ids {
            self.drop_request(id, why);
        }
    }

    fn consumer_data(&mut self, c: u16, d: Data) {
        let now = self.q.now();
        let con = &mut self.consumers[c as usize];
        let DataAction::Deliver { faces, .. } = con.fw.on_data(ADHOC, &d, now) else {
            return;
        };
        if !faces.contains(&APP_FACE) {
            return;
        }
        let Some(id) = con.pending.remove(&d.name) else {
            return;
        };
        let case = self.exec_case.get(&d.name).copied();
        let rec = &mut self.records[id as usize];
        rec.satisfied_at = Some(now);
        rec.case = case;
        let mut prefix = id.to_be_bytes().to_vec();
        prefix.push(case.unwrap_or(0));
        self.trace.with_name(
            RecordKind::Satisfied,
            now,
            NodeId::Consumer(c).code(),
            &prefix,
            &d.name,
        );
    }

    // ---- compute hosts (edges and cloud) ----

    fn host_mut(&mut self, node: NodeId) -> &mut Host {
        match node {
            NodeId::Edge(k) => &mut self.edges[k as usize].host,
            NodeId::Cloud => &mut self.cloud.host,
            _ => unreachable!("only edges and the cloud host jobs"),
        }
    }

    fn spec(&self, name: &FeName) -> Option<MicroserviceSpec> {
        self.cfg.catalog.get(name.microservice()).cloned()
    }

    fn start_job(&mut self, node: NodeId, job: Job) {
        let Some(spec) = self.spec(&job.interest.name) else {
            return;
        };
        let now = self.q.now();
        let id = self.next_instance;
        self.next_instance += 1;
        let host = self.host_mut(node);
        if !matches!(host.res.admit(id, spec.demand), Ok(true)) {
            self.violations
                .push(format!("{node:?} started instance {id} without free units"));
            return;
        }
        let inst = Instance::start(
            id,
            &spec,
            job.interest.name.clone(),
            now,
            host.res.speed_milli(),
        );
        let at = inst.completes_at();
        host.running.insert(
            id,
            Running {
                instance: inst,
                job: job.clone(),
            },
        );
        self.push(at, Event::ExecComplete { node, instance: id });
        self.trace.with_name(
            RecordKind::ExecStart,
            now,
            node.code(),
            &id.to_be_bytes(),
            &job.interest.name,
        );
    }

    /// Starts queued jobs in order while the head fits.
    fn drain_queue(&mut self, node: NodeId) {
        loop {
            let alive = {
                let Some(front) = self.host_mut(node).queue.front() else {
                    return;
                };
                let name = front.interest.name.clone();
                self.fw_mut(node)
                    .is_some_and(|f| f.pit_entry(&name).is_some())
            };
            if !alive {
                self.host_mut(node).queue.pop();
                self.stats.stale_jobs += 1;
                continue;
            }
            let front_ms = self
                .host_mut(node)
                .queue
                .front()
                .expect("checked")
                .interest
                .name
                .clone();
            let demand = self.spec(&front_ms).map_or(0, |s| s.demand);
            if !self.host_mut(node).res.can_admit(demand) {
                return;
            }
            let job = self.host_mut(node).queue.pop().expect("checked");
            self.start_job(node, job);
        }
    }

    fn check_work(&mut self, inst: &Instance) {
        if inst.work_done != inst.total_work {
            self.violations.push(format!(
                "instance {} retired {} of {} work",
                inst.id, inst.work_done, inst.total_work
            ));
        }
        if inst.handovers > 0 {
            self.handed_over.push(HandoverOutcome {
                instance: inst.id,
                microservice: inst.microservice.clone(),
                handovers: inst.handovers,
                work_done: inst.work_done,
                total_work: inst.total_work,
            });
        }
    }

    fn host_exec_complete(&mut self, node: NodeId, id: u64) {
        let now = self.q.now();
        let host = self.host_mut(node);
        let Some(mut run) = host.running.remove(&id) else {
            return;
        };
        if host.res.release(id).is_err() {
            self.violations
                .push(format!("{node:?} released unknown instance {id}"));
        }
        run.instance.finish();
        self.check_work(&run.instance);
        let name = run.job.interest.name.clone();
        let case = match run.job.role {
            Role::First => 1,
            Role::Next => 2,
            Role::Cloud => 4,
        };
        self.exec_case.insert(name.clone(), case);
        self.trace.with_name(
            RecordKind::ExecDone,
            now,
            node.code(),
            &id.to_be_bytes(),
            &name,
        );
        let mut d = Data::new(
            name.clone(),
            Payload::ComputedResult {
                result_size: self.cfg.result_size,
            },
        );
        d.adhoc_response = run.job.role != Role::First && run.job.interest.adhoc_response;
        if let (NodeId::Edge(_), true) = (node, d.adhoc_response) {
            // The consumer is heading here; answer over the radio directly.
            self.fw_mut(node).expect("edge").consume(&name);
            self.send(node, ADHOC, d, None);
        } else if let DataAction::Deliver { faces, .. } =
            self.fw_mut(node).expect("host").on_data(APP_FACE, &d, now)
        {
            self.deliver_all(node, faces, &d);
        }
        self.drain_queue(node);
    }

    // ---- edges ----

    fn edge_interest(&mut self, k: u16, face: FaceId, i: Interest) {
        let now = self.q.now();
        let node = NodeId::Edge(k);
        let act = self.edges[k as usize].fw.on_interest(face, &i, now);
        match act {
            InterestAction::CacheHit(d) => self.send(node, face, d, None),
            InterestAction::Forward(_) => {
                self.edges[k as usize].fw.add_outgoing(&i.name, APP_FACE);
                self.arm(node, &i.name);
                if face == ADHOC {
                    self.edge_first(k, i);
                } else {
                    self.edge_plan_next(k, i);
                }
            }
            InterestAction::Aggregated => self.arm(node, &i.name),
            InterestAction::Drop(_) => {}
        }
    }

    fn edge_first(&mut self, k: u16, i: Interest) {
        let Some(spec) = self.spec(&i.name) else {
            self.edges[k as usize].fw.consume(&i.name);
            self.drop_by_name(&i.name, RequestDrop::UnknownService);
            return;
        };
        if spec.protected {
            match verify(&self.edges[k as usize].access, &i, true) {
                Ok(Verdict::Allow) => {}
                Ok(Verdict::UnknownDigest) => {
                    self.edges[k as usize].awaiting_sync.push(i);
                    if !self.edges[k as usize].sync_in_flight {
                        self.start_sync(k);
                    }
                    return;
                }
                Ok(Verdict::NameMismatch) | Err(_) => {
                    self.deny(k, &i.name);
                    return;
                }
            }
        }
        self.edge_admitted(k, i, &spec);
    }

    fn deny(&mut self, k: u16, name: &FeName) {
        self.stats.access_denied += 1;
        self.edges[k as usize].fw.consume(name);
        self.drop_by_name(name, RequestDrop::AccessDenied);
    }

    fn start_sync(&mut self, k: u16) {
        let now = self.q.now();
        let node = NodeId::Edge(k);
        let e = &mut self.edges[k as usize];
        let seq = e.sync_seq;
        e.sync_seq += 1;
        let [a, b, d] = self.cfg.region.clone();
        let name = FeName::new(
            a,
            b,
            d,
            HMM_SYNC.to_string(),
            vec![format!("e{k}"), seq.to_string()],
        )
        .expect("valid sync name");
        let mut i = Interest::new(name.clone(), self.rng.nonces.random());
        i.last_sync_time = Some(e.access.last_sync_time());
        if let InterestAction::Forward(_) = e.fw.on_interest(APP_FACE, &i, now) {
            e.fw.add_outgoing(&name, UPLINK);
            e.sync_in_flight = true;
            self.stats.sync_rounds += 1;
            self.arm(node, &name);
            self.send(node, UPLINK, i, None);
        }
    }

    fn edge_sync_data(&mut self, k: u16, d: Data) {
        let Payload::HmmBatch { records } = &d.payload else {
            return;
        };
        let e = &mut self.edges[k as usize];
        let max_time = records.iter().map(|r| r.created_at).max().unwrap_or(0);
        apply_batch(&mut e.access, records, max_time);
        if d.more_access_rights {
            self.start_sync(k);
            return;
        }
        e.sync_in_flight = false;
        let waiting = std::mem::take(&mut e.awaiting_sync);
        for i in waiting {
            if self.edges[k as usize].fw.pit_entry(&i.name).is_none() {
                continue;
            }
            match verify(&self.edges[k as usize].access, &i, true) {
                Ok(Verdict::Allow) => {
                    if let Some(spec) = self.spec(&i.name) {
                        self.edge_admitted(k, i, &spec);
                    }
                }
                _ => self.deny(k, &i.name),
            }
        }
    }

    fn edge_admitted(&mut self, k: u16, i: Interest, spec: &MicroserviceSpec) {
        let now = self.q.now();
        let node = NodeId::Edge(k);
        if self.cfg.mode == Mode::CloudOnly {
            self.edges[k as usize].fw.add_outgoing(&i.name, UPLINK);
            self.decision(node, 4, UPLINK, &i.name);
            self.send(node, UPLINK, i, None);
            return;
        }
        let origin = self.origin.get(&i.name).copied().unwrap_or(0);
        let kin = self.consumers[origin as usize].kin;
        let e = &self.edges[k as usize];
        let (tir, side) =
            time_in_range_on_road(&kin, e.pos, self.adhoc.range, self.cfg.road_length_m, now);
        let ctx = EdgeContext {
            resources: &e.host.res,
            queue_wait: e.host.queue_wait(&self.cfg.catalog),
            queue_len: e.host.queue.len(),
            holds_code: e.codes.contains(spec.microservice()),
            time_in_range: tir,
            offload_margin: secs_to_ticks(self.cfg.offload_margin_s),
        };
        let decision = edge_decide(&ctx, spec);
        match decision {
            EdgeDecision::ExecuteLocal => {
                self.stats.edge_local += 1;
                self.decision(node, 1, APP_FACE, &i.name);
                self.start_job(
                    node,
                    Job {
                        interest: i,
                        role: Role::First,
                    },
                );
            }
            EdgeDecision::Offload { .. } => {
                self.stats.edge_offloads += 1;
                let next = k as i64 + side as i64;
                let next = (next >= 0 && (next as usize) < self.edges.len()).then_some(next as u16);
                let off = offload_interest(&i, decision, next);
                let fw = &mut self.edges[k as usize].fw;
                if let InterestAction::Forward(faces) = fw.on_interest(APP_FACE, &off, now) {
                    if faces.contains(&UPLINK) {
                        fw.add_outgoing(&off.name, UPLINK);
                        self.arm(node, &off.name);
                        self.decision(node, 2, UPLINK, &off.name);
                        self.send(node, UPLINK, off, None);
                    }
                }
            }
        }
    }

    /// Plan of an edge receiving an offloaded request from the bridge.
    fn edge_plan_next(&mut self, k: u16, i: Interest) {
        let now = self.q.now();
        let node = NodeId::Edge(k);
        let Some(spec) = self.spec(&i.name) else {
            self.edges[k as usize].fw.consume(&i.name);
            return;
        };
        let e = &self.edges[k as usize];
        let plan = next_edge_on_offload(
            &e.host.res,
            e.host.queue.len(),
            e.host.queue.is_full(),
            e.codes.contains(spec.microservice()),
            &spec,
            &i,
        );
        match plan {
            NextEdgePlan::Execute => {
                self.stats.next_executed += 1;
                self.decision(node, 2, APP_FACE, &i.name);
                self.start_job(
                    node,
                    Job {
                        interest: i,
                        role: Role::Next,
                    },
                );
            }
            NextEdgePlan::Queue => {
                self.stats.next_queued += 1;
                self.decision(node, 2, APP_FACE, &i.name);
                let job = Job {
                    interest: i,
                    role: Role::Next,
                };
                if self.edges[k as usize].host.queue.push(job).is_err() {
                    self.stats.queue_overflow += 1;
                }
            }
            NextEdgePlan::FetchCode => {
                self.stats.code_fetches += 1;
                let name = i.name.clone();
                let mut fetch = Data::new(
                    name.clone(),
                    Payload::MicroserviceCode {
                        microservice: spec.microservice().to_string(),
                        code_size: 0,
                        instance: None,
                    },
                );
                fetch.microservice_fetch = true;
                let e = &mut self.edges[k as usize];
                e.awaiting_code.insert(
                    name.clone(),
                    Job {
                        interest: i,
                        role: Role::Next,
                    },
                );
                if let DataAction::Deliver { faces, .. } = e.fw.on_data(APP_FACE, &fetch, now) {
                    self.arm(node, &name);
                    self.deliver_all(node, faces, &fetch);
                }
            }
            NextEdgePlan::ToCloud(reason) => {
                match reason {
                    CloudReason::CodeUnavailable => self.stats.to_cloud_code += 1,
                    CloudReason::QueueFull => self.stats.to_cloud_queue += 1,
                }
                // Bounced back to the bridge, which sends it on to the cloud.
                let mut b = i;
                b.nonce = self.rng.nonces.random();
                let fw = &mut self.edges[k as usize].fw;
                if let InterestAction::Forward(faces) = fw.on_interest(APP_FACE, &b, now) {
                    if faces.contains(&UPLINK) {
                        fw.add_outgoing(&b.name, UPLINK);
                        self.decision(node, 4, UPLINK, &b.name);
                        self.send(node, UPLINK, b, None);
                    }
                }
            }
        }
    }

    fn edge_data(&mut self, k: u16, face: FaceId, d: Data) {
        if face != UPLINK {
            return;
        }
        let now = self.q.now();
        let node = NodeId::Edge(k);
        match &d.payload {
            Payload::ComputedResult { .. } => {
                let fw = &mut self.edges[k as usize].fw;
                let ours = fw
                    .pit_entry(&d.name)
                    .is_some_and(|e| e.incoming.contains(&ADHOC));
                if d.adhoc_response && !ours {
                    fw.consume(&d.name);
                    self.send(node, ADHOC, d, None);
                    return;
                }
                if let DataAction::Deliver { faces, .. } = fw.on_data(UPLINK, &d, now) {
                    self.deliver_all(node, faces, &d);
                }
            }
            Payload::MicroserviceCode { microservice, .. } => {
                let microservice = microservice.clone();
                let fw = &mut self.edges[k as usize].fw;
                let DataAction::Deliver { faces, consumed } = fw.on_data(UPLINK, &d, now) else {
                    return;
                };
                if !consumed {
                    self.arm(node, &d.name);
                }
                if !faces.contains(&APP_FACE) {
                    self.deliver_all(node, faces, &d);
                } else if d.microservice_fetch {
                    self.edge_serve_code(k, &d.name, &microservice);
                } else {
                    self.edge_code_arrived(k, &d.name, &microservice);
                }
            }
            Payload::HmmBatch { .. } => {
                let fw = &mut self.edges[k as usize].fw;
                if let DataAction::Deliver { faces, .. } = fw.on_data(UPLINK, &d, now) {
                    if faces.contains(&APP_FACE) {
                        self.edge_sync_data(k, d);
                    }
                }
            }
            _ => {}
        }
    }

    /// The offloading edge answers a code fetch along the swapped PIT entry.
    fn edge_serve_code(&mut self, k: u16, name: &FeName, ms: &str) {
        let now = self.q.now();
        let node = NodeId::Edge(k);
        if !self.edges[k as usize].codes.contains(ms) {
            return;
        }
        let Some(spec) = self.cfg.catalog.get(ms).cloned() else {
            return;
        };
        let code = Data::new(
            name.clone(),
            Payload::MicroserviceCode {
                microservice: ms.to_string(),
                code_size: spec.code_size,
                instance: None,
            },
        );
        if let DataAction::Deliver { faces, .. } =
            self.edges[k as usize].fw.on_data(APP_FACE, &code, now)
        {
            self.stats.code_served += 1;
            self.deliver_all(node, faces, &code);
        }
    }

    fn edge_code_arrived(&mut self, k: u16, name: &FeName, ms: &str) {
        let e = &mut self.edges[k as usize];
        e.codes.insert(ms.to_string());
        if let Some(job) = e.awaiting_code.remove(name) {
            self.edge_plan_next(k, job.interest);
        }
    }

    // ---- bridge ----

    fn is_edge_face(&self, f: FaceId) -> bool {
        f.0 >= 2 && ((f.0 - 2) as usize) < self.edges.len()
    }

    fn cloud_face(&self) -> FaceId {
        FaceId(3 + self.edges.len() as u16)
    }

    fn bridge_out(&mut self, face: FaceId, i: Interest, case: u8) {
        self.bridge.fw.add_outgoing(&i.name, face);
        self.decision(NodeId::Bridge, case, face, &i.name);
        self.send(NodeId::Bridge, face, i, None);
    }

    fn bridge_interest(&mut self, face: FaceId, i: Interest) {
        let now = self.q.now();
        let node = NodeId::Bridge;
        if !(i.offloading && self.is_edge_face(face)) {
            match self.bridge.fw.on_interest(face, &i, now) {
                InterestAction::Forward(faces) => {
                    let out = faces[0];
                    self.bridge.fw.add_outgoing(&i.name, out);
                    self.arm(node, &i.name);
                    self.send(node, out, i, None);
                }
                InterestAction::CacheHit(d) => self.send(node, face, d, None),
                InterestAction::Aggregated => self.arm(node, &i.name),
                InterestAction::Drop(_) => {}
            }
            return;
        }
        let bounce = self
            .bridge
            .fw
            .pit_entry(&i.name)
            .is_some_and(|e| e.outgoing.contains(&face));
        match self.bridge.fw.on_interest(face, &i, now) {
            InterestAction::Forward(_) => {}
            InterestAction::CacheHit(d) => {
                self.send(node, face, d, None);
                return;
            }
            InterestAction::Aggregated => {
                self.arm(node, &i.name);
                return;
            }
            InterestAction::Drop(_) => return,
        }
        self.arm(node, &i.name);
        let next = i
            .next_edge
            .filter(|&n| (n as usize) < self.edges.len())
            .map(|n| FaceId(2 + n));
        let cloud = self.cloud_face();
        if bounce {
            self.stats.bridge_bounces += 1;
            self.stats.bridge_to_cloud += 1;
            self.bridge.vec_fib.remove(&i.name);
            if i.adhoc_response {
                if let Some(n) = next {
                    self.bridge.adhoc_targets.insert(i.name.clone(), n);
                }
            }
            self.bridge_out(cloud, i, 4);
            return;
        }
        let next = next.filter(|&n| n != face);
        let b = &mut self.bridge;
        let decided = bridge_decide(
            &mut b.vec_fib,
            &mut b.vfc_fib,
            &b.policy,
            &i.name,
            next,
            now,
        );
        if i.adhoc_response && !matches!(decided.decision, BridgeDecision::ToNextEdge(_)) {
            if let Some(n) = next {
                b.adhoc_targets.insert(i.name.clone(), n);
            }
        }
        match decided.decision {
            BridgeDecision::ToNextEdge(f) => {
                self.stats.bridge_to_edge += 1;
                let at = now + self.bridge.policy.vec_fib_lifetime;
                self.push(
                    at,
                    Event::Timer {
                        node,
                        timer: Timer::VecFibPurge,
                    },
                );
                self.bridge_out(f, i, 2);
            }
            BridgeDecision::ToFog(f) => {
                self.stats.bridge_to_fog += 1;
                self.bridge_out(f, i, 3);
            }
            BridgeDecision::ToCloud => {
                self.stats.bridge_to_cloud += 1;
                self.bridge_out(cloud, i, 4);
            }
        }
    }

    fn bridge_data(&mut self, face: FaceId, d: Data) {
        let now = self.q.now();
        let node = NodeId::Bridge;
        if matches!(d.payload, Payload::ComputedResult { .. }) {
            let b = &mut self.bridge;
            let target = b.adhoc_targets.remove(&d.name);
            if let BridgeDataAction::ToNextEdge(f) =
                bridge_on_data(&mut b.vec_fib, &mut b.vfc_fib, &d, target)
            {
                b.fw.consume(&d.name);
                self.send(node, f, d, None);
                return;
            }
        }
        if let DataAction::Deliver { faces, consumed } = self.bridge.fw.on_data(face, &d, now) {
            if !consumed {
                self.arm(node, &d.name);
            }
            self.deliver_all(node, faces, &d);
        }
    }

    // ---- fog gateway ----

    fn vfg_interest(&mut self, face: FaceId, from: NodeId, i: Interest) {
        let now = self.q.now();
        if face == ADHOC {
            if let NodeId::Parked(p) = from {
                self.ticket_zone(p, i);
            }
            return;
        }
        let Some(v) = self.vfg.as_mut() else { return };
        match v.fw.on_interest(face, &i, now) {
            InterestAction::Forward(_) => {
                v.fw.add_outgoing(&i.name, APP_FACE);
                self.arm(NodeId::Vfg, &i.name);
                self.vfg_dispatch(i);
            }
            InterestAction::CacheHit(d) => self.send(NodeId::Vfg, face, d, None),
            InterestAction::Aggregated => self.arm(NodeId::Vfg, &i.name),
            InterestAction::Drop(_) => {}
        }
    }

    fn vfg_dispatch(&mut self, i: Interest) {
        let now = self.q.now();
        let Some(spec) = self.spec(&i.name) else {
            return;
        };
        let v = self.vfg.as_mut().expect("fog present");
        let work = spec.work();
        let Some(vin) = v.rat.dispatch(spec.demand, work, now) else {
            self.vfg_to_cloud(i);
            return;
        };
        let id = self.next_instance;
        self.next_instance += 1;
        let need_code = !v.rat.holds_code(&vin, spec.microservice());
        let task = FogTask {
            instance: id,
            vin: vin.clone(),
            microservice: spec.microservice().to_string(),
            demand: spec.demand,
            work,
        };
        if v.rat.reserve(&vin, task).is_err() {
            self.violations
                .push(format!("fog gateway picked {vin} but could not reserve"));
            self.vfg_to_cloud(i);
            return;
        }
        v.by_name.entry(i.name.clone()).or_default().insert(id);
        v.tasks.insert(id, i.clone());
        let d = Data::new(
            i.name.clone(),
            Payload::MicroserviceCode {
                microservice: spec.microservice().to_string(),
                code_size: if need_code { spec.code_size } else { 0 },
                instance: Some(InstanceState {
                    instance_id: id,
                    remaining_work: work,
                }),
            },
        );
        self.stats.fog_dispatches += 1;
        self.decision(NodeId::Vfg, 3, ADHOC, &i.name);
        let p = self.parked_by_vin[&vin];
        self.send(NodeId::Vfg, ADHOC, d, Some(NodeId::Parked(p)));
    }

    fn vfg_to_cloud(&mut self, i: Interest) {
        let now = self.q.now();
        self.stats.fog_to_cloud += 1;
        let v = self.vfg.as_mut().expect("fog present");
        if let InterestAction::Forward(faces) = v.fw.on_interest(APP_FACE, &i, now) {
            if faces.contains(&VFG_CLOUD) {
                v.fw.add_outgoing(&i.name, VFG_CLOUD);
                self.arm(NodeId::Vfg, &i.name);
                self.decision(NodeId::Vfg, 4, VFG_CLOUD, &i.name);
                self.send(NodeId::Vfg, VFG_CLOUD, i, None);
            }
        }
    }

    fn vfg_data(&mut self, face: FaceId, from: NodeId, d: Data) {
        let now = self.q.now();
        let node = NodeId::Vfg;
        if face == ADHOC {
            let NodeId::Parked(p) = from else { return };
            if !matches!(d.payload, Payload::ComputedResult { .. }) {
                return;
            }
            let sender = self.parked[p as usize].vin.clone();
            let v = self.vfg.as_mut().expect("fog present");
            let Some(ids) = v.by_name.get_mut(&d.name) else {
                return;
            };
            let Some(id) = ids
                .iter()
                .copied()
                .find(|id| v.rat.task(*id).is_some_and(|t| t.vin == sender))
            else {
                return;
            };
            ids.remove(&id);
            if ids.is_empty() {
                v.by_name.remove(&d.name);
            }
            let _ = v.rat.complete(id);
            let Some(i) = v.tasks.remove(&id) else { return };
            let mut out = Data::new(d.name.clone(), d.payload.clone());
            out.adhoc_response = i.adhoc_response;
            if let DataAction::Deliver { faces, .. } = v.fw.on_data(APP_FACE, &out, now) {
                self.deliver_all(node, faces, &out);
            }
            return;
        }
        let v = self.vfg.as_mut().expect("fog present");
        if let DataAction::Deliver { faces, .. } = v.fw.on_data(face, &d, now) {
            self.deliver_all(node, faces, &d);
        }
    }

    /// Admission and departure messages bypass the forwarder.
    fn ticket_zone(&mut self, p: u16, i: Interest) {
        let now = self.q.now();
        let Some(vin) = i.name.params().first().cloned() else {
            return;
        };
        let v = self.vfg.as_mut().expect("fog present");
        match i.name.microservice() {
            VFG_ADMISSION => {
                let Some(info) = &i.admission_info else {
                    return;
                };
                let slot = v.rat.admit_vehicle(&vin, info, now).ok();
                if slot.is_none() {
                    self.stats.lot_rejections += 1;
                }
                let d = Data::new(i.name.clone(), Payload::SlotAssignment { vin, slot });
                self.send(NodeId::Vfg, ADHOC, d, Some(NodeId::Parked(p)));
            }
            VFG_DEPARTURE => {
                let Ok(plan) = v.rat.handover(&vin, now) else {
                    return;
                };
                let mut assignments = Vec::new();
                let mut orphans = Vec::new();
                for (task, target) in plan.moves {
                    match target {
                        Some(t) => assignments.push((task.instance, t)),
                        None => {
                            let i = v.tasks.remove(&task.instance);
                            for ids in v.by_name.values_mut() {
                                ids.remove(&task.instance);
                            }
                            v.by_name.retain(|_, ids| !ids.is_empty());
                            orphans.extend(i);
                        }
                    }
                }
                self.stats.handovers += assignments.len() as u64;
                self.stats.handovers_to_cloud += orphans.len() as u64;
                let d = Data::new(i.name.clone(), Payload::HandoverTarget { vin, assignments });
                self.send(NodeId::Vfg, ADHOC, d, None);
                for i in orphans {
                    self.vfg_to_cloud(i);
                }
            }
            _ => {}
        }
    }

    // ---- parked vehicles ----

    fn lot_name(&self, ms: &str, vin: &str) -> FeName {
        let [a, b, d] = self.cfg.region.clone();
        FeName::new(a, b, d, ms.to_string(), vec![vin.to_string()]).expect("valid lot name")
    }

    fn parked_mobility(&mut self, p: u16) {
        let node = NodeId::Parked(p);
        let pv = &self.parked[p as usize];
        match pv.state {
            LotState::Arriving => {
                let mut i = Interest::new(
                    self.lot_name(VFG_ADMISSION, &pv.vin),
                    self.rng.nonces.random(),
                );
                i.admission_info = Some(AdmissionInfo {
                    estimated_parking_time: pv.parking,
                    available_resources: pv.res.available(),
                });
                self.send(node, ADHOC, i, Some(NodeId::Vfg));
            }
            LotState::Parked => {
                let i = Interest::new(
                    self.lot_name(VFG_DEPARTURE, &pv.vin),
                    self.rng.nonces.random(),
                );
                self.parked[p as usize].state = LotState::Departing;
                self.send(node, ADHOC, i, Some(NodeId::Vfg));
            }
            LotState::Departing | LotState::Gone => {}
        }
    }

    fn parked_data(&mut self, p: u16, d: Data) {
        let now = self.q.now();
        let node = NodeId::Parked(p);
        match d.payload {
            Payload::SlotAssignment { vin, slot } => {
                let pv = &mut self.parked[p as usize];
                if vin != pv.vin || pv.state != LotState::Arriving {
                    return;
                }
                match slot {
                    Some(_) => {
                        pv.state = LotState::Parked;
                        let at = now + pv.stays_for;
                        self.push(at, Event::Mobility { node });
                    }
                    None => pv.state = LotState::Gone,
                }
            }
            Payload::HandoverTarget { vin, assignments } => {
                if vin != self.parked[p as usize].vin {
                    return;
                }
                self.parked_handover(p, assignments);
            }
            Payload::MicroserviceCode {
                microservice,
                instance: Some(state),
                ..
            } => self.parked_task(p, &d.name, &microservice, state),
            _ => {}
        }
    }

    fn parked_handover(&mut self, p: u16, assignments: Vec<(u64, String)>) {
        let now = self.q.now();
        let assigned: BTreeMap<u64, String> = assignments.into_iter().collect();
        let pv = &mut self.parked[p as usize];
        if pv.handed_over {
            return;
        }
        pv.handed_over = true;
        let running = std::mem::take(&mut pv.running);
        for id in running.keys() {
            let _ = pv.res.release(*id);
        }
        pv.forward = assigned
            .iter()
            .filter(|(id, _)| !running.contains_key(id))
            .map(|(id, t)| (*id, t.clone()))
            .collect();
        for (id, inst) in running {
            match assigned.get(&id) {
                Some(target) => {
                    let snap = snapshot_instance(&inst, now);
                    self.trace.with_name(
                        RecordKind::Handover,
                        now,
                        NodeId::Parked(p).code(),
                        &id.to_be_bytes(),
                        &snap.request_name,
                    );
                    self.send_instance(p, snap, target);
                }
                None => self.stats.lost_instances += 1,
            }
        }
        if self.parked[p as usize].forward.is_empty() {
            self.parked[p as usize].state = LotState::Gone;
        }
    }

    /// Ships an instance snapshot with its code to another parked vehicle.
    fn send_instance(&mut self, p: u16, snap: Instance, target: &str) {
        let Some(&t) = self.parked_by_vin.get(target) else {
            self.stats.lost_instances += 1;
            return;
        };
        let code_size = self
            .cfg
            .catalog
            .get(&snap.microservice)
            .map_or(0, |s| s.code_size);
        let d = Data::new(
            snap.request_name.clone(),
            Payload::MicroserviceCode {
                microservice: snap.microservice.clone(),
                code_size,
                instance: Some(InstanceState {
                    instance_id: snap.id,
                    remaining_work: snap.remaining_work,
                }),
            },
        );
        self.transit.insert(snap.id, snap);
        self.send(NodeId::Parked(p), ADHOC, d, Some(NodeId::Parked(t)));
    }

    fn parked_task(&mut self, p: u16, name: &FeName, ms: &str, state: InstanceState) {
        let now = self.q.now();
        let node = NodeId::Parked(p);
        let Some(spec) = self.cfg.catalog.get(ms).cloned() else {
            return;
        };
        let id = state.instance_id;
        let pv = &mut self.parked[p as usize];
        if pv.state == LotState::Gone {
            self.transit.remove(&id);
            self.stats.lost_instances += 1;
            return;
        }
        let mut inst = self
            .transit
            .remove(&id)
            .unwrap_or_else(|| Instance::start(id, &spec, name.clone(), now, pv.res.speed_milli()));
        if inst.remaining_work != state.remaining_work {
            self.violations.push(format!(
                "instance {id} arrived with mismatched remaining work"
            ));
        }
        if pv.handed_over {
            match pv.forward.remove(&id) {
                Some(target) => {
                    inst.handovers += 1;
                    if pv.forward.is_empty() {
                        pv.state = LotState::Gone;
                    }
                    self.send_instance(p, inst, &target);
                }
                None => self.stats.lost_instances += 1,
            }
            return;
        }
        if !matches!(pv.res.admit(id, spec.demand), Ok(true)) {
            self.violations
                .push(format!("{} could not host reserved instance {id}", pv.vin));
            return;
        }
        let at = inst.resume(now, pv.res.speed_milli());
        pv.running.insert(id, inst);
        self.push(at, Event::ExecComplete { node, instance: id });
        self.trace.with_name(
            RecordKind::ExecStart,
            now,
            node.code(),
            &id.to_be_bytes(),
            name,
        );
    }

    fn parked_exec_complete(&mut self, p: u16, id: u64) {
        let now = self.q.now();
        let node = NodeId::Parked(p);
        let pv = &mut self.parked[p as usize];
        let Some(mut inst) = pv.running.remove(&id) else {
            return;
        };
        if inst.completes_at() != now {
            // A stale completion from before a handover back to this host.
            pv.running.insert(id, inst);
            return;
        }
        let _ = pv.res.release(id);
        inst.finish();
        self.check_work(&inst);
        self.exec_case.insert(inst.request_name.clone(), 3);
        self.trace.with_name(
            RecordKind::ExecDone,
            now,
            node.code(),
            &id.to_be_bytes(),
            &inst.request_name,
        );
        let d = Data::new(
            inst.request_name.clone(),
            Payload::ComputedResult {
                result_size: self.cfg.result_size,
            },
        );
        self.send(node, ADHOC, d, Some(NodeId::Vfg));
    }

    // ---- cloud ----

    fn cloud_interest(&mut self, face: FaceId, i: Interest) {
        let now = self.q.now();
        let node = NodeId::Cloud;
        match self.cloud.fw.on_interest(face, &i, now) {
            InterestAction::Forward(_) => {}
            InterestAction::CacheHit(d) => {
                self.send(node, face, d, None);
                return;
            }
            InterestAction::Aggregated => {
                self.arm(node, &i.name);
                return;
            }
            InterestAction::Drop(_) => return,
        }
        self.cloud.fw.add_outgoing(&i.name, APP_FACE);
        self.arm(node, &i.name);
        if i.name.microservice() == HMM_SYNC {
            let batch = sync_step(
                &self.cloud.access,
                i.last_sync_time.unwrap_or(0),
                self.cfg.batch_limit,
            );
            let mut d = Data::new(
                i.name.clone(),
                Payload::HmmBatch {
                    records: batch.records,
                },
            );
            d.more_access_rights = batch.more;
            if let DataAction::Deliver { faces, .. } = self.cloud.fw.on_data(APP_FACE, &d, now) {
                self.deliver_all(node, faces, &d);
            }
            return;
        }
        let Some(spec) = self.spec(&i.name) else {
            self.cloud.fw.consume(&i.name);
            return;
        };
        let job = Job {
            interest: i,
            role: Role::Cloud,
        };
        let host = &mut self.cloud.host;
        if host.queue.is_empty() && host.res.can_admit(spec.demand) {
            self.start_job(node, job);
        } else if host.queue.push(job.clone()).is_err() {
            self.stats.queue_overflow += 1;
            self.cloud.fw.consume(&job.interest.name);
        }
    }

    // ---- end of run ----

    fn check_invariants(&mut self) {
        let mut v = Vec::new();
        let hosts = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, e)| (format!("edge {k}"), &e.host))
            .chain(std::iter::once(("cloud".to_string(), &self.cloud.host)));
        for (who, h) in hosts {
            if h.res.available() != h.res.initial() || !h.res.is_conserved() {
                v.push(format!(
                    "{who}: {} of {} units free",
                    h.res.available(),
                    h.res.initial()
                ));
            }
            if !h.running.is_empty() || !h.queue.is_empty() {
                v.push(format!("{who}: work left over"));
            }
        }
        for pv in &self.parked {
            if pv.res.available() != pv.res.initial() || !pv.running.is_empty() {
                v.push(format!(
                    "vehicle {}: {} of {} units free",
                    pv.vin,
                    pv.res.available(),
                    pv.res.initial()
                ));
            }
        }
        if let Some(g) = &self.vfg {
            if !g.rat.is_consistent() || g.rat.entries().any(|e| !e.running.is_empty()) {
                v.push("fog resource table out of balance".to_string());
            }
            if !g.tasks.is_empty() {
                v.push(format!(
                    "fog gateway tracks {} unfinished tasks",
                    g.tasks.len()
                ));
            }
        }
        if !self.bridge.vfc_fib.is_consistent() || self.bridge.vfc_fib.outstanding() != 0 {
            v.push("VFC-FIB out of balance".to_string());
        }
        let pits = self
            .edges
            .iter()
            .map(|e| &e.fw)
            .chain([&self.bridge.fw, &self.cloud.fw])
            .chain(self.vfg.as_ref().map(|g| &g.fw))
            .chain(self.consumers.iter().map(|c| &c.fw));
        let leftover: usize = pits.map(Forwarder::pit_len).sum();
        if leftover != 0 {
            v.push(format!("{leftover} PIT entries left"));
        }
        if !self.transit.is_empty() {
            v.push(format!("{} instances lost in transit", self.transit.len()));
        }
        let resolved = self.records.iter().filter(|r| r.is_resolved()).count();
        let both = self
            .records
            .iter()
            .filter(|r| r.satisfied_at.is_some() && r.drop_reason.is_some())
            .count();
        if resolved != self.records.len() || both != 0 {
            v.push("request accounting does not add up".to_string());
        }
        self.violations.extend(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::read_trace;

    fn quiet(mode: Mode) -> ScenarioConfig {
        ScenarioConfig {
            mode,
            duration_s: 5.0,
            consumers: 2,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn node_codes_round_trip() {
        for n in [
            NodeId::Consumer(7),
            NodeId::Edge(2),
            NodeId::Bridge,
            NodeId::Vfg,
            NodeId::Parked(3),
            NodeId::Cloud,
        ] {
            assert_eq!(NodeId::from_code(n.code()), Some(n));
        }
        assert_eq!(NodeId::from_code(0x7000), None);
    }

    #[test]
    fn scripted_request_is_satisfied_locally() {
        let mut w = World::new(quiet(Mode::FoggyEdge)).unwrap();
        w.disable_generation();
        w.set_consumer_kinematics(0, Kinematics::new(200.0, 0.0, 1, 0));
        w.script_request(10, 0, "traffic_status", None);
        assert!(w.run().is_empty(), "{:?}", w.violations());
        let r = &w.records()[0];
        assert_eq!(r.case, Some(1));
        assert!(r.satisfied_at.is_some());
    }

    #[test]
    fn protected_request_waits_for_sync() {
        let mut w = World::new(quiet(Mode::EdgeOnly)).unwrap();
        w.disable_generation();
        w.set_consumer_kinematics(0, Kinematics::new(200.0, 0.0, 1, 0));
        w.script_request(10, 0, "route_planner", None);
        assert!(w.run().is_empty(), "{:?}", w.violations());
        assert_eq!(w.stats().sync_rounds, 1);
        assert!(w.records()[0].satisfied_at.is_some());
        assert!(!w.edge_store(0).is_empty());
    }

    #[test]
    fn cloud_only_never_executes_at_the_edge() {
        let mut w = World::new(quiet(Mode::CloudOnly)).unwrap();
        w.disable_generation();
        w.set_consumer_kinematics(1, Kinematics::new(600.0, 0.0, 1, 0));
        w.script_request(10, 1, "hazard_detection", None);
        assert!(w.run().is_empty(), "{:?}", w.violations());
        assert_eq!(w.records()[0].case, Some(4));
    }

    #[test]
    fn generated_run_is_balanced_and_replayable() {
        let run = || {
            let mut w = World::new(quiet(Mode::FoggyEdge)).unwrap();
            assert!(w.run().is_empty(), "{:?}", w.violations());
            w.trace().bytes().to_vec()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(read_trace(&a).unwrap().len() > 10);
    }
}
