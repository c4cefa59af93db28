//! Microservice catalog, per-node resource accounting and instance state.
//!
//! Work is measured in milli-ticks of reference-speed computation so that
//! partial instances can be split across hosts without rounding drift: a node
//! with `speed_milli = 1000` retires 1000 units of work per tick.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::naming::FeName;
use crate::time::{secs_to_ticks, Ticks};

/// Speed of the reference node, in thousandths.
pub const REFERENCE_SPEED: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComputeError {
    #[error("release of lease {0} that is not held")]
    DoubleRelease(u64),
    #[error("lease {0} already held")]
    DuplicateLease(u64),
    #[error("invalid microservice spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroserviceSpec {
    /// Catalog key, without parameters.
    pub name: FeName,
    pub demand: u32,
    pub base_duration: Ticks,
    pub code_size: u32,
    pub protected: bool,
    pub freshness: Ticks,
}

impl MicroserviceSpec {
    pub fn validate(&self) -> Result<(), ComputeError> {
        if !self.name.params().is_empty() {
            return Err(ComputeError::InvalidSpec(format!(
                "{} has parameters",
                self.name
            )));
        }
        if self.demand == 0 {
            return Err(ComputeError::InvalidSpec(format!(
                "{} has zero demand",
                self.name
            )));
        }
        if self.base_duration == 0 {
            return Err(ComputeError::InvalidSpec(format!(
                "{} has zero duration",
                self.name
            )));
        }
        Ok(())
    }

    /// Total work of one execution in milli-ticks.
    pub fn work(&self) -> u64 {
        self.base_duration * REFERENCE_SPEED as u64
    }

    pub fn microservice(&self) -> &str {
        self.name.microservice()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    specs: BTreeMap<String, MicroserviceSpec>,
}

pub const DEFAULT_MICROSERVICES: [&str; 5] = [
    "traffic_status",
    "parking_finder",
    "route_planner",
    "hazard_detection",
    "video_analytics",
];

impl Catalog {
    pub fn new(specs: Vec<MicroserviceSpec>) -> Result<Self, ComputeError> {
        let mut out = BTreeMap::new();
        for s in specs {
            s.validate()?;
            let key = s.microservice().to_string();
            if out.insert(key.clone(), s).is_some() {
                return Err(ComputeError::InvalidSpec(format!(
                    "duplicate microservice {key}"
                )));
            }
        }
        Ok(Catalog { specs: out })
    }

    /// Five services spanning light to heavy requirements, served in the
    /// given region.
    pub fn default_for(country: &str, city: &str, district: &str) -> Self {
        let demands = [50, 100, 200, 350, 500];
        let durations = [0.05, 0.1, 0.2, 0.4, 0.8];
        let code_kb = [20, 50, 100, 200, 400];
        let protected = [false, false, true, false, true];
        let specs = (0..5)
            .map(|k| MicroserviceSpec {
                name: FeName::new(
                    country,
                    city,
                    district,
                    DEFAULT_MICROSERVICES[k],
                    Vec::new(),
                )
                .expect("default catalog names are valid"),
                demand: demands[k],
                base_duration: secs_to_ticks(durations[k]),
                code_size: code_kb[k] * 1024,
                protected: protected[k],
                freshness: secs_to_ticks(1.0),
            })
            .collect();
        Catalog::new(specs).expect("default catalog is valid")
    }

    pub fn get(&self, microservice: &str) -> Option<&MicroserviceSpec> {
        self.specs.get(microservice)
    }

    pub fn get_mut(&mut self, microservice: &str) -> Option<&mut MicroserviceSpec> {
        self.specs.get_mut(microservice)
    }

    pub fn specs(&self) -> impl Iterator<Item = &MicroserviceSpec> {
        self.specs.values()
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Converts a dimensionless speed factor to thousandths.
pub fn speed_milli(factor: f64) -> u32 {
    (factor * REFERENCE_SPEED as f64).round().max(1.0) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeResources {
    initial: u32,
    available: u32,
    speed_milli: u32,
    leases: BTreeMap<u64, u32>,
}

impl NodeResources {
    pub fn new(initial: u32, speed_factor: f64) -> Self {
        NodeResources {
            initial,
            available: initial,
            speed_milli: speed_milli(speed_factor),
            leases: BTreeMap::new(),
        }
    }

    pub fn initial(&self) -> u32 {
        self.initial
    }

    pub fn available(&self) -> u32 {
        self.available
    }

    pub fn speed_milli(&self) -> u32 {
        self.speed_milli
    }

    pub fn capacity_pct(&self) -> f64 {
        if self.initial == 0 {
            0.0
        } else {
            self.available as f64 / self.initial as f64
        }
    }

    pub fn can_admit(&self, demand: u32) -> bool {
        self.available >= demand
    }

    /// Reserves `demand` units under lease `id`. Returns false, leaving the
    /// node untouched, when not enough units are free.
    pub fn admit(&mut self, id: u64, demand: u32) -> Result<bool, ComputeError> {
        if self.leases.contains_key(&id) {
            return Err(ComputeError::DuplicateLease(id));
        }
        if self.available < demand {
            return Ok(false);
        }
        self.available -= demand;
        self.leases.insert(id, demand);
        Ok(true)
    }

    pub fn release(&mut self, id: u64) -> Result<u32, ComputeError> {
        let demand = self
            .leases
            .remove(&id)
            .ok_or(ComputeError::DoubleRelease(id))?;
        self.available += demand;
        debug_assert!(self.available <= self.initial);
        Ok(demand)
    }

    pub fn leased(&self) -> u32 {
        self.leases.values().sum()
    }

    pub fn leases(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.leases.iter().map(|(&k, &v)| (k, v))
    }

    /// `available + held == initial`.
    pub fn is_conserved(&self) -> bool {
        self.available as u64 + self.leased() as u64 == self.initial as u64
    }
}

/// Ticks needed to retire `work` milli-ticks at `speed_milli`, rounded up.
pub fn ticks_for_work(work: u64, speed_milli: u32) -> Ticks {
    work.div_ceil(speed_milli as u64)
}

pub fn exec_duration(s: &MicroserviceSpec, r: &NodeResources) -> Ticks {
    ticks_for_work(s.work(), r.speed_milli())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: u64,
    pub microservice: String,
    pub demand: u32,
    pub request_name: FeName,
    pub started_at: Ticks,
    /// Work still to do, in milli-ticks.
    pub remaining_work: u64,
    pub total_work: u64,
    /// Work retired on every host so far.
    pub work_done: u64,
    pub handovers: u32,
    resumed_at: Ticks,
    speed_milli: u32,
}

impl Instance {
    pub fn start(
        id: u64,
        spec: &MicroserviceSpec,
        request_name: FeName,
        now: Ticks,
        speed_milli: u32,
    ) -> Self {
        Instance {
            id,
            microservice: spec.microservice().to_string(),
            demand: spec.demand,
            request_name,
            started_at: now,
            remaining_work: spec.work(),
            total_work: spec.work(),
            work_done: 0,
            handovers: 0,
            resumed_at: now,
            speed_milli,
        }
    }

    /// Completion time if left undisturbed on its current host.
    pub fn completes_at(&self) -> Ticks {
        self.resumed_at + ticks_for_work(self.remaining_work, self.speed_milli)
    }

    /// Moves the instance to a host running at `speed_milli` from `now`.
    pub fn resume(&mut self, now: Ticks, speed_milli: u32) -> Ticks {
        self.resumed_at = now;
        self.speed_milli = speed_milli;
        self.completes_at()
    }

    /// Retires the remaining work; called at the completion event.
    pub fn finish(&mut self) {
        self.work_done += self.remaining_work;
        self.remaining_work = 0;
    }
}

/// Freezes a running instance at `now`: work performed since it was last
/// resumed is retired and the remainder is what a new host must perform.
pub fn snapshot_instance(inst: &Instance, now: Ticks) -> Instance {
    let elapsed = now.saturating_sub(inst.resumed_at);
    let done = (elapsed.saturating_mul(inst.speed_milli as u64)).min(inst.remaining_work);
    let mut s = inst.clone();
    s.remaining_work -= done;
    s.work_done += done;
    s.resumed_at = now;
    s.handovers += 1;
    s
}

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

/// Bounded FIFO of requests waiting for resources.
#[derive(Debug, Clone)]
pub struct FifoQueue<T> {
    capacity: usize,
    items: VecDeque<T>,
    overflowed: u64,
}

impl<T> FifoQueue<T> {
    pub fn new(capacity: usize) -> Self {
        FifoQueue {
            capacity,
            items: VecDeque::new(),
            overflowed: 0,
        }
    }

    /// Appends `item`, handing it back when the queue is full.
    pub fn push(&mut self, item: T) -> Result<(), T> {
        if self.items.len() >= self.capacity {
            self.overflowed += 1;
            return Err(item);
        }
        self.items.push_back(item);
        Ok(())
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn overflowed(&self) -> u64 {
        self.overflowed
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> Catalog {
        Catalog::default_for("Korea", "Seoul", "Itaewon")
    }

    fn spec_with(demand: u32, secs: f64) -> MicroserviceSpec {
        MicroserviceSpec {
            name: FeName::new("A", "B", "C", "s", vec![]).unwrap(),
            demand,
            base_duration: secs_to_ticks(secs),
            code_size: 1,
            protected: false,
            freshness: 1,
        }
    }

    #[test]
    fn default_catalog_shape() {
        let c = catalog();
        assert_eq!(c.len(), 5);
        for s in c.specs() {
            assert!(s.demand > 0 && s.base_duration > 0);
            let r = NodeResources::new(1000, 0.8);
            let d = exec_duration(s, &r);
            assert!(d > 0 && d < u64::MAX);
        }
    }

    #[test]
    fn admit_examples() {
        let mut r = NodeResources::new(1000, 1.0);
        assert!(r.admit(1, 300).unwrap());
        assert_eq!(r.available(), 700);

        let mut r = NodeResources::new(1000, 1.0);
        r.admit(1, 800).unwrap();
        assert!(!r.admit(2, 300).unwrap());
        assert_eq!(r.available(), 200);

        let mut r = NodeResources::new(300, 1.0);
        assert!(r.admit(1, 300).unwrap());
        assert_eq!(r.available(), 0);
    }

    #[test]
    fn release_restores_and_guards() {
        let mut r = NodeResources::new(1000, 1.0);
        r.admit(7, 300).unwrap();
        assert_eq!(r.release(7), Ok(300));
        assert_eq!(r.available(), r.initial());
        assert_eq!(r.release(7), Err(ComputeError::DoubleRelease(7)));
        assert_eq!(r.release(9), Err(ComputeError::DoubleRelease(9)));
    }

    #[test]
    fn randomized_conservation() {
        let c = catalog();
        let specs: Vec<_> = c.specs().cloned().collect();
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = NodeResources::new(1000, 1.0);
            let mut held = Vec::new();
            for id in 0..40u64 {
                let s = specs.choose(&mut rng).unwrap();
                if r.admit(id, s.demand).unwrap() {
                    held.push(id);
                }
                assert!(r.is_conserved());
            }
            held.shuffle(&mut rng);
            for id in held {
                r.release(id).unwrap();
                assert!(r.is_conserved());
            }
            assert_eq!(r.available(), r.initial());
        }
    }

    #[test]
    fn durations_scale_with_speed() {
        let s = spec_with(10, 0.5);
        assert_eq!(
            exec_duration(&s, &NodeResources::new(10, 1.0)),
            secs_to_ticks(0.5)
        );
        assert_eq!(
            exec_duration(&s, &NodeResources::new(10, 2.0)),
            secs_to_ticks(0.25)
        );
        assert_eq!(
            exec_duration(&s, &NodeResources::new(10, 0.8)),
            exec_duration(&s, &NodeResources::new(99, 0.8))
        );
    }

    #[test]
    fn handover_at_half_conserves_time() {
        let s = spec_with(10, 0.5);
        let inst = Instance::start(1, &s, s.name.clone(), 0, 1000);
        let half = secs_to_ticks(0.25);
        let mut snap = snapshot_instance(&inst, half);
        assert_eq!(snap.remaining_work, s.work() / 2);
        let done_at = snap.resume(half, 1000);
        assert_eq!(done_at, secs_to_ticks(0.5));
        snap.finish();
        assert_eq!(snap.work_done, s.work());
    }

    #[test]
    fn two_handovers_add_only_transfer_delays() {
        let s = spec_with(10, 0.4);
        let direct = Instance::start(1, &s, s.name.clone(), 0, 1000).completes_at();
        let mut i = Instance::start(1, &s, s.name.clone(), 0, 1000);
        let (t1, d1) = (100_000, 3_000);
        i = snapshot_instance(&i, t1);
        i.resume(t1 + d1, 1000);
        let (t2, d2) = (t1 + d1 + 50_000, 7_000);
        i = snapshot_instance(&i, t2);
        let done = i.resume(t2 + d2, 1000);
        assert_eq!(done, direct + d1 + d2);
        i.finish();
        assert_eq!(i.work_done, s.work());
        assert_eq!(i.handovers, 2);
    }

    #[test]
    fn handover_after_completion_finishes_immediately() {
        let s = spec_with(10, 0.1);
        let i = Instance::start(1, &s, s.name.clone(), 0, 1000);
        let mut snap = snapshot_instance(&i, secs_to_ticks(0.2));
        assert_eq!(snap.remaining_work, 0);
        assert_eq!(snap.resume(secs_to_ticks(0.3), 800), secs_to_ticks(0.3));
    }

    #[test]
    fn queue_is_bounded_fifo() {
        let mut q = FifoQueue::new(2);
        q.push(1).unwrap();
        q.push(2).unwrap();
        assert_eq!(q.push(3), Err(3));
        assert_eq!(q.overflowed(), 1);
        assert_eq!(q.pop(), Some(1));
        assert_eq!(q.pop(), Some(2));
        assert!(q.is_empty());
    }

    proptest! {
        #[test]
        fn work_is_conserved_across_handovers(
            secs in 0.001f64..2.0,
            cuts in prop::collection::vec((0u64..400_000, 0u64..20_000, 100u32..5000), 0..6),
        ) {
            let s = spec_with(1, secs);
            let mut i = Instance::start(1, &s, s.name.clone(), 0, 1000);
            let mut now = 0;
            for (run, transfer, speed) in cuts {
                now += run;
                i = snapshot_instance(&i, now);
                now += transfer;
                i.resume(now, speed);
            }
            let end = i.completes_at();
            prop_assert!(end >= now);
            i.finish();
            prop_assert_eq!(i.work_done, s.work());
        }
    }
}
