//! Vehicular fog gateway bookkeeping: the resource access table of parked
//! vehicles, ticket-zone admission, dispatch and departure handover.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::compute::{ticks_for_work, NodeResources};
use crate::packet::AdmissionInfo;
use crate::time::Ticks;

/// Fixed per-instance state shipped along with the code on handover.
pub use crate::packet::HANDOVER_STATE_BYTES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FogError {
    #[error("parking lot is full")]
    LotFull,
    #[error("vehicle {0} is already registered")]
    AlreadyAdmitted(String),
    #[error("vehicle {0} is not registered")]
    UnknownVehicle(String),
    #[error("instance {0} is not tracked")]
    UnknownInstance(u64),
    #[error("vehicle {vin} cannot host {demand} units")]
    Insufficient { vin: String, demand: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VfRatEntry {
    pub vin: String,
    pub resources: NodeResources,
    pub running: BTreeSet<u64>,
    pub slot: u16,
    pub estimated_departure: Ticks,
    /// Microservices whose code the vehicle already holds.
    pub codes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FogTask {
    pub instance: u64,
    pub vin: String,
    pub microservice: String,
    pub demand: u32,
    /// Full work of the request, in milli-ticks.
    pub work: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoverPlan {
    pub departing: String,
    /// Each running instance and its new host; `None` sends it to the cloud.
    pub moves: Vec<(FogTask, Option<String>)>,
}

#[derive(Debug, Clone)]
pub struct VfRat {
    slots: u16,
    speed_factor: f64,
    entries: BTreeMap<String, VfRatEntry>,
    tasks: BTreeMap<u64, FogTask>,
}

impl VfRat {
    pub fn new(slots: u16, speed_factor: f64) -> Self {
        VfRat {
            slots,
            speed_factor,
            entries: BTreeMap::new(),
            tasks: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, vin: &str) -> Option<&VfRatEntry> {
        self.entries.get(vin)
    }

    pub fn entries(&self) -> impl Iterator<Item = &VfRatEntry> {
        self.entries.values()
    }

    pub fn task(&self, instance: u64) -> Option<&FogTask> {
        self.tasks.get(&instance)
    }

    /// Registers a vehicle passing the ticket zone in the lowest free slot.
    pub fn admit_vehicle(
        &mut self,
        vin: &str,
        info: &AdmissionInfo,
        now: Ticks,
    ) -> Result<u16, FogError> {
        if self.entries.contains_key(vin) {
            return Err(FogError::AlreadyAdmitted(vin.to_string()));
        }
        let taken: BTreeSet<u16> = self.entries.values().map(|e| e.slot).collect();
        let slot = (0..self.slots)
            .find(|s| !taken.contains(s))
            .ok_or(FogError::LotFull)?;
        self.entries.insert(
            vin.to_string(),
            VfRatEntry {
                vin: vin.to_string(),
                resources: NodeResources::new(info.available_resources, self.speed_factor),
                running: BTreeSet::new(),
                slot,
                estimated_departure: now + info.estimated_parking_time,
                codes: BTreeSet::new(),
            },
        );
        Ok(slot)
    }

    fn select(
        &self,
        demand: u32,
        work: u64,
        now: Ticks,
        exclude: Option<&str>,
    ) -> Option<&VfRatEntry> {
        self.entries
            .values()
            .filter(|e| Some(e.vin.as_str()) != exclude)
            .filter(|e| e.resources.can_admit(demand))
            .filter(|e| {
                e.estimated_departure.saturating_sub(now)
                    >= ticks_for_work(work, e.resources.speed_milli())
            })
            .max_by(|a, b| {
                a.estimated_departure
                    .cmp(&b.estimated_departure)
                    .then(a.resources.available().cmp(&b.resources.available()))
                    .then(b.slot.cmp(&a.slot))
            })
    }

    /// Vehicle that should run a request: enough free units and enough
    /// parking time left for the whole execution; longest stay first, then
    /// most free units, then lowest slot. `None` means offload to the cloud.
    pub fn dispatch(&self, demand: u32, work: u64, now: Ticks) -> Option<String> {
        self.select(demand, work, now, None).map(|e| e.vin.clone())
    }

    pub fn reserve(&mut self, vin: &str, task: FogTask) -> Result<(), FogError> {
        let e = self
            .entries
            .get_mut(vin)
            .ok_or_else(|| FogError::UnknownVehicle(vin.to_string()))?;
        let ok =
            e.resources
                .admit(task.instance, task.demand)
                .map_err(|_| FogError::Insufficient {
                    vin: vin.to_string(),
                    demand: task.demand,
                })?;
        if !ok {
            return Err(FogError::Insufficient {
                vin: vin.to_string(),
                demand: task.demand,
            });
        }
        e.running.insert(task.instance);
        e.codes.insert(task.microservice.clone());
        self.tasks.insert(
            task.instance,
            FogTask {
                vin: vin.to_string(),
                ..task
            },
        );
        Ok(())
    }

    /// Marks code as present on a vehicle, returning whether it was new.
    pub fn note_code(&mut self, vin: &str, microservice: &str) -> bool {
        self.entries
            .get_mut(vin)
            .is_some_and(|e| e.codes.insert(microservice.to_string()))
    }

    pub fn holds_code(&self, vin: &str, microservice: &str) -> bool {
        self.entries
            .get(vin)
            .is_some_and(|e| e.codes.contains(microservice))
    }

    /// Frees the reservation of a finished instance.
    pub fn complete(&mut self, instance: u64) -> Result<FogTask, FogError> {
        let task = self
            .tasks
            .remove(&instance)
            .ok_or(FogError::UnknownInstance(instance))?;
        if let Some(e) = self.entries.get_mut(&task.vin) {
            e.running.remove(&instance);
            e.resources
                .release(instance)
                .map_err(|_| FogError::UnknownInstance(instance))?;
        }
        Ok(task)
    }

    /// Moves every instance of a departing vehicle to another eligible
    /// vehicle and erases the departing entry.
    pub fn handover(&mut self, departing: &str, now: Ticks) -> Result<HandoverPlan, FogError> {
        let entry = self
            .entries
            .remove(departing)
            .ok_or_else(|| FogError::UnknownVehicle(departing.to_string()))?;
        let mut moves = Vec::new();
        for id in &entry.running {
            let task = self.tasks.remove(id).expect("running instance is tracked");
            let target = self
                .select(task.demand, task.work, now, Some(departing))
                .map(|e| e.vin.clone());
            if let Some(vin) = &target {
                self.reserve(vin, task.clone())
                    .expect("selected vehicle can host");
            }
            moves.push((task, target));
        }
        Ok(HandoverPlan {
            departing: departing.to_string(),
            moves,
        })
    }

    /// Σ(available + held) == Σ initial, and every task is held by its host.
    pub fn is_consistent(&self) -> bool {
        let conserved = self.entries.values().all(|e| {
            e.resources.is_conserved()
                && e.running
                    .iter()
                    .all(|id| self.tasks.get(id).is_some_and(|t| t.vin == e.vin))
        });
        let slots: BTreeSet<u16> = self.entries.values().map(|e| e.slot).collect();
        conserved && slots.len() == self.entries.len()
    }

    /// One line per vehicle: vin, slot, available/initial, departure, running ids.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            let ids: Vec<String> = e.running.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                "{} slot={} res={}/{} departure={} running=[{}]",
                e.vin,
                e.slot,
                e.resources.available(),
                e.resources.initial(),
                e.estimated_departure,
                ids.join(",")
            );
        }
        out
    }
}
