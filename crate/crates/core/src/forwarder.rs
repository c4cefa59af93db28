//! Per-node named-data forwarding engine: FIB longest-prefix lookup, PIT
//! aggregation and consumption, a content store, nonce-based duplicate
//! suppression and the reverse-PIT interface swap used to pull microservice
//! code along an offload path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::naming::{FeName, RegionPrefix};
use crate::packet::{Data, Interest, Payload};
use crate::time::{secs_to_ticks, Ticks};

/// Node-local interface identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FaceId(pub u16);

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

/// Face connecting the forwarder to the node's own application.
pub const APP_FACE: FaceId = FaceId(0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FibEntry {
    pub prefix: RegionPrefix,
    pub faces: Vec<FaceId>,
}

#[derive(Debug, Clone, Default)]
pub struct Fib {
    entries: BTreeMap<RegionPrefix, Vec<FaceId>>,
}

impl Fib {
    /// Installs or replaces the faces for `prefix`. Empty face lists remove
    /// the entry.
    pub fn insert(&mut self, prefix: RegionPrefix, faces: Vec<FaceId>) {
        if faces.is_empty() {
            self.entries.remove(&prefix);
        } else {
            self.entries.insert(prefix, faces);
        }
    }

    pub fn remove(&mut self, prefix: &RegionPrefix) {
        self.entries.remove(prefix);
    }

    pub fn longest_match(&self, name: &FeName) -> Option<FibEntry> {
        self.entries
            .iter()
            .filter(|(p, _)| p.covers(name))
            .max_by_key(|(p, _)| p.len())
            .map(|(p, f)| FibEntry {
                prefix: p.clone(),
                faces: f.clone(),
            })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitEntry {
    pub name: FeName,
    pub incoming: BTreeSet<FaceId>,
    pub outgoing: BTreeSet<FaceId>,
    pub nonces: BTreeSet<u64>,
    pub created_at: Ticks,
    pub expiry: Ticks,
    pub adhoc_response: bool,
    /// Set while the entry has been swapped by a `microservice_fetch` Data
    /// and is waiting for the code to travel back over it.
    pub reversed: bool,
}

/// Exchanges incoming and outgoing faces and extends the lifetime.
pub fn rpit_swap(mut entry: PitEntry, extension: Ticks) -> PitEntry {
    std::mem::swap(&mut entry.incoming, &mut entry.outgoing);
    entry.expiry += extension;
    entry.reversed = !entry.reversed;
    entry
}

#[derive(Debug, Clone)]
struct CsEntry {
    data: Data,
    inserted_at: Ticks,
    fresh_until: Ticks,
    stamp: u64,
}

/// Exact-match LRU cache of computed results.
#[derive(Debug, Clone)]
pub struct ContentStore {
    capacity: usize,
    entries: BTreeMap<FeName, CsEntry>,
    order: BTreeMap<u64, FeName>,
    clock: u64,
}

impl ContentStore {
    pub fn new(capacity: usize) -> Self {
        ContentStore {
            capacity,
            entries: BTreeMap::new(),
            order: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn bump(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn insert(&mut self, data: Data, now: Ticks, freshness: Ticks) {
        if self.capacity == 0 {
            return;
        }
        let name = data.name.clone();
        if let Some(old) = self.entries.remove(&name) {
            self.order.remove(&old.stamp);
        }
        while self.entries.len() >= self.capacity {
            let Some((_, victim)) = self.order.pop_first() else {
                break;
            };
            self.entries.remove(&victim);
        }
        let stamp = self.bump();
        self.order.insert(stamp, name.clone());
        self.entries.insert(
            name,
            CsEntry {
                data,
                inserted_at: now,
                fresh_until: now.saturating_add(freshness),
                stamp,
            },
        );
    }

    /// Fresh exact match, refreshing its LRU position. Stale entries are evicted.
    pub fn get(&mut self, name: &FeName, now: Ticks) -> Option<Data> {
        let e = self.entries.get(name)?;
        let (stale, stamp) = (e.fresh_until <= now, e.stamp);
        self.order.remove(&stamp);
        if stale {
            self.entries.remove(name);
            return None;
        }
        let stamp = self.bump();
        self.order.insert(stamp, name.clone());
        let e = self.entries.get_mut(name).expect("present");
        e.stamp = stamp;
        Some(e.data.clone())
    }

    pub fn contains(&self, name: &FeName) -> bool {
        self.entries.contains_key(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    Duplicate,
    NoRoute,
    HopLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InterestAction {
    /// Answer from the content store on the arrival face; no PIT state.
    CacheHit(Data),
    Drop(DropReason),
    /// Folded into an existing PIT entry.
    Aggregated,
    /// PIT state is in place; the caller picks among these FIB faces and
    /// records its choice with [`Forwarder::add_outgoing`].
    Forward(Vec<FaceId>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataAction {
    /// Send to these faces. `consumed` is false when PIT state survives
    /// (a reverse-PIT swap).
    Deliver {
        faces: Vec<FaceId>,
        consumed: bool,
    },
    Unsolicited,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwarderStats {
    pub cs_hits: u64,
    pub duplicates: u64,
    pub aggregated: u64,
    pub no_route: u64,
    pub hop_limit: u64,
    pub unsolicited: u64,
    pub pit_created: u64,
    pub pit_satisfied: u64,
    pub pit_expired: u64,
    pub rpit_swaps: u64,
}

#[derive(Debug, Clone)]
pub struct ForwarderConfig {
    pub pit_lifetime: Ticks,
    pub rpit_lifetime: Ticks,
    pub cs_capacity: usize,
    pub default_freshness: Ticks,
    /// Per-microservice freshness of cached results.
    pub freshness: BTreeMap<String, Ticks>,
}

impl Default for ForwarderConfig {
    fn default() -> Self {
        ForwarderConfig {
            pit_lifetime: secs_to_ticks(4.0),
            rpit_lifetime: secs_to_ticks(2.0),
            cs_capacity: 256,
            default_freshness: secs_to_ticks(1.0),
            freshness: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forwarder {
    pub fib: Fib,
    pit: BTreeMap<FeName, PitEntry>,
    cs: ContentStore,
    config: ForwarderConfig,
    stats: ForwarderStats,
}

impl Forwarder {
    pub fn new(config: ForwarderConfig) -> Self {
        Forwarder {
            fib: Fib::default(),
            pit: BTreeMap::new(),
            cs: ContentStore::new(config.cs_capacity),
            config,
            stats: ForwarderStats::default(),
        }
    }

    pub fn stats(&self) -> ForwarderStats {
        self.stats
    }

    pub fn config(&self) -> &ForwarderConfig {
        &self.config
    }

    pub fn pit_entry(&self, name: &FeName) -> Option<&PitEntry> {
        self.pit.get(name)
    }

    pub fn pit_len(&self) -> usize {
        self.pit.len()
    }

    pub fn cs(&self) -> &ContentStore {
        &self.cs
    }

    fn freshness_of(&self, name: &FeName) -> Ticks {
        self.config
            .freshness
            .get(name.microservice())
            .copied()
            .unwrap_or(self.config.default_freshness)
    }

    /// Drops the PIT entry for `name` if it has expired by `now`.
    pub fn expire(&mut self, name: &FeName, now: Ticks) -> Option<PitEntry> {
        match self.pit.get(name) {
            Some(e) if e.expiry <= now => {
                self.stats.pit_expired += 1;
                self.pit.remove(name)
            }
            _ => None,
        }
    }

    /// Expires everything due by `now`.
    pub fn expire_all(&mut self, now: Ticks) -> Vec<PitEntry> {
        let due: Vec<FeName> = self
            .pit
            .values()
            .filter(|e| e.expiry <= now)
            .map(|e| e.name.clone())
            .collect();
        due.iter().filter_map(|n| self.expire(n, now)).collect()
    }

    /// Incoming Interest processing, in order: content store, duplicate
    /// nonce, PIT aggregation, then PIT creation and FIB lookup.
    ///
    /// An Interest with `offloading` set that comes from the local app, or
    /// bounces back over a face it was forwarded on, is re-expressed rather
    /// than suppressed or aggregated.
    pub fn on_interest(&mut self, face_in: FaceId, i: &Interest, now: Ticks) -> InterestAction {
        if i.hop_budget == 0 {
            self.stats.hop_limit += 1;
            return InterestAction::Drop(DropReason::HopLimit);
        }
        self.expire(&i.name, now);
        if let Some(d) = self.cs.get(&i.name, now) {
            self.stats.cs_hits += 1;
            return InterestAction::CacheHit(d);
        }
        let lifetime = self.config.pit_lifetime;
        if let Some(e) = self.pit.get_mut(&i.name) {
            let reexpress = i.offloading && (face_in == APP_FACE || e.outgoing.contains(&face_in));
            if !reexpress {
                if e.nonces.contains(&i.nonce) {
                    self.stats.duplicates += 1;
                    return InterestAction::Drop(DropReason::Duplicate);
                }
                e.nonces.insert(i.nonce);
                e.incoming.insert(face_in);
                e.expiry = e.expiry.max(now + lifetime);
                self.stats.aggregated += 1;
                return InterestAction::Aggregated;
            }
            e.nonces.insert(i.nonce);
            e.adhoc_response |= i.adhoc_response;
            e.expiry = e.expiry.max(now + lifetime);
        }
        let candidates: Vec<FaceId> = self
            .fib
            .longest_match(&i.name)
            .map(|f| f.faces.into_iter().filter(|&x| x != face_in).collect())
            .unwrap_or_default();
        if candidates.is_empty() {
            self.stats.no_route += 1;
            return InterestAction::Drop(DropReason::NoRoute);
        }
        if !self.pit.contains_key(&i.name) {
            self.stats.pit_created += 1;
            self.pit.insert(
                i.name.clone(),
                PitEntry {
                    name: i.name.clone(),
                    incoming: BTreeSet::from([face_in]),
                    outgoing: BTreeSet::new(),
                    nonces: BTreeSet::from([i.nonce]),
                    created_at: now,
                    expiry: now + lifetime,
                    adhoc_response: i.adhoc_response,
                    reversed: false,
                },
            );
        }
        InterestAction::Forward(candidates)
    }

    pub fn add_outgoing(&mut self, name: &FeName, face: FaceId) {
        if let Some(e) = self.pit.get_mut(name) {
            e.outgoing.insert(face);
        }
    }

    /// Removes PIT state without forwarding anything, for Data the node
    /// application delivers some other way.
    pub fn consume(&mut self, name: &FeName) -> Option<PitEntry> {
        let e = self.pit.remove(name);
        if e.is_some() {
            self.stats.pit_satisfied += 1;
        }
        e
    }

    /// Incoming Data processing.
    ///
    /// * `microservice_fetch` Data swaps the entry's faces (reverse PIT) and
    ///   continues toward the former incoming faces. At the node whose app
    ///   handled the original Interest it stops at the app.
    /// * Code Data arriving over a swapped entry follows it, then swaps the
    ///   entry back so the eventual result can use the original path.
    /// * Anything else consumes the entry; computed results are cached.
    pub fn on_data(&mut self, face_in: FaceId, d: &Data, now: Ticks) -> DataAction {
        self.expire(&d.name, now);
        let Some(entry) = self.pit.remove(&d.name) else {
            self.stats.unsolicited += 1;
            return DataAction::Unsolicited;
        };
        if d.microservice_fetch {
            let app_handled = entry.outgoing.contains(&APP_FACE) && face_in != APP_FACE;
            let faces: Vec<FaceId> = if app_handled {
                vec![APP_FACE]
            } else {
                entry
                    .incoming
                    .iter()
                    .copied()
                    .filter(|&f| f != face_in)
                    .collect()
            };
            let swapped = rpit_swap(entry, self.config.rpit_lifetime);
            self.stats.rpit_swaps += 1;
            self.pit.insert(d.name.clone(), swapped);
            return DataAction::Deliver {
                faces,
                consumed: false,
            };
        }
        let faces: Vec<FaceId> = entry
            .incoming
            .iter()
            .copied()
            .filter(|&f| f != face_in)
            .collect();
        if entry.reversed && matches!(d.payload, Payload::MicroserviceCode { .. }) {
            let restored = rpit_swap(entry, 0);
            self.pit.insert(d.name.clone(), restored);
            return DataAction::Deliver {
                faces,
                consumed: false,
            };
        }
        self.stats.pit_satisfied += 1;
        if matches!(d.payload, Payload::ComputedResult { .. }) {
            let freshness = self.freshness_of(&d.name);
            self.cs.insert(d.clone(), now, freshness);
        }
        DataAction::Deliver {
            faces,
            consumed: true,
        }
    }

    /// Table dump with stable ordering, for debugging and golden traces.
    pub fn dump(&self) -> String {
        let faces = |s: &BTreeSet<FaceId>| {
            s.iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        for (p, f) in &self.fib.entries {
            let f: Vec<String> = f.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "FIB {} -> {}", p, f.join(","));
        }
        for e in self.pit.values() {
            let _ = writeln!(
                out,
                "PIT {} in={} out={} nonces={} created={} expiry={} adhoc={} reversed={}",
                e.name,
                faces(&e.incoming),
                faces(&e.outgoing),
                e.nonces.len(),
                e.created_at,
                e.expiry,
                e.adhoc_response,
                e.reversed
            );
        }
        for (n, e) in &self.cs.entries {
            let _ = writeln!(
                out,
                "CS {} inserted={} fresh_until={}",
                n, e.inserted_at, e.fresh_until
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naming::parse_name;

    fn name(s: &str) -> FeName {
        parse_name(s).unwrap()
    }

    fn fw_with_route(faces: Vec<FaceId>) -> Forwarder {
        let mut fw = Forwarder::new(ForwarderConfig::default());
        fw.fib
            .insert(RegionPrefix::new(&["Korea", "Seoul"]).unwrap(), faces);
        fw
    }

    fn result(n: &FeName) -> Data {
        Data::new(n.clone(), Payload::ComputedResult { result_size: 10 })
    }

    #[test]
    fn fib_longest_prefix() {
        let mut fib = Fib::default();
        fib.insert(RegionPrefix::root(), vec![FaceId(9)]);
        fib.insert(RegionPrefix::new(&["Korea"]).unwrap(), vec![FaceId(1)]);
        fib.insert(
            RegionPrefix::new(&["Korea", "Seoul", "Itaewon"]).unwrap(),
            vec![FaceId(3)],
        );
        let n = name("FE:/Korea/Seoul/Itaewon|s");
        assert_eq!(fib.longest_match(&n).unwrap().faces, vec![FaceId(3)]);
        let n = name("FE:/Korea/Busan/Haeundae|s");
        assert_eq!(fib.longest_match(&n).unwrap().faces, vec![FaceId(1)]);
        let n = name("FE:/Japan/Tokyo/Shibuya|s");
        assert_eq!(fib.longest_match(&n).unwrap().faces, vec![FaceId(9)]);
    }

    #[test]
    fn aggregation_sends_one_upstream() {
        let mut fw = fw_with_route(vec![FaceId(5)]);
        let n = name("FE:/Korea/Seoul/Itaewon|s?x");
        let a = Interest::new(n.clone(), 1);
        let b = Interest::new(n.clone(), 2);
        assert_eq!(
            fw.on_interest(FaceId(1), &a, 0),
            InterestAction::Forward(vec![FaceId(5)])
        );
        fw.add_outgoing(&n, FaceId(5));
        assert_eq!(
            fw.on_interest(FaceId(2), &b, 10),
            InterestAction::Aggregated
        );
        let e = fw.pit_entry(&n).unwrap();
        assert_eq!(e.incoming, BTreeSet::from([FaceId(1), FaceId(2)]));
        match fw.on_data(FaceId(5), &result(&n), 20) {
            DataAction::Deliver { faces, consumed } => {
                assert_eq!(faces, vec![FaceId(1), FaceId(2)]);
                assert!(consumed);
            }
            other => panic!("{other:?}"),
        }
        assert!(fw.pit_entry(&n).is_none());
        assert!(fw.cs().contains(&n));
    }

    #[test]
    fn cache_hit_creates_no_state() {
        let mut fw = fw_with_route(vec![FaceId(5)]);
        let n = name("FE:/Korea/Seoul/Itaewon|s?x");
        fw.cs.insert(result(&n), 0, secs_to_ticks(1.0));
        let act = fw.on_interest(FaceId(1), &Interest::new(n.clone(), 1), 10);
        assert_eq!(act, InterestAction::CacheHit(result(&n)));
        assert_eq!(fw.pit_len(), 0);
    }

    #[test]
    fn stale_cache_entries_are_not_served() {
        let mut fw = fw_with_route(vec![FaceId(5)]);
        let n = name("FE:/Korea/Seoul/Itaewon|s?x");
        fw.cs.insert(result(&n), 0, 100);
        assert!(matches!(
            fw.on_interest(FaceId(1), &Interest::new(n.clone(), 1), 100),
            InterestAction::Forward(_)
        ));
        assert!(!fw.cs().contains(&n));
    }

    #[test]
    fn duplicate_nonce_dropped_unless_offloading_from_app() {
        let mut fw = fw_with_route(vec![APP_FACE, FaceId(5)]);
        let n = name("FE:/Korea/Seoul/Itaewon|s?x");
        let i = Interest::new(n.clone(), 7);
        assert!(matches!(
            fw.on_interest(FaceId(1), &i, 0),
            InterestAction::Forward(_)
        ));
        fw.add_outgoing(&n, APP_FACE);
        assert_eq!(
            fw.on_interest(FaceId(2), &i, 1),
            InterestAction::Drop(DropReason::Duplicate)
        );
        let mut off = i.clone();
        off.offloading = true;
        assert_eq!(
            fw.on_interest(APP_FACE, &off, 2),
            InterestAction::Forward(vec![FaceId(5)])
        );
    }

    #[test]
    fn no_route_is_counted() {
        let mut fw = Forwarder::new(ForwarderConfig::default());
        let n = name("FE:/Korea/Seoul/Itaewon|s");
        assert_eq!(
            fw.on_interest(FaceId(1), &Interest::new(n, 1), 0),
            InterestAction::Drop(DropReason::NoRoute)
        );
        assert_eq!(fw.stats().no_route, 1);
        assert_eq!(fw.pit_len(), 0);
    }

    #[test]
    fn hop_budget_exhaustion() {
        let mut fw = fw_with_route(vec![FaceId(5)]);
        let mut i = Interest::new(name("FE:/Korea/Seoul/Itaewon|s"), 1);
        i.hop_budget = 0;
        assert_eq!(
            fw.on_interest(FaceId(1), &i, 0),
            InterestAction::Drop(DropReason::HopLimit)
        );
    }

    #[test]
    fn unsolicited_data_dropped() {
        let mut fw = fw_with_route(vec![FaceId(5)]);
        let n = name("FE:/Korea/Seoul/Itaewon|s");
        assert_eq!(
            fw.on_data(FaceId(5), &result(&n), 0),
            DataAction::Unsolicited
        );
        assert_eq!(fw.stats().unsolicited, 1);
    }

    #[test]
    fn swap_definition_and_involution() {
        let e = PitEntry {
            name: name("FE:/A/B/C|s"),
            incoming: BTreeSet::from([FaceId(1)]),
            outgoing: BTreeSet::from([FaceId(2)]),
            nonces: BTreeSet::new(),
            created_at: 0,
            expiry: 10,
            adhoc_response: false,
            reversed: false,
        };
        let s = rpit_swap(e.clone(), 5);
        assert_eq!(s.incoming, BTreeSet::from([FaceId(2)]));
        assert_eq!(s.outgoing, BTreeSet::from([FaceId(1)]));
        assert_eq!(s.expiry, 15);
        let back = rpit_swap(s, 0);
        assert_eq!(back.incoming, e.incoming);
        assert_eq!(back.outgoing, e.outgoing);
    }

    #[test]
    fn expiry_purges_entries() {
        let mut fw = fw_with_route(vec![FaceId(5)]);
        let n = name("FE:/Korea/Seoul/Itaewon|s");
        fw.on_interest(FaceId(1), &Interest::new(n.clone(), 1), 0);
        let lifetime = fw.config().pit_lifetime;
        assert!(fw.expire(&n, lifetime - 1).is_none());
        assert!(fw.expire(&n, lifetime).is_some());
        assert_eq!(fw.stats().pit_expired, 1);
    }

    #[test]
    fn lru_eviction() {
        let mut cs = ContentStore::new(2);
        let (a, b, c) = (
            name("FE:/A/B/C|a"),
            name("FE:/A/B/C|b"),
            name("FE:/A/B/C|c"),
        );
        cs.insert(result(&a), 0, 1000);
        cs.insert(result(&b), 0, 1000);
        assert!(cs.get(&a, 1).is_some());
        cs.insert(result(&c), 2, 1000);
        assert!(cs.contains(&a));
        assert!(!cs.contains(&b));
        assert!(cs.contains(&c));
        assert_eq!(cs.len(), 2);
    }

    #[test]
    fn dump_is_stable() {
        let mut fw = fw_with_route(vec![FaceId(5)]);
        let n = name("FE:/Korea/Seoul/Itaewon|s");
        fw.on_interest(FaceId(1), &Interest::new(n.clone(), 1), 0);
        fw.add_outgoing(&n, FaceId(5));
        assert_eq!(
            fw.dump(),
            "FIB /Korea/Seoul -> f5\n\
             PIT FE:/Korea/Seoul/Itaewon|s in=f1 out=f5 nonces=1 created=0 expiry=4000000 adhoc=false reversed=false\n"
        );
    }
}
