//! Microservice access management.
//!
//! A consumer proves it may use a microservice by attaching
//! `HMAC-SHA-256(key = VIN, msg = canonical name without params)` to its
//! Interest. Edges keep an [`AccessStore`] of digest-to-name mappings and
//! pull newer mappings from the cloud with a batched, timestamp-driven sync.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::naming::{parse_name, FeName};
use crate::packet::Interest;
use crate::time::Ticks;

pub const DEFAULT_BATCH_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("invalid VIN {0:?}")]
    InvalidVin(String),
    #[error("Interest for protected microservice carries no access rights")]
    MissingAccessRights,
    #[error("digest {0} already registered")]
    DuplicateHmac(String),
    #[error("record timestamp {got} precedes latest {latest}")]
    NonMonotonic { got: Ticks, latest: Ticks },
    #[error("bootstrap line {line}: {reason}")]
    Bootstrap { line: usize, reason: String },
}

/// A 17-character vehicle identification number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vin(String);

impl Vin {
    pub fn new(s: &str) -> Result<Self, AccessError> {
        let ok = s.len() == 17
            && s.chars()
                .all(|c| c.is_ascii_digit() || (c.is_ascii_uppercase() && !"IOQ".contains(c)));
        if ok {
            Ok(Vin(s.to_string()))
        } else {
            Err(AccessError::InvalidVin(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Vin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Keyed digest of `microservice` (params are stripped) under `vin`.
pub fn compute_hmac(microservice: &FeName, vin: &Vin) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(vin.as_str().as_bytes())
        .expect("HMAC accepts keys of any length");
    mac.update(microservice.without_params().to_string().as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

/// Convenience for callers holding an unvalidated VIN string.
pub fn compute_hmac_str(microservice: &FeName, vin: &str) -> Result<String, AccessError> {
    Ok(compute_hmac(microservice, &Vin::new(vin)?))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct HmmRecord {
    pub hmac: String,
    /// Canonical name without params.
    pub microservice_name: String,
    pub created_at: Ticks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allow,
    /// The digest is not in the store; a sync may still find it.
    UnknownDigest,
    /// The digest is known but maps to another microservice.
    NameMismatch,
}

impl Verdict {
    pub fn allowed(self) -> bool {
        self == Verdict::Allow
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessStore {
    records: BTreeMap<String, HmmRecord>,
    last_sync_time: Ticks,
    latest_created: Ticks,
}

/// One cloud response to a sync Interest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncBatch {
    pub records: Vec<HmmRecord>,
    pub more: bool,
    /// Newest `created_at` in the batch, or the requested time when empty.
    pub max_time: Ticks,
}

impl AccessStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_sync_time(&self) -> Ticks {
        self.last_sync_time
    }

    pub fn get(&self, hmac: &str) -> Option<&HmmRecord> {
        self.records.get(hmac)
    }

    pub fn records(&self) -> impl Iterator<Item = &HmmRecord> {
        self.records.values()
    }

    /// Cloud-side registration. Timestamps must not go backwards.
    pub fn register(&mut self, record: HmmRecord) -> Result<(), AccessError> {
        if self.records.contains_key(&record.hmac) {
            return Err(AccessError::DuplicateHmac(record.hmac));
        }
        if record.created_at < self.latest_created {
            return Err(AccessError::NonMonotonic {
                got: record.created_at,
                latest: self.latest_created,
            });
        }
        self.latest_created = record.created_at;
        self.records.insert(record.hmac.clone(), record);
        Ok(())
    }

    /// Records newer than `since`, oldest first.
    fn newer_than(&self, since: Ticks) -> Vec<&HmmRecord> {
        let mut v: Vec<&HmmRecord> = self
            .records
            .values()
            .filter(|r| r.created_at > since)
            .collect();
        v.sort_by(|a, b| (a.created_at, &a.hmac).cmp(&(b.created_at, &b.hmac)));
        v
    }

    /// A copy holding only the records created at or before `t`, synced to `t`.
    pub fn snapshot_at(&self, t: Ticks) -> AccessStore {
        let mut out = AccessStore::new();
        for r in self.records.values().filter(|r| r.created_at <= t) {
            out.records.insert(r.hmac.clone(), r.clone());
            out.latest_created = out.latest_created.max(r.created_at);
        }
        out.last_sync_time = out.latest_created;
        out
    }
}

/// Access check for a consumer Interest at the first edge.
pub fn verify(store: &AccessStore, i: &Interest, protected: bool) -> Result<Verdict, AccessError> {
    let Some(digest) = &i.access_rights else {
        return if protected {
            Err(AccessError::MissingAccessRights)
        } else {
            Ok(Verdict::Allow)
        };
    };
    Ok(match store.get(digest) {
        None => Verdict::UnknownDigest,
        Some(r) if r.microservice_name == i.name.without_params().to_string() => Verdict::Allow,
        Some(_) => Verdict::NameMismatch,
    })
}

/// Cloud side of one sync round: records newer than `since`, at most
/// `batch_limit` of them, and whether more remain.
///
/// A batch never splits records sharing a timestamp, since the follow-up
/// round resumes strictly after the batch's newest timestamp. If one tie
/// group alone exceeds the limit it is sent whole.
pub fn sync_step(cloud: &AccessStore, since: Ticks, batch_limit: usize) -> SyncBatch {
    let pending = cloud.newer_than(since);
    let limit = batch_limit.max(1);
    let mut cut = pending.len().min(limit);
    if cut < pending.len() {
        let boundary = pending[cut].created_at;
        while cut > 0 && pending[cut - 1].created_at == boundary {
            cut -= 1;
        }
        if cut == 0 {
            cut = pending
                .iter()
                .take_while(|r| r.created_at == boundary)
                .count();
        }
    }
    let records: Vec<HmmRecord> = pending[..cut].iter().map(|r| (*r).clone()).collect();
    let max_time = records.last().map_or(since, |r| r.created_at);
    SyncBatch {
        more: cut < pending.len(),
        max_time,
        records,
    }
}

/// Edge side of one sync round. Idempotent.
pub fn apply_batch(store: &mut AccessStore, batch: &[HmmRecord], batch_max_time: Ticks) {
    for r in batch {
        store.latest_created = store.latest_created.max(r.created_at);
        store.records.insert(r.hmac.clone(), r.clone());
    }
    store.last_sync_time = store.last_sync_time.max(batch_max_time);
}

/// Runs sync rounds until the cloud reports nothing more; returns the
/// number of rounds taken.
pub fn sync_to_completion(
    edge: &mut AccessStore,
    cloud: &AccessStore,
    batch_limit: usize,
) -> usize {
    let mut rounds = 0;
    loop {
        let b = sync_step(cloud, edge.last_sync_time(), batch_limit);
        rounds += 1;
        apply_batch(edge, &b.records, b.max_time);
        if !b.more {
            return rounds;
        }
    }
}

/// Parses the bootstrap file: `<hex-digest> <canonical-name> <created_at-ticks>`
/// per line. Blank lines and `#` comments are skipped.
pub fn load_bootstrap(text: &str) -> Result<AccessStore, AccessError> {
    let mut store = AccessStore::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| AccessError::Bootstrap {
            line: line_no,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [digest, name, created] = fields[..] else {
            return Err(err("expected three fields"));
        };
        if digest.len() != 64
            || !digest
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(err("digest must be 64 lowercase hex characters"));
        }
        let parsed = parse_name(name).map_err(|e| err(&e.to_string()))?;
        if !parsed.params().is_empty() || parsed.to_string() != name {
            return Err(err("name must be canonical and carry no params"));
        }
        let created_at: Ticks = created.parse().map_err(|_| err("bad timestamp"))?;
        store
            .register(HmmRecord {
                hmac: digest.to_string(),
                microservice_name: name.to_string(),
                created_at,
            })
            .map_err(|e| err(&e.to_string()))?;
    }
    Ok(store)
}

pub fn write_bootstrap(store: &AccessStore) -> String {
    let mut v: Vec<&HmmRecord> = store.records().collect();
    v.sort_by(|a, b| (a.created_at, &a.hmac).cmp(&(b.created_at, &b.hmac)));
    v.iter()
        .map(|r| format!("{} {} {}\n", r.hmac, r.microservice_name, r.created_at))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traffic() -> FeName {
        parse_name("FE:/Korea/Seoul/Itaewon|traffic_status").unwrap()
    }

    #[test]
    fn golden_vector() {
        // Reference value from an independent HMAC-SHA-256 implementation.
        let vin = Vin::new("1HGBH41JXMN109186").unwrap();
        assert_eq!(
            compute_hmac(&traffic(), &vin),
            "4b4b08f721394913d867f5e8ab9e79e0a5634b7734c45689a98399e9cbdd698b"
        );
    }

    #[test]
    fn params_do_not_change_digest() {
        let vin = Vin::new("1HGBH41JXMN109186").unwrap();
        let with = parse_name("FE:/Korea/Seoul/Itaewon|traffic_status?a,b").unwrap();
        assert_eq!(compute_hmac(&with, &vin), compute_hmac(&traffic(), &vin));
    }

    #[test]
    fn vin_validation() {
        assert!(Vin::new("1HGBH41JXMN109186").is_ok());
        assert!(Vin::new("1HGBH41JXMN10918").is_err());
        assert!(Vin::new("1HGBH41JXMN1091860").is_err());
        assert!(Vin::new("1HGBH41JXMN10918O").is_err());
        assert!(Vin::new("1HGBH41JXMN10918I").is_err());
        assert!(Vin::new("1hgbh41jxmn109186").is_err());
        assert!(compute_hmac_str(&traffic(), "short").is_err());
    }

    fn random_vin(rng: &mut impl Rng) -> Vin {
        const ALPHA: &[u8] = b"0123456789ABCDEFGHJKLMNPRSTUVWXYZ";
        let s: String = (0..17)
            .map(|_| ALPHA[rng.random_range(0..ALPHA.len())] as char)
            .collect();
        Vin::new(&s).unwrap()
    }

    #[test]
    fn distinct_vins_give_distinct_digests() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (a, b) = (random_vin(&mut rng), random_vin(&mut rng));
            if a != b {
                assert_ne!(compute_hmac(&traffic(), &a), compute_hmac(&traffic(), &b));
            }
        }
    }

    fn store_with(names: &[(&str, Ticks)]) -> AccessStore {
        let mut s = AccessStore::new();
        for (k, (n, t)) in names.iter().enumerate() {
            s.register(HmmRecord {
                hmac: format!("{k:064x}"),
                microservice_name: n.to_string(),
                created_at: *t,
            })
            .unwrap();
        }
        s
    }

    fn interest_with(digest: Option<&str>, name: &str) -> Interest {
        let mut i = Interest::new(parse_name(name).unwrap(), 1);
        i.access_rights = digest.map(str::to_string);
        i
    }

    #[test]
    fn verify_cases() {
        let store = store_with(&[("FE:/Korea/Seoul/Itaewon|traffic_status", 5)]);
        let d = format!("{:064x}", 0);
        let ok = interest_with(Some(&d), "FE:/Korea/Seoul/Itaewon|traffic_status?x");
        assert_eq!(verify(&store, &ok, true), Ok(Verdict::Allow));
        let wrong = interest_with(Some(&d), "FE:/Korea/Seoul/Itaewon|parking?x");
        assert_eq!(verify(&store, &wrong, true), Ok(Verdict::NameMismatch));
        let unknown = interest_with(
            Some(&"f".repeat(64)),
            "FE:/Korea/Seoul/Itaewon|traffic_status",
        );
        assert_eq!(verify(&store, &unknown, true), Ok(Verdict::UnknownDigest));
        let none = interest_with(None, "FE:/Korea/Seoul/Itaewon|traffic_status");
        assert_eq!(
            verify(&store, &none, true),
            Err(AccessError::MissingAccessRights)
        );
        assert_eq!(verify(&store, &none, false), Ok(Verdict::Allow));
    }

    #[test]
    fn register_rejects_duplicates_and_time_travel() {
        let mut s = store_with(&[("FE:/A/B/C|s", 10)]);
        let dup = s.get(&format!("{:064x}", 0)).unwrap().clone();
        assert!(matches!(
            s.register(dup),
            Err(AccessError::DuplicateHmac(_))
        ));
        let old = HmmRecord {
            hmac: "e".repeat(64),
            microservice_name: "FE:/A/B/C|s".into(),
            created_at: 3,
        };
        assert!(matches!(
            s.register(old),
            Err(AccessError::NonMonotonic { .. })
        ));
    }

    #[test]
    fn sync_small_batch() {
        let cloud = store_with(&[("FE:/A/B/C|s", 1), ("FE:/A/B/C|s", 2), ("FE:/A/B/C|s", 3)]);
        let b = sync_step(&cloud, 0, 10);
        assert_eq!(b.records.len(), 3);
        assert!(!b.more);
        assert_eq!(b.max_time, 3);
    }

    #[test]
    fn sync_two_rounds() {
        let names: Vec<(&str, Ticks)> = (1..=15).map(|t| ("FE:/A/B/C|s", t)).collect();
        let cloud = store_with(&names);
        let mut edge = AccessStore::new();
        let first = sync_step(&cloud, edge.last_sync_time(), 10);
        assert_eq!(first.records.len(), 10);
        assert!(first.more);
        apply_batch(&mut edge, &first.records, first.max_time);
        let second = sync_step(&cloud, edge.last_sync_time(), 10);
        assert_eq!(second.records.len(), 5);
        assert!(!second.more);
        apply_batch(&mut edge, &second.records, second.max_time);
        assert_eq!(edge.len(), 15);
    }

    #[test]
    fn sync_already_current() {
        let cloud = store_with(&[("FE:/A/B/C|s", 1), ("FE:/A/B/C|s", 2)]);
        let b = sync_step(&cloud, 2, 10);
        assert!(b.records.is_empty() && !b.more);
        assert_eq!(b.max_time, 2);
    }

    #[test]
    fn sync_keeps_tie_groups_together() {
        let cloud = store_with(&[
            ("FE:/A/B/C|s", 1),
            ("FE:/A/B/C|s", 2),
            ("FE:/A/B/C|s", 2),
            ("FE:/A/B/C|s", 2),
            ("FE:/A/B/C|s", 3),
        ]);
        let b = sync_step(&cloud, 0, 2);
        assert_eq!(b.records.len(), 1);
        assert!(b.more);
        let b = sync_step(&cloud, 1, 2);
        assert_eq!(b.records.len(), 3);
        let mut edge = AccessStore::new();
        assert_eq!(sync_to_completion(&mut edge, &cloud, 1), 3);
        assert_eq!(edge.len(), 5);
    }

    #[test]
    fn apply_is_idempotent_and_empty_batch_only_moves_time() {
        let cloud = store_with(&[("FE:/A/B/C|s", 1), ("FE:/A/B/C|s", 2)]);
        let b = sync_step(&cloud, 0, 64);
        let mut once = AccessStore::new();
        apply_batch(&mut once, &b.records, b.max_time);
        let mut twice = once.clone();
        apply_batch(&mut twice, &b.records, b.max_time);
        assert_eq!(once, twice);

        let before = once.clone();
        apply_batch(&mut once, &[], 9);
        assert_eq!(once.len(), before.len());
        assert_eq!(once.last_sync_time(), 9);
    }

    #[test]
    fn bootstrap_round_trip() {
        let cloud = store_with(&[("FE:/A/B/C|s", 1), ("FE:/Korea/Seoul/Itaewon|parking", 4)]);
        let text = write_bootstrap(&cloud);
        let loaded = load_bootstrap(&text).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(write_bootstrap(&loaded), text);
        assert!(load_bootstrap("abc FE:/A/B/C|s 1").is_err());
        assert!(load_bootstrap(&format!("{} FE:/A/B/C|s?x 1", "a".repeat(64))).is_err());
        assert!(load_bootstrap(&format!("{} FE:/A/B/C|s", "a".repeat(64))).is_err());
    }
}
