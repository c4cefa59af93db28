//! Scenario configuration: flat `section.key = value` text, `#` comments.
//!
//! Every key has a default; a file only lists what it changes. Unknown keys
//! are rejected so typos cannot silently fall back to defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::compute::{Catalog, MicroserviceSpec};
use crate::naming::FeName;
use crate::time::{secs_to_ticks, Ticks};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("`{key}`: {why}")]
    BadValue { key: String, why: String },
    #[error("cannot read {path}: {why}")]
    Io { path: String, why: String },
}

fn bad<T>(key: &str, why: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::BadValue {
        key: key.to_string(),
        why: why.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    FoggyEdge,
    EdgeOnly,
    CloudOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::FoggyEdge, Mode::EdgeOnly, Mode::CloudOnly];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::FoggyEdge => "FoggyEdge",
            Mode::EdgeOnly => "EdgeOnly",
            Mode::CloudOnly => "CloudOnly",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| !matches!(c, '-' | '_')).collect();
        match key.to_ascii_lowercase().as_str() {
            "foggyedge" | "fe" => Ok(Mode::FoggyEdge),
            "edgeonly" | "eo" => Ok(Mode::EdgeOnly),
            "cloudonly" | "co" => Ok(Mode::CloudOnly),
            _ => Err(format!(
                "unknown mode `{s}` (FoggyEdge, EdgeOnly, CloudOnly)"
            )),
        }
    }
}

/// Which microservices' code an edge holds at start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeSet {
    All,
    Only(BTreeSet<String>),
}

impl CodeSet {
    pub fn contains(&self, ms: &str) -> bool {
        match self {
            CodeSet::All => true,
            CodeSet::Only(s) => s.contains(ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub adhoc_latency_s: f64,
    pub adhoc_bandwidth: u64,
    pub adhoc_range_m: f64,
    pub wired_latency_s: f64,
    pub wired_bandwidth: u64,
    pub cloud_latency_s: f64,
    pub cloud_bandwidth: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub seed: u64,
    pub duration_s: f64,
    pub warmup_frac: f64,
    pub rate: f64,
    pub rates: Vec<f64>,
    pub consumers: usize,
    pub max_retries: u32,
    pub result_size: u32,
    pub region: [String; 3],

    pub road_length_m: f64,
    pub edges: usize,
    pub edge_spacing_m: f64,
    pub first_edge_m: f64,
    pub consumer_min_speed: f64,
    pub consumer_max_speed: f64,
    pub mobility_trace: Option<String>,

    pub link: LinkConfig,

    pub edge_units: u32,
    pub edge_speed: f64,
    pub edge_queue_capacity: usize,
    pub edge_code: CodeSet,
    /// Per-edge replacements for `edge_code`, by edge index.
    pub edge_code_at: BTreeMap<usize, CodeSet>,
    pub offload_margin_s: f64,

    pub edge_load_threshold: usize,
    pub vec_fib_lifetime_s: f64,

    pub fog_slots: u16,
    pub fog_initial_vehicles: usize,
    pub fog_vehicle_units: u32,
    pub fog_speed: f64,
    pub fog_arrival_rate: f64,
    pub fog_mean_parking_s: f64,
    pub fog_early_departure_prob: f64,

    pub cloud_units: u32,
    pub cloud_speed: f64,
    pub cloud_queue_capacity: usize,

    pub pit_lifetime_s: f64,
    pub rpit_lifetime_s: f64,
    pub cs_capacity: usize,

    pub batch_limit: usize,
    pub presync: bool,
    pub hmm_bootstrap: Option<String>,

    pub catalog: Catalog,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let region = [
            "Korea".to_string(),
            "Seoul".to_string(),
            "Itaewon".to_string(),
        ];
        ScenarioConfig {
            mode: Mode::FoggyEdge,
            seed: 42,
            duration_s: 120.0,
            warmup_frac: 0.1,
            rate: 1.0,
            rates: (1..=10).map(f64::from).collect(),
            consumers: 10,
            max_retries: 1,
            result_size: 1024,
            catalog: Catalog::default_for(&region[0], &region[1], &region[2]),
            region,
            road_length_m: 1200.0,
            edges: 3,
            edge_spacing_m: 400.0,
            first_edge_m: 200.0,
            consumer_min_speed: 8.0,
            consumer_max_speed: 16.0,
            mobility_trace: None,
            link: LinkConfig {
                adhoc_latency_s: 0.002,
                adhoc_bandwidth: 6_000_000,
                adhoc_range_m: 250.0,
                wired_latency_s: 0.005,
                wired_bandwidth: 100_000_000,
                cloud_latency_s: 0.120,
                cloud_bandwidth: 100_000_000,
            },
            edge_units: 650,
            edge_speed: 1.0,
            edge_queue_capacity: 2,
            edge_code: CodeSet::All,
            edge_code_at: BTreeMap::new(),
            offload_margin_s: 0.02,
            edge_load_threshold: 0,
            vec_fib_lifetime_s: 2.0,
            fog_slots: 20,
            fog_initial_vehicles: 10,
            fog_vehicle_units: 800,
            fog_speed: 0.8,
            fog_arrival_rate: 0.02,
            fog_mean_parking_s: 1800.0,
            fog_early_departure_prob: 0.1,
            cloud_units: 100_000,
            cloud_speed: 1.0,
            cloud_queue_capacity: 4096,
            pit_lifetime_s: 4.0,
            rpit_lifetime_s: 2.0,
            cs_capacity: 256,
            batch_limit: 64,
            presync: false,
            hmm_bootstrap: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse::<T>()
        .or_else(|_| bad(key, format!("cannot parse `{v}`")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return bad(key, "must be finite");
    }
    Ok(x)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bad(key, format!("expected true or false, got `{v}`")),
    }
}

fn parse_code_set(v: &str) -> CodeSet {
    if v == "all" {
        return CodeSet::All;
    }
    CodeSet::Only(
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty() && *s != "none")
            .map(String::from)
            .collect(),
    )
}

/// Parses `1..10`, `1,2,5` or a single value.
pub fn parse_rates(v: &str) -> Result<Vec<f64>, String> {
    if let Some((a, b)) = v.split_once("..") {
        let a: u32 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad range start `{a}`"))?;
        let b: u32 = b
            .trim()
            .parse()
            .map_err(|_| format!("bad range end `{b}`"))?;
        if a > b {
            return Err(format!("empty range {a}..{b}"));
        }
        return Ok((a..=b).map(f64::from).collect());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad rate `{s}`"))
        })
        .collect()
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !key.contains('.') || value.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !cfg.set(key, value)? {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            why: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Applies one key; false when the key is unknown.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, ConfigError> {
        let k = key;
        match key {
            "scenario.mode" => self.mode = v.parse().or_else(|e: String| bad(k, e))?,
            "scenario.seed" => self.seed = parse_num(k, v)?,
            "scenario.duration_s" => self.duration_s = parse_f64(k, v)?,
            "scenario.warmup_frac" => self.warmup_frac = parse_f64(k, v)?,
            "scenario.rate" => self.rate = parse_f64(k, v)?,
            "scenario.rates" => self.rates = parse_rates(v).or_else(|e| bad(k, e))?,
            "scenario.consumers" => self.consumers = parse_num(k, v)?,
            "scenario.max_retries" => self.max_retries = parse_num(k, v)?,
            "scenario.result_size" => self.result_size = parse_num(k, v)?,
            "scenario.region" => {
                let parts: Vec<&str> = v.split('/').filter(|s| !s.is_empty()).collect();
                if parts.len() != 3 {
                    return bad(k, "expected country/city/district");
                }
                FeName::new(parts[0], parts[1], parts[2], "x", vec![])
                    .or_else(|e| bad(k, e.to_string()))?;
                let old = self.region.clone();
                self.region = [
                    parts[0].to_string(),
                    parts[1].to_string(),
                    parts[2].to_string(),
                ];
                let mut specs: Vec<MicroserviceSpec> = self.catalog.specs().cloned().collect();
                for s in &mut specs {
                    debug_assert_eq!(s.name.region(), &old);
                    s.name =
                        FeName::new(parts[0], parts[1], parts[2], s.name.microservice(), vec![])
                            .expect("validated region");
                }
                self.catalog = Catalog::new(specs).expect("renamed catalog stays valid");
            }
            "road.length_m" => self.road_length_m = parse_f64(k, v)?,
            "road.edges" => self.edges = parse_num(k, v)?,
            "road.edge_spacing_m" => self.edge_spacing_m = parse_f64(k, v)?,
            "road.first_edge_m" => self.first_edge_m = parse_f64(k, v)?,
            "road.mobility_trace" => self.mobility_trace = Some(v.to_string()),
            "consumer.min_speed_mps" => self.consumer_min_speed = parse_f64(k, v)?,
            "consumer.max_speed_mps" => self.consumer_max_speed = parse_f64(k, v)?,
            "link.adhoc_latency_ms" => self.link.adhoc_latency_s = parse_f64(k, v)? / 1000.0,
            "link.adhoc_bandwidth" => self.link.adhoc_bandwidth = parse_num(k, v)?,
            "link.adhoc_range_m" => self.link.adhoc_range_m = parse_f64(k, v)?,
            "link.wired_latency_ms" => self.link.wired_latency_s = parse_f64(k, v)? / 1000.0,
            "link.wired_bandwidth" => self.link.wired_bandwidth = parse_num(k, v)?,
            "link.cloud_latency_ms" => self.link.cloud_latency_s = parse_f64(k, v)? / 1000.0,
            "link.cloud_bandwidth" => self.link.cloud_bandwidth = parse_num(k, v)?,
            "edge.units" => self.edge_units = parse_num(k, v)?,
            "edge.speed" => self.edge_speed = parse_f64(k, v)?,
            "edge.queue_capacity" => self.edge_queue_capacity = parse_num(k, v)?,
            "edge.code" => self.edge_code = parse_code_set(v),
            "edge.offload_margin_ms" => self.offload_margin_s = parse_f64(k, v)? / 1000.0,
            "bridge.edge_load_threshold" => self.edge_load_threshold = parse_num(k, v)?,
            "bridge.vec_fib_lifetime_s" => self.vec_fib_lifetime_s = parse_f64(k, v)?,
            "fog.slots" => self.fog_slots = parse_num(k, v)?,
            "fog.initial_vehicles" => self.fog_initial_vehicles = parse_num(k, v)?,
            "fog.vehicle_units" => self.fog_vehicle_units = parse_num(k, v)?,
            "fog.speed" => self.fog_speed = parse_f64(k, v)?,
            "fog.arrival_rate" => self.fog_arrival_rate = parse_f64(k, v)?,
            "fog.mean_parking_s" => self.fog_mean_parking_s = parse_f64(k, v)?,
            "fog.early_departure_prob" => self.fog_early_departure_prob = parse_f64(k, v)?,
            "cloud.units" => self.cloud_units = parse_num(k, v)?,
            "cloud.speed" => self.cloud_speed = parse_f64(k, v)?,
            "cloud.queue_capacity" => self.cloud_queue_capacity = parse_num(k, v)?,
            "forwarder.pit_lifetime_s" => self.pit_lifetime_s = parse_f64(k, v)?,
            "forwarder.rpit_lifetime_s" => self.rpit_lifetime_s = parse_f64(k, v)?,
            "forwarder.cs_capacity" => self.cs_capacity = parse_num(k, v)?,
            "access.batch_limit" => self.batch_limit = parse_num(k, v)?,
            "access.presync" => self.presync = parse_bool(k, v)?,
            "access.bootstrap" => self.hmm_bootstrap = Some(v.to_string()),
            _ => {
                if let Some(idx) = key.strip_prefix("edge.code.") {
                    let idx: usize = parse_num(k, idx)?;
                    self.edge_code_at.insert(idx, parse_code_set(v));
                    return Ok(true);
                }
                return self.set_catalog(key, v);
            }
        }
        Ok(true)
    }

    /// `catalog.<microservice>.<field>`; naming a new microservice adds it.
    fn set_catalog(&mut self, key: &str, v: &str) -> Result<bool, ConfigError> {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() != 3 || parts[0] != "catalog" {
            return Ok(false);
        }
        let (ms, field) = (parts[1], parts[2]);
        if ![
            "demand",
            "duration_s",
            "code_kb",
            "protected",
            "freshness_s",
        ]
        .contains(&field)
        {
            return Ok(false);
        }
        let mut specs: Vec<MicroserviceSpec> = self.catalog.specs().cloned().collect();
        let pos = match specs.iter().position(|s| s.microservice() == ms) {
            Some(p) => p,
            None => {
                let [a, b, c] = self.region.clone();
                let name = FeName::new(a, b, c, ms.to_string(), vec![])
                    .or_else(|e| bad(key, e.to_string()))?;
                specs.push(MicroserviceSpec {
                    name,
                    demand: 100,
                    base_duration: secs_to_ticks(0.1),
                    code_size: 50 * 1024,
                    protected: false,
                    freshness: secs_to_ticks(1.0),
                });
                specs.len() - 1
            }
        };
        let s = &mut specs[pos];
        match field {
            "demand" => s.demand = parse_num(key, v)?,
            "duration_s" => s.base_duration = secs_to_ticks(parse_f64(key, v)?),
            "code_kb" => s.code_size = parse_num::<u32>(key, v)? * 1024,
            "protected" => s.protected = parse_bool(key, v)?,
            "freshness_s" => s.freshness = secs_to_ticks(parse_f64(key, v)?),
            _ => unreachable!(),
        }
        self.catalog = Catalog::new(specs).or_else(|e| bad(key, e.to_string()))?;
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |k: &str, x: f64| {
            if x > 0.0 {
                Ok(())
            } else {
                bad(k, "must be positive")
            }
        };
        positive("scenario.duration_s", self.duration_s)?;
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad("scenario.warmup_frac", "must be in [0, 1)");
        }
        if self.rate < 1.0 {
            return bad("scenario.rate", "rates must be at least 1");
        }
        if self.rates.is_empty() || self.rates.iter().any(|&r| r.is_nan() || r < 1.0) {
            return bad("scenario.rates", "rates must be at least 1");
        }
        if self.consumers == 0 {
            return bad("scenario.consumers", "need at least one consumer");
        }
        if self.edges == 0 || self.edges > 1000 {
            return bad("road.edges", "must be between 1 and 1000");
        }
        positive("road.length_m", self.road_length_m)?;
        let last = self.first_edge_m + self.edge_spacing_m * (self.edges - 1) as f64;
        if self.first_edge_m < 0.0 || last > self.road_length_m {
            return bad("road.first_edge_m", "edges must lie on the road");
        }
        if self.consumer_min_speed < 0.0 || self.consumer_max_speed < self.consumer_min_speed {
            return bad("consumer.max_speed_mps", "need 0 <= min <= max");
        }
        positive("link.adhoc_range_m", self.link.adhoc_range_m)?;
        for (k, bw) in [
            ("link.adhoc_bandwidth", self.link.adhoc_bandwidth),
            ("link.wired_bandwidth", self.link.wired_bandwidth),
            ("link.cloud_bandwidth", self.link.cloud_bandwidth),
        ] {
            if bw == 0 {
                return bad(k, "must be positive");
            }
        }
        for (k, l) in [
            ("link.adhoc_latency_ms", self.link.adhoc_latency_s),
            ("link.wired_latency_ms", self.link.wired_latency_s),
            ("link.cloud_latency_ms", self.link.cloud_latency_s),
            ("edge.offload_margin_ms", self.offload_margin_s),
        ] {
            if l < 0.0 {
                return bad(k, "must not be negative");
            }
        }
        positive("edge.speed", self.edge_speed)?;
        positive("fog.speed", self.fog_speed)?;
        positive("cloud.speed", self.cloud_speed)?;
        positive("forwarder.pit_lifetime_s", self.pit_lifetime_s)?;
        positive("forwarder.rpit_lifetime_s", self.rpit_lifetime_s)?;
        positive("bridge.vec_fib_lifetime_s", self.vec_fib_lifetime_s)?;
        positive("fog.mean_parking_s", self.fog_mean_parking_s)?;
        if self.fog_arrival_rate < 0.0 {
            return bad("fog.arrival_rate", "must not be negative");
        }
        if !(0.0..=1.0).contains(&self.fog_early_departure_prob) {
            return bad("fog.early_departure_prob", "must be in [0, 1]");
        }
        if self.fog_initial_vehicles > self.fog_slots as usize {
            return bad("fog.initial_vehicles", "more vehicles than slots");
        }
        if self.batch_limit == 0 {
            return bad("access.batch_limit", "must be at least 1");
        }
        if self.catalog.is_empty() {
            return bad("catalog", "catalog is empty");
        }
        for s in self.catalog.specs() {
            s.validate().or_else(|e| bad("catalog", e.to_string()))?;
        }
        for (k, set) in std::iter::once((None, &self.edge_code))
            .chain(self.edge_code_at.iter().map(|(k, s)| (Some(*k), s)))
        {
            let key = k.map_or("edge.code".to_string(), |k| format!("edge.code.{k}"));
            if k.is_some_and(|k| k >= self.edges) {
                return bad(&key, "no such edge");
            }
            if let CodeSet::Only(set) = set {
                if let Some(ms) = set.iter().find(|m| self.catalog.get(m).is_none()) {
                    return bad(&key, format!("unknown microservice `{ms}`"));
                }
            }
        }
        Ok(())
    }

    pub fn warmup(&self) -> Ticks {
        secs_to_ticks(self.duration_s * self.warmup_frac)
    }

    pub fn duration(&self) -> Ticks {
        secs_to_ticks(self.duration_s)
    }

    pub fn code_at(&self, k: usize) -> &CodeSet {
        self.edge_code_at.get(&k).unwrap_or(&self.edge_code)
    }

    pub fn edge_position(&self, k: usize) -> f64 {
        self.first_edge_m + self.edge_spacing_m * k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        assert_eq!(c.rates.len(), 10);
        assert_eq!(c.catalog.len(), 5);
    }

    #[test]
    fn parses_overrides() {
        let c = ScenarioConfig::parse(
            "# comment\nscenario.mode = EdgeOnly\nscenario.seed = 7 # trailing\n\
             link.cloud_latency_ms = 80\ncatalog.traffic_status.demand = 75\n\
             catalog.new_svc.duration_s = 0.3\nedge.code = traffic_status, route_planner\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::EdgeOnly);
        assert_eq!(c.seed, 7);
        assert_eq!(c.link.cloud_latency_s, 0.08);
        assert_eq!(c.catalog.get("traffic_status").unwrap().demand, 75);
        assert_eq!(c.catalog.get("new_svc").unwrap().base_duration, 300_000);
        assert!(c.edge_code.contains("route_planner"));
        assert!(!c.edge_code.contains("video_analytics"));
        let c = ScenarioConfig::parse("edge.code.1 = none").unwrap();
        assert!(c.code_at(0).contains("route_planner"));
        assert!(!c.code_at(1).contains("route_planner"));
        assert!(ScenarioConfig::parse("edge.code.7 = none").is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert_eq!(
            ScenarioConfig::parse("scenario.sed = 1"),
            Err(ConfigError::UnknownKey {
                line: 1,
                key: "scenario.sed".into()
            })
        );
        assert!(matches!(
            ScenarioConfig::parse("catalog.traffic_status.colour = red"),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn field_level_errors() {
        let e = ScenarioConfig::parse("scenario.rate = 0.5").unwrap_err();
        assert!(e.to_string().contains("scenario.rate"), "{e}");
        let e = ScenarioConfig::parse("scenario.seed = x").unwrap_err();
        assert!(e.to_string().contains("scenario.seed"), "{e}");
        assert_eq!(
            ScenarioConfig::parse("nonsense"),
            Err(ConfigError::Syntax { line: 1 })
        );
        assert!(ScenarioConfig::parse("scenario.warmup_frac = 1.5").is_err());
        assert!(ScenarioConfig::parse("edge.code = bogus").is_err());
    }

    #[test]
    fn region_rename_moves_catalog() {
        let c = ScenarioConfig::parse("scenario.region = Japan/Tokyo/Shibuya").unwrap();
        assert_eq!(
            c.catalog.get("traffic_status").unwrap().name.country(),
            "Japan"
        );
    }

    #[test]
    fn rate_lists() {
        assert_eq!(parse_rates("1..3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_rates("5, 7").unwrap(), vec![5.0, 7.0]);
        assert!(parse_rates("3..1").is_err());
    }
}
