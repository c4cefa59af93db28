//! End-to-end acceptance criteria, one PASS/FAIL line each.
//!
//! Expected values are computed here from first principles (link formulas,
//! TLV byte counts, set containment), never from the simulator's own helpers.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Duration;

use foggyedge::access::{apply_batch, sync_step, AccessStore, HmmRecord};
use foggyedge::config::{Mode, ScenarioConfig};
use foggyedge::engine::Kinematics;
use foggyedge::harness::{ordering_checks, run_scenario, sweep, Sweep};
use foggyedge::naming::{parse_name, serialize_name, FeName};
use foggyedge::packet::{wire_size, Data, Interest, Packet, Payload};
use foggyedge::sim::{NodeId, World, UPLINK};
use foggyedge::trace::{diff_traces, read_trace, RecordKind, TraceDiff, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const MICROS: u64 = 1_000_000;
/// Work units per tick at speed factor 1.
const REFERENCE_SPEED: u64 = 1000;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn default_sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let rates: Vec<f64> = (1..=10).map(f64::from).collect();
        sweep(&ScenarioConfig::default(), &rates).expect("default sweep runs")
    })
}

fn mean(s: &Sweep, rate: f64, mode: Mode) -> Result<f64, String> {
    s.reports
        .iter()
        .find(|r| r.rate == rate && r.mode == mode)
        .and_then(|r| r.csd.mean)
        .ok_or_else(|| format!("no mean CSD for {mode} at rate {rate}"))
}

fn low_rate_equivalence() -> Outcome {
    let s = default_sweep();
    ensure(ScenarioConfig::default().seed == 42, || {
        "default seed is not 42".into()
    })?;
    let mut detail = Vec::new();
    for rate in [1.0, 2.0] {
        let fe = mean(s, rate, Mode::FoggyEdge)?;
        let eo = mean(s, rate, Mode::EdgeOnly)?;
        let rel = (fe - eo).abs() / eo;
        ensure(rel <= 0.05, || {
            format!(
                "rate {rate}: FE {fe:.4}s vs EO {eo:.4}s differ by {:.1}%",
                rel * 100.0
            )
        })?;
        for r in s.reports.iter().filter(|r| r.rate == rate) {
            ensure(r.wall < Duration::from_secs(10), || {
                format!("{} @ {rate} took {:?}", r.mode, r.wall)
            })?;
        }
        detail.push(format!("rate {rate}: {:.2}%", rel * 100.0));
    }
    Ok(detail.join(", "))
}

fn saturation_ordering() -> Outcome {
    let s = default_sweep();
    let mut worst = f64::INFINITY;
    for rate in (5..=10).map(f64::from) {
        let fe = mean(s, rate, Mode::FoggyEdge)?;
        let eo = mean(s, rate, Mode::EdgeOnly)?;
        let co = mean(s, rate, Mode::CloudOnly)?;
        let (g1, g2) = ((eo - fe) / eo, (co - eo) / co);
        ensure(fe < eo && eo < co && g1 >= 0.05 && g2 >= 0.05, || {
            format!("rate {rate}: FE {fe:.4} EO {eo:.4} CO {co:.4} (gaps {g1:.3}, {g2:.3})")
        })?;
        worst = worst.min(g1).min(g2);
    }
    let flags = ordering_checks(&s.rows());
    ensure(flags.len() == 6 && flags.iter().all(|c| c.holds), || {
        format!("sweep self-check disagrees: {flags:?}")
    })?;
    Ok(format!("smallest gap {:.1}%", worst * 100.0))
}

fn case1_dominance() -> Outcome {
    let s = default_sweep();
    let r = s
        .reports
        .iter()
        .find(|r| r.rate == 1.0 && r.mode == Mode::FoggyEdge)
        .ok_or("missing FE rate-1 cell")?;
    let warmup = ScenarioConfig::default().warmup();
    let satisfied: Vec<_> = r
        .records
        .iter()
        .filter(|x| x.satisfied_at.is_some() && x.created_at >= warmup)
        .collect();
    let case1 = satisfied.iter().filter(|x| x.case == Some(1)).count();
    ensure(!satisfied.is_empty(), || "nothing satisfied".into())?;
    let share = case1 as f64 / satisfied.len() as f64;
    ensure(share >= 0.95, || {
        format!("case-1 share {case1}/{} = {share:.3}", satisfied.len())
    })?;
    Ok(format!(
        "{case1}/{} = {:.1}%",
        satisfied.len(),
        share * 100.0
    ))
}

/// TLV header: one type byte and a two-byte length.
const TLV: u64 = 3;

fn interest_bytes(name: &str) -> u64 {
    // Name, 8-byte nonce, flags byte, hop budget byte.
    TLV + (TLV + name.len() as u64) + (TLV + 8) + (TLV + 1) + (TLV + 1)
}

fn result_bytes(name: &str, result_size: u64) -> u64 {
    // Name, flags byte, content holding a kind byte and a 4-byte size, plus the body.
    TLV + (TLV + name.len() as u64) + (TLV + 1) + TLV + (TLV + 1) + (TLV + 4) + result_size
}

fn ticks(secs: f64) -> u64 {
    (secs * MICROS as f64).round() as u64
}

fn hop(latency_s: f64, bandwidth: u64, bytes: u64) -> u64 {
    ticks(latency_s) + (bytes * MICROS).div_ceil(bandwidth)
}

fn exec(base_duration: u64, speed: f64) -> u64 {
    (base_duration * REFERENCE_SPEED).div_ceil((speed * REFERENCE_SPEED as f64).round() as u64)
}

fn quiet(mode: Mode, consumers: u16) -> ScenarioConfig {
    ScenarioConfig {
        mode,
        consumers: consumers as usize,
        duration_s: 5.0,
        ..ScenarioConfig::default()
    }
}

fn single_request_oracle() -> Outcome {
    let ms = "parking_finder";
    let mut detail = Vec::new();
    for mode in Mode::ALL {
        let cfg = quiet(mode, 1);
        let spec = cfg
            .catalog
            .get(ms)
            .cloned()
            .ok_or("catalog lacks service")?;
        ensure(!spec.protected, || format!("{ms} is protected"))?;
        let mut w = World::new(cfg.clone()).map_err(|e| e.to_string())?;
        w.disable_generation();
        w.set_consumer_kinematics(0, Kinematics::new(cfg.edge_position(0), 0.0, 1, 0));
        w.script_request(1_000, 0, ms, Some(vec!["oracle".into()]));
        let v = w.run().to_vec();
        ensure(v.is_empty(), || format!("{mode}: {v:?}"))?;
        let rec = &w.records()[0];
        let name = rec.name.to_string();

        let (iq, dt) = (
            interest_bytes(&name),
            result_bytes(&name, cfg.result_size as u64),
        );
        let probe_i = Packet::from(Interest::new(rec.name.clone(), 0));
        let probe_d = Packet::from(Data::new(
            rec.name.clone(),
            Payload::ComputedResult {
                result_size: cfg.result_size,
            },
        ));
        ensure(
            wire_size(&probe_i) == iq && wire_size(&probe_d) == dt,
            || {
                format!(
                    "wire sizes {} / {} differ from hand count {iq} / {dt}",
                    wire_size(&probe_i),
                    wire_size(&probe_d)
                )
            },
        )?;

        let l = &cfg.link;
        let adhoc = hop(l.adhoc_latency_s, l.adhoc_bandwidth, iq)
            + hop(l.adhoc_latency_s, l.adhoc_bandwidth, dt);
        let expected = match mode {
            Mode::FoggyEdge | Mode::EdgeOnly => adhoc + exec(spec.base_duration, cfg.edge_speed),
            Mode::CloudOnly => {
                adhoc
                    + hop(l.wired_latency_s, l.wired_bandwidth, iq)
                    + hop(l.wired_latency_s, l.wired_bandwidth, dt)
                    + hop(l.cloud_latency_s, l.cloud_bandwidth, iq)
                    + hop(l.cloud_latency_s, l.cloud_bandwidth, dt)
                    + exec(spec.base_duration, cfg.cloud_speed)
            }
        };
        ensure(rec.csd() == Some(expected), || {
            format!("{mode}: CSD {:?} != oracle {expected}", rec.csd())
        })?;
        detail.push(format!("{mode} {expected}"));
    }
    Ok(detail.join(", "))
}

fn sends<'a>(
    trace: &'a [TraceRecord],
    from: NodeId,
    name: &'a FeName,
) -> impl Iterator<Item = (&'a TraceRecord, Packet)> + 'a {
    trace.iter().filter_map(move |r| {
        let p = r.packet()?;
        (r.kind == RecordKind::Send && r.node == from.code() && p.name() == name).then_some((r, p))
    })
}

fn pit_aggregation() -> Outcome {
    for k in 2..=8u16 {
        for mode in [Mode::CloudOnly, Mode::FoggyEdge] {
            let cfg = quiet(mode, k);
            let mut w = World::new(cfg.clone()).map_err(|e| e.to_string())?;
            w.disable_generation();
            for c in 0..k {
                w.set_consumer_kinematics(c, Kinematics::new(cfg.edge_position(0), 0.0, 1, 0));
                w.script_request(1_000, c, "traffic_status", Some(vec!["shared".into()]));
            }
            let v = w.run().to_vec();
            ensure(v.is_empty(), || format!("K={k} {mode}: {v:?}"))?;
            let name = w.records()[0].name.clone();
            let trace = read_trace(w.trace().bytes()).map_err(|e| e.to_string())?;
            let edge = NodeId::Edge(0);
            // Upstream of the edge is its uplink, or its own executor.
            let upstream = match mode {
                Mode::CloudOnly => sends(&trace, edge, &name)
                    .filter(|(r, p)| r.face == UPLINK.0 && matches!(p, Packet::Interest(_)))
                    .count(),
                _ => trace
                    .iter()
                    .filter(|r| r.kind == RecordKind::ExecStart && r.node == edge.code())
                    .count(),
            };
            let delivered: BTreeSet<u16> = trace
                .iter()
                .filter(|r| r.kind == RecordKind::Deliver)
                .filter(|r| matches!(NodeId::from_code(r.node), Some(NodeId::Consumer(_))))
                .filter(|r| matches!(r.packet(), Some(Packet::Data(d)) if d.name == name))
                .map(|r| r.node)
                .collect();
            let satisfied = w
                .records()
                .iter()
                .filter(|r| r.satisfied_at.is_some())
                .count();
            ensure(
                upstream == 1 && delivered.len() == k as usize && satisfied == k as usize,
                || {
                    format!(
                        "K={k} {mode}: upstream {upstream}, delivered to {}, satisfied {satisfied}",
                        delivered.len()
                    )
                },
            )?;
        }
    }
    Ok("K = 2..8 in CloudOnly and FoggyEdge".into())
}

/// Node hops `(from, to)` of the sends of one name that match `pick`.
fn hops(trace: &[TraceRecord], name: &FeName, pick: impl Fn(&Packet) -> bool) -> Vec<(u16, u16)> {
    trace
        .iter()
        .filter(|r| r.kind == RecordKind::Send)
        .filter_map(|r| Some((r, r.packet()?)))
        .filter(|(_, p)| p.name() == name && pick(p))
        .map(|(r, _)| (r.node, r.peer))
        .collect()
}

fn rpit_path_equality() -> Outcome {
    let mut cfg = quiet(Mode::FoggyEdge, 1);
    for (k, v) in [
        ("road.edges", "2"),
        ("road.edge_spacing_m", "500"),
        ("edge.code.1", "none"),
    ] {
        cfg.set(k, v).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let ms = "hazard_detection";
    let mut w = World::new(cfg.clone()).map_err(|e| e.to_string())?;
    w.disable_generation();
    // Closer to edge 0, heading for edge 1, leaving edge 0's range before
    // the service could finish there.
    let x = cfg.edge_position(0) + cfg.link.adhoc_range_m - 5.0;
    w.set_consumer_kinematics(0, Kinematics::new(x, 16.0, 1, 0));
    w.script_request(1_000, 0, ms, None);
    let v = w.run().to_vec();
    ensure(v.is_empty(), || format!("{v:?}"))?;
    let rec = &w.records()[0];
    ensure(rec.case == Some(2), || {
        format!("expected case 2, got {:?}", rec.case)
    })?;
    let trace = read_trace(w.trace().bytes()).map_err(|e| e.to_string())?;

    let interest = hops(
        &trace,
        &rec.name,
        |p| matches!(p, Packet::Interest(i) if i.offloading),
    );
    let fetch = hops(
        &trace,
        &rec.name,
        |p| matches!(p, Packet::Data(d) if d.microservice_fetch),
    );
    let code = hops(
        &trace,
        &rec.name,
        |p| matches!(p, Packet::Data(d) if !d.microservice_fetch && matches!(d.payload, Payload::MicroserviceCode { .. })),
    );
    let (e0, br, e1) = (
        NodeId::Edge(0).code(),
        NodeId::Bridge.code(),
        NodeId::Edge(1).code(),
    );
    ensure(interest == vec![(e0, br), (br, e1)], || {
        format!("offloaded Interest path {interest:x?}")
    })?;
    let reversed: Vec<(u16, u16)> = interest.iter().rev().map(|&(a, b)| (b, a)).collect();
    ensure(fetch == reversed, || {
        format!("fetch path {fetch:x?} is not the reverse of {interest:x?}")
    })?;
    let fetch_back: Vec<(u16, u16)> = fetch.iter().rev().map(|&(a, b)| (b, a)).collect();
    ensure(code == fetch_back, || {
        format!("code path {code:x?} is not the reverse of the fetch path {fetch:x?}")
    })?;
    Ok("Edge0 -> Bridge -> Edge1, fetch back, code along swapped entries".into())
}

fn random_store(rng: &mut ChaCha8Rng) -> AccessStore {
    let mut s = AccessStore::new();
    let n = rng.random_range(0..80);
    let mut t = 1;
    for idx in 0..n {
        // Frequent ties exercise batches that must not split a timestamp.
        t += rng.random_range(0..3);
        s.register(HmmRecord {
            hmac: format!("{idx:04x}{:012x}", rng.random::<u64>() >> 16),
            microservice_name: format!("FE:/c/t/d|svc{}", rng.random_range(0..5)),
            created_at: t,
        })
        .expect("timestamps are monotone and digests unique");
    }
    s
}

fn sync_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_rounds = 0;
    for pair in 0..200 {
        let cloud = random_store(&mut rng);
        let horizon = cloud.records().map(|r| r.created_at).max().unwrap_or(0);
        let edge0 = cloud.snapshot_at(rng.random_range(0..=horizon));
        let target: BTreeSet<&HmmRecord> = cloud.records().collect();
        let missing = target.len() - edge0.len();
        for limit in [1usize, 3, 64] {
            let mut edge = edge0.clone();
            let mut rounds = 0;
            loop {
                let b = sync_step(&cloud, edge.last_sync_time(), limit);
                apply_batch(&mut edge, &b.records, b.max_time);
                rounds += 1;
                if !b.more {
                    break;
                }
                ensure(rounds <= target.len() + 1, || {
                    format!("pair {pair} limit {limit} does not terminate")
                })?;
            }
            let have: BTreeSet<&HmmRecord> = edge.records().collect();
            ensure(have.is_superset(&target), || {
                format!("pair {pair} limit {limit}: edge misses records")
            })?;
            if limit >= missing {
                ensure(rounds <= 2, || {
                    format!("pair {pair} limit {limit}: {rounds} rounds for {missing} records")
                })?;
            }
            max_rounds = max_rounds.max(rounds);
        }
    }
    Ok(format!("200 pairs, up to {max_rounds} rounds at limit 1"))
}

fn conservation() -> Outcome {
    let runs: Vec<Result<(usize, usize), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..20u64)
            .map(|seed| {
                s.spawn(move || {
                    let cfg = ScenarioConfig {
                        mode: Mode::FoggyEdge,
                        seed: 1000 + seed,
                        duration_s: 60.0,
                        rate: 9.0,
                        fog_mean_parking_s: 6.0,
                        fog_arrival_rate: 1.0,
                        ..ScenarioConfig::default()
                    };
                    let mut w = World::new(cfg.clone()).map_err(|e| e.to_string())?;
                    let v = w.run().to_vec();
                    ensure(v.is_empty(), || format!("seed {}: {v:?}", cfg.seed))?;
                    let mut nodes = vec![w.cloud_resources()];
                    nodes.extend((0..cfg.edges).map(|k| w.edge_resources(k)));
                    nodes.extend(w.parked_resources());
                    for r in &nodes {
                        ensure(r.available() == r.initial(), || {
                            format!(
                                "seed {}: {} of {} units free",
                                cfg.seed,
                                r.available(),
                                r.initial()
                            )
                        })?;
                    }
                    for h in w.handed_over() {
                        let spec = cfg.catalog.get(&h.microservice).ok_or("unknown service")?;
                        ensure(h.work_done == spec.base_duration * REFERENCE_SPEED, || {
                            format!(
                                "seed {}: instance {} did {} of {}",
                                cfg.seed, h.instance, h.work_done, spec.base_duration
                            )
                        })?;
                    }
                    Ok((nodes.len(), w.handed_over().len()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread"))
            .collect()
    });
    let mut handed = 0;
    for r in runs {
        handed += r?.1;
    }
    ensure(handed > 0, || {
        "no instance was handed over in any run".into()
    })?;
    Ok(format!("20 seeds, {handed} handed-over instances"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut total = 0;
    for mode in Mode::ALL {
        let cfg = ScenarioConfig {
            mode,
            rate: 6.0,
            ..ScenarioConfig::default()
        };
        let mut files = Vec::new();
        for run in 0..2 {
            let r = run_scenario(&cfg).map_err(|e| e.to_string())?;
            let path = dir.path().join(format!("{mode}-{run}.bin"));
            std::fs::write(&path, &r.trace).map_err(|e| e.to_string())?;
            files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        ensure(files[0] == files[1], || format!("{mode}: traces differ"))?;
        let d = diff_traces(&files[0], &files[1]).map_err(|e| e.to_string())?;
        ensure(matches!(d, TraceDiff::Identical { .. }), || {
            format!("{mode}: {d}")
        })?;
        total += files[0].len();
    }
    Ok(format!("{total} trace bytes replayed identically"))
}

const NAME_ALPHABET: &[&str] = &[
    "FE:/", "/", "|", "?", ",", " ", "a", "Z", "9", "_", "-", "é", "\t", "ab", "FE:", ":",
];

fn name_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut accepted, mut checked) = (0u64, 0u64);
    for n in 0..1_000_000u32 {
        let raw: String = match n % 3 {
            0 => {
                let len = rng.random_range(0..48);
                let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            1 => {
                let mut s = String::from(if rng.random_bool(0.9) { "FE:/" } else { "" });
                for _ in 0..rng.random_range(0..14) {
                    s.push_str(NAME_ALPHABET[rng.random_range(0..NAME_ALPHABET.len())]);
                }
                s
            }
            _ => {
                // Well-formed shape with random components, padding and params.
                let part = |rng: &mut ChaCha8Rng| -> String {
                    (0..rng.random_range(0..5))
                        .map(|_| NAME_ALPHABET[rng.random_range(5..NAME_ALPHABET.len())])
                        .collect()
                };
                let mut s = format!(
                    "FE:/{}/{}/{}|{}",
                    part(&mut rng),
                    part(&mut rng),
                    part(&mut rng),
                    part(&mut rng)
                );
                if rng.random_bool(0.6) {
                    let params: Vec<String> = (0..rng.random_range(1..4))
                        .map(|_| part(&mut rng))
                        .collect();
                    s.push('?');
                    s.push_str(&params.join(","));
                }
                s
            }
        };
        checked += 1;
        let parsed = catch_unwind(|| parse_name(&raw))
            .map_err(|_| format!("parse_name panicked on {raw:?}"))?;
        if let Ok(name) = parsed {
            accepted += 1;
            let text = serialize_name(&name);
            ensure(parse_name(&text).as_ref() == Ok(&name), || {
                format!("{raw:?} -> {text:?} does not round-trip")
            })?;
        }
    }
    ensure(accepted > 0, || "no input was accepted".into())?;
    Ok(format!(
        "{checked} inputs, {accepted} accepted and round-tripped"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("low-rate equivalence", low_rate_equivalence),
        ("saturation ordering", saturation_ordering),
        ("case-1 dominance at rate 1", case1_dominance),
        ("single-request oracle", single_request_oracle),
        ("PIT aggregation", pit_aggregation),
        ("R-PIT path equality", rpit_path_equality),
        ("HMM sync convergence", sync_convergence),
        ("resource and work conservation", conservation),
        ("trace determinism", determinism),
        ("name grammar fuzzing", name_fuzz),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (idx, (title, check)) in criteria.into_iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} {title}: PASS ({detail})", idx + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {title}: FAIL ({why})", idx + 1);
            }
        }
    }
    let _ = std::panic::take_hook();
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
