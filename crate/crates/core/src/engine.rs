//! Discrete-event core: a totally ordered event queue, link delay models and
//! the one-dimensional road mobility model.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::time::{secs_to_ticks, ticks_to_secs, Ticks, TICKS_PER_SEC};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    TimeTravel { at: Ticks, now: Ticks },
}

/// Events ordered by `(time, seq)`; `seq` is the insertion counter, so
/// same-time events run in the order they were scheduled.
#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    now: Ticks,
    next_seq: u64,
    events: BTreeMap<(Ticks, u64), E>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            now: 0,
            next_seq: 0,
            events: BTreeMap::new(),
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Ticks {
        self.now
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn schedule(&mut self, at: Ticks, event: E) -> Result<u64, EngineError> {
        if at < self.now {
            return Err(EngineError::TimeTravel { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.insert((at, seq), event);
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: Ticks, event: E) -> u64 {
        self.schedule(self.now + delay, event)
            .expect("a relative delay never lands in the past")
    }

    pub fn peek_time(&self) -> Option<Ticks> {
        self.events.keys().next().map(|&(t, _)| t)
    }

    /// Removes the next event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<(Ticks, u64, E)> {
        let ((t, seq), e) = self.events.pop_first()?;
        debug_assert!(t >= self.now);
        self.now = t;
        Some((t, seq, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Wired,
    Adhoc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub kind: LinkKind,
    pub latency: Ticks,
    /// Bytes per second.
    pub bandwidth: u64,
    /// Radio range in meters; ignored for wired links.
    pub range: f64,
}

impl Link {
    pub fn wired(latency_s: f64, bandwidth: u64) -> Self {
        Link {
            kind: LinkKind::Wired,
            latency: secs_to_ticks(latency_s),
            bandwidth,
            range: f64::INFINITY,
        }
    }

    pub fn adhoc(latency_s: f64, bandwidth: u64, range: f64) -> Self {
        Link {
            kind: LinkKind::Adhoc,
            latency: secs_to_ticks(latency_s),
            bandwidth,
            range,
        }
    }

    /// Serialization time of `bytes`, rounded up to whole ticks.
    pub fn transmit_time(&self, bytes: u64) -> Ticks {
        (bytes as u128 * TICKS_PER_SEC as u128).div_ceil(self.bandwidth as u128) as Ticks
    }

    pub fn delivery_delay(&self, bytes: u64) -> Ticks {
        self.latency + self.transmit_time(bytes)
    }
}

/// Receivers of an ad-hoc transmission: every candidate whose position is
/// within `range` of the sender. Candidates are returned in input order.
pub fn adhoc_receivers<N: Copy>(
    sender_pos: f64,
    range: f64,
    candidates: impl IntoIterator<Item = (N, f64)>,
) -> Vec<N> {
    candidates
        .into_iter()
        .filter(|&(_, p)| (p - sender_pos).abs() <= range)
        .map(|(n, _)| n)
        .collect()
}

/// Position and velocity on a straight road, valid from `at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: f64,
    pub speed: f64,
    /// +1 toward increasing positions, -1 otherwise.
    pub direction: i8,
    pub at: Ticks,
}

impl Kinematics {
    pub fn new(position: f64, speed: f64, direction: i8, at: Ticks) -> Self {
        Kinematics {
            position,
            speed: speed.abs(),
            direction: if direction < 0 { -1 } else { 1 },
            at,
        }
    }

    pub fn velocity(&self) -> f64 {
        self.speed * self.direction as f64
    }

    /// Linear extrapolation; callers keep `t` before the next update.
    pub fn position_at(&self, t: Ticks) -> f64 {
        let dt = ticks_to_secs(t.saturating_sub(self.at));
        self.position + self.velocity() * dt
    }

    pub fn advanced_to(&self, t: Ticks) -> Kinematics {
        Kinematics {
            position: self.position_at(t),
            at: t,
            ..*self
        }
    }
}

/// Seconds until a vehicle moving at constant velocity leaves the circle of
/// `radius` around `center`. Infinite when it is not moving.
pub fn time_in_range(k: &Kinematics, center: f64, radius: f64, now: Ticks) -> f64 {
    if k.speed == 0.0 {
        return f64::INFINITY;
    }
    let x = k.position_at(now) - center;
    let v = k.velocity();
    let boundary = if v > 0.0 { radius } else { -radius };
    ((boundary - x) / v).max(0.0)
}

/// Seconds until a vehicle on the road `[0, road_len]`, reflecting at both
/// ends, leaves range of `center`. At most one reflection can happen inside
/// a range, so the answer is closed form.
pub fn time_in_range_on_road(
    k: &Kinematics,
    center: f64,
    radius: f64,
    road_len: f64,
    now: Ticks,
) -> (f64, i8) {
    if k.speed == 0.0 {
        return (f64::INFINITY, k.direction);
    }
    let x = k.position_at(now).clamp(0.0, road_len);
    let (lo, hi) = (center - radius, center + radius);
    if k.direction > 0 {
        if hi < road_len {
            ((hi - x).max(0.0) / k.speed, 1)
        } else if lo > 0.0 {
            ((road_len - x + road_len - lo).max(0.0) / k.speed, -1)
        } else {
            (f64::INFINITY, 1)
        }
    } else if lo > 0.0 {
        ((x - lo).max(0.0) / k.speed, -1)
    } else if hi < road_len {
        ((x + hi).max(0.0) / k.speed, 1)
    } else {
        (f64::INFINITY, -1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: {why}")]
    Parse { line: usize, why: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub time: Ticks,
    pub position: f64,
    /// Signed: negative moves toward decreasing positions.
    pub speed: f64,
}

impl Waypoint {
    pub fn kinematics(&self) -> Kinematics {
        Kinematics::new(
            self.position,
            self.speed.abs(),
            if self.speed < 0.0 { -1 } else { 1 },
            self.time,
        )
    }
}

/// Parses `<vehicle_id> <time_s> <position_m> <speed_mps>` lines. Blank
/// lines and `#` comments are skipped; each vehicle's waypoints must be in
/// non-decreasing time order.
pub fn parse_waypoints(text: &str) -> Result<BTreeMap<String, Vec<Waypoint>>, TraceError> {
    let mut out: BTreeMap<String, Vec<Waypoint>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |why: &str| TraceError::Parse {
            line,
            why: why.to_string(),
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let num = |s: &str, what: &str| -> Result<f64, TraceError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(&format!("bad {what}")))
        };
        let time = num(fields[1], "time")?;
        if time < 0.0 {
            return Err(err("negative time"));
        }
        let wp = Waypoint {
            time: secs_to_ticks(time),
            position: num(fields[2], "position")?,
            speed: num(fields[3], "speed")?,
        };
        let list = out.entry(fields[0].to_string()).or_default();
        if list.last().is_some_and(|p| p.time > wp.time) {
            return Err(err("waypoints out of order"));
        }
        list.push(wp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_times_run_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(5, "a").unwrap();
        q.schedule(5, "b").unwrap();
        q.schedule(1, "c").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, _, e)| e)).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn schedule_now_runs_before_clock_advances() {
        let mut q = EventQueue::new();
        q.schedule(10, 1).unwrap();
        q.schedule(20, 2).unwrap();
        q.pop();
        q.schedule(10, 3).unwrap();
        assert_eq!(q.pop().map(|(t, _, e)| (t, e)), Some((10, 3)));
    }

    #[test]
    fn past_is_rejected() {
        let mut q = EventQueue::new();
        q.schedule(10, ()).unwrap();
        q.pop();
        assert_eq!(
            q.schedule(9, ()),
            Err(EngineError::TimeTravel { at: 9, now: 10 })
        );
    }

    #[test]
    fn link_delay() {
        let l = Link::wired(0.005, 100_000_000);
        assert_eq!(l.delivery_delay(1000), 5_000 + 10);
        let a = Link::adhoc(0.002, 6_000_000, 150.0);
        assert_eq!(a.transmit_time(1), 1);
        assert_eq!(a.delivery_delay(6_000), 2_000 + 1_000);
    }

    #[test]
    fn adhoc_range_boundary() {
        let r = adhoc_receivers(100.0, 150.0, [(1, 250.0), (2, 251.0), (3, -50.0)]);
        assert_eq!(r, vec![1, 3]);
        let lot = adhoc_receivers(0.0, 50.0, [(1, 0.0), (2, 0.0), (3, 0.0)]);
        assert_eq!(lot.len(), 3);
    }

    #[test]
    fn time_in_range_examples() {
        let k = Kinematics::new(0.0, 20.0, 1, 0);
        assert_eq!(time_in_range(&k, 0.0, 100.0, 0), 5.0);
        let k = Kinematics::new(0.0, 0.0, 1, 0);
        assert!(time_in_range(&k, 0.0, 100.0, 0).is_infinite());
        let k = Kinematics::new(-50.0, 10.0, 1, 0);
        assert_eq!(time_in_range(&k, 0.0, 100.0, 0), 15.0);
        let k = Kinematics::new(50.0, 10.0, -1, 0);
        assert_eq!(time_in_range(&k, 0.0, 100.0, 0), 15.0);
    }

    #[test]
    fn road_reflection_in_range() {
        let k = Kinematics::new(100.0, 10.0, -1, 0);
        let (t, side) = time_in_range_on_road(&k, 200.0, 250.0, 1200.0, 0);
        assert_eq!((t, side), (55.0, 1));
        let k = Kinematics::new(300.0, 10.0, 1, 0);
        assert_eq!(
            time_in_range_on_road(&k, 200.0, 250.0, 1200.0, 0),
            (15.0, 1)
        );
        let k = Kinematics::new(1100.0, 10.0, 1, 0);
        assert_eq!(
            time_in_range_on_road(&k, 1000.0, 250.0, 1200.0, 0),
            (55.0, -1)
        );
    }

    #[test]
    fn waypoints_parse() {
        let w = parse_waypoints("# trace\nv1 0 10 5\nv1 2.5 22.5 -5\n\nv2 1 0 0\n").unwrap();
        assert_eq!(w["v1"].len(), 2);
        assert_eq!(w["v1"][1].time, 2_500_000);
        assert_eq!(w["v1"][1].kinematics().direction, -1);
        assert!(parse_waypoints("v1 0 10").is_err());
        assert!(parse_waypoints("v1 2 0 0\nv1 1 0 0").is_err());
        assert!(parse_waypoints("v1 x 0 0").is_err());
    }
}
