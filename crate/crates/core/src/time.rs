//! Simulated time. One tick is one microsecond.

pub type Ticks = u64;

pub const TICKS_PER_SEC: u64 = 1_000_000;

/// Converts seconds to ticks, rounding to the nearest tick.
pub fn secs_to_ticks(secs: f64) -> Ticks {
    debug_assert!(secs >= 0.0 && secs.is_finite());
    (secs * TICKS_PER_SEC as f64).round() as Ticks
}

pub fn ticks_to_secs(t: Ticks) -> f64 {
    t as f64 / TICKS_PER_SEC as f64
}
