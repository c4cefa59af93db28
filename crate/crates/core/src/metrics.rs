//! Per-request outcomes and computation satisfaction delay statistics.

use std::fmt;

use crate::naming::FeName;
use crate::time::{ticks_to_secs, Ticks, TICKS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RequestDrop {
    AccessDenied,
    Timeout,
    UnknownService,
    /// Still unresolved when the run stopped.
    InFlight,
}

impl fmt::Display for RequestDrop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RequestDrop::AccessDenied => "access_denied",
            RequestDrop::Timeout => "timeout",
            RequestDrop::UnknownService => "unknown_service",
            RequestDrop::InFlight => "in_flight",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub id: u64,
    pub name: FeName,
    pub consumer: u16,
    pub created_at: Ticks,
    pub satisfied_at: Option<Ticks>,
    /// Offloading case 1 to 4 of the execution that answered the request.
    pub case: Option<u8>,
    pub drop_reason: Option<RequestDrop>,
    pub attempts: u32,
}

impl RequestRecord {
    pub fn csd(&self) -> Option<Ticks> {
        self.satisfied_at.map(|t| t - self.created_at)
    }

    pub fn is_resolved(&self) -> bool {
        self.satisfied_at.is_some() || self.drop_reason.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsdStats {
    pub generated: u64,
    pub satisfied: u64,
    /// Seconds; `None` when nothing was satisfied.
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub satisfaction_rate: f64,
    /// Satisfied requests per offloading case 1..4.
    pub cases: [u64; 4],
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[Ticks], p: f64) -> Ticks {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Statistics over requests created at or after `warmup`.
pub fn compute_csd(records: &[RequestRecord], warmup: Ticks) -> CsdStats {
    let counted: Vec<&RequestRecord> = records.iter().filter(|r| r.created_at >= warmup).collect();
    let mut csds: Vec<Ticks> = counted.iter().filter_map(|r| r.csd()).collect();
    csds.sort_unstable();
    let mut cases = [0u64; 4];
    for r in &counted {
        if let (Some(_), Some(c @ 1..=4)) = (r.satisfied_at, r.case) {
            cases[c as usize - 1] += 1;
        }
    }
    let generated = counted.len() as u64;
    let satisfied = csds.len() as u64;
    let (mean, p50, p95) = if csds.is_empty() {
        (None, None, None)
    } else {
        let sum: u128 = csds.iter().map(|&c| c as u128).sum();
        (
            Some(sum as f64 / csds.len() as f64 / TICKS_PER_SEC as f64),
            Some(ticks_to_secs(percentile(&csds, 0.5))),
            Some(ticks_to_secs(percentile(&csds, 0.95))),
        )
    };
    CsdStats {
        generated,
        satisfied,
        mean,
        p50,
        p95,
        satisfaction_rate: if generated == 0 {
            0.0
        } else {
            satisfied as f64 / generated as f64
        },
        cases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naming::parse_name;
    use crate::time::secs_to_ticks;

    fn rec(created: f64, csd: Option<f64>) -> RequestRecord {
        RequestRecord {
            id: 0,
            name: parse_name("FE:/A/B/C|s").unwrap(),
            consumer: 0,
            created_at: secs_to_ticks(created),
            satisfied_at: csd.map(|c| secs_to_ticks(created + c)),
            case: csd.map(|_| 1),
            drop_reason: if csd.is_none() {
                Some(RequestDrop::Timeout)
            } else {
                None
            },
            attempts: 1,
        }
    }

    #[test]
    fn mean_of_three() {
        let s = compute_csd(
            &[
                rec(1.0, Some(0.1)),
                rec(2.0, Some(0.2)),
                rec(3.0, Some(0.3)),
            ],
            0,
        );
        assert!((s.mean.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(s.p50, Some(0.2));
        assert_eq!(s.cases, [3, 0, 0, 0]);
    }

    #[test]
    fn nothing_satisfied() {
        let s = compute_csd(&[rec(1.0, None)], 0);
        assert_eq!((s.mean, s.p95, s.satisfaction_rate), (None, None, 0.0));
        assert_eq!(s.generated, 1);
    }

    #[test]
    fn p95_of_equal_values() {
        let rs: Vec<_> = (0..100).map(|k| rec(k as f64, Some(0.25))).collect();
        assert_eq!(compute_csd(&rs, 0).p95, Some(0.25));
    }

    #[test]
    fn warmup_is_excluded() {
        let s = compute_csd(
            &[rec(0.5, Some(9.0)), rec(2.0, Some(0.2))],
            secs_to_ticks(1.0),
        );
        assert_eq!(s.generated, 1);
        assert_eq!(s.mean, Some(0.2));
    }
}
