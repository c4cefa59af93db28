//! Scenario runs, mode-by-rate sweeps and their text outputs: the summary
//! CSV, the plain-text report and a static SVG plot.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{Mode, ScenarioConfig};
use crate::metrics::{compute_csd, CsdStats, RequestRecord};
use crate::sim::{HandoverOutcome, SimError, SimStats, World};

pub const CSV_HEADER: &str = "rate,mode,mean_csd,p95_csd,satisfaction_rate,case1,case2,case3,case4";

/// Minimum relative gap between neighbouring modes at saturation.
pub const ORDERING_GAP: f64 = 0.05;
/// Rates from which the saturation ordering is expected to hold.
pub const SATURATION_RATE: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: Mode,
    pub rate: f64,
    pub seed: u64,
    pub csd: CsdStats,
    pub sim: SimStats,
    pub records: Vec<RequestRecord>,
    pub handed_over: Vec<HandoverOutcome>,
    pub violations: Vec<String>,
    pub trace: Vec<u8>,
    pub wall: Duration,
}

impl RunReport {
    pub fn row(&self) -> SummaryRow {
        SummaryRow {
            rate: self.rate,
            mode: self.mode,
            mean_csd: self.csd.mean,
            p95_csd: self.csd.p95,
            satisfaction_rate: self.csd.satisfaction_rate,
            cases: self.csd.cases,
        }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, SimError> {
    let started = Instant::now();
    let mut w = World::new(cfg.clone())?;
    w.run();
    Ok(RunReport {
        mode: cfg.mode,
        rate: cfg.rate,
        seed: cfg.seed,
        csd: compute_csd(w.records(), cfg.warmup()),
        sim: w.stats().clone(),
        records: w.records().to_vec(),
        handed_over: w.handed_over().to_vec(),
        violations: w.violations().to_vec(),
        trace: w.trace().bytes().to_vec(),
        wall: started.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rate: f64,
    pub mode: Mode,
    pub mean_csd: Option<f64>,
    pub p95_csd: Option<f64>,
    pub satisfaction_rate: f64,
    pub cases: [u64; 4],
}

#[derive(Debug, Clone)]
pub struct Sweep {
    /// Ordered by rate, then mode.
    pub reports: Vec<RunReport>,
}

impl Sweep {
    pub fn rows(&self) -> Vec<SummaryRow> {
        self.reports.iter().map(RunReport::row).collect()
    }

    pub fn violations(&self) -> Vec<String> {
        self.reports
            .iter()
            .flat_map(|r| {
                r.violations
                    .iter()
                    .map(move |v| format!("{} @ {}: {v}", r.mode, r.rate))
            })
            .collect()
    }
}

/// Runs every mode at every rate with the same seed, one thread per cell.
pub fn sweep(cfg: &ScenarioConfig, rates: &[f64]) -> Result<Sweep, SimError> {
    let cells: Vec<ScenarioConfig> = rates
        .iter()
        .flat_map(|&rate| {
            Mode::ALL.into_iter().map(move |mode| {
                let mut c = cfg.clone();
                c.rate = rate;
                c.mode = mode;
                c
            })
        })
        .collect();
    let results: Vec<Result<RunReport, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|c| s.spawn(move || run_scenario(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    });
    Ok(Sweep {
        reports: results.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Outcome of the saturation-ordering self-check at one rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub rate: f64,
    pub fe: Option<f64>,
    pub eo: Option<f64>,
    pub co: Option<f64>,
    pub holds: bool,
}

fn mean_of(rows: &[SummaryRow], rate: f64, mode: Mode) -> Option<f64> {
    rows.iter()
        .find(|r| r.rate == rate && r.mode == mode)
        .and_then(|r| r.mean_csd)
}

/// `a` is below `b` by at least the configured relative gap.
pub fn clearly_below(a: f64, b: f64) -> bool {
    a < b && (b - a) >= ORDERING_GAP * b
}

/// FoggyEdge < EdgeOnly < CloudOnly with clear gaps, at every saturated rate.
pub fn ordering_checks(rows: &[SummaryRow]) -> Vec<OrderingCheck> {
    let mut rates: Vec<f64> = rows
        .iter()
        .map(|r| r.rate)
        .filter(|&r| r >= SATURATION_RATE)
        .collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    rates
        .into_iter()
        .map(|rate| {
            let fe = mean_of(rows, rate, Mode::FoggyEdge);
            let eo = mean_of(rows, rate, Mode::EdgeOnly);
            let co = mean_of(rows, rate, Mode::CloudOnly);
            let holds = match (fe, eo, co) {
                (Some(f), Some(e), Some(c)) => clearly_below(f, e) && clearly_below(e, c),
                _ => false,
            };
            OrderingCheck {
                rate,
                fe,
                eo,
                co,
                holds,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut put = |rec: Vec<String>| w.write_record(rec).expect("in-memory csv write");
    put(CSV_HEADER.split(',').map(String::from).collect());
    for r in rows {
        let mut rec = vec![
            r.rate.to_string(),
            r.mode.to_string(),
            opt(r.mean_csd),
            opt(r.p95_csd),
            r.satisfaction_rate.to_string(),
        ];
        rec.extend(r.cases.iter().map(u64::to_string));
        put(rec);
    }
    let bytes = w.into_inner().expect("in-memory csv flush");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CsvError {
    #[error("unexpected header `{0}`")]
    Header(String),
    #[error("line {line}: {why}")]
    Row { line: u64, why: String },
}

pub fn read_csv(text: &str) -> Result<Vec<SummaryRow>, CsvError> {
    let mut rd = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rd
        .headers()
        .map(|h| h.iter().collect::<Vec<_>>().join(","))
        .unwrap_or_default();
    if header != CSV_HEADER {
        return Err(CsvError::Header(header));
    }
    rd.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CsvError::Row {
                line: e.position().map_or(0, |p| p.line()),
                why: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let err = |why: String| CsvError::Row { line, why };
            if rec.len() != 9 {
                return Err(err(format!("expected 9 fields, got {}", rec.len())));
            }
            let f = |i: usize| &rec[i];
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| err(format!("bad number `{s}`")))
            };
            let maybe = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            let count = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| err(format!("bad count `{s}`")))
            };
            Ok(SummaryRow {
                rate: num(f(0))?,
                mode: f(1).parse().map_err(err)?,
                mean_csd: maybe(f(2))?,
                p95_csd: maybe(f(3))?,
                satisfaction_rate: num(f(4))?,
                cases: [count(f(5))?, count(f(6))?, count(f(7))?, count(f(8))?],
            })
        })
        .collect()
}

fn ms(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{:.1}", x * 1000.0))
}

/// Plain-text summary table with the ordering self-check.
pub fn report_text(rows: &[SummaryRow], violations: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5}  {:<10} {:>10} {:>10} {:>7}  {:>6} {:>6} {:>6} {:>6}",
        "rate", "mode", "mean_ms", "p95_ms", "sat", "case1", "case2", "case3", "case4"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>5}  {:<10} {:>10} {:>10} {:>7.3}  {:>6} {:>6} {:>6} {:>6}",
            r.rate,
            r.mode.to_string(),
            ms(r.mean_csd),
            ms(r.p95_csd),
            r.satisfaction_rate,
            r.cases[0],
            r.cases[1],
            r.cases[2],
            r.cases[3]
        );
    }
    let checks = ordering_checks(rows);
    if !checks.is_empty() {
        out.push('\n');
        let all = checks.iter().all(|c| c.holds);
        let _ = writeln!(
            out,
            "saturation ordering (FoggyEdge < EdgeOnly < CloudOnly, gaps >= {:.0}%): {}",
            ORDERING_GAP * 100.0,
            if all { "holds" } else { "VIOLATED" }
        );
        for c in checks.iter().filter(|c| !c.holds) {
            let _ = writeln!(
                out,
                "  rate {}: FE {} EO {} CO {} ms",
                c.rate,
                ms(c.fe),
                ms(c.eo),
                ms(c.co)
            );
        }
    }
    if !violations.is_empty() {
        out.push('\n');
        let _ = writeln!(out, "invariant violations:");
        for v in violations {
            let _ = writeln!(out, "  {v}");
        }
    }
    out
}

/// Network counters of one run.
pub fn stats_text(r: &RunReport) -> String {
    format!("{:#?}\n", r.sim)
}

/// Mean CSD against rate, one polyline per mode.
pub fn plot_svg(rows: &[SummaryRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.mean_csd.map(|m| (r.rate, m * 1000.0)))
        .collect();
    let x_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y_max = pts.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.1;
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let sx =
        |x: f64| PAD + (x - if x_min.is_finite() { x_min } else { 0.0 }) / x_span * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / y_max * (H - 2.0 * PAD);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">requests per second</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">mean CSD (ms)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for k in 0..=4 {
        let y = y_max * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.0}</text>"#,
            PAD - 6.0,
            sy(y) + 4.0,
            y
        );
    }
    let colors = [
        (Mode::FoggyEdge, "#1b7837"),
        (Mode::EdgeOnly, "#2166ac"),
        (Mode::CloudOnly, "#b2182b"),
    ];
    for (idx, (mode, color)) in colors.iter().enumerate() {
        let mut line: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.mode == *mode)
            .filter_map(|r| r.mean_csd.map(|m| (r.rate, m * 1000.0)))
            .collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = line
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let ly = PAD + 16.0 * idx as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}">{mode}</text>"#,
            W - PAD - 80.0
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rate: f64, mode: Mode, mean: Option<f64>) -> SummaryRow {
        SummaryRow {
            rate,
            mode,
            mean_csd: mean,
            p95_csd: mean.map(|m| m * 2.0),
            satisfaction_rate: 0.75,
            cases: [1, 2, 3, 4],
        }
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![
            row(1.0, Mode::FoggyEdge, Some(0.123456789)),
            row(1.0, Mode::CloudOnly, None),
        ];
        assert_eq!(read_csv(&write_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        assert!(matches!(read_csv("a,b\n"), Err(CsvError::Header(_))));
        let bad = format!("{CSV_HEADER}\n1,FoggyEdge,x,,1,0,0,0,0\n");
        assert!(matches!(read_csv(&bad), Err(CsvError::Row { line: 2, .. })));
    }

    #[test]
    fn ordering_needs_clear_gaps() {
        let rows = vec![
            row(5.0, Mode::FoggyEdge, Some(0.90)),
            row(5.0, Mode::EdgeOnly, Some(1.0)),
            row(5.0, Mode::CloudOnly, Some(1.2)),
            row(6.0, Mode::FoggyEdge, Some(0.97)),
            row(6.0, Mode::EdgeOnly, Some(1.0)),
            row(6.0, Mode::CloudOnly, Some(1.2)),
        ];
        let c = ordering_checks(&rows);
        assert!(c[0].holds);
        assert!(!c[1].holds);
        assert!(report_text(&rows, &[]).contains("VIOLATED"));
    }

    #[test]
    fn svg_has_a_line_per_mode() {
        let rows: Vec<_> = Mode::ALL
            .into_iter()
            .flat_map(|m| (1..=3).map(move |r| row(r as f64, m, Some(r as f64 / 10.0))))
            .collect();
        let svg = plot_svg(&rows);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.starts_with("<svg"));
    }
}
