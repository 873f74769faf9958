//! CSV trace of an experiment report.
//!
//! One system row (`slot = -1`, `stx_id = -1`) per measured epoch. In
//! verbose mode each epoch is followed by one row per transmitter summarising
//! its epoch (`slot = -1`) and then one row per transmitter per slot.
//!
//! Column meaning by row kind:
//!
//! | column            | system row               | transmitter epoch row      | slot row                 |
//! |-------------------|--------------------------|----------------------------|--------------------------|
//! | transmitted       | attempts                 | slots with an attempt      | 0/1                      |
//! | success           | successes                | successful slots           | 0/1                      |
//! | sinr_db           | empty                    | empty                      | SINR, empty when silent  |
//! | rate_bps_hz       | mean rate per success    | mean rate per success      | achieved rate            |
//! | access_prob       | mean access probability  | probability used           | probability used         |
//! | opportunity       | mean op-map value        | op-map value               | op-map value             |
//! | threshold_dbm     | threshold for the epoch  | threshold read back        | threshold for the epoch  |
//! | ase               | epoch ASE                | epoch ASE                  | this row's rate per m²   |
//! | primary_violation | violating slots          | violating slots            | 0/1                      |

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::control::ExperimentReport;
use crate::error::{Error, Result};
use crate::units::{linear_to_db, watts_to_dbm};

pub const TRACE_COLUMNS: [&str; 13] = [
    "epoch",
    "slot",
    "stx_id",
    "transmitted",
    "success",
    "sinr_db",
    "rate_bps_hz",
    "access_prob",
    "opportunity",
    "threshold_dbm",
    "ase",
    "primary_violation",
    "cycle_latency_ms",
];

/// Scientific notation with ten significant digits; empty for `None`.
fn num(x: Option<f64>) -> String {
    match x {
        None => String::new(),
        Some(v) if v.is_nan() => "nan".into(),
        Some(v) if v.is_infinite() => if v > 0.0 { "inf" } else { "-inf" }.into(),
        Some(v) => format!("{v:.9e}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: u64,
    pub slot: i64,
    pub stx_id: i64,
    pub transmitted: u64,
    pub success: u64,
    pub sinr_db: Option<f64>,
    pub rate_bps_hz: f64,
    pub access_prob: f64,
    pub opportunity: f64,
    pub threshold_dbm: Option<f64>,
    pub ase: f64,
    pub primary_violation: u64,
    pub cycle_latency_ms: f64,
}

impl TraceRow {
    fn render(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.slot,
            self.stx_id,
            self.transmitted,
            self.success,
            num(self.sinr_db),
            num(Some(self.rate_bps_hz)),
            num(Some(self.access_prob)),
            num(Some(self.opportunity)),
            num(self.threshold_dbm),
            num(Some(self.ase)),
            self.primary_violation,
            num(Some(self.cycle_latency_ms)),
        );
    }
}

pub fn trace_rows(report: &ExperimentReport, verbose: bool) -> Vec<TraceRow> {
    let area = report.topology.area();
    let mut rows = Vec::new();
    for c in &report.cycles {
        let m = &c.metrics;
        let threshold_dbm = watts_to_dbm(m.threshold_snapshot);
        rows.push(TraceRow {
            epoch: m.epoch,
            slot: -1,
            stx_id: -1,
            transmitted: m.attempts,
            success: m.successes,
            sinr_db: None,
            rate_bps_hz: if m.successes > 0 {
                c.rate_sum / m.successes as f64
            } else {
                0.0
            },
            access_prob: m.mean_access_prob,
            opportunity: c.mean_opportunity,
            threshold_dbm: Some(threshold_dbm),
            ase: m.ase,
            primary_violation: m.primary_violations,
            cycle_latency_ms: c.latency_ms,
        });
        if !verbose {
            continue;
        }
        for d in &c.directions {
            rows.push(TraceRow {
                epoch: m.epoch,
                slot: -1,
                stx_id: d.stx_id as i64,
                transmitted: d.tx_slots,
                success: d.success_slots,
                sinr_db: None,
                rate_bps_hz: d.achieved_rate,
                access_prob: d.access_prob,
                opportunity: d.opportunity,
                threshold_dbm: d.learned_threshold.map(watts_to_dbm),
                ase: m.ase,
                primary_violation: m.primary_violations,
                cycle_latency_ms: c.latency_ms,
            });
        }
        for slot in c.slots.iter().flatten() {
            for (o, d) in slot.directions.iter().zip(&c.directions) {
                debug_assert_eq!(o.stx_id, d.stx_id);
                rows.push(TraceRow {
                    epoch: m.epoch,
                    slot: slot.slot as i64,
                    stx_id: o.stx_id as i64,
                    transmitted: o.transmitted as u64,
                    success: o.success as u64,
                    sinr_db: o.transmitted.then(|| linear_to_db(o.sinr)),
                    rate_bps_hz: o.rate,
                    access_prob: d.access_prob,
                    opportunity: d.opportunity,
                    threshold_dbm: Some(threshold_dbm),
                    ase: o.rate / area,
                    primary_violation: slot.primary_violation as u64,
                    cycle_latency_ms: c.latency_ms,
                });
            }
        }
    }
    rows
}

pub fn render_trace(report: &ExperimentReport, verbose: bool) -> String {
    let mut out = TRACE_COLUMNS.join(",");
    out.push('\n');
    for row in trace_rows(report, verbose) {
        row.render(&mut out);
    }
    out
}

pub fn write_trace(report: &ExperimentReport, path: &Path, verbose: bool) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(render_trace(report, verbose).as_bytes())
        .map_err(io)?;
    f.flush().map_err(io)
}
