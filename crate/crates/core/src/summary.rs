use std::fmt::Write as _;

use crate::control::{cycle_latency, CycleTiming, ExperimentReport};
use crate::error::{Error, Result};

pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;

/// Mean ASE over the last `fraction` of the measured epochs (at least one
/// epoch when any exist).
pub fn tail_mean_ase(report: &ExperimentReport, fraction: f64) -> f64 {
    let n = report.cycles.len();
    if n == 0 {
        return 0.0;
    }
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    report.cycles[n - k..]
        .iter()
        .map(|c| c.metrics.ase)
        .sum::<f64>()
        / k as f64
}

/// Learning-over-baseline ASE ratio; two zero arms compare as equal.
pub fn ase_ratio(learning: f64, baseline: f64) -> f64 {
    if learning == baseline {
        1.0
    } else {
        learning / baseline
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Totals {
    pub attempts: u64,
    pub successes: u64,
    pub violations: u64,
}

pub fn totals(report: &ExperimentReport) -> Totals {
    report.cycles.iter().fold(
        Totals {
            attempts: 0,
            successes: 0,
            violations: 0,
        },
        |t, c| Totals {
            attempts: t.attempts + c.metrics.attempts,
            successes: t.successes + c.metrics.successes,
            violations: t.violations + c.metrics.primary_violations,
        },
    )
}

fn describe(out: &mut String, report: &ExperimentReport, tail_fraction: f64) {
    let t = totals(report);
    let tau = report.final_threshold;
    let _ = writeln!(out, "[{}] seed {}", report.arm.name(), report.seed());
    let _ = writeln!(
        out,
        "  epochs: {} measured ({} warm-up), {} slots each",
        report.cycles.len(),
        report.warmup_epochs,
        report.config.slots_per_epoch
    );
    let _ = writeln!(
        out,
        "  tail-mean ASE (last {:.0}%): {:.6e} bit/s/Hz/m^2",
        tail_fraction * 100.0,
        tail_mean_ase(report, tail_fraction)
    );
    let _ = writeln!(
        out,
        "  attempts {}  successes {}  primary violations {}",
        t.attempts, t.successes, t.violations
    );
    let _ = writeln!(
        out,
        "  final threshold: {:.3} dBm ({:.6e} W)",
        tau.dbm(),
        tau.watts()
    );
    let _ = writeln!(
        out,
        "  modeled wall time: {:.0} ms over {} cycles",
        report.modeled_wall_ms(),
        report.cycles.len()
    );
}

/// Text summary of one run, optionally compared against a baseline run on
/// the same seed and topology.
pub fn emit_summary(
    learning: &ExperimentReport,
    baseline: Option<&ExperimentReport>,
    tail_fraction: f64,
) -> Result<String> {
    if let Some(b) = baseline {
        if b.seed() != learning.seed() {
            return Err(Error::Comparison(format!(
                "seeds differ: {} vs {}",
                learning.seed(),
                b.seed()
            )));
        }
        if b.topology != learning.topology {
            return Err(Error::Comparison("topologies differ".into()));
        }
    }
    let mut out = String::new();
    describe(&mut out, learning, tail_fraction);
    let timing = CycleTiming::default();
    let _ = writeln!(
        out,
        "cycle latency: {} ms (optimized: {} ms)",
        cycle_latency(&timing, false),
        cycle_latency(&timing, true)
    );
    if let Some(b) = baseline {
        describe(&mut out, b, tail_fraction);
        let ratio = ase_ratio(
            tail_mean_ase(learning, tail_fraction),
            tail_mean_ase(b, tail_fraction),
        );
        let _ = writeln!(
            out,
            "ASE ratio {}/{}: {ratio:.4}",
            learning.arm.name(),
            b.arm.name()
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::control::Experiment;

    fn config() -> SimConfig {
        SimConfig {
            warmup_epochs: 2,
            epochs: 10,
            slots_per_epoch: 10,
            ..SimConfig::default()
        }
    }

    #[test]
    fn without_baseline_has_no_ratio() {
        let r = Experiment::new(config()).unwrap().run_learning().unwrap();
        let text = emit_summary(&r, None, DEFAULT_TAIL_FRACTION).unwrap();
        assert!(!text.contains("ratio"));
        assert!(text.contains("143 ms"));
        assert!(text.contains("27 ms"));
    }

    #[test]
    fn identical_reports_have_unit_ratio() {
        let r = Experiment::new(config()).unwrap().run_learning().unwrap();
        let text = emit_summary(&r, Some(&r), DEFAULT_TAIL_FRACTION).unwrap();
        assert!(
            text.contains("ASE ratio learning/learning: 1.0000"),
            "{text}"
        );
    }

    #[test]
    fn mismatched_seeds_are_rejected() {
        let a = Experiment::new(config()).unwrap().run_learning().unwrap();
        let b = Experiment::new(SimConfig {
            seed: 2,
            ..config()
        })
        .unwrap()
        .run_baseline()
        .unwrap();
        assert!(matches!(
            emit_summary(&a, Some(&b), 0.2),
            Err(Error::Comparison(_))
        ));
    }

    #[test]
    fn tail_window() {
        let r = Experiment::new(config()).unwrap().run_learning().unwrap();
        let last2 = (r.cycles[8].metrics.ase + r.cycles[9].metrics.ase) / 2.0;
        assert!((tail_mean_ase(&r, 0.2) - last2).abs() <= 1e-15);
        let all = r.cycles.iter().map(|c| c.metrics.ase).sum::<f64>() / 10.0;
        assert!((tail_mean_ase(&r, 1.0) - all).abs() <= 1e-15);
        assert_eq!(tail_mean_ase(&r, 0.0), r.cycles[9].metrics.ase);
        assert_eq!(ase_ratio(0.0, 0.0), 1.0);
    }
}
