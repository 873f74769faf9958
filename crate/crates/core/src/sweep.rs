//! Independent replications of the paired learning/baseline comparison.
//!
//! Replication `r` runs with seed `config.seed + r`. Replications run in
//! parallel; each writes its row to its own file in a scratch directory and
//! the rows are merged in replication order once all have finished.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::SimConfig;
use crate::control::Experiment;
use crate::error::{Error, Result};
use crate::summary::{ase_ratio, tail_mean_ase, totals};

pub const SWEEP_COLUMNS: &str =
    "replication,seed,learning_tail_ase,baseline_tail_ase,ase_ratio,learning_violations,baseline_violations,final_threshold_dbm";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub replication: u64,
    pub seed: u64,
    pub learning_tail_ase: f64,
    pub baseline_tail_ase: f64,
    pub ratio: f64,
    pub learning_violations: u64,
    pub baseline_violations: u64,
    pub final_threshold_dbm: f64,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{},{},{:.9e}\n",
            self.replication,
            self.seed,
            self.learning_tail_ase,
            self.baseline_tail_ase,
            self.ratio,
            self.learning_violations,
            self.baseline_violations,
            self.final_threshold_dbm
        )
    }
}

pub fn run_replication(
    config: &SimConfig,
    replication: u64,
    tail_fraction: f64,
) -> Result<SweepRow> {
    let seed = config.seed.wrapping_add(replication);
    let exp = Experiment::new(SimConfig {
        seed,
        ..config.clone()
    })?;
    let learning = exp.run_learning()?;
    let baseline = exp.run_baseline()?;
    let (l, b) = (
        tail_mean_ase(&learning, tail_fraction),
        tail_mean_ase(&baseline, tail_fraction),
    );
    Ok(SweepRow {
        replication,
        seed,
        learning_tail_ase: l,
        baseline_tail_ase: b,
        ratio: ase_ratio(l, b),
        learning_violations: totals(&learning).violations,
        baseline_violations: totals(&baseline).violations,
        final_threshold_dbm: learning.final_threshold.dbm(),
    })
}

/// Runs `replications` replications and writes the merged CSV to `out`.
pub fn run_sweep(
    config: &SimConfig,
    replications: u64,
    tail_fraction: f64,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let scratch = tempfile::tempdir().map_err(|source| Error::Io {
        path: std::env::temp_dir(),
        source,
    })?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    let rows = (0..replications)
        .into_par_iter()
        .map(|r| {
            let row = run_replication(config, r, tail_fraction)?;
            let part = scratch.path().join(format!("rep-{r:06}.csv"));
            std::fs::write(&part, row.to_csv()).map_err(io(&part))?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut merged = std::fs::File::create(out).map_err(io(out))?;
    writeln!(merged, "{SWEEP_COLUMNS}").map_err(io(out))?;
    for r in 0..replications {
        let part = scratch.path().join(format!("rep-{r:06}.csv"));
        let bytes = std::fs::read(&part).map_err(io(&part))?;
        merged.write_all(&bytes).map_err(io(out))?;
    }
    Ok(rows)
}
