//! Report files. CSVs carry metrics only, so they are byte-reproducible; the
//! JSON summary additionally records wall-clock timings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::run::{Metric, RunRecord};
use super::sweep::SweepPoint;
use crate::error::{Error, Result};
use crate::metrics::reports_csv;

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `flow.csv`, `baseline.csv` (when present) and `summary.json`.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    if !record.flow.is_empty() {
        write(&dir.join("flow.csv"), &reports_csv(&record.flow))?;
    }
    if !record.baseline.is_empty() {
        write(&dir.join("baseline.csv"), &reports_csv(&record.baseline))?;
    }
    write(&dir.join("summary.json"), &serde_json::to_string_pretty(record)?)
}

/// Plot-ready `x,y,y_err` rows: seed mean and population std of a metric.
pub fn sweep_csv(points: &[SweepPoint], baseline: bool, metric: Metric) -> String {
    let mut out = String::from("x,y,y_err\n");
    for p in points {
        if let Some((m, s)) = p.summary(baseline, metric) {
            let _ = writeln!(out, "{},{},{}", p.x, m, s);
        }
    }
    out
}

/// One subdirectory per point plus `<name>_<detector>_<metric>.csv` curves.
pub fn write_sweep(points: &[SweepPoint], name: &str, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    for p in points {
        write_run(&p.record, &dir.join(format!("{name}_{}", p.x)))?;
    }
    for (baseline, det) in [(false, "flow"), (true, "baseline")] {
        for (metric, m) in [(Metric::Auroc, "auroc"), (Metric::AucRecallK, "auc_recall_k")] {
            let csv = sweep_csv(points, baseline, metric);
            if csv.lines().count() > 1 {
                write(&dir.join(format!("{name}_{det}_{m}.csv")), &csv)?;
            }
        }
    }
    Ok(())
}
