//! File outputs: regret-series CSV, bound-overlay CSV, config sidecar, and
//! generated plot scripts.
//!
//! Column orders are fixed. Floats are written with Rust's shortest
//! round-trip formatting, so identical runs produce byte-identical files.

use std::io::{self, Write};

use crate::bounds::BoundCurve;
use crate::sim::{RegretSeries, SimConfig};

/// Series CSV: `t,queue,psi,halfwidth,regen_age_mean,explore_frac`, one
/// row per (recorded slot, queue). `explore_frac` is the mean cumulative
/// exploration count up to `t` divided by `t`; it repeats across queues.
pub fn write_series_csv<W: Write>(series: &RegretSeries, out: &mut W) -> io::Result<()> {
    writeln!(out, "t,queue,psi,halfwidth,regen_age_mean,explore_frac")?;
    for (s, &t) in series.times.iter().enumerate() {
        let frac = series.explore_frac(s);
        for u in 0..series.queues {
            writeln!(
                out,
                "{t},{u},{},{},{},{}",
                series.psi[s][u], series.half_width[s][u], series.regen_age[s][u], frac
            )?;
        }
    }
    Ok(())
}

/// Bound-overlay CSV: `t,bound_name,value,valid_flag`, rows grouped by
/// curve in the order produced.
pub fn write_bounds_csv<W: Write>(curves: &[BoundCurve], out: &mut W) -> io::Result<()> {
    writeln!(out, "t,bound_name,value,valid_flag")?;
    for curve in curves {
        for p in &curve.points {
            writeln!(out, "{},{},{},{}", p.t, curve.name, p.value, p.valid as u8)?;
        }
    }
    Ok(())
}

/// Sidecar JSON holding the full run configuration, including the master
/// seed, so any CSV can be regenerated.
pub fn write_sidecar<W: Write>(cfg: &SimConfig, out: &mut W) -> io::Result<()> {
    let doc = serde_json::json!({
        "schema_version": 1,
        "config": cfg,
    });
    serde_json::to_writer_pretty(&mut *out, &doc)?;
    writeln!(out)
}

/// One curve entry for a generated plot script.
pub struct PlotEntry {
    pub label: String,
    pub series_csv: String,
    pub bounds_csv: Option<String>,
}

/// Emits a self-contained Python script that renders the log-log regret
/// curves (and any bound overlays) for one experiment.
///
/// Script grammar: a fixed preamble, then three assignments — `SERIES`
/// (list of `(label, csv_path)`), `BOUNDS` (list of `(label, csv_path)`),
/// `OUTPUT` (png path) — then a fixed body that reads the CSVs relative to
/// the script's directory. Paths are embedded verbatim.
pub fn plot_script(title: &str, entries: &[PlotEntry]) -> String {
    let mut series_rows = String::new();
    let mut bounds_rows = String::new();
    for e in entries {
        series_rows.push_str(&format!("    ({:?}, {:?}),\n", e.label, e.series_csv));
        if let Some(b) = &e.bounds_csv {
            bounds_rows.push_str(&format!("    ({:?}, {:?}),\n", e.label, b));
        }
    }
    format!(
        r#"#!/usr/bin/env python3
"""Log-log queue-regret curves for {title}.

Reads the CSVs listed below (paths relative to this script) and writes
OUTPUT. Regret rows with nonpositive psi are skipped on the log axes;
bound overlays are dashed where their validity flag is set and dotted
where it is not.
"""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

SERIES = [
{series_rows}]
BOUNDS = [
{bounds_rows}]
OUTPUT = {output:?}

HERE = os.path.dirname(os.path.abspath(__file__))


def read_series(path):
    by_queue = {{}}
    with open(os.path.join(HERE, path)) as fh:
        for row in csv.DictReader(fh):
            q = int(row["queue"])
            by_queue.setdefault(q, []).append(
                (int(row["t"]), float(row["psi"]), float(row["halfwidth"]))
            )
    return by_queue


def read_bounds(path):
    by_name = {{}}
    with open(os.path.join(HERE, path)) as fh:
        for row in csv.DictReader(fh):
            by_name.setdefault(row["bound_name"], []).append(
                (int(row["t"]), float(row["value"]), row["valid_flag"] == "1")
            )
    return by_name


fig, ax = plt.subplots(figsize=(8, 5))
for label, path in SERIES:
    for queue, rows in sorted(read_series(path).items()):
        pts = [(t, psi, hw) for t, psi, hw in rows if psi > 0]
        if not pts:
            print(f"note: no positive regret points in {{path}} queue {{queue}}",
                  file=sys.stderr)
            continue
        ts = [p[0] for p in pts]
        psis = [p[1] for p in pts]
        name = label if len(rows) == len(pts) or queue == 0 else f"{{label}} q{{queue}}"
        (line,) = ax.loglog(ts, psis, label=name)
        lo = [max(p[1] - p[2], 1e-12) for p in pts]
        hi = [p[1] + p[2] for p in pts]
        ax.fill_between(ts, lo, hi, alpha=0.2, color=line.get_color())

for label, path in BOUNDS:
    for name, rows in sorted(read_bounds(path).items()):
        valid = [(t, v) for t, v, ok in rows if ok and v > 0]
        invalid = [(t, v) for t, v, ok in rows if not ok and v > 0]
        if valid:
            ax.loglog(*zip(*valid), linestyle="--", linewidth=1,
                      label=f"{{name}} (valid window)")
        if invalid:
            ax.loglog(*zip(*invalid), linestyle=":", linewidth=1, alpha=0.5,
                      label=f"{{name}} (outside window)")

ax.set_xlabel("t (slots)")
ax.set_ylabel("queue-regret estimate")
ax.set_title({title:?})
ax.legend(fontsize=7)
ax.grid(True, which="both", alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(HERE, OUTPUT), dpi=150)
print(f"wrote {{OUTPUT}}")
"#,
        title = title,
        series_rows = series_rows,
        bounds_rows = bounds_rows,
        output = format!("{title}.png"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::ProblemInstance;
    use crate::policies::PolicyKind;
    use crate::sim::{estimate_regret, RecordGrid, SimConfig};

    fn tiny_series() -> (SimConfig, crate::sim::RegretSeries) {
        let inst =
            ProblemInstance::validate(1, 2, vec![0.3], vec![vec![0.6, 0.4]]).unwrap();
        let mut cfg = SimConfig::new(inst, PolicyKind::Thompson, 50, 8, 42);
        cfg.record = RecordGrid::Explicit(vec![10, 50]);
        let series = estimate_regret(&cfg).unwrap();
        (cfg, series)
    }

    #[test]
    fn series_csv_layout() {
        let (_, series) = tiny_series();
        let mut buf = Vec::new();
        write_series_csv(&series, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,queue,psi,halfwidth,regen_age_mean,explore_frac");
        assert_eq!(lines.len(), 1 + 2);
        assert!(lines[1].starts_with("10,0,"));
        assert!(lines[2].starts_with("50,0,"));

        let mut again = Vec::new();
        write_series_csv(&series, &mut again).unwrap();
        assert_eq!(text.as_bytes(), &again[..]);
    }

    #[test]
    fn bounds_csv_layout() {
        let inst =
            ProblemInstance::validate(1, 2, vec![0.3], vec![vec![0.6, 0.4]]).unwrap();
        let curves = crate::bounds::bound_curves(&inst, 0.5, 3.0, &[10, 100]).unwrap();
        let mut buf = Vec::new();
        write_bounds_csv(&curves, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,bound_name,value,valid_flag\n"));
        assert!(text.contains("late_stage_lb"));
        assert!(text.contains(",1\n") || text.contains(",0\n"));
    }

    #[test]
    fn sidecar_round_trips_master_seed() {
        let (cfg, _) = tiny_series();
        let mut buf = Vec::new();
        write_sidecar(&cfg, &mut buf).unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(doc["schema_version"], 1);
        assert_eq!(doc["config"]["master_seed"], 42);
        assert_eq!(doc["config"]["policy"], "thompson");
        assert_eq!(doc["config"]["instance"]["U"], 1);
    }

    #[test]
    fn plot_script_embeds_entries() {
        let script = plot_script(
            "demo",
            &[PlotEntry {
                label: "qths".into(),
                series_csv: "demo_qths.csv".into(),
                bounds_csv: Some("demo_qths_bounds.csv".into()),
            }],
        );
        assert!(script.contains("demo_qths.csv"));
        assert!(script.contains("demo_qths_bounds.csv"));
        assert!(script.contains("OUTPUT = \"demo.png\""));
    }
}
