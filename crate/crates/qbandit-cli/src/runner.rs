//! Executes experiment specs and the standalone bounds evaluation.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use qbandit::bounds::{bound_curves, BoundCurve};
use qbandit::instance::ProblemInstance;
use qbandit::report::{plot_script, write_bounds_csv, write_series_csv, write_sidecar, PlotEntry};
use qbandit::sim::estimate_regret;

use crate::config::{ConfigError, ExperimentSpec, OverlaySpec};

const EXIT_CONFIG: u8 = 1;
const EXIT_INSTANCE: u8 = 2;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn parse_error(path: &Path, err: &serde_json::Error) -> ExitCode {
    eprintln!(
        "error: {}:{}:{}: {err}",
        path.display(),
        err.line(),
        err.column()
    );
    ExitCode::from(EXIT_CONFIG)
}

pub fn run(spec_path: &Path, out_dir_override: Option<&Path>) -> ExitCode {
    let text = match fs::read_to_string(spec_path) {
        Ok(text) => text,
        Err(err) => return fail(EXIT_CONFIG, format!("{}: {err}", spec_path.display())),
    };
    let spec: ExperimentSpec = match serde_json::from_str(&text) {
        Ok(spec) => spec,
        Err(err) => return parse_error(spec_path, &err),
    };
    let resolved = match spec.resolve() {
        Ok(resolved) => resolved,
        Err(err @ ConfigError::Instance { .. }) => return fail(EXIT_INSTANCE, err),
        Err(err) => return fail(EXIT_CONFIG, err),
    };

    let out_dir: PathBuf = out_dir_override
        .map(Path::to_path_buf)
        .or_else(|| resolved.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(err) = fs::create_dir_all(&out_dir) {
        return fail(EXIT_CONFIG, format!("{}: {err}", out_dir.display()));
    }

    let mut entries = Vec::new();
    for run in &resolved.runs {
        let started = Instant::now();
        let series = match estimate_regret(&run.cfg) {
            Ok(series) => series,
            Err(err) => return fail(EXIT_CONFIG, format!("run {:?}: {err}", run.label)),
        };
        let stem = format!("{}_{}", resolved.name, run.label);
        let series_csv = format!("{stem}.csv");
        let sidecar_json = format!("{stem}_config.json");
        let bounds_csv = format!("{stem}_bounds.csv");

        if let Err(err) = (|| -> io::Result<()> {
            let mut w = BufWriter::new(File::create(out_dir.join(&series_csv))?);
            write_series_csv(&series, &mut w)?;
            w.flush()?;
            let mut w = BufWriter::new(File::create(out_dir.join(&sidecar_json))?);
            write_sidecar(&run.cfg, &mut w)?;
            w.flush()
        })() {
            return fail(EXIT_CONFIG, format!("writing {stem}: {err}"));
        }

        let overlay = resolved.overlay.unwrap_or(OverlaySpec {
            alpha: 0.5,
            gamma: 3.0,
        });
        let curves = match bound_curves(&run.cfg.instance, overlay.alpha, overlay.gamma, &series.times)
        {
            Ok(curves) => curves,
            Err(err) => return fail(EXIT_CONFIG, format!("run {:?}: {err}", run.label)),
        };
        if let Err(err) = write_curves(&out_dir.join(&bounds_csv), &curves) {
            return fail(EXIT_CONFIG, format!("writing {bounds_csv}: {err}"));
        }

        println!(
            "run {:>12}: {} episodes x {} slots -> {series_csv} ({:.1}s)",
            run.label,
            run.cfg.episodes,
            run.cfg.horizon,
            started.elapsed().as_secs_f64()
        );
        entries.push(PlotEntry {
            label: run.label.clone(),
            series_csv,
            bounds_csv: Some(bounds_csv),
        });
    }

    let script = plot_script(&resolved.name, &entries);
    let plot_path = out_dir.join(format!("{}_plot.py", resolved.name));
    if let Err(err) = fs::write(&plot_path, script) {
        return fail(EXIT_CONFIG, format!("{}: {err}", plot_path.display()));
    }
    println!("plot script -> {}", plot_path.display());
    ExitCode::SUCCESS
}

fn write_curves(path: &Path, curves: &[BoundCurve]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bounds_csv(curves, &mut w)?;
    w.flush()
}

#[allow(clippy::too_many_arguments)]
pub fn bounds(
    instance_path: &Path,
    alpha: f64,
    gamma: f64,
    t_min: u64,
    t_max: u64,
    per_decade: u32,
    output: Option<&Path>,
) -> ExitCode {
    let text = match fs::read_to_string(instance_path) {
        Ok(text) => text,
        Err(err) => return fail(EXIT_CONFIG, format!("{}: {err}", instance_path.display())),
    };
    let instance: ProblemInstance = match serde_json::from_str(&text) {
        Err(err) if err.is_data() => {
            // Shape was JSON but the rates violate the model.
            return fail(EXIT_INSTANCE, format!("{}: {err}", instance_path.display()));
        }
        Err(err) => return parse_error(instance_path, &err),
        Ok(instance) => instance,
    };
    if t_min < 2 || t_min >= t_max || per_decade == 0 {
        return fail(EXIT_CONFIG, "need 2 <= t_min < t_max and per_decade >= 1");
    }
    let mut grid = Vec::new();
    let mut i = 0u64;
    loop {
        let v = (t_min as f64 * 10f64.powf(i as f64 / per_decade as f64)).round() as u64;
        if v > t_max {
            break;
        }
        if grid.last() != Some(&v) {
            grid.push(v);
        }
        i += 1;
    }
    if grid.last() != Some(&t_max) {
        grid.push(t_max);
    }
    let curves = match bound_curves(&instance, alpha, gamma, &grid) {
        Ok(curves) => curves,
        Err(err) => return fail(EXIT_CONFIG, err),
    };
    let result = match output {
        Some(path) => write_curves(path, &curves),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_bounds_csv(&curves, &mut lock)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => fail(EXIT_CONFIG, err),
    }
}
