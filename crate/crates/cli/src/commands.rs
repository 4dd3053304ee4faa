use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use cacc_core::mpc::ControlMode;
use cacc_core::safety::{min_distance_curve, required_delay_for_clearance};
use cacc_core::sim::{self, format_sig9, ScenarioConfig, SimMetrics, SimTrace};
use plotters::style::RGBColor;
use serde::Serialize;

use crate::config;
use crate::error::CliError;
use crate::plot::{line_chart, Series};

const BLUE: RGBColor = RGBColor(31, 119, 180);
const ORANGE: RGBColor = RGBColor(255, 127, 14);
const GREEN: RGBColor = RGBColor(44, 160, 44);
const RED: RGBColor = RGBColor(214, 39, 40);

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_digest: String,
    pub mode: ControlMode,
    pub seed: u64,
    pub metrics: SimMetrics,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<ControlMode>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(mode) = self.mode {
            cfg.controller.mode = mode;
        }
        if let Some(seed) = self.seed {
            cfg.channel.seed = seed;
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types always serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn cmd_run(config_path: &Path, overrides: &Overrides, out: &Path) -> Result<RunReport, CliError> {
    let mut cfg = config::load(config_path)?;
    overrides.apply(&mut cfg);
    run_config(&cfg, out)
}

pub fn run_config(cfg: &ScenarioConfig, out: &Path) -> Result<RunReport, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let trace = sim::run(cfg)?;
    let metrics = sim::metrics(&trace)?;
    let wall_clock_s = start.elapsed().as_secs_f64();
    log::info!(
        "{:?} run finished in {wall_clock_s:.2} s, min margin {:.3} m",
        cfg.controller.mode,
        metrics.min_safety_margin_m
    );

    create_dir(out)?;
    let mut outputs = Vec::new();
    let trace_path = out.join("trace.csv");
    write_file(&trace_path, trace.to_csv_string().as_bytes())?;
    outputs.push(trace_path);
    let metrics_path = out.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    outputs.push(metrics_path);
    let config_path = out.join("config.json");
    write_json(&config_path, cfg)?;
    outputs.push(config_path);
    outputs.extend(plot_trace(&trace, out)?);

    let report = RunReport {
        config_digest: config::digest(cfg),
        mode: cfg.controller.mode,
        seed: cfg.channel.seed,
        metrics,
        outputs,
        wall_clock_s,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn plot_trace(trace: &SimTrace, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let series = |label, color, f: fn(&sim::TraceRecord) -> f64| Series {
        label,
        color,
        points: trace.records.iter().map(|r| (r.time, f(r))).collect(),
    };
    let charts = [
        (
            "distance.svg",
            "Clearance",
            "distance [m]",
            vec![
                series("d", BLUE, |r| r.lead.position - r.ego.position),
                series("d_safe", RED, |r| r.d_safe),
            ],
        ),
        (
            "speeds.svg",
            "Speeds",
            "speed [m/s]",
            vec![series("lead", ORANGE, |r| r.lead.velocity), series("ego", BLUE, |r| r.ego.velocity)],
        ),
        (
            "accelerations.svg",
            "Accelerations",
            "acceleration [m/s^2]",
            vec![
                series("lead", ORANGE, |r| r.lead.acceleration),
                series("ego command", GREEN, |r| r.command),
                series("ego actuated", BLUE, |r| r.actuated),
            ],
        ),
    ];
    let mut paths = Vec::new();
    for (file, title, y_label, s) in charts {
        let path = out.join(file);
        line_chart(&path, title, "time [s]", y_label, &s)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Inclusive `start:stop:step` sweep, or a single value.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("invalid range '{spec}', expected START:STOP:STEP or a single value"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [v] if v.is_finite() => Ok(vec![v]),
        [start, stop, step] if start.is_finite() && stop.is_finite() && step > 0.0 && start <= stop => {
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

pub struct CurveRequest {
    pub speeds: Vec<f64>,
    pub ego_braking: f64,
    pub lead_braking: Vec<f64>,
    pub delay: f64,
}

/// Rows of `(speed, lead braking, d_safe)`.
pub fn safety_curve(req: &CurveRequest) -> Result<Vec<(f64, f64, f64)>, CliError> {
    let mut rows = Vec::new();
    for &v in &req.speeds {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::Config(format!("speed must be non-negative, got {v}")));
        }
        for (a_l, d) in min_distance_curve(v, req.ego_braking, &req.lead_braking, req.delay)? {
            rows.push((v, a_l, d));
        }
    }
    Ok(rows)
}

pub fn cmd_safety_curve(req: &CurveRequest, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rows = safety_curve(req)?;
    create_dir(out)?;
    let mut csv = String::from("speed_mps,lead_braking_mps2,d_safe_m\n");
    for (v, a, d) in &rows {
        csv.push_str(&format!("{},{},{}\n", format_sig9(*v), format_sig9(*a), format_sig9(*d)));
    }
    let csv_path = out.join("safety_curve.csv");
    write_file(&csv_path, csv.as_bytes())?;

    let palette = [BLUE, RED, GREEN, ORANGE];
    let labels: Vec<String> = req.speeds.iter().map(|v| format!("v = {v} m/s")).collect();
    let series: Vec<Series> = req
        .speeds
        .iter()
        .enumerate()
        .map(|(i, &v)| Series {
            label: &labels[i],
            color: palette[i % palette.len()],
            points: rows.iter().filter(|r| r.0 == v).map(|r| (r.1, r.2)).collect(),
        })
        .collect();
    let svg_path = out.join("safety_curve.svg");
    line_chart(
        &svg_path,
        "Minimum safety distance",
        "lead braking capacity [m/s^2]",
        "d_safe [m]",
        &series,
    )?;
    Ok(vec![csv_path, svg_path])
}

/// Rows of `(speed, delay)` such that `clearance = speed * delay`.
pub fn delay_table(clearance: f64, speeds: &[f64]) -> Result<Vec<(f64, f64)>, CliError> {
    speeds
        .iter()
        .map(|&v| Ok((v, required_delay_for_clearance(clearance, v)?)))
        .collect()
}

pub fn write_delay_table<W: Write>(rows: &[(f64, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "speed_mps,delay_s")?;
    for (v, phi) in rows {
        writeln!(out, "{},{}", format_sig9(*v), format_sig9(*phi))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BatchEntry {
    pub config: PathBuf,
    pub output_dir: PathBuf,
    pub report: Option<RunReport>,
    pub error: Option<String>,
    pub exit_code: i32,
}

/// Run every config in its own output directory on up to `jobs` threads.
pub fn cmd_batch(configs: &[PathBuf], overrides: &Overrides, out: &Path, jobs: usize) -> Result<Vec<BatchEntry>, CliError> {
    create_dir(out)?;
    let mut dirs: Vec<PathBuf> = Vec::with_capacity(configs.len());
    for (i, path) in configs.iter().enumerate() {
        let stem = path.file_stem().map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned());
        let mut dir = out.join(&stem);
        if dirs.contains(&dir) {
            dir = out.join(format!("{stem}-{i}"));
        }
        dirs.push(dir);
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<BatchEntry>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let result = cmd_run(&configs[i], overrides, &dirs[i]);
                let entry = match result {
                    Ok(report) => BatchEntry {
                        config: configs[i].clone(),
                        output_dir: dirs[i].clone(),
                        report: Some(report),
                        error: None,
                        exit_code: 0,
                    },
                    Err(e) => BatchEntry {
                        config: configs[i].clone(),
                        output_dir: dirs[i].clone(),
                        report: None,
                        error: Some(e.to_string()),
                        exit_code: e.exit_code(),
                    },
                };
                results.lock().expect("no worker panics while holding the lock")[i] = Some(entry);
            });
        }
    });
    let entries: Vec<BatchEntry> = results
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|e| e.expect("every index was claimed by a worker"))
        .collect();
    write_json(&out.join("batch.json"), &entries)?;
    Ok(entries)
}
