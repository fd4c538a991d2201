//! Run orchestration behind the command-line front end: executes tasks,
//! persists results, replays stored records and tabulates lap times.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, FileConfig, SafetySetManifest};
use crate::safety_set::TrajectoryRecord;
use crate::task::{self, band_statistic, IndicatorCost, IterationReport, SolveSummary, StepLog, TaskReport, Track};

pub const RUN_MANIFEST: &str = "manifest.json";
pub const SAFETY_SET_DIR: &str = "safety_set";
pub const PLOT_DIR: &str = "plots";
pub const LOG_DIR: &str = "logs";
pub const LAP_CSV: &str = "lap_times.csv";
pub const LAP_TEXT: &str = "lap_times.txt";
pub const LAYOUT_FILE: &str = "layout.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub noise: Option<f64>,
}

impl RunOptions {
    pub fn file_config(&self) -> Result<FileConfig> {
        let mut fc = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        if let Some(n) = self.iterations {
            fc.task.iterations = n;
        }
        if let Some(sigma) = self.noise {
            fc.plant.noise_sigma = sigma;
        }
        Ok(fc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapEntry {
    pub iteration: usize,
    pub completed: bool,
    pub travel_time: Option<f64>,
    pub steps: usize,
    pub max_corridor_violation: Option<f64>,
    pub max_box_violation: Option<f64>,
    pub trajectory_file: Option<String>,
    pub solver_log: Option<String>,
    pub plot_files: Vec<String>,
    pub solve: SolveSummary,
    pub failure: Option<String>,
}

impl LapEntry {
    fn from_report(r: &IterationReport) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            iteration: r.iteration,
            completed: r.completed,
            travel_time: finite(r.travel_time),
            steps: r.steps,
            max_corridor_violation: finite(r.max_corridor_violation),
            max_box_violation: finite(r.max_box_violation),
            trajectory_file: None,
            solver_log: None,
            plot_files: Vec::new(),
            solve: r.solve,
            failure: r.failure.clone(),
        }
    }
}

/// Everything a run wrote, with paths relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub dt: f64,
    pub config: FileConfig,
    pub cost: IndicatorCost,
    pub laps: Vec<LapEntry>,
    /// Bootstrap followed by every completed iteration.
    pub lap_times: Vec<f64>,
    pub best_time: f64,
    pub convergence_band: Option<f64>,
    pub latency: SolveSummary,
    pub safety_set: String,
    pub lap_table: String,
    pub lap_text: String,
    pub layout: String,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        io::read_json(&run_dir.join(RUN_MANIFEST))
    }

    pub fn referenced_files(&self) -> Vec<String> {
        let mut files = vec![self.lap_table.clone(), self.lap_text.clone(), self.layout.clone()];
        files.push(format!("{}/{}", self.safety_set, io::SAFETY_SET_MANIFEST));
        for lap in &self.laps {
            files.extend(lap.trajectory_file.iter().cloned());
            files.extend(lap.solver_log.iter().cloned());
            files.extend(lap.plot_files.iter().cloned());
        }
        files
    }

    /// Checks that every referenced file exists and that stored records parse
    /// and telescope.
    pub fn validate(&self, run_dir: &Path) -> Result<()> {
        for f in self.referenced_files() {
            if !run_dir.join(&f).is_file() {
                return Err(Error::Parse { path: run_dir.join(&f).display().to_string(), message: "missing".into() });
            }
        }
        if self.lap_times.len() != self.laps.iter().filter(|l| l.completed).count() {
            return Err(Error::Config("lap-time list does not match completed laps".into()));
        }
        for lap in &self.laps {
            if let Some(file) = &lap.trajectory_file {
                let rec = io::read_record_csv(&run_dir.join(file), lap.iteration, self.dt)?;
                if let Some((index, error)) = rec.telescoping_violation(&self.cost) {
                    return Err(Error::CostMismatch { iteration: lap.iteration, index, error });
                }
            }
        }
        Ok(())
    }
}

/// Plot-data files for one record: the x–y path and speed against arc length.
pub fn write_plot_data(dir: &Path, record: &TrajectoryRecord, track: &Track) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let xy: Vec<Vec<f64>> = record.timestamps().zip(&record.states).map(|(t, s)| vec![t, s.p.x, s.p.y, s.p.z]).collect();
    let speed: Vec<Vec<f64>> = record.states.iter().map(|s| vec![track.progress(&s.p), s.v.norm()]).collect();
    let xy_path = dir.join(format!("xy_{:03}.csv", record.iteration));
    let speed_path = dir.join(format!("speed_{:03}.csv", record.iteration));
    io::write_table(&xy_path, &["t", "x", "y", "z"], &xy)?;
    io::write_table(&speed_path, &["s", "speed"], &speed)?;
    Ok(vec![xy_path, speed_path])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    pub title: String,
    pub x: String,
    pub y: String,
    pub series: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub track: String,
    pub figures: Vec<Figure>,
}

fn write_track(path: &Path, track: &Track) -> Result<()> {
    let rows: Vec<Vec<f64>> = track.waypoints.iter().map(|w| vec![w.x, w.y, w.z, track.delta]).collect();
    io::write_table(path, &["x", "y", "z", "delta"], &rows)
}

fn lap_rows(report: &TaskReport) -> Vec<&IterationReport> {
    std::iter::once(&report.bootstrap).chain(report.iterations.iter()).collect()
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

/// Deterministic lap table: no wall-clock quantities.
fn write_lap_csv(path: &Path, report: &TaskReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "completed", "travel_time", "steps", "best_so_far"])?;
    let mut best = f64::INFINITY;
    for r in lap_rows(report) {
        if r.completed {
            best = best.min(r.travel_time);
        }
        let time = if r.completed { io::fmt_f64(r.travel_time) } else { String::new() };
        let best_col = if best.is_finite() { io::fmt_f64(best) } else { String::new() };
        w.write_record([r.iteration.to_string(), r.completed.to_string(), time, r.steps.to_string(), best_col])?;
    }
    w.flush()?;
    Ok(())
}

pub fn lap_table_text(report: &TaskReport) -> String {
    let mut s = String::new();
    let boot = report.bootstrap.travel_time;
    let _ = writeln!(s, "{:>9} {:>10} {:>9} {:>10} {:>9} {:>9}", "iteration", "time [s]", "ratio", "corridor", "p50 [ms]", "p95 [ms]");
    for r in lap_rows(report) {
        let name = if r.iteration == 0 { "bootstrap".to_string() } else { r.iteration.to_string() };
        if !r.completed {
            let _ = writeln!(s, "{name:>9} {:>10}  {}", "failed", r.failure.as_deref().unwrap_or(""));
            continue;
        }
        let (p50, p95) = if r.step_logs.is_empty() && r.solve.median_ms == 0.0 {
            ("-".to_string(), "-".to_string())
        } else {
            (format!("{:.2}", r.solve.median_ms), format!("{:.2}", r.solve.p95_ms))
        };
        let _ = writeln!(
            s,
            "{name:>9} {:>10.2} {:>9.3} {:>10.1e} {p50:>9} {p95:>9}",
            r.travel_time,
            r.travel_time / boot,
            r.max_corridor_violation
        );
    }
    let _ = writeln!(s, "best time {:.2} s, band {}", report.best_time(), fmt_opt(report.convergence_band(), 4));
    s
}

fn rel(run_dir: &Path, p: &Path) -> String {
    io::relative_to(run_dir, p).to_string_lossy().replace('\\', "/")
}

/// Runs the task and writes every artifact into `opts.out`.
pub fn cli_run(opts: &RunOptions) -> Result<RunManifest> {
    let fc = opts.file_config()?;
    let track = fc.track()?;
    let cfg = fc.task_config(opts.seed)?;
    let out = &opts.out;
    fs::create_dir_all(out)?;
    info!("running {} iterations on a {}-segment track (seed {})", cfg.iterations, track.num_segments(), cfg.seed);
    let outcome = task::run_task(&cfg, &track)?;
    let report = &outcome.report;

    let ss_dir = out.join(SAFETY_SET_DIR);
    let stored = io::save_safety_set(&ss_dir, &outcome.store, Some(&track))?;
    let plot_dir = out.join(PLOT_DIR);
    let log_dir = out.join(LOG_DIR);
    fs::create_dir_all(&log_dir)?;
    fs::create_dir_all(&plot_dir)?;
    write_track(&plot_dir.join("track.csv"), &track)?;

    let mut laps = Vec::new();
    let mut xy_series = Vec::new();
    let mut speed_series = Vec::new();
    for r in lap_rows(report) {
        let mut lap = LapEntry::from_report(r);
        if let Some(s) = stored.iterations.iter().find(|s| s.iteration == r.iteration) {
            let path = ss_dir.join(&s.file);
            lap.trajectory_file = Some(rel(out, &path));
            let rec = outcome.store.records().iter().find(|x| x.iteration == r.iteration).ok_or(Error::MissingRecord(r.iteration))?;
            let files = write_plot_data(&plot_dir, rec, &track)?;
            xy_series.push(rel(&plot_dir, &files[0]));
            speed_series.push(rel(&plot_dir, &files[1]));
            lap.plot_files = files.iter().map(|f| rel(out, f)).collect();
        }
        if !r.step_logs.is_empty() {
            let path = log_dir.join(format!("solver_{:03}.csv", r.iteration));
            io::write_run_log(&path, &r.step_logs)?;
            lap.solver_log = Some(rel(out, &path));
        }
        laps.push(lap);
    }

    let layout = Layout {
        track: "track.csv".into(),
        figures: vec![
            Figure { title: "trajectory".into(), x: "x".into(), y: "y".into(), series: xy_series },
            Figure { title: "speed along the track".into(), x: "s".into(), y: "speed".into(), series: speed_series },
        ],
    };
    io::write_json(&plot_dir.join(LAYOUT_FILE), &layout)?;
    write_lap_csv(&out.join(LAP_CSV), report)?;
    fs::write(out.join(LAP_TEXT), lap_table_text(report))?;

    let logs: Vec<StepLog> = report.step_logs().cloned().collect();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: opts.seed,
        dt: cfg.dt,
        config: fc,
        cost: *outcome.store.cost(),
        laps,
        lap_times: report.lap_times(),
        best_time: report.best_time(),
        convergence_band: report.convergence_band(),
        latency: SolveSummary::from_logs(&logs),
        safety_set: SAFETY_SET_DIR.into(),
        lap_table: LAP_CSV.into(),
        lap_text: LAP_TEXT.into(),
        layout: format!("{PLOT_DIR}/{LAYOUT_FILE}"),
    };
    io::write_json(&out.join(RUN_MANIFEST), &manifest)?;
    manifest.validate(out)?;
    Ok(manifest)
}

/// Runs only the bootstrap lap.
pub fn cli_bootstrap(opts: &RunOptions) -> Result<RunManifest> {
    cli_run(&RunOptions { iterations: Some(0), ..opts.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub iteration: usize,
    pub travel_time: f64,
    /// First index where the stored cost-to-go fails to telescope, with its error.
    pub telescoping: Option<(usize, f64)>,
    /// First index whose position leaves the corridor, with the violation there.
    pub corridor: Option<(usize, f64)>,
    pub max_corridor_violation: f64,
    pub plot_files: Vec<PathBuf>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.telescoping.is_none() && self.corridor.is_none()
    }
}

/// Corridor tolerance applied when validating stored records.
pub const REPLAY_CORRIDOR_TOL: f64 = 1e-3;

fn safety_set_dir(dir: &Path) -> PathBuf {
    if dir.join(io::SAFETY_SET_MANIFEST).is_file() {
        dir.to_path_buf()
    } else {
        dir.join(SAFETY_SET_DIR)
    }
}

/// Re-validates a stored record and re-emits its plot data into `out`.
/// Accepts either a safety-set directory or a run directory.
pub fn cli_replay(dir: &Path, iteration: usize, out: &Path) -> Result<ReplayReport> {
    let ss_dir = safety_set_dir(dir);
    let manifest: SafetySetManifest = io::read_safety_manifest(&ss_dir)?;
    let entry = manifest.iterations.iter().find(|s| s.iteration == iteration).ok_or(Error::MissingRecord(iteration))?;
    let path = ss_dir.join(&entry.file);
    if !path.is_file() {
        return Err(Error::MissingRecord(iteration));
    }
    let record = io::read_record_csv(&path, iteration, manifest.dt)?;
    let track = match manifest.track {
        Some(t) => t,
        None => RunManifest::load(dir).and_then(|m| m.config.track())?,
    };
    let violations: Vec<f64> = record.states.iter().map(|s| track.corridor_violation(&s.p)).collect();
    let corridor = violations.iter().position(|v| *v > REPLAY_CORRIDOR_TOL).map(|i| (i, violations[i]));
    let plot_files = write_plot_data(out, &record, &track)?;
    Ok(ReplayReport {
        iteration,
        travel_time: record.travel_time(),
        telescoping: record.telescoping_violation(&manifest.cost),
        corridor,
        max_corridor_violation: violations.iter().cloned().fold(0.0, f64::max),
        plot_files,
    })
}

/// Travel times of several runs side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct RunsTable {
    pub runs: Vec<(String, u64, Vec<Option<f64>>)>,
    pub columns: usize,
}

impl RunsTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["run".to_string(), "seed".to_string(), "bootstrap".to_string()];
        h.extend((1..self.columns).map(|j| format!("iter_{j}")));
        h.push("best".into());
        h.push("band".into());
        h
    }

    fn best(times: &[Option<f64>]) -> Option<f64> {
        times.iter().flatten().cloned().reduce(f64::min)
    }

    fn band(times: &[Option<f64>]) -> Option<f64> {
        let laps: Vec<f64> = times.iter().skip(1).flatten().cloned().collect();
        band_statistic(&laps)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let header = self.header();
        let width = self.runs.iter().map(|r| r.0.len()).chain([3]).max().unwrap_or(3);
        let _ = write!(s, "{:<width$}", header[0]);
        for h in &header[1..] {
            let _ = write!(s, " {h:>9}");
        }
        s.push('\n');
        for (name, seed, times) in &self.runs {
            let _ = write!(s, "{name:<width$} {seed:>9}");
            for j in 0..self.columns {
                let _ = write!(s, " {:>9}", fmt_opt(times.get(j).copied().flatten(), 3));
            }
            let _ = writeln!(s, " {:>9} {:>9}", fmt_opt(Self::best(times), 3), fmt_opt(Self::band(times), 4));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        let cell = |v: Option<f64>| v.map(io::fmt_f64).unwrap_or_default();
        for (name, seed, times) in &self.runs {
            let mut row = vec![name.clone(), seed.to_string()];
            row.extend((0..self.columns).map(|j| cell(times.get(j).copied().flatten())));
            row.push(cell(Self::best(times)));
            row.push(cell(Self::band(times)));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Collects the lap times of every run directory into one table.
pub fn cli_report(run_dirs: &[PathBuf]) -> Result<RunsTable> {
    if run_dirs.is_empty() {
        return Err(Error::InsufficientData("no run directories given".into()));
    }
    let mut runs = Vec::new();
    let mut columns = 0;
    for dir in run_dirs {
        let m = RunManifest::load(dir)?;
        let times: Vec<Option<f64>> = m.laps.iter().map(|l| l.travel_time).collect();
        columns = columns.max(times.len());
        runs.push((dir.display().to_string(), m.seed, times));
    }
    Ok(RunsTable { runs, columns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn short_config(dir: &Path) -> PathBuf {
        let path = dir.join("c.toml");
        fs::write(&path, "[track]\nwaypoints = [[0.0, 0.0, 1.0], [1.5, 0.0, 1.0]]\ndelta = 0.8\n[task]\niterations = 1\n").unwrap();
        path
    }

    fn run_short(dir: &Path, seed: u64) -> (PathBuf, RunManifest) {
        let out = dir.join(format!("run_{seed}"));
        let opts = RunOptions { config: Some(short_config(dir)), out: out.clone(), seed, ..Default::default() };
        let m = cli_run(&opts).unwrap();
        (out, m)
    }

    #[test]
    fn run_writes_consistent_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (out, m) = run_short(dir.path(), 3);
        assert_eq!(m.laps.len(), 2);
        assert_eq!(m.lap_times.len(), m.laps.iter().filter(|l| l.completed).count());
        m.validate(&out).unwrap();
        let reloaded = RunManifest::load(&out).unwrap();
        assert_eq!(reloaded, m);
        let layout: Layout = io::read_json(&out.join(&m.layout)).unwrap();
        assert_eq!(layout.figures.len(), 2);
        assert!(out.join(PLOT_DIR).join(&layout.track).is_file());
    }

    #[test]
    fn replay_matches_run_output() {
        let dir = tempfile::tempdir().unwrap();
        let (out, m) = run_short(dir.path(), 1);
        let replay_dir = dir.path().join("replay");
        let r = cli_replay(&out, 0, &replay_dir).unwrap();
        assert!(r.is_clean(), "{r:?}");
        for (orig, again) in m.laps[0].plot_files.iter().zip(&r.plot_files) {
            assert_eq!(fs::read(out.join(orig)).unwrap(), fs::read(again).unwrap());
        }
        assert!(matches!(cli_replay(&out, 99, &replay_dir), Err(Error::MissingRecord(99))));
    }

    #[test]
    fn tampered_cost_column_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let (out, m) = run_short(dir.path(), 2);
        let file = out.join(m.laps[0].trajectory_file.as_ref().unwrap());
        let text = fs::read_to_string(&file).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let target = 5;
        let mut cells: Vec<String> = lines[target + 1].split(',').map(String::from).collect();
        let j: f64 = cells[15].parse().unwrap();
        cells[15] = io::fmt_f64(j + 0.5);
        lines[target + 1] = cells.join(",");
        fs::write(&file, lines.join("\n") + "\n").unwrap();
        let r = cli_replay(&out.join(SAFETY_SET_DIR), 0, &dir.path().join("replay")).unwrap();
        let (index, err) = r.telescoping.unwrap();
        assert_eq!(index, target - 1);
        assert_relative_eq!(err, 0.5, epsilon = 1e-9);
        assert!(r.corridor.is_none());
    }

    #[test]
    fn report_rows_and_band() {
        let dir = tempfile::tempdir().unwrap();
        let (a, ma) = run_short(dir.path(), 4);
        let (b, _) = run_short(dir.path(), 5);
        let single = cli_report(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.runs.len(), 1);
        assert_eq!(single.runs[0].2, ma.laps.iter().map(|l| l.travel_time).collect::<Vec<_>>());
        let table = cli_report(&[a, b]).unwrap();
        assert_eq!(table.runs.len(), 2);
        let csv_path = dir.path().join("report.csv");
        table.write_csv(&csv_path).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("run,seed,bootstrap,iter_1,best,band\n"));
        assert!(table.to_text().lines().count() == 3);
        let reference_row = vec![Some(14.0), Some(2.46), Some(2.5299), Some(2.58)];
        assert_relative_eq!(RunsTable::band(&reference_row).unwrap(), 0.12 / 2.5233, epsilon = 1e-4);
        assert!(cli_report(&[]).is_err());
        assert!(matches!(cli_report(&[dir.path().join("nope")]), Err(Error::Parse { .. })));
    }

    #[test]
    fn bootstrap_only_run() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            config: Some(short_config(dir.path())),
            out: dir.path().join("boot"),
            seed: 0,
            iterations: Some(5),
            noise: None,
        };
        let m = cli_bootstrap(&opts).unwrap();
        assert_eq!(m.laps.len(), 1);
        assert_eq!(m.lap_times.len(), 1);
        assert_eq!(m.config.task.iterations, 0);
    }
}
