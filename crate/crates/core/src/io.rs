//! File formats: trajectory records (CSV), the safety-set manifest (JSON), the
//! solver run log (CSV) and the task configuration (TOML or JSON).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{QuadInput, QuadState};
use crate::error::{Error, Result};
use crate::safety_set::{NeighborMetric, SafetySetStore, TrajectoryRecord};
use crate::so3::{BodyRates, QuatNU};
use crate::task::{IndicatorCost, StepLog, TaskConfig, Track};

pub const RECORD_HEADER: [&str; 16] =
    ["t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "f", "wx", "wy", "wz", "J"];

pub const RUN_LOG_HEADER: [&str; 6] = ["t", "sqp_iters", "qp_iters", "kkt", "solve_ms", "status"];

/// Seventeen significant digits, enough for an exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), message: message.into() }
}

pub fn write_record_csv(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_HEADER)?;
    for (k, (x, t)) in record.states.iter().zip(record.timestamps()).enumerate() {
        let u = record.input_at(k);
        let row = [
            t,
            x.p.x,
            x.p.y,
            x.p.z,
            x.v.x,
            x.v.y,
            x.v.z,
            x.q.w,
            x.q.x,
            x.q.y,
            x.q.z,
            u.f,
            u.omega.x,
            u.omega.y,
            u.omega.z,
            record.cost_to_go[k],
        ];
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record written by [`write_record_csv`]. The input on the final row
/// is dropped (it is the zero input by convention).
pub fn read_record_csv(path: &Path, iteration: usize, dt: f64) -> Result<TrajectoryRecord> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != RECORD_HEADER {
        return Err(parse_error(path, format!("unexpected header {header:?}")));
    }
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut cost_to_go = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let v: Vec<f64> = row
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_error(path, format!("row {}: {e}", line + 1)))?;
        if v.len() != RECORD_HEADER.len() {
            return Err(parse_error(path, format!("row {} has {} columns", line + 1, v.len())));
        }
        states.push(QuadState::new(
            Vector3::new(v[1], v[2], v[3]),
            Vector3::new(v[4], v[5], v[6]),
            QuatNU::new(v[7], v[8], v[9], v[10]),
        ));
        inputs.push(QuadInput::new(v[11], BodyRates::new(v[12], v[13], v[14])));
        cost_to_go.push(v[15]);
    }
    if states.is_empty() {
        return Err(parse_error(path, "no rows"));
    }
    inputs.pop();
    Ok(TrajectoryRecord { iteration, dt, states, inputs, cost_to_go, completed: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredIteration {
    pub iteration: usize,
    pub lap_time: f64,
    pub file: String,
}

/// Index of a persisted safety set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySetManifest {
    pub dt: f64,
    pub cost: IndicatorCost,
    pub metric: NeighborMetric,
    #[serde(default)]
    pub track: Option<Track>,
    pub iterations: Vec<StoredIteration>,
}

pub const SAFETY_SET_MANIFEST: &str = "safety_set.json";

pub fn record_file_name(iteration: usize) -> String {
    format!("iteration_{iteration:03}.csv")
}

/// Writes every stored record and the manifest into `dir`.
pub fn save_safety_set(dir: &Path, store: &SafetySetStore, track: Option<&Track>) -> Result<SafetySetManifest> {
    fs::create_dir_all(dir)?;
    let mut iterations = Vec::new();
    let mut dt = 0.0;
    for rec in store.records() {
        let file = record_file_name(rec.iteration);
        write_record_csv(&dir.join(&file), rec)?;
        dt = rec.dt;
        iterations.push(StoredIteration { iteration: rec.iteration, lap_time: rec.travel_time(), file });
    }
    let manifest =
        SafetySetManifest { dt, cost: *store.cost(), metric: *store.metric(), track: track.cloned(), iterations };
    write_json(&dir.join(SAFETY_SET_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_safety_manifest(dir: &Path) -> Result<SafetySetManifest> {
    read_json(&dir.join(SAFETY_SET_MANIFEST))
}

/// Rebuilds a store from `dir`; every record is re-validated on insertion.
pub fn load_safety_set(dir: &Path) -> Result<SafetySetStore> {
    let manifest = read_safety_manifest(dir)?;
    let mut store = SafetySetStore::new(manifest.cost, manifest.metric);
    for it in &manifest.iterations {
        store.add_record(read_record_csv(&dir.join(&it.file), it.iteration, manifest.dt)?)?;
    }
    Ok(store)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| parse_error(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.to_string()))
}

pub fn write_run_log(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_LOG_HEADER)?;
    for l in logs {
        w.write_record([
            fmt_f64(l.t),
            l.stats.sqp_iterations.to_string(),
            l.stats.qp_iterations.to_string(),
            fmt_f64(l.stats.kkt),
            fmt_f64(l.stats.solve_time * 1e3),
            l.stats.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows of floats under `header`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSection {
    pub waypoints: Vec<[f64; 3]>,
    pub delta: f64,
}

impl Default for TrackSection {
    fn default() -> Self {
        let t = Track::l_track();
        Self { waypoints: t.waypoints.iter().map(|w| [w.x, w.y, w.z]).collect(), delta: t.delta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmpcSection {
    #[serde(rename = "N")]
    pub horizon: usize,
    pub dt: f64,
    pub n_neighbors: usize,
    pub p_lookback: usize,
    #[serde(rename = "Ru")]
    pub r_u: [f64; 4],
    pub sqp_iterations: usize,
}

impl Default for LmpcSection {
    fn default() -> Self {
        let c = TaskConfig::default();
        Self {
            horizon: c.horizon,
            dt: c.dt,
            n_neighbors: c.n_neighbors,
            p_lookback: c.p_lookback,
            r_u: c.r_u,
            sqp_iterations: c.sqp_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub noise_sigma: f64,
    pub mass_scale: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let c = TaskConfig::default();
        Self { noise_sigma: c.noise_sigma, mass_scale: c.mass_scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub iterations: usize,
    pub eps_pos: f64,
    pub eps_vel: f64,
    pub max_steps: usize,
    pub cruise_speed: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        let c = TaskConfig::default();
        Self {
            iterations: c.iterations,
            eps_pos: c.eps_pos,
            eps_vel: c.eps_vel,
            max_steps: c.max_steps,
            cruise_speed: c.cruise_speed,
        }
    }
}

/// On-disk task configuration. Missing keys take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub track: TrackSection,
    pub lmpc: LmpcSection,
    pub plant: PlantSection,
    pub task: TaskSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| parse_error(path, e.to_string()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| parse_error(path, e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| parse_error(path, e.to_string()))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn track(&self) -> Result<Track> {
        Track::new(self.track.waypoints.iter().map(|w| Vector3::new(w[0], w[1], w[2])).collect(), self.track.delta)
    }

    pub fn task_config(&self, seed: u64) -> Result<TaskConfig> {
        let cfg = TaskConfig {
            horizon: self.lmpc.horizon,
            dt: self.lmpc.dt,
            r_u: self.lmpc.r_u,
            n_neighbors: self.lmpc.n_neighbors,
            p_lookback: self.lmpc.p_lookback,
            sqp_iterations: self.lmpc.sqp_iterations,
            eps_pos: self.task.eps_pos,
            eps_vel: self.task.eps_vel,
            max_steps: self.task.max_steps,
            iterations: self.task.iterations,
            cruise_speed: self.task.cruise_speed,
            noise_sigma: self.plant.noise_sigma,
            mass_scale: self.plant.mass_scale,
            seed,
            ..TaskConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Path of `file` relative to `base` when possible.
pub fn relative_to(base: &Path, file: &Path) -> PathBuf {
    file.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| file.to_path_buf())
}
