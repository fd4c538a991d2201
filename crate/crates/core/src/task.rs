//! Minimum-time racing task: track geometry, running costs, the bootstrap lap,
//! and the closed-loop iteration driver.

use log::{debug, info, warn};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Plant, PlantConfig, QuadInput, QuadParams, QuadState};
use crate::error::{Error, Result};
use crate::safety_set::{compute_cost_to_go, NeighborMetric, SafetySetStore, TrajectoryRecord};
use crate::so3::{self, BodyRates};
use crate::solver::{
    build_problem, corridor_rows, warm_start_shift, CorridorRows, LmpcSolver, OcpSolution, SolveStats, SolveStatus,
    SolverConfig, WarmStart,
};

fn effort(u: &QuadInput, r_u: &[f64; 4]) -> f64 {
    let v = u.as_vector();
    (0..4).map(|i| r_u[i] * v[i] * v[i]).sum()
}

/// `1{|p − goal| > ε_pos} + uᵀ R_u u`.
pub fn running_cost_indicator(x: &QuadState, u: &QuadInput, goal: &Vector3<f64>, r_u: &[f64; 4], eps_pos: f64) -> f64 {
    let away = if (x.p - goal).norm() > eps_pos { 1.0 } else { 0.0 };
    away + effort(u, r_u)
}

/// `d² / √(d⁴ + 1) + uᵀ R_u u` with `d = |p − goal|`.
pub fn running_cost_sigmoid(x: &QuadState, u: &QuadInput, goal: &Vector3<f64>, r_u: &[f64; 4]) -> f64 {
    sigmoid(&x.p, goal) + effort(u, r_u)
}

pub fn sigmoid(p: &Vector3<f64>, goal: &Vector3<f64>) -> f64 {
    let s = (p - goal).norm_squared();
    s / (s * s + 1.0).sqrt()
}

/// Gradient of [`sigmoid`] with respect to `p`.
pub fn sigmoid_gradient(p: &Vector3<f64>, goal: &Vector3<f64>) -> Vector3<f64> {
    let e = p - goal;
    let s = e.norm_squared();
    e * (2.0 / (s * s + 1.0).powf(1.5))
}

/// Stage cost attached to stored records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorCost {
    pub goal: Vector3<f64>,
    pub eps_pos: f64,
    pub r_u: [f64; 4],
}

impl IndicatorCost {
    pub fn stage(&self, x: &QuadState, u: &QuadInput) -> f64 {
        running_cost_indicator(x, u, &self.goal, &self.r_u, self.eps_pos)
    }
}

/// Piecewise-linear corridor track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub waypoints: Vec<Vector3<f64>>,
    pub delta: f64,
}

impl Default for Track {
    fn default() -> Self {
        Self::l_track()
    }
}

impl Track {
    pub fn new(waypoints: Vec<Vector3<f64>>, delta: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidTrack(format!("{} waypoints, need at least 2", waypoints.len())));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidTrack(format!("corridor half-width {delta} must be positive")));
        }
        for (i, w) in waypoints.windows(2).enumerate() {
            if !w[0].iter().chain(w[1].iter()).all(|c| c.is_finite()) {
                return Err(Error::InvalidTrack(format!("waypoint {i} is not finite")));
            }
            if (w[1] - w[0]).norm() <= 1e-9 {
                return Err(Error::InvalidTrack(format!("waypoints {i} and {} coincide", i + 1)));
            }
        }
        Ok(Self { waypoints, delta })
    }

    /// `(0,0,1) → (3,0,1) → (3,3,1)` with a 0.8 m corridor.
    pub fn l_track() -> Self {
        Self {
            waypoints: vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(3.0, 0.0, 1.0), Vector3::new(3.0, 3.0, 1.0)],
            delta: 0.8,
        }
    }

    pub fn num_segments(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn goal(&self) -> Vector3<f64> {
        *self.waypoints.last().unwrap()
    }

    pub fn start_state(&self) -> QuadState {
        QuadState::hover_at(self.waypoints[0])
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        (self.waypoints[i + 1] - self.waypoints[i]).norm()
    }

    pub fn total_length(&self) -> f64 {
        (0..self.num_segments()).map(|i| self.segment_length(i)).sum()
    }

    pub fn segment_corridor(&self, i: usize) -> Result<CorridorRows> {
        if i >= self.num_segments() {
            return Err(Error::InvalidTrack(format!("segment {i} out of range")));
        }
        corridor_rows(&self.waypoints[i], &self.waypoints[i + 1], self.delta)
    }

    /// `(projection parameter, clamped arc-length progress, offset from the axis)`.
    fn project(&self, i: usize, p: &Vector3<f64>) -> (f64, f64, Vector3<f64>) {
        let a = self.waypoints[i];
        let d = self.waypoints[i + 1] - a;
        let len2 = d.norm_squared();
        let t = (p - a).dot(&d) / len2;
        let before: f64 = (0..i).map(|k| self.segment_length(k)).sum();
        let progress = before + t.clamp(0.0, 1.0) * len2.sqrt();
        let offset = (p - a) - d * t;
        (t, progress, offset)
    }

    /// Segment whose corridor contains `p` with the largest progress; later
    /// segments win ties. Outside every corridor, the nearest segment.
    pub fn active_segment(&self, p: &Vector3<f64>) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.num_segments() {
            let (t, progress, offset) = self.project(i, p);
            let slack = self.delta / self.segment_length(i);
            if t < -slack || t > 1.0 + slack || offset.amax() > self.delta {
                continue;
            }
            if best.is_none_or(|(_, bp)| progress >= bp) {
                best = Some((i, progress));
            }
        }
        if let Some((i, _)) = best {
            return i;
        }
        let mut nearest = (0, f64::INFINITY);
        for i in 0..self.num_segments() {
            let (t, _, _) = self.project(i, p);
            let a = self.waypoints[i];
            let closest = a + (self.waypoints[i + 1] - a) * t.clamp(0.0, 1.0);
            let dist = (p - closest).norm();
            if dist <= nearest.1 {
                nearest = (i, dist);
            }
        }
        nearest.0
    }

    /// Arc-length progress of `p` along its active segment.
    pub fn progress(&self, p: &Vector3<f64>) -> f64 {
        self.project(self.active_segment(p), p).1
    }

    /// Corridor violation of `p` measured against its active segment.
    pub fn corridor_violation(&self, p: &Vector3<f64>) -> f64 {
        let i = self.active_segment(p);
        self.segment_corridor(i).map(|c| c.violation(p)).unwrap_or(f64::INFINITY)
    }

    /// Point at arc length `s` and the unit tangent there.
    fn point_at(&self, s: f64) -> (Vector3<f64>, Vector3<f64>) {
        let mut rem = s.max(0.0);
        for i in 0..self.num_segments() {
            let len = self.segment_length(i);
            let dir = (self.waypoints[i + 1] - self.waypoints[i]) / len;
            if rem <= len || i + 1 == self.num_segments() {
                return (self.waypoints[i] + dir * rem.min(len), dir);
            }
            rem -= len;
        }
        unreachable!("track has at least one segment")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub horizon: usize,
    pub dt: f64,
    pub r_u: [f64; 4],
    pub n_neighbors: usize,
    pub p_lookback: usize,
    pub eps_pos: f64,
    pub eps_vel: f64,
    pub max_steps: usize,
    pub iterations: usize,
    /// SQP iterations per control step in closed loop.
    pub sqp_iterations: usize,
    pub cruise_speed: f64,
    pub cruise_accel: f64,
    pub bootstrap_max_steps: usize,
    pub noise_sigma: f64,
    pub mass_scale: f64,
    pub seed: u64,
    pub params: QuadParams,
    pub metric: NeighborMetric,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            r_u: [1e-3, 1e-2, 1e-2, 1e-2],
            n_neighbors: 12,
            p_lookback: 2,
            eps_pos: 0.1,
            eps_vel: 0.1,
            max_steps: 600,
            iterations: 6,
            sqp_iterations: 3,
            cruise_speed: 0.3,
            cruise_accel: 0.3,
            bootstrap_max_steps: 3000,
            noise_sigma: 0.0,
            mass_scale: 1.0,
            seed: 0,
            params: QuadParams::default(),
            metric: NeighborMetric::default(),
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver_config().validate()?;
        self.params.validate()?;
        if !(self.eps_pos > 0.0) || !(self.eps_vel > 0.0) {
            return Err(Error::Config("goal tolerances must be positive".into()));
        }
        if self.n_neighbors == 0 {
            return Err(Error::Config("n_neighbors must be at least 1".into()));
        }
        if self.max_steps == 0 || self.bootstrap_max_steps == 0 {
            return Err(Error::Config("step limits must be positive".into()));
        }
        if !(self.cruise_speed > 0.0) || !(self.cruise_accel > 0.0) {
            return Err(Error::Config("bootstrap speed profile must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            horizon: self.horizon,
            dt: self.dt,
            r_u: self.r_u,
            max_sqp_iterations: self.sqp_iterations,
            ..SolverConfig::default()
        }
    }

    pub fn plant_config(&self) -> PlantConfig {
        PlantConfig { noise_sigma: self.noise_sigma, mass_scale: self.mass_scale, ..PlantConfig::default() }
    }

    pub fn indicator_cost(&self, track: &Track) -> IndicatorCost {
        IndicatorCost { goal: track.goal(), eps_pos: self.eps_pos, r_u: self.r_u }
    }
}

pub fn goal_reached(x: &QuadState, track: &Track, cfg: &TaskConfig) -> bool {
    (x.p - track.goal()).norm() <= cfg.eps_pos && x.v.norm() <= cfg.eps_vel
}

/// Trapezoidal arc-length profile `(s, ṡ, s̈)` over a path of length `total`.
fn trapezoid(t: f64, total: f64, speed: f64, accel: f64) -> (f64, f64, f64) {
    let ramp_t = speed / accel;
    let ramp_s = 0.5 * accel * ramp_t * ramp_t;
    let (ramp_t, peak) = if 2.0 * ramp_s > total {
        let tt = (total / accel).sqrt();
        (tt, accel * tt)
    } else {
        (ramp_t, speed)
    };
    let ramp_s = 0.5 * accel * ramp_t * ramp_t;
    let cruise_t = (total - 2.0 * ramp_s) / peak;
    let end = 2.0 * ramp_t + cruise_t;
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t < ramp_t {
        (0.5 * accel * t * t, accel * t, accel)
    } else if t < ramp_t + cruise_t {
        (ramp_s + peak * (t - ramp_t), peak, 0.0)
    } else if t < end {
        let r = end - t;
        (total - 0.5 * accel * r * r, accel * r, -accel)
    } else {
        (total, 0.0, 0.0)
    }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Cascaded position/attitude controller tracking the slow reference.
fn bootstrap_input(x: &QuadState, p_ref: &Vector3<f64>, v_ref: &Vector3<f64>, a_ref: &Vector3<f64>, params: &QuadParams) -> Result<QuadInput> {
    const KP: f64 = 4.0;
    const KD: f64 = 3.0;
    const KR: f64 = 5.0;
    let a_des = a_ref + (p_ref - x.p) * KP + (v_ref - x.v) * KD + Vector3::z() * params.gravity;
    let thrust = params.mass * a_des.norm();
    let b3 = a_des.normalize();
    let b2 = b3.cross(&Vector3::x()).normalize();
    let b1 = b2.cross(&b3);
    let r_des = Matrix3::from_columns(&[b1, b2, b3]);
    let r = so3::quat_to_rotation(&x.q)?;
    let e_r = vee(&(r_des.transpose() * r - r.transpose() * r_des)) * 0.5;
    let omega = -e_r * KR;
    Ok(params.clamp_input(&QuadInput::new(thrust, BodyRates::from_vector(&omega))))
}

/// Flies the track slowly with a tracking controller and returns the lap with its
/// indicator cost-to-go attached.
pub fn bootstrap_initial_trajectory(track: &Track, cfg: &TaskConfig, plant: &mut Plant) -> Result<TrajectoryRecord> {
    let params = cfg.params;
    let total = track.total_length();
    let mut x = track.start_state();
    let mut states = vec![x];
    let mut inputs = Vec::new();
    let mut worst = 0.0f64;
    for k in 0..cfg.bootstrap_max_steps {
        let (s, sd, sdd) = trapezoid(k as f64 * cfg.dt, total, cfg.cruise_speed, cfg.cruise_accel);
        let (p_ref, tangent) = track.point_at(s);
        let u = bootstrap_input(&x, &p_ref, &(tangent * sd), &(tangent * sdd), &params)?;
        x = plant.step(&x, &u, cfg.dt)?;
        if !x.is_finite() {
            return Err(Error::Bootstrap(format!("state diverged at step {k}")));
        }
        worst = worst.max(track.corridor_violation(&x.p));
        inputs.push(u);
        states.push(x);
        if goal_reached(&x, track, cfg) {
            if worst > 1e-3 {
                return Err(Error::Bootstrap(format!("corridor violated by {worst:.3e} m")));
            }
            let cost = cfg.indicator_cost(track);
            let cost_to_go = compute_cost_to_go(&states, &inputs, |x, u| cost.stage(x, u))?;
            info!("bootstrap lap finished in {} steps", inputs.len());
            return Ok(TrajectoryRecord { iteration: 0, dt: cfg.dt, states, inputs, cost_to_go, completed: true });
        }
    }
    Err(Error::Bootstrap(format!("goal not reached within {} steps", cfg.bootstrap_max_steps)))
}

/// Solver statistics of one control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub converged: usize,
    pub max_iter: usize,
    pub infeasible: usize,
}

impl SolveSummary {
    pub fn from_logs(logs: &[StepLog]) -> Self {
        let times: Vec<f64> = logs.iter().map(|l| l.stats.solve_time * 1e3).collect();
        let count = |s: SolveStatus| logs.iter().filter(|l| l.stats.status == s).count();
        Self {
            median_ms: percentile(&times, 50.0),
            p95_ms: percentile(&times, 95.0),
            max_ms: times.iter().cloned().fold(0.0, f64::max),
            converged: count(SolveStatus::Converged),
            max_iter: count(SolveStatus::MaxIter),
            infeasible: count(SolveStatus::Infeasible),
        }
    }
}

/// Nearest-rank percentile; 0 for an empty slice.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub travel_time: f64,
    pub steps: usize,
    pub completed: bool,
    pub solve: SolveSummary,
    pub max_corridor_violation: f64,
    pub max_box_violation: f64,
    #[serde(default)]
    pub failure: Option<String>,
    #[serde(default)]
    pub trajectory_file: Option<String>,
    #[serde(skip)]
    pub step_logs: Vec<StepLog>,
}

fn box_violation(u: &QuadInput, params: &QuadParams) -> f64 {
    let (v, lo, hi) = (u.as_vector(), params.input_lower(), params.input_upper());
    (0..4).map(|i| (lo[i] - v[i]).max(v[i] - hi[i]).max(0.0)).fold(0.0, f64::max)
}

fn record_report(record: &TrajectoryRecord, track: &Track, params: &QuadParams, logs: Vec<StepLog>) -> IterationReport {
    let corridor = record.states.iter().map(|s| track.corridor_violation(&s.p)).fold(0.0, f64::max);
    let boxes = record.inputs.iter().map(|u| box_violation(u, params)).fold(0.0, f64::max);
    IterationReport {
        iteration: record.iteration,
        travel_time: record.travel_time(),
        steps: record.final_index(),
        completed: record.completed,
        solve: SolveSummary::from_logs(&logs),
        max_corridor_violation: corridor,
        max_box_violation: boxes,
        failure: None,
        trajectory_file: None,
        step_logs: logs,
    }
}

/// Closest member of the local set to `x` under the store metric.
fn nearest_member(store: &SafetySetStore, members: &[QuadState], x: &QuadState) -> Result<usize> {
    let mut best = (0, f64::INFINITY);
    for (i, m) in members.iter().enumerate() {
        let d = store.metric().distance_squared(m, x)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

/// One closed-loop lap from the track start using the learning controller.
/// Returns the report and the completed record (not yet added to the store).
pub fn run_iteration(
    j: usize,
    store: &SafetySetStore,
    track: &Track,
    cfg: &TaskConfig,
    plant: &mut Plant,
) -> Result<(IterationReport, TrajectoryRecord)> {
    let fail = |reason: String| Error::IterationFailed { iteration: j, reason };
    let best_pos = store.best().ok_or(Error::EmptySet)?;
    let best = store.record(best_pos).ok_or(Error::MissingRecord(best_pos))?;
    let n = cfg.horizon;
    let params = cfg.params;
    let solver_cfg = cfg.solver_config();
    let mut solver = LmpcSolver::new(solver_cfg)?;
    let lookback = store.lookback_iterations(cfg.p_lookback, true);

    let mut x = track.start_state();
    let mut seed = best.states[n.min(best.final_index())];
    let mut previous: Option<OcpSolution> = None;
    let mut last_input: Option<QuadInput> = None;
    let mut states = vec![x];
    let mut inputs = Vec::new();
    let mut logs = Vec::new();

    for k in 0..cfg.max_steps {
        let set = store.select_local_set(&seed, cfg.n_neighbors, &lookback)?;
        let warm = match &previous {
            Some(prev) => warm_start_shift(Some(prev), &x, set.len(), &params, &solver_cfg)?,
            None if k == 0 => {
                let hover = QuadInput::hover(&params);
                let guess_states: Vec<QuadState> = (0..=n).map(|i| best.states[i.min(best.final_index())]).collect();
                let guess_inputs = (0..n).map(|i| best.inputs.get(i).copied().unwrap_or(hover)).collect();
                let mut weights = vec![0.0; set.len()];
                weights[nearest_member(store, &set.members, &guess_states[n])?] = 1.0;
                WarmStart { states: guess_states, inputs: guess_inputs, weights }
            }
            None => warm_start_shift(None, &x, set.len(), &params, &solver_cfg)?,
        };
        let problem = build_problem(&x, &set, track, &solver_cfg, &params, Some(&warm.states))?;
        let solution = solver.solve(&problem, Some(&warm))?;
        logs.push(StepLog { t: k as f64 * cfg.dt, stats: solution.stats });

        let u = if solution.stats.status == SolveStatus::Infeasible {
            warn!("iteration {j} step {k}: solver infeasible, holding previous input");
            previous = None;
            last_input.unwrap_or_else(|| QuadInput::hover(&params))
        } else {
            seed = *solution.states.last().unwrap();
            let u = params.clamp_input(&solution.inputs[0]);
            previous = Some(solution);
            u
        };
        debug!("iteration {j} step {k}: u = {:?}", u.as_vector().as_slice());

        x = plant.step(&x, &u, cfg.dt).map_err(|e| fail(format!("plant step {k}: {e}")))?;
        if !x.is_finite() {
            return Err(fail(format!("state diverged at step {k}")));
        }
        last_input = Some(u);
        inputs.push(u);
        states.push(x);

        if goal_reached(&x, track, cfg) {
            let cost = store.cost();
            let cost_to_go = compute_cost_to_go(&states, &inputs, |x, u| cost.stage(x, u))?;
            let record = TrajectoryRecord { iteration: j, dt: cfg.dt, states, inputs, cost_to_go, completed: true };
            let report = record_report(&record, track, &params, logs);
            if report.max_corridor_violation > 1e-3 {
                return Err(fail(format!("corridor violated by {:.3e} m", report.max_corridor_violation)));
            }
            info!("iteration {j}: {:.2} s in {} steps", report.travel_time, report.steps);
            return Ok((report, record));
        }
    }
    Err(fail(format!("goal not reached within {} steps", cfg.max_steps)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub bootstrap: IterationReport,
    pub iterations: Vec<IterationReport>,
}

impl TaskReport {
    /// Travel times of the bootstrap followed by every completed iteration.
    pub fn lap_times(&self) -> Vec<f64> {
        std::iter::once(&self.bootstrap)
            .chain(self.iterations.iter())
            .filter(|r| r.completed)
            .map(|r| r.travel_time)
            .collect()
    }

    /// Best completed travel time after each lap (bootstrap first).
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.lap_times()
            .into_iter()
            .map(|t| {
                best = best.min(t);
                best
            })
            .collect()
    }

    pub fn best_time(&self) -> f64 {
        self.lap_times().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `(max − min) / mean` over the last three completed iterations.
    pub fn convergence_band(&self) -> Option<f64> {
        let laps: Vec<f64> = self.iterations.iter().filter(|r| r.completed).map(|r| r.travel_time).collect();
        band_statistic(&laps)
    }

    pub fn step_logs(&self) -> impl Iterator<Item = &StepLog> {
        self.iterations.iter().flat_map(|r| r.step_logs.iter())
    }
}

/// `(max − min) / mean` over the last three values; `None` with fewer than three.
pub fn band_statistic(times: &[f64]) -> Option<f64> {
    if times.len() < 3 {
        return None;
    }
    let last = &times[times.len() - 3..];
    let max = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = last.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = last.iter().sum::<f64>() / 3.0;
    Some((max - min) / mean)
}

/// Result of a full task run: the report and the final safety set.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub report: TaskReport,
    pub store: SafetySetStore,
}

/// Bootstrap plus `cfg.iterations` learning laps. Failed laps are reported and
/// left out of the store.
pub fn run_task(cfg: &TaskConfig, track: &Track) -> Result<TaskOutcome> {
    cfg.validate()?;
    let mut store = SafetySetStore::new(cfg.indicator_cost(track), cfg.metric);
    let mut plant = Plant::new(&cfg.params, cfg.plant_config(), cfg.seed)?;
    let record = bootstrap_initial_trajectory(track, cfg, &mut plant)?;
    let bootstrap = record_report(&record, track, &cfg.params, Vec::new());
    store.add_record(record)?;

    let mut iterations = Vec::with_capacity(cfg.iterations);
    for j in 1..=cfg.iterations {
        let mut plant = Plant::new(&cfg.params, cfg.plant_config(), cfg.seed.wrapping_add(j as u64))?;
        match run_iteration(j, &store, track, cfg, &mut plant) {
            Ok((report, record)) => {
                store.add_record(record)?;
                iterations.push(report);
            }
            Err(e @ Error::IterationFailed { .. }) => {
                warn!("{e}");
                iterations.push(IterationReport {
                    iteration: j,
                    travel_time: f64::NAN,
                    steps: 0,
                    completed: false,
                    solve: SolveSummary::default(),
                    max_corridor_violation: f64::NAN,
                    max_box_violation: f64::NAN,
                    failure: Some(e.to_string()),
                    trajectory_file: None,
                    step_logs: Vec::new(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TaskOutcome { report: TaskReport { bootstrap, iterations }, store })
}

/// Noise-free rollout helper used by tests and tools.
pub fn simulate_inputs(x0: &QuadState, inputs: &[QuadInput], cfg: &TaskConfig) -> Result<Vec<QuadState>> {
    dynamics::rollout(x0, inputs, cfg.dt, &cfg.params)
}
