//! Recorded closed-loop iterations, their cost-to-go, and the local convex
//! safety set used as the terminal constraint of the learning controller.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{QuadInput, QuadState};
use crate::error::{Error, Result};
use crate::so3::{self, QuatNU};
use crate::task::IndicatorCost;

/// Tolerance on the stored telescoping identity `J_t = h_t + J_{t+1}`.
pub const TELESCOPING_TOL: f64 = 1e-9;

/// Componentwise tolerance for exact-match lookups.
pub const MATCH_TOL: f64 = 1e-9;

/// One iteration's closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub dt: f64,
    pub states: Vec<QuadState>,
    pub inputs: Vec<QuadInput>,
    pub cost_to_go: Vec<f64>,
    pub completed: bool,
}

impl TrajectoryRecord {
    /// Index of the final state, `T`.
    pub fn final_index(&self) -> usize {
        self.states.len() - 1
    }

    pub fn travel_time(&self) -> f64 {
        self.final_index() as f64 * self.dt
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |k| k as f64 * self.dt)
    }

    /// Input applied at index `t`; the zero input at the final index.
    pub fn input_at(&self, t: usize) -> QuadInput {
        self.inputs.get(t).copied().unwrap_or_else(QuadInput::zero)
    }

    fn check_shape(&self) -> Result<()> {
        if self.states.is_empty()
            || self.states.len() != self.inputs.len() + 1
            || self.cost_to_go.len() != self.states.len()
        {
            return Err(Error::Dimension(format!(
                "record {}: {} states, {} inputs, {} costs",
                self.iteration,
                self.states.len(),
                self.inputs.len(),
                self.cost_to_go.len()
            )));
        }
        Ok(())
    }

    /// First index at which the stored costs break `J_t = h(x_t, u_t) + J_{t+1}`
    /// (with `J_T = h(x_T, 0)`), together with the error there.
    pub fn telescoping_violation(&self, cost: &IndicatorCost) -> Option<(usize, f64)> {
        let last = self.final_index();
        for t in 0..=last {
            let next = if t == last { 0.0 } else { self.cost_to_go[t + 1] };
            let err = (self.cost_to_go[t] - cost.stage(&self.states[t], &self.input_at(t)) - next).abs();
            if !(err <= TELESCOPING_TOL) {
                return Some((t, err));
            }
        }
        None
    }
}

/// `J_t = Σ_{k=t}^{T} h(x_k, u_k)` accumulated backward, with a zero input at `T`.
pub fn compute_cost_to_go<F>(states: &[QuadState], inputs: &[QuadInput], running_cost: F) -> Result<Vec<f64>>
where
    F: Fn(&QuadState, &QuadInput) -> f64,
{
    if states.is_empty() || states.len() != inputs.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} states and {} inputs",
            states.len(),
            inputs.len()
        )));
    }
    let last = states.len() - 1;
    let mut costs = vec![0.0; states.len()];
    costs[last] = running_cost(&states[last], &QuadInput::zero());
    for t in (0..last).rev() {
        costs[t] = running_cost(&states[t], &inputs[t]) + costs[t + 1];
    }
    Ok(costs)
}

/// Weighted distance used to pick neighbors:
/// `d² = |Δp|² + w_v |Δv|² + w_q |log(q₁⁻¹ q₂)|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborMetric {
    pub velocity_weight: f64,
    pub attitude_weight: f64,
}

impl Default for NeighborMetric {
    fn default() -> Self {
        Self { velocity_weight: 0.2, attitude_weight: 0.1 }
    }
}

impl NeighborMetric {
    pub fn distance_squared(&self, a: &QuadState, b: &QuadState) -> Result<f64> {
        let dq = so3::quat_log(&a.q.conjugate().mul(&b.q))?;
        Ok((a.p - b.p).norm_squared()
            + self.velocity_weight * (a.v - b.v).norm_squared()
            + self.attitude_weight * dq.norm_squared())
    }
}

/// All successfully completed iterations, in insertion order.
#[derive(Debug, Clone)]
pub struct SafetySetStore {
    cost: IndicatorCost,
    metric: NeighborMetric,
    records: Vec<TrajectoryRecord>,
    /// `(record position, time index)` for every stored state.
    index: Vec<(usize, usize)>,
}

impl SafetySetStore {
    pub fn new(cost: IndicatorCost, metric: NeighborMetric) -> Self {
        Self { cost, metric, records: Vec::new(), index: Vec::new() }
    }

    pub fn cost(&self) -> &IndicatorCost {
        &self.cost
    }

    pub fn metric(&self) -> &NeighborMetric {
        &self.metric
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn record(&self, position: usize) -> Option<&TrajectoryRecord> {
        self.records.get(position)
    }

    pub fn state_count(&self) -> usize {
        self.index.len()
    }

    /// Position of the record with the shortest travel time (earliest on ties).
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.records.iter().enumerate() {
            match best {
                Some(b) if self.records[b].final_index() <= r.final_index() => {}
                _ => best = Some(i),
            }
        }
        best
    }

    /// Appends a completed record after validating its shape and cost-to-go.
    pub fn add_record(&mut self, record: TrajectoryRecord) -> Result<usize> {
        record.check_shape()?;
        if !record.completed {
            return Err(Error::IncompleteRecord { iteration: record.iteration });
        }
        if let Some((index, error)) = record.telescoping_violation(&self.cost) {
            return Err(Error::CostMismatch { iteration: record.iteration, index, error });
        }
        let pos = self.records.len();
        self.index.extend((0..record.states.len()).map(|t| (pos, t)));
        self.records.push(record);
        Ok(self.records.len())
    }

    /// Minimum stored cost-to-go over exact occurrences of `x`; `+∞` when absent.
    pub fn query_optimal_cost(&self, x: &QuadState) -> f64 {
        let xv = x.to_vector();
        self.index
            .iter()
            .filter_map(|&(r, t)| {
                let rec = &self.records[r];
                let sv = rec.states[t].to_vector();
                ((sv - xv).amax() <= MATCH_TOL).then_some(rec.cost_to_go[t])
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Record positions used at iteration `j`: `max(0, j - lookback) .. j` plus the
    /// current best record.
    pub fn lookback_iterations(&self, lookback: usize, include_best: bool) -> Vec<usize> {
        let j = self.records.len();
        let mut out: Vec<usize> = (j.saturating_sub(lookback.max(1))..j).collect();
        if include_best {
            if let Some(b) = self.best() {
                if !out.contains(&b) {
                    out.insert(0, b);
                }
            }
        }
        out
    }

    /// The `n` nearest states to `seed` from each listed record; ties go to the
    /// smaller time index.
    pub fn select_local_set(&self, seed: &QuadState, n: usize, iterations: &[usize]) -> Result<LocalConvexSet> {
        if self.records.is_empty() {
            return Err(Error::EmptySet);
        }
        if n == 0 || iterations.is_empty() {
            return Err(Error::InsufficientData("need at least one neighbor from one iteration".into()));
        }
        let mut set = LocalConvexSet::default();
        for &pos in iterations {
            let rec = self.records.get(pos).ok_or(Error::MissingRecord(pos))?;
            if rec.states.len() < n {
                return Err(Error::InsufficientData(format!(
                    "iteration {} has {} states, {n} neighbors requested",
                    rec.iteration,
                    rec.states.len()
                )));
            }
            let mut ranked: Vec<(f64, usize)> = rec
                .states
                .iter()
                .enumerate()
                .map(|(t, s)| Ok((self.metric.distance_squared(seed, s)?, t)))
                .collect::<Result<_>>()?;
            let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if n < ranked.len() {
                ranked.select_nth_unstable_by(n - 1, order);
                ranked.truncate(n);
            }
            ranked.sort_by(order);
            let indices: Vec<usize> = ranked.iter().map(|&(_, t)| t).collect();
            for &t in &indices {
                set.members.push(rec.states[t]);
                set.costs.push(rec.cost_to_go[t]);
            }
            set.sources.push((pos, indices));
        }
        Ok(set)
    }
}

/// Members of the local safety set with their cost-to-go.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalConvexSet {
    pub members: Vec<QuadState>,
    pub costs: Vec<f64>,
    /// `(record position, time indices K^i)` per contributing record.
    pub sources: Vec<(usize, Vec<usize>)>,
}

impl LocalConvexSet {
    pub fn from_members(members: Vec<QuadState>, costs: Vec<f64>) -> Result<Self> {
        if members.len() != costs.len() || members.is_empty() {
            return Err(Error::Dimension(format!("{} members, {} costs", members.len(), costs.len())));
        }
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidBounds("member costs must be finite and nonnegative".into()));
        }
        let sources = vec![(0, (0..members.len()).collect())];
        Ok(Self { members, costs, sources })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Rotation vectors of the member attitudes.
    pub fn rotation_logs(&self) -> Result<Vec<Vector3<f64>>> {
        self.members.iter().map(|m| so3::quat_log(&m.q)).collect()
    }

    /// Barycentric state: linear in position and velocity, tangent-space combination
    /// for the attitude.
    pub fn combine_states(&self, weights: &[f64]) -> Result<QuadState> {
        so3::validate_simplex(weights, self.len())?;
        let mut p = Vector3::zeros();
        let mut v = Vector3::zeros();
        for (m, &l) in self.members.iter().zip(weights) {
            p += l * m.p;
            v += l * m.v;
        }
        let quats: Vec<QuatNU> = self.members.iter().map(|m| m.q).collect();
        let q = so3::tangent_convex_combination(&quats, weights)?;
        Ok(QuadState::new(p, v, q))
    }

    /// Relaxed terminal cost `Jᵀλ`.
    pub fn terminal_cost(&self, weights: &[f64]) -> Result<f64> {
        so3::validate_simplex(weights, self.len())?;
        Ok(self.costs.iter().zip(weights).map(|(c, l)| c * l).sum())
    }
}
