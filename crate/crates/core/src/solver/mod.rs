//! Relaxed learning-MPC optimal control problem and its SQP solver.
//!
//! Decision variables are the shooting states `x_{0..N}`, inputs `u_{0..N-1}` and
//! the barycentric weights `λ` over the local safety set. Each SQP iteration
//! linearizes the RK4 shooting constraints and the terminal coupling, builds a
//! Gauss-Newton QP, condenses the state increments into the input increments and
//! solves the result with the interior-point method in [`qp`].

pub mod corridor;
pub mod qp;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, QuadInput, QuadParams, QuadState, StateVec, NU, NX};
use crate::error::{Error, Result};
use crate::safety_set::LocalConvexSet;
use crate::so3;
use crate::task::Track;

pub use corridor::{corridor_rows, CorridorRows};
pub use qp::{qp_solve, QpProblem, QpSettings, QpSolution, QpStatus};

/// Rows of the terminal coupling: position, velocity, rotation vector.
const NC: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal of the input penalty `R_u` (thrust, Ωx, Ωy, Ωz).
    pub r_u: [f64; 4],
    /// Weight on the sigmoid distance-to-goal term.
    pub stage_weight: f64,
    pub max_sqp_iterations: usize,
    pub kkt_tolerance: f64,
    /// ℓ1 weight on the elastic slack of the terminal coupling.
    pub coupling_penalty: f64,
    pub regularization: f64,
    pub min_step: f64,
    #[serde(skip)]
    pub qp: QpSettings,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            r_u: [1e-3, 1e-2, 1e-2, 1e-2],
            stage_weight: 1.0,
            max_sqp_iterations: 30,
            kkt_tolerance: 1e-6,
            coupling_penalty: 1e3,
            regularization: 1e-8,
            min_step: 1.0 / 32.0,
            qp: QpSettings::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.r_u.iter().any(|r| !(*r >= 0.0)) || !(self.stage_weight >= 0.0) {
            return Err(Error::Config("R_u entries must be nonnegative".into()));
        }
        if self.max_sqp_iterations == 0 {
            return Err(Error::Config("at least one SQP iteration is required".into()));
        }
        Ok(())
    }
}

/// One instance of the relaxed problem at time `t`.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub initial: QuadState,
    pub goal: Vector3<f64>,
    pub config: SolverConfig,
    pub params: QuadParams,
    pub set: LocalConvexSet,
    /// Corridor bound for the predicted states `x_1 … x_N` (index `k - 1`).
    pub corridors: Vec<Option<CorridorRows>>,
    set_logs: Vec<Vector3<f64>>,
}

impl OcpProblem {
    /// Problem without corridor constraints.
    pub fn new(
        initial: QuadState,
        set: LocalConvexSet,
        goal: Vector3<f64>,
        config: SolverConfig,
        params: QuadParams,
    ) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        if set.costs.len() != set.len() || set.costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBounds("local set costs must be finite, one per member".into()));
        }
        if !initial.is_finite() {
            return Err(Error::InvalidBounds("initial state is not finite".into()));
        }
        let set_logs = set.rotation_logs()?;
        Ok(Self {
            initial,
            goal,
            corridors: vec![None; config.horizon],
            config,
            params,
            set,
            set_logs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Size of the stacked decision vector `[x_0..x_N, u_0..u_{N-1}, λ]`.
    pub fn num_variables(&self) -> usize {
        NX * (self.horizon() + 1) + NU * self.horizon() + self.set.len()
    }

    pub fn set_corridors(&mut self, corridors: Vec<Option<CorridorRows>>) -> Result<()> {
        if corridors.len() != self.horizon() {
            return Err(Error::Dimension(format!(
                "{} corridor stages for horizon {}",
                corridors.len(),
                self.horizon()
            )));
        }
        for c in corridors.iter().flatten() {
            if (0..3).any(|i| c.b_min[i] > c.b_max[i]) {
                return Err(Error::InvalidBounds("corridor b_min exceeds b_max".into()));
            }
        }
        self.corridors = corridors;
        Ok(())
    }

    fn running_cost(&self, x: &StateVec, u: &QuadInput) -> f64 {
        let d2 = (Vector3::new(x[0], x[1], x[2]) - self.goal).norm_squared();
        let uv = u.as_vector();
        let effort: f64 = (0..NU).map(|i| self.config.r_u[i] * uv[i] * uv[i]).sum();
        self.config.stage_weight * d2 / (d2 * d2 + 1.0).sqrt() + effort
    }
}

/// Builds the per-step problem; the corridor segment of each predicted state is
/// chosen from `guide` (typically the warm-start trajectory), or from `x_t`.
pub fn build_problem(
    x_t: &QuadState,
    set: &LocalConvexSet,
    track: &Track,
    config: &SolverConfig,
    params: &QuadParams,
    guide: Option<&[QuadState]>,
) -> Result<OcpProblem> {
    let mut problem = OcpProblem::new(*x_t, set.clone(), track.goal(), *config, *params)?;
    let n = config.horizon;
    let mut corridors = Vec::with_capacity(n);
    for k in 1..=n {
        let p = guide.and_then(|g| g.get(k)).map(|s| s.p).unwrap_or(x_t.p);
        let seg = track.active_segment(&p);
        corridors.push(Some(track.segment_corridor(seg)?));
    }
    problem.set_corridors(corridors)?;
    Ok(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub kkt: f64,
    pub solve_time: f64,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub states: Vec<QuadState>,
    pub inputs: Vec<QuadInput>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub states: Vec<QuadState>,
    pub inputs: Vec<QuadInput>,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
}

impl OcpSolution {
    pub fn as_warm_start(&self) -> WarmStart {
        WarmStart { states: self.states.clone(), inputs: self.inputs.clone(), weights: self.weights.clone() }
    }
}

/// Shifts a previous solution by one stage for the next control step. Without a
/// previous solution, rolls out hover inputs from `x_t`.
pub fn warm_start_shift(
    previous: Option<&OcpSolution>,
    x_t: &QuadState,
    set_size: usize,
    params: &QuadParams,
    config: &SolverConfig,
) -> Result<WarmStart> {
    let n = config.horizon;
    let uniform = vec![1.0 / set_size.max(1) as f64; set_size];
    match previous {
        Some(prev) if prev.inputs.len() == n && prev.states.len() == n + 1 => {
            let mut inputs: Vec<QuadInput> = prev.inputs[1..].to_vec();
            inputs.push(*prev.inputs.last().unwrap());
            let mut states: Vec<QuadState> = prev.states[1..].to_vec();
            let last = dynamics::rk4_step(&prev.states[n], &prev.inputs[n - 1], config.dt, params)?;
            states.push(last);
            Ok(WarmStart { states, inputs, weights: uniform })
        }
        _ => {
            let inputs = vec![QuadInput::hover(params); n];
            let states = dynamics::rollout(x_t, &inputs, config.dt, params)?;
            Ok(WarmStart { states, inputs, weights: uniform })
        }
    }
}

/// `(r, ∂r/∂p)` with `|r|² = d²/√(d⁴+1)`, `d = |p − goal|`.
fn sigmoid_residual(p: &Vector3<f64>, goal: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let e = p - goal;
    let s = e.norm_squared();
    let base = s * s + 1.0;
    let c = base.powf(-0.25);
    let r = e * c;
    let jac = Matrix3::identity() * c - e * e.transpose() * (s * base.powf(-1.25));
    (r, jac)
}

fn rotation_vector(x: &StateVec) -> Result<Vector3<f64>> {
    so3::quat_log(&dynamics::quat_of(x))
}

/// `∂ log(q/|q|) / ∂q` by central differences (3×4).
fn rotation_jacobian(x: &StateVec) -> Result<nalgebra::SMatrix<f64, 3, 4>> {
    let mut jac = nalgebra::SMatrix::<f64, 3, 4>::zeros();
    for i in 0..4 {
        let h = 1e-6 * x[6 + i].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[6 + i] += h;
        xm[6 + i] -= h;
        jac.set_column(i, &((rotation_vector(&xp)? - rotation_vector(&xm)?) / (2.0 * h)));
    }
    Ok(jac)
}

fn project_simplex_weights(w: &mut [f64]) {
    for v in w.iter_mut() {
        *v = v.max(0.0);
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        for v in w.iter_mut() {
            *v /= s;
        }
    } else {
        let u = 1.0 / w.len() as f64;
        w.iter_mut().for_each(|v| *v = u);
    }
}

fn position(x: &StateVec) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

/// Offsets of the QP variable blocks `[δu, λ, s⁺, s⁻]`.
#[derive(Debug, Clone, Copy)]
struct VarLayout {
    inputs: usize,
    weights: usize,
    slack: usize,
    total: usize,
}

impl VarLayout {
    fn new(n: usize, p: usize) -> Self {
        let inputs = NU * n;
        Self { inputs, weights: inputs, slack: inputs + p, total: inputs + p + 2 * NC }
    }
}

struct CorridorRow {
    stage: usize,
    normal: Vector3<f64>,
    row: nalgebra::RowDVector<f64>,
    rhs: f64,
}

struct Subproblem {
    qp: QpProblem,
    layout: VarLayout,
    e_mat: Vec<DMatrix<f64>>,
    e_vec: Vec<StateVec>,
    jac_a: Vec<dynamics::StateJacobian>,
    /// `(L_k, l_k, ∂r/∂p)` of the stage residuals `k = 1 … N-1`.
    stage_res: Vec<(DMatrix<f64>, Vector3<f64>, Matrix3<f64>)>,
    rot_jac: nalgebra::SMatrix<f64, 3, 4>,
    corridor_rows: Vec<CorridorRow>,
}

struct Iterate {
    states: Vec<StateVec>,
    inputs: Vec<QuadInput>,
    weights: Vec<f64>,
}

/// Terms of the ℓ1 merit function at an iterate.
struct MeritTerms {
    objective: f64,
    violation_l1: f64,
    violation_inf: f64,
}

/// Multiple-shooting SQP with Gauss-Newton Hessian. One instance per control loop.
#[derive(Debug, Clone)]
pub struct LmpcSolver {
    pub config: SolverConfig,
}

impl LmpcSolver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn initial_iterate(&self, problem: &OcpProblem, warm: Option<&WarmStart>) -> Result<Iterate> {
        let n = problem.horizon();
        let p = problem.set.len();
        let guess = match warm {
            Some(w) => {
                if w.states.len() != n + 1 || w.inputs.len() != n || w.weights.len() != p {
                    return Err(Error::Dimension(format!(
                        "warm start has {} states, {} inputs, {} weights; expected {}, {}, {}",
                        w.states.len(),
                        w.inputs.len(),
                        w.weights.len(),
                        n + 1,
                        n,
                        p
                    )));
                }
                w.clone()
            }
            None => warm_start_shift(None, &problem.initial, p, &problem.params, &problem.config)?,
        };
        let mut states: Vec<StateVec> = guess.states.iter().map(|s| s.to_vector()).collect();
        states[0] = problem.initial.to_vector();
        let inputs = guess.inputs.iter().map(|u| problem.params.clamp_input(u)).collect();
        let mut weights = guess.weights;
        project_simplex_weights(&mut weights);
        Ok(Iterate { states, inputs, weights })
    }

    fn coupling_residual(&self, problem: &OcpProblem, it: &Iterate) -> Result<[f64; NC]> {
        let xn = &it.states[problem.horizon()];
        let mut res = [0.0; NC];
        for (m, &l) in problem.set.members.iter().zip(&it.weights) {
            for i in 0..3 {
                res[i] -= l * m.p[i];
                res[3 + i] -= l * m.v[i];
            }
        }
        for (phi, &l) in problem.set_logs.iter().zip(&it.weights) {
            for i in 0..3 {
                res[6 + i] -= l * phi[i];
            }
        }
        let rot = rotation_vector(xn)?;
        for i in 0..6 {
            res[i] += xn[i];
        }
        for i in 0..3 {
            res[6 + i] += rot[i];
        }
        Ok(res)
    }

    fn merit_terms(&self, problem: &OcpProblem, it: &Iterate) -> Result<MeritTerms> {
        let n = problem.horizon();
        let mut objective = 0.0;
        let mut l1 = 0.0;
        let mut linf: f64 = 0.0;
        for k in 0..n {
            objective += problem.running_cost(&it.states[k], &it.inputs[k]);
            let next = dynamics::rk4_raw(&it.states[k], &it.inputs[k].as_vector(), problem.config.dt, &problem.params)?;
            let d = next - it.states[k + 1];
            l1 += d.iter().map(|v| v.abs()).sum::<f64>();
            linf = linf.max(d.amax());
        }
        objective += problem.set.costs.iter().zip(&it.weights).map(|(c, l)| c * l).sum::<f64>();
        for r in self.coupling_residual(problem, it)? {
            l1 += r.abs();
            linf = linf.max(r.abs());
        }
        let simplex = (it.weights.iter().sum::<f64>() - 1.0).abs();
        l1 += simplex;
        linf = linf.max(simplex);
        Ok(MeritTerms { objective, violation_l1: l1, violation_inf: linf })
    }

    /// Linearizes at `it` and builds the condensed Gauss-Newton QP.
    fn subproblem(&self, problem: &OcpProblem, it: &Iterate, regularization: f64) -> Result<Subproblem> {
        let cfg = &problem.config;
        let n = cfg.horizon;
        let p = problem.set.len();
        let lay = VarLayout::new(n, p);
        let nz = lay.total;

        // linearize shooting constraints and condense state increments
        let mut jac_a = Vec::with_capacity(n);
        let mut e_mat: Vec<DMatrix<f64>> = vec![DMatrix::zeros(NX, lay.inputs)];
        let mut e_vec: Vec<StateVec> = vec![StateVec::zeros()];
        for k in 0..n {
            let uv = it.inputs[k].as_vector();
            let (a, b) = dynamics::linearize_raw(&it.states[k], &uv, cfg.dt, &problem.params, 1.0)?;
            let defect = dynamics::rk4_raw(&it.states[k], &uv, cfg.dt, &problem.params)? - it.states[k + 1];
            let a_dyn = DMatrix::from_column_slice(NX, NX, a.as_slice());
            let mut next = &a_dyn * &e_mat[k];
            for c in 0..NU {
                for r in 0..NX {
                    next[(r, NU * k + c)] += b[(r, c)];
                }
            }
            e_vec.push(a * e_vec[k] + defect);
            e_mat.push(next);
            jac_a.push(a);
        }

        // Gauss-Newton cost
        let mut hess = DMatrix::zeros(nz, nz);
        let mut grad = DVector::zeros(nz);
        for k in 0..n {
            let uv = it.inputs[k].as_vector();
            for i in 0..NU {
                hess[(NU * k + i, NU * k + i)] += 2.0 * cfg.r_u[i];
                grad[NU * k + i] += 2.0 * cfg.r_u[i] * uv[i];
            }
        }
        let weight = cfg.stage_weight.sqrt();
        let mut stage_res = Vec::with_capacity(n);
        for k in 1..n {
            let (r, jr) = sigmoid_residual(&position(&it.states[k]), &problem.goal);
            let (r, jr) = (r * weight, jr * weight);
            let cols = NU * k;
            let jr_d = DMatrix::from_column_slice(3, 3, jr.as_slice());
            let l = &jr_d * e_mat[k].view((0, 0), (3, cols));
            let lvec = r + jr * position(&e_vec[k]);
            let lt = l.transpose();
            hess.view_mut((0, 0), (cols, cols)).gemm(2.0, &lt, &l, 1.0);
            let lv = DVector::from_column_slice(lvec.as_slice());
            grad.rows_mut(0, cols).gemv(2.0, &lt, &lv, 1.0);
            stage_res.push((l, lvec, jr));
        }
        for j in 0..p {
            grad[lay.weights + j] = problem.set.costs[j];
        }
        for j in 0..2 * NC {
            grad[lay.slack + j] = self.config.coupling_penalty;
        }
        for i in 0..nz {
            hess[(i, i)] += regularization;
        }

        // terminal coupling and simplex
        let xn = it.states[n];
        let en = &e_mat[n];
        let rot_jac = rotation_jacobian(&xn)?;
        let rot_jac_d = DMatrix::from_column_slice(3, 4, rot_jac.as_slice());
        let mut a_eq = DMatrix::zeros(NC + 1, nz);
        let mut b_eq = DVector::zeros(NC + 1);
        a_eq.view_mut((0, 0), (6, lay.inputs)).copy_from(&en.view((0, 0), (6, lay.inputs)));
        a_eq.view_mut((6, 0), (3, lay.inputs)).copy_from(&(&rot_jac_d * en.view((6, 0), (4, lay.inputs))));
        for j in 0..p {
            let m = &problem.set.members[j];
            let phi = &problem.set_logs[j];
            for i in 0..3 {
                a_eq[(i, lay.weights + j)] = -m.p[i];
                a_eq[(3 + i, lay.weights + j)] = -m.v[i];
                a_eq[(6 + i, lay.weights + j)] = -phi[i];
            }
            a_eq[(NC, lay.weights + j)] = 1.0;
        }
        for i in 0..NC {
            a_eq[(i, lay.slack + i)] = 1.0;
            a_eq[(i, lay.slack + NC + i)] = -1.0;
        }
        for i in 0..6 {
            b_eq[i] = -(xn[i] + e_vec[n][i]);
        }
        let rot_lin = rotation_vector(&xn)? + rot_jac * e_vec[n].fixed_rows::<4>(6);
        for i in 0..3 {
            b_eq[6 + i] = -rot_lin[i];
        }
        b_eq[NC] = 1.0;

        // corridor rows on predicted positions
        let mut corridor_rows = Vec::new();
        for k in 1..=n {
            if let Some(c) = &problem.corridors[k - 1] {
                let pk = position(&it.states[k]) + position(&e_vec[k]);
                for i in c.active_rows() {
                    let normal: Vector3<f64> = c.a.row(i).transpose();
                    let row = normal.transpose() * e_mat[k].view((0, 0), (3, NU * k));
                    let val = normal.dot(&pk);
                    corridor_rows.push(CorridorRow { stage: k, normal, row: row.clone(), rhs: c.b_max[i] - val });
                    corridor_rows.push(CorridorRow { stage: k, normal: -normal, row: -row, rhs: val - c.b_min[i] });
                }
            }
        }
        let mut g = DMatrix::zeros(corridor_rows.len(), nz);
        let mut h = DVector::zeros(corridor_rows.len());
        for (r, c) in corridor_rows.iter().enumerate() {
            g.view_mut((r, 0), (1, c.row.ncols())).copy_from(&c.row);
            h[r] = c.rhs;
        }

        let lo = problem.params.input_lower();
        let hi = problem.params.input_upper();
        let mut lower = DVector::from_element(nz, f64::NEG_INFINITY);
        let upper = DVector::from_fn(nz, |j, _| {
            if j < lay.inputs {
                hi[j % NU] - it.inputs[j / NU].as_vector()[j % NU]
            } else {
                f64::INFINITY
            }
        });
        for k in 0..n {
            let uv = it.inputs[k].as_vector();
            for i in 0..NU {
                lower[NU * k + i] = lo[i] - uv[i];
            }
        }
        for j in lay.weights..nz {
            lower[j] = 0.0;
        }

        let qp = QpProblem::new(hess, grad)
            .with_equalities(a_eq, b_eq)
            .with_inequalities(g, h)
            .with_bounds(lower, upper);
        Ok(Subproblem { qp, layout: lay, e_mat, e_vec, jac_a, stage_res, rot_jac, corridor_rows })
    }

    /// Gauss-Newton QP of the first SQP iteration at the given initial guess.
    pub fn first_subproblem(&self, problem: &OcpProblem, warm: Option<&WarmStart>, regularize: bool) -> Result<QpProblem> {
        let it = self.initial_iterate(problem, warm)?;
        let reg = if regularize { self.config.regularization } else { 0.0 };
        Ok(self.subproblem(problem, &it, reg)?.qp)
    }

    /// Largest multiplier magnitude: QP equality duals and the adjoint of the
    /// shooting constraints, recovered by a backward recursion.
    fn multiplier_bound(&self, sub: &Subproblem, sol: &QpSolution, du: &DVector<f64>, n: usize) -> f64 {
        let y = &sol.eq_dual;
        let mut corridor_grad = vec![Vector3::<f64>::zeros(); n + 1];
        for (r, c) in sub.corridor_rows.iter().enumerate() {
            corridor_grad[c.stage] += c.normal * sol.ineq_dual[r];
        }
        let mut nu = StateVec::zeros();
        for i in 0..6 {
            nu[i] = -y[i];
        }
        let rot_adj = sub.rot_jac.transpose() * Vector3::new(y[6], y[7], y[8]);
        for i in 0..4 {
            nu[6 + i] = -rot_adj[i];
        }
        for i in 0..3 {
            nu[i] -= corridor_grad[n][i];
        }
        let mut max_mult = y.amax().max(nu.amax());
        for k in (1..n).rev() {
            let (l, lvec, jr) = &sub.stage_res[k - 1];
            let v = l * du.rows(0, NU * k);
            let grad_p = jr.transpose() * (lvec + Vector3::new(v[0], v[1], v[2])) * 2.0;
            let mut nu_k = sub.jac_a[k].transpose() * nu;
            for i in 0..3 {
                nu_k[i] -= grad_p[i] + corridor_grad[k][i];
            }
            max_mult = max_mult.max(nu_k.amax());
            nu = nu_k;
        }
        max_mult
    }

    pub fn solve(&mut self, problem: &OcpProblem, warm: Option<&WarmStart>) -> Result<OcpSolution> {
        let start = Instant::now();
        let n = problem.horizon();
        let p = problem.set.len();
        let mut it = self.initial_iterate(problem, warm)?;
        let mut status = SolveStatus::MaxIter;
        let mut sqp_iterations = 0;
        let mut qp_iterations = 0;
        let mut kkt = f64::INFINITY;
        let mut merit_weight: f64 = 1.0;

        for _ in 0..self.config.max_sqp_iterations {
            sqp_iterations += 1;
            let sub = self.subproblem(problem, &it, self.config.regularization)?;
            let lay = sub.layout;
            let sol = qp_solve(&sub.qp, &self.config.qp).map_err(Error::Dimension)?;
            qp_iterations += sol.iterations;
            let usable = match sol.status {
                QpStatus::Solved => true,
                QpStatus::MaxIterations => sol.primal_residual < 1e-6 * (1.0 + sub.qp.eq_rhs.amax()),
                QpStatus::Infeasible => false,
            };
            if !usable {
                status = SolveStatus::Infeasible;
                break;
            }

            let du = sol.x.rows(0, lay.inputs).into_owned();
            let lambda_qp: Vec<f64> = sol.x.rows(lay.weights, p).iter().cloned().collect();
            let dx: Vec<StateVec> = (0..=n)
                .map(|k| StateVec::from_column_slice((&sub.e_mat[k] * &du).as_slice()) + sub.e_vec[k])
                .collect();

            let max_mult = self.multiplier_bound(&sub, &sol, &du, n);
            if max_mult.is_finite() {
                merit_weight = merit_weight.max(10.0 * max_mult);
            }

            // -H d is the Lagrangian gradient at the current iterate
            let mut d = DVector::zeros(lay.total);
            d.rows_mut(0, lay.inputs).copy_from(&du);
            for j in 0..p {
                d[lay.weights + j] = lambda_qp[j] - it.weights[j];
            }
            let stationarity = (&sub.qp.hessian * &d).rows(0, lay.slack).amax();

            let base = self.merit_terms(problem, &it)?;
            let phi0 = base.objective + merit_weight * base.violation_l1;
            let mut alpha = 1.0;
            let mut trial;
            loop {
                trial = Iterate {
                    states: it.states.iter().zip(&dx).map(|(x, d)| x + d * alpha).collect(),
                    inputs: it
                        .inputs
                        .iter()
                        .enumerate()
                        .map(|(k, u)| {
                            let v = u.as_vector() + du.fixed_rows::<NU>(NU * k) * alpha;
                            problem.params.clamp_input(&QuadInput::from_vector(&v))
                        })
                        .collect(),
                    weights: it.weights.iter().zip(&lambda_qp).map(|(w, l)| w + alpha * (l - w)).collect(),
                };
                project_simplex_weights(&mut trial.weights);
                trial.states[0] = problem.initial.to_vector();
                let accepted = match self.merit_terms(problem, &trial) {
                    Ok(t) => t.objective + merit_weight * t.violation_l1 < phi0,
                    Err(_) => false,
                };
                if accepted || alpha <= self.config.min_step {
                    break;
                }
                alpha *= 0.5;
            }
            let step = du.amax() * alpha;
            it = trial;

            let after = self.merit_terms(problem, &it)?;
            kkt = stationarity.max(base.violation_inf);
            if kkt <= self.config.kkt_tolerance && after.violation_inf <= self.config.kkt_tolerance && step <= 1e-4 {
                status = SolveStatus::Converged;
                kkt = kkt.max(after.violation_inf);
                break;
            }
        }

        let objective = self.merit_terms(problem, &it).map(|t| t.objective).unwrap_or(f64::NAN);
        let states: Vec<QuadState> = it.states.iter().map(QuadState::from_vector).collect();
        let stats = SolveStats {
            sqp_iterations,
            qp_iterations,
            kkt,
            solve_time: start.elapsed().as_secs_f64().max(1e-9),
            status,
        };
        Ok(OcpSolution { states, inputs: it.inputs, weights: it.weights, objective, stats })
    }
}

/// Largest shooting defect of a predicted trajectory.
pub fn max_shooting_defect(solution: &OcpSolution, params: &QuadParams, dt: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..solution.inputs.len() {
        let next = dynamics::rk4_step(&solution.states[k], &solution.inputs[k], dt, params)?;
        worst = worst.max((next.to_vector() - solution.states[k + 1].to_vector()).amax());
    }
    Ok(worst)
}

/// Distance between the terminal predicted state and the barycentric combination of
/// the set: max over position/velocity error and the geodesic attitude error.
pub fn terminal_coupling_error(solution: &OcpSolution, set: &LocalConvexSet) -> Result<f64> {
    let target = set.combine_states(&solution.weights)?;
    let last = solution.states.last().ok_or_else(|| Error::Dimension("empty solution".into()))?;
    let pv = (last.p - target.p).amax().max((last.v - target.v).amax());
    let rot = so3::geodesic_distance(&last.q, &target.q)?;
    Ok(pv.max(rot))
}
