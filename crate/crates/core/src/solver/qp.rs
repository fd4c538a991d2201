//! Dense convex QP by a primal-dual interior-point method with Mehrotra
//! predictor-corrector steps.
//!
//! ```text
//! minimize    ½ xᵀ H x + cᵀ x
//! subject to  A x = b
//!             G x ≤ h
//!             lower ≤ x ≤ upper      (infinite entries are ignored)
//! ```

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem in `n` variables.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_variables(&self) -> usize {
        self.linear.len()
    }

    fn check(&self) -> Result<(), String> {
        let n = self.num_variables();
        let dims_ok = self.hessian.shape() == (n, n)
            && self.eq_matrix.ncols() == n
            && self.eq_matrix.nrows() == self.eq_rhs.len()
            && self.ineq_matrix.ncols() == n
            && self.ineq_matrix.nrows() == self.ineq_rhs.len()
            && self.lower.len() == n
            && self.upper.len() == n;
        if !dims_ok {
            return Err("inconsistent QP dimensions".into());
        }
        if (0..n).any(|i| self.lower[i] > self.upper[i]) {
            return Err("lower bound exceeds upper bound".into());
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `A x = b`.
    pub eq_dual: DVector<f64>,
    /// Multipliers of `G x ≤ h`.
    pub ineq_dual: DVector<f64>,
    /// Multipliers of the finite lower / upper bounds, zero where a bound is infinite.
    pub lower_dual: DVector<f64>,
    pub upper_dual: DVector<f64>,
    pub iterations: usize,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
}

/// Inequalities flattened as `rows` (dense), then finite upper bounds, then finite
/// lower bounds (as `-x_j ≤ -l_j`).
struct Layout<'a> {
    qp: &'a QpProblem,
    upper_idx: Vec<usize>,
    lower_idx: Vec<usize>,
    row_nz: Vec<Vec<usize>>,
    /// Variables from `split` on have a diagonal normal matrix block.
    split: usize,
    /// Leading `split` columns of the inequality matrix.
    g_dense: DMatrix<f64>,
}

impl<'a> Layout<'a> {
    fn new(qp: &'a QpProblem) -> Self {
        let n = qp.num_variables();
        let upper_idx = (0..n).filter(|&i| qp.upper[i].is_finite()).collect();
        let lower_idx = (0..n).filter(|&i| qp.lower[i].is_finite()).collect();
        let row_nz: Vec<Vec<usize>> = (0..qp.ineq_matrix.nrows())
            .map(|r| (0..n).filter(|&c| qp.ineq_matrix[(r, c)] != 0.0).collect())
            .collect();
        let mut split = row_nz.iter().filter_map(|nz| nz.last().map(|&c| c + 1)).max().unwrap_or(0);
        for j in 0..n {
            for i in 0..n {
                if i != j && qp.hessian[(i, j)] != 0.0 {
                    split = split.max(i.max(j) + 1);
                }
            }
        }
        let g_dense = qp.ineq_matrix.columns(0, split).into_owned();
        Self { qp, upper_idx, lower_idx, row_nz, split, g_dense }
    }

    fn rows(&self) -> usize {
        self.qp.ineq_matrix.nrows()
    }

    fn m(&self) -> usize {
        self.rows() + self.upper_idx.len() + self.lower_idx.len()
    }

    fn rhs(&self) -> DVector<f64> {
        let mut h = DVector::zeros(self.m());
        let r = self.rows();
        h.rows_mut(0, r).copy_from(&self.qp.ineq_rhs);
        for (k, &j) in self.upper_idx.iter().enumerate() {
            h[r + k] = self.qp.upper[j];
        }
        let off = r + self.upper_idx.len();
        for (k, &j) in self.lower_idx.iter().enumerate() {
            h[off + k] = -self.qp.lower[j];
        }
        h
    }

    /// `G x` over all inequalities.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        let g = &self.qp.ineq_matrix;
        for (r, nz) in self.row_nz.iter().enumerate() {
            out[r] = nz.iter().map(|&c| g[(r, c)] * x[c]).sum();
        }
        let r = self.rows();
        for (k, &j) in self.upper_idx.iter().enumerate() {
            out[r + k] = x[j];
        }
        let off = r + self.upper_idx.len();
        for (k, &j) in self.lower_idx.iter().enumerate() {
            out[off + k] = -x[j];
        }
        out
    }

    /// `Gᵀ w`.
    fn apply_t(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.qp.num_variables();
        let mut out = DVector::zeros(n);
        let g = &self.qp.ineq_matrix;
        for (r, nz) in self.row_nz.iter().enumerate() {
            let wr = w[r];
            if wr != 0.0 {
                for &c in nz {
                    out[c] += g[(r, c)] * wr;
                }
            }
        }
        let r = self.rows();
        for (k, &j) in self.upper_idx.iter().enumerate() {
            out[j] += w[r + k];
        }
        let off = r + self.upper_idx.len();
        for (k, &j) in self.lower_idx.iter().enumerate() {
            out[j] -= w[off + k];
        }
        out
    }

    /// `H + Gᵀ diag(d) G + reg I` as a dense leading block and a diagonal tail.
    fn normal_matrix(&self, d: &DVector<f64>, reg: f64) -> NormalMatrix {
        let n = self.qp.num_variables();
        let k = self.split;
        let mut m = self.qp.hessian.view((0, 0), (k, k)).into_owned();
        let mut tail = DVector::from_fn(n - k, |i, _| self.qp.hessian[(k + i, k + i)] + reg);
        if self.rows() > 0 && k > 0 {
            let mut scaled = self.g_dense.clone();
            for (r, mut row) in scaled.row_iter_mut().enumerate() {
                row *= d[r];
            }
            m.gemm_tr(1.0, &self.g_dense, &scaled, 1.0);
        }
        let mut add = |j: usize, v: f64| {
            if j < k {
                m[(j, j)] += v;
            } else {
                tail[j - k] += v;
            }
        };
        let r = self.rows();
        for (i, &j) in self.upper_idx.iter().enumerate() {
            add(j, d[r + i]);
        }
        let off = r + self.upper_idx.len();
        for (i, &j) in self.lower_idx.iter().enumerate() {
            add(j, d[off + i]);
        }
        for i in 0..k {
            m[(i, i)] += reg;
        }
        NormalMatrix { dense: m, tail }
    }
}

struct NormalMatrix {
    dense: DMatrix<f64>,
    tail: DVector<f64>,
}

/// Factorization of the reduced KKT system `[M Aᵀ; A 0]`.
struct KktFactor {
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    tail: DVector<f64>,
    a: DMatrix<f64>,
    m_inv_at: DMatrix<f64>,
    schur: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl KktFactor {
    fn new(nm: NormalMatrix, a: &DMatrix<f64>) -> Option<Self> {
        let NormalMatrix { dense: mut m, mut tail } = nm;
        let scale = m.diagonal().amax().max(tail.amax()).max(1.0);
        let chol = if m.nrows() > 0 {
            let mut reg = 0.0;
            Some(loop {
                if let Some(c) = Cholesky::new(m.clone()) {
                    break c;
                }
                let bump = if reg == 0.0 { 1e-12 * scale } else { reg * 10.0 };
                if bump > 1e-4 * scale {
                    return None;
                }
                for i in 0..m.nrows() {
                    m[(i, i)] += bump - reg;
                }
                reg = bump;
            })
        } else {
            None
        };
        for t in tail.iter_mut() {
            if !(*t > 0.0) {
                *t = 1e-12 * scale;
            }
        }
        let mut f = Self { chol, tail, a: a.clone(), m_inv_at: DMatrix::zeros(0, 0), schur: None };
        if a.nrows() > 0 {
            let m_inv_at = f.m_solve_mat(&a.transpose());
            let mut s = a * &m_inv_at;
            let sscale = s.diagonal().amax().max(1e-300);
            for i in 0..s.nrows() {
                s[(i, i)] += 1e-13 * sscale;
            }
            f.m_inv_at = m_inv_at;
            f.schur = Some(Cholesky::new(s)?);
        }
        Some(f)
    }

    fn split(&self) -> usize {
        self.chol.as_ref().map_or(0, |c| c.l_dirty().nrows())
    }

    fn m_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let k = self.split();
        let mut out = r.clone();
        if let Some(c) = &self.chol {
            let top = c.solve(&r.rows(0, k).into_owned());
            out.rows_mut(0, k).copy_from(&top);
        }
        for i in 0..self.tail.len() {
            out[k + i] /= self.tail[i];
        }
        out
    }

    fn m_solve_mat(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.split();
        let mut out = r.clone();
        if let Some(c) = &self.chol {
            let top = c.solve(&r.rows(0, k).into_owned());
            out.rows_mut(0, k).copy_from(&top);
        }
        for i in 0..self.tail.len() {
            let t = self.tail[i];
            out.row_mut(k + i).iter_mut().for_each(|v| *v /= t);
        }
        out
    }

    /// Solves `M dx + Aᵀ dy = r1`, `A dx = r2`.
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let m_inv_r1 = self.m_solve(r1);
        match &self.schur {
            Some(s) => {
                let dy = s.solve(&(&self.a * &m_inv_r1 - r2));
                let dx = m_inv_r1 - &self.m_inv_at * &dy;
                (dx, dy)
            }
            None => (m_inv_r1, DVector::zeros(0)),
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn qp_solve(qp: &QpProblem, settings: &QpSettings) -> Result<QpSolution, String> {
    qp.check()?;
    let n = qp.num_variables();
    let layout = Layout::new(qp);
    let m = layout.m();
    let me = qp.eq_matrix.nrows();
    let h = layout.rhs();
    let a = &qp.eq_matrix;
    let b = &qp.eq_rhs;
    let c = &qp.linear;

    let scale_d = 1.0 + inf_norm(c);
    let scale_p = 1.0 + inf_norm(b).max(inf_norm(&h));

    // Initial point from the regularized least-squares KKT system.
    let ones = DVector::from_element(m, 1.0);
    let factor = KktFactor::new(layout.normal_matrix(&ones, 1e-8), a)
        .ok_or_else(|| "singular KKT system at initialization".to_string())?;
    let (mut x, mut y) = factor.solve(&(-c + layout.apply_t(&h)), b);
    // symmetric shift of the least-squares residual into the positive orthant
    let resid = &h - layout.apply(&x);
    let shift = |v: DVector<f64>| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo > 0.0 { v } else { v.add_scalar(1.0 - lo) }
    };
    let mut s = shift(resid.clone());
    let mut z = shift(-resid);

    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let (mut rp_norm, mut rd_norm, mut mu) = (f64::INFINITY, f64::INFINITY, 0.0);
    let mu0 = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };

    for it in 0..=settings.max_iterations {
        let r_d = &qp.hessian * &x + c + a.transpose() * &y + layout.apply_t(&z);
        let r_p = a * &x - b;
        let r_i = layout.apply(&x) + &s - &h;
        mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        rd_norm = inf_norm(&r_d);
        rp_norm = inf_norm(&r_p).max(inf_norm(&r_i));
        iterations = it;

        if rd_norm <= settings.tolerance * scale_d
            && rp_norm <= settings.tolerance * scale_p
            && mu <= settings.tolerance
        {
            status = QpStatus::Solved;
            break;
        }
        let blown = !mu.is_finite()
            || !rd_norm.is_finite()
            || inf_norm(&x) > 1e14
            || (m > 0 && mu > 1e10 * mu0.max(1.0))
            || (m > 0 && inf_norm(&z) > 1e14);
        if blown {
            status = QpStatus::Infeasible;
            break;
        }
        if it == settings.max_iterations {
            break;
        }

        let w = z.component_div(&s);
        let Some(kkt) = KktFactor::new(layout.normal_matrix(&w, 0.0), a) else {
            status = QpStatus::Infeasible;
            break;
        };

        let direction = |r_c: &DVector<f64>| {
            let t = (z.component_mul(&r_i) - r_c).component_div(&s);
            let r1 = -&r_d - layout.apply_t(&t);
            let (dx, dy) = kkt.solve(&r1, &(-&r_p));
            let ds = -&r_i - layout.apply(&dx);
            let dz = (-r_c - z.component_mul(&ds)).component_div(&s);
            (dx, dy, ds, dz)
        };

        // predictor
        let rc_aff = s.component_mul(&z);
        let (dx_a, _, ds_a, dz_a) = direction(&rc_aff);
        let _ = dx_a;
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let sigma = if m > 0 {
            let mu_aff = (&s + alpha_aff * &ds_a).dot(&(&z + alpha_aff * &dz_a)) / m as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // corrector
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, dy, ds, dz) = direction(&rc);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);

        x += alpha * dx;
        y += alpha * dy;
        s += alpha * ds;
        z += alpha * dz;
        if me == 0 {
            y = DVector::zeros(0);
        }
    }

    let r = layout.rows();
    let nu = layout.upper_idx.len();
    let mut upper_dual = DVector::zeros(n);
    let mut lower_dual = DVector::zeros(n);
    for (k, &j) in layout.upper_idx.iter().enumerate() {
        upper_dual[j] = z[r + k];
    }
    for (k, &j) in layout.lower_idx.iter().enumerate() {
        lower_dual[j] = z[r + nu + k];
    }
    Ok(QpSolution {
        x,
        eq_dual: y,
        ineq_dual: z.rows(0, r).into_owned(),
        lower_dual,
        upper_dual,
        iterations,
        status,
        primal_residual: rp_norm,
        dual_residual: rd_norm,
        complementarity: mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn active_upper_bound() {
        let qp = QpProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, -2.0))
            .with_inequalities(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.5));
        let sol = qp_solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(sol.ineq_dual[0], 1.0, epsilon = 1e-7);

        let as_bound = QpProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, -2.0))
            .with_bounds(DVector::from_element(1, f64::NEG_INFINITY), DVector::from_element(1, 0.5));
        let sol = qp_solve(&as_bound, &QpSettings::default()).unwrap();
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(sol.upper_dual[0], 1.0, epsilon = 1e-7);
    }

    /// Euclidean projection onto the probability simplex by sorting.
    fn simplex_projection(c: &[f64]) -> Vec<f64> {
        let mut u = c.to_vec();
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut cumsum = 0.0;
        let mut theta = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            cumsum += uk;
            let t = (cumsum - 1.0) / (k + 1) as f64;
            if uk - t > 0.0 {
                theta = t;
            }
        }
        c.iter().map(|v| (v - theta).max(0.0)).collect()
    }

    #[test]
    fn simplex_projection_matches_sorting_oracle() {
        let c = [0.6, 0.6, -0.2];
        let expected = simplex_projection(&c);
        assert_eq!(expected, vec![0.5, 0.5, 0.0]);
        let qp = QpProblem::new(DMatrix::identity(3, 3) * 2.0, DVector::from_iterator(3, c.iter().map(|v| -2.0 * v)))
            .with_equalities(DMatrix::from_element(1, 3, 1.0), DVector::from_element(1, 1.0))
            .with_bounds(DVector::zeros(3), DVector::from_element(3, f64::INFINITY));
        let sol = qp_solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        for i in 0..3 {
            assert_relative_eq!(sol.x[i], expected[i], epsilon = 1e-8);
        }
        assert!(sol.primal_residual <= 1e-8 && sol.dual_residual <= 1e-8 && sol.complementarity <= 1e-8);
    }

    #[test]
    fn equality_only() {
        // min x² + y² s.t. x + y = 2
        let qp = QpProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 2.0));
        let sol = qp_solve(&qp, &QpSettings::default()).unwrap();
        assert_relative_eq!(sol.x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-10);
    }

    #[test]
    fn infeasible_is_reported() {
        // x ≤ 0.5 and x ≥ 1
        let qp = QpProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
            .with_inequalities(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![0.5, -1.0]));
        let sol = qp_solve(&qp, &QpSettings::default()).unwrap();
        assert_ne!(sol.status, QpStatus::Solved);
    }

    #[test]
    fn dimension_errors() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(qp_solve(&qp, &QpSettings::default()).is_err());
        let qp = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_bounds(DVector::from_element(1, 1.0), DVector::from_element(1, 0.0));
        assert!(qp_solve(&qp, &QpSettings::default()).is_err());
    }
}
