#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Strictly convex inequality-constrained QP: min ½xᵀHx + cᵀx s.t. Gx ≤ b.
pub struct RandomQp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub fn random_qp(rng: &mut ChaCha8Rng) -> RandomQp {
    let n = rng.random_range(1..=10);
    let m = rng.random_range(0..=10);
    let mut uni = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let f = uni(n, n);
    let h = f.transpose() * &f + DMatrix::identity(n, n) * 0.1;
    let c = uni(n, 1).column(0) * 3.0;
    let g = uni(m, n);
    let x0 = uni(n, 1).column(0).into_owned();
    let slack = uni(m, 1).column(0).map(|v| 0.5 * (v + 1.0));
    let b = &g * x0 + slack;
    RandomQp { h, c, g, b }
}

fn objective(qp: &RandomQp, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(&qp.h * x)) + qp.c.dot(x)
}

/// Tries every active set; keeps the feasible KKT point with nonnegative
/// multipliers and the lowest objective.
pub fn enumerate_active_sets(qp: &RandomQp) -> DVector<f64> {
    let (n, m) = (qp.h.nrows(), qp.g.nrows());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        rhs.rows_mut(0, n).copy_from(&(-&qp.c));
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = qp.g[(i, j)];
                kkt[(j, n + r)] = qp.g[(i, j)];
            }
            rhs[n + r] = qp.b[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let multipliers_ok = (0..k).all(|r| sol[n + r] >= -1e-10);
        let feasible = (0..m).all(|i| qp.g.row(i).dot(&x.transpose()) <= qp.b[i] + 1e-10);
        if multipliers_ok && feasible {
            let f = objective(qp, &x);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
    }
    best.expect("a feasible strictly convex QP has a KKT point").1
}
