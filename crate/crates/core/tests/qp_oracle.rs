mod common;

use lmpcq::solver::{qp_solve, QpProblem, QpSettings, QpStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn interior_point_matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let q = common::random_qp(&mut rng);
        let expected = common::enumerate_active_sets(&q);
        let problem = QpProblem::new(q.h.clone(), q.c.clone()).with_inequalities(q.g.clone(), q.b.clone());
        let sol = qp_solve(&problem, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        worst = worst.max((sol.x - expected).amax());
    }
    assert!(worst <= 1e-6, "largest deviation {worst:e}");
}

#[test]
fn box_bounds_agree_with_explicit_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let q = common::random_qp(&mut rng);
        let n = q.h.nrows();
        let lower = nalgebra::DVector::from_element(n, -0.3);
        let upper = nalgebra::DVector::from_element(n, 0.4);
        let boxed = QpProblem::new(q.h.clone(), q.c.clone()).with_bounds(lower.clone(), upper.clone());
        let mut g = nalgebra::DMatrix::zeros(2 * n, n);
        let mut b = nalgebra::DVector::zeros(2 * n);
        for i in 0..n {
            g[(i, i)] = 1.0;
            b[i] = upper[i];
            g[(n + i, i)] = -1.0;
            b[n + i] = -lower[i];
        }
        let rows = common::RandomQp { h: q.h.clone(), c: q.c.clone(), g, b };
        let a = qp_solve(&boxed, &QpSettings::default()).unwrap();
        let expected = if n <= 5 { Some(common::enumerate_active_sets(&rows)) } else { None };
        let via_rows = QpProblem::new(rows.h.clone(), rows.c.clone()).with_inequalities(rows.g.clone(), rows.b.clone());
        let b_sol = qp_solve(&via_rows, &QpSettings::default()).unwrap();
        assert!((&a.x - &b_sol.x).amax() <= 1e-6);
        if let Some(e) = expected {
            assert!((a.x - e).amax() <= 1e-6);
        }
    }
}
