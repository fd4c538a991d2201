use lmpcq::dynamics::Plant;
use lmpcq::solver::{build_problem, warm_start_shift, LmpcSolver, OcpSolution, SolveStatus};
use lmpcq::task::{percentile, run_task, TaskConfig, Track};

#[test]
fn shifted_guess_needs_fewer_sqp_iterations_than_cold_start() {
    let track = Track::l_track();
    let cfg = TaskConfig { iterations: 1, ..TaskConfig::default() };
    let store = run_task(&cfg, &track).unwrap().store;
    let solver_cfg = cfg.solver_config();
    let full = lmpcq::solver::SolverConfig { max_sqp_iterations: 30, ..solver_cfg };
    let mut solver = LmpcSolver::new(full).unwrap();
    let lookback = store.lookback_iterations(cfg.p_lookback, true);
    let best = store.record(store.best().unwrap()).unwrap();
    let mut plant = Plant::new(&cfg.params, cfg.plant_config(), 0).unwrap();

    let mut x = track.start_state();
    let mut seed = best.states[cfg.horizon];
    let mut previous: Option<OcpSolution> = None;
    let (mut warm_iters, mut cold_iters) = (Vec::new(), Vec::new());
    for _ in 0..50 {
        let set = store.select_local_set(&seed, cfg.n_neighbors, &lookback).unwrap();
        let cold = warm_start_shift(None, &x, set.len(), &cfg.params, &full).unwrap();
        let warm = match &previous {
            Some(p) => warm_start_shift(Some(p), &x, set.len(), &cfg.params, &full).unwrap(),
            None => cold.clone(),
        };
        let problem = build_problem(&x, &set, &track, &full, &cfg.params, Some(&warm.states)).unwrap();
        let from_cold = solver.solve(&problem, Some(&cold)).unwrap();
        let from_warm = solver.solve(&problem, Some(&warm)).unwrap();
        assert_ne!(from_warm.stats.status, SolveStatus::Infeasible);
        if previous.is_some() {
            warm_iters.push(from_warm.stats.sqp_iterations as f64);
            cold_iters.push(from_cold.stats.sqp_iterations as f64);
        }
        let u = cfg.params.clamp_input(&from_warm.inputs[0]);
        seed = *from_warm.states.last().unwrap();
        previous = Some(from_warm);
        x = plant.step(&x, &u, cfg.dt).unwrap();
        if x.p.x > 2.5 && x.p.y > 2.5 {
            break;
        }
    }
    let (w, c) = (percentile(&warm_iters, 50.0), percentile(&cold_iters, 50.0));
    assert!(w < c, "median SQP iterations: warm {w}, cold {c}");
}
