mod common;

use common::{grid_search, negligible_barriers, riccati_lqr, tight_solver};
use lanechange_core::constraints::{ObstacleEllipse, SafetyConfig};
use lanechange_core::objective::{CostParams, DesiredPath};
use lanechange_core::solver::{total_cost, BarrierSet, CilqrSolver, Problem, SolverConfig};
use lanechange_core::vehicle::{EgoParams, VehicleState};
use nalgebra::Vector3;

fn obstacle_free(n: usize) -> Vec<Vec<ObstacleEllipse>> {
    vec![Vec::new(); n + 1]
}

#[test]
fn longitudinal_tracking_matches_riccati() {
    let ego = EgoParams::default();
    let cost = CostParams { v_ref: 15.0, w_heading: 1.0, ..CostParams::default() };
    let path = DesiredPath::horizontal(0.0, -10.0, 1000.0).unwrap();
    let barriers = negligible_barriers();
    let safety = SafetyConfig::default();
    let solver = tight_solver(40);
    let obstacles = obstacle_free(40);
    let problem = Problem { ego: &ego, cost: &cost, path: &path, obstacles: &obstacles, safety: &safety, barriers: &barriers };

    let x0 = VehicleState::new(0.0, 0.0, 13.5, 0.0);
    let result = solver.solve(x0, &problem, None).unwrap();
    let oracle = riccati_lqr(Vector3::new(0.0, x0.v - cost.v_ref, 0.0), &cost, cost.v_ref, 0.1, 40);

    assert!(result.converged);
    for (u, o) in result.trajectory.controls.iter().zip(&oracle) {
        assert!((u.a - o[0]).abs() < 1e-6, "a {} vs {}", u.a, o[0]);
        assert!((u.theta_dot - o[1]).abs() < 1e-6, "yaw rate {} vs {}", u.theta_dot, o[1]);
    }
    // The first accelerations are the large ones; make sure the test is not vacuous.
    assert!(oracle[0][0] > 0.1);
}

#[test]
fn small_lateral_offset_matches_riccati() {
    let ego = EgoParams::default();
    let cost = CostParams { v_ref: 15.0, w_heading: 1.0, ..CostParams::default() };
    let path = DesiredPath::horizontal(0.0, -10.0, 1000.0).unwrap();
    let barriers = negligible_barriers();
    let safety = SafetyConfig::default();
    let solver = tight_solver(40);
    let obstacles = obstacle_free(40);
    let problem = Problem { ego: &ego, cost: &cost, path: &path, obstacles: &obstacles, safety: &safety, barriers: &barriers };

    let x0 = VehicleState::new(0.0, 1e-3, 15.0, 0.0);
    let result = solver.solve(x0, &problem, None).unwrap();
    let oracle = riccati_lqr(Vector3::new(x0.py, 0.0, 0.0), &cost, cost.v_ref, 0.1, 40);

    for (u, o) in result.trajectory.controls.iter().zip(&oracle) {
        assert!((u.a - o[0]).abs() < 1e-6, "a {} vs {}", u.a, o[0]);
        assert!((u.theta_dot - o[1]).abs() < 1e-6, "yaw rate {} vs {}", u.theta_dot, o[1]);
    }
    assert!(oracle[0][1].abs() > 1e-5);
}

#[test]
fn three_stage_obstacle_problem_beats_grid_search() {
    let ego = EgoParams::default();
    let cost = CostParams { v_ref: 4.0, ..CostParams::default() };
    let path = DesiredPath::horizontal(0.5, -10.0, 100.0).unwrap();
    let barriers = BarrierSet::default();
    let safety = SafetyConfig::default();
    let obstacle = ObstacleEllipse::new([5.0, 2.6], 0.0, 2.45, 0.9).unwrap();
    let obstacles = vec![vec![obstacle]; 4];
    let problem = Problem { ego: &ego, cost: &cost, path: &path, obstacles: &obstacles, safety: &safety, barriers: &barriers };
    let x0 = VehicleState::new(0.0, 0.0, 4.0, 0.0);

    let solver = CilqrSolver::new(SolverConfig { horizon: 3, ..SolverConfig::default() }).unwrap();
    let result = solver.solve(x0, &problem, None).unwrap();
    let solved = total_cost(&problem, &result.trajectory);
    assert!((solved - result.final_cost).abs() < 1e-9);

    let grid = grid_search(&problem, x0, &ego, 0.1);
    assert!(solved <= grid + 1e-3, "solver {solved} vs grid {grid}");
}
