#![allow(dead_code)]

use lanechange_core::constraints::BarrierParams;
use lanechange_core::objective::CostParams;
use lanechange_core::solver::{total_cost, BarrierSet, CilqrSolver, Problem, SolverConfig};
use lanechange_core::vehicle::{clamp_control, step, ControlInput, EgoParams, Trajectory, VehicleState};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;

/// Barrier weight small enough that the control bounds are invisible.
pub fn negligible_barriers() -> BarrierSet {
    BarrierSet { control: BarrierParams { q1: 1e-12, q2: 10.0 }, ..BarrierSet::default() }
}

pub fn tight_solver(horizon: usize) -> CilqrSolver {
    CilqrSolver::new(SolverConfig {
        horizon,
        cost_tolerance: 1e-14,
        reg_init: 1e-12,
        reg_min: 1e-12,
        ..SolverConfig::default()
    })
    .unwrap()
}

/// Finite-horizon LQR on `z = [py - y, v - v_ref, theta]` for straight-line
/// motion at speed `v_bar`. Returns the open-loop controls from `z0`.
pub fn riccati_lqr(z0: Vector3<f64>, cost: &CostParams, v_bar: f64, dt: f64, n: usize) -> Vec<Vector2<f64>> {
    let a = Matrix3::new(1.0, 0.0, v_bar * dt, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let b = Matrix3x2::new(0.0, 0.0, dt, 0.0, 0.0, dt);
    let q = Matrix3::from_diagonal(&Vector3::new(2.0 * cost.w_path_lat, 2.0 * cost.w_vel, 2.0 * cost.w_heading));
    let r = Matrix2::from_diagonal(&Vector2::new(2.0 * cost.w_acc, 2.0 * cost.w_yawrate));

    let mut p = q * cost.terminal_scale;
    let mut gains = vec![Matrix2x3::zeros(); n];
    for k in (0..n).rev() {
        let s = r + b.transpose() * p * b;
        let gain = s.try_inverse().unwrap() * b.transpose() * p * a;
        p = q + a.transpose() * p * (a - b * gain);
        gains[k] = gain;
    }
    let mut z = z0;
    gains
        .iter()
        .map(|gain| {
            let u = -gain * z;
            z = a * z + b * u;
            u
        })
        .collect()
}

fn rollout_clamped(x0: VehicleState, raw: &[ControlInput], ego: &EgoParams, dt: f64) -> Trajectory {
    let mut states = vec![x0];
    let mut controls = Vec::new();
    for u in raw {
        let x = *states.last().unwrap();
        let u = clamp_control(u, x.v, ego);
        states.push(step(&x, &u, dt));
        controls.push(u);
    }
    Trajectory { states, controls, dt }
}

/// Best cost of a three-stage problem over a 9^6 grid, then over a finer
/// 9^6 grid around the winner.
pub fn grid_search(problem: &Problem<'_>, x0: VehicleState, ego: &EgoParams, dt: f64) -> f64 {
    let mut center = [0.0; 6];
    let mut half = [3.0, 1.0, 3.0, 1.0, 3.0, 1.0];
    let mut best = f64::INFINITY;
    for _ in 0..2 {
        let mut winner = center;
        let levels = |c: f64, h: f64| (0..9).map(move |i| c - h + 2.0 * h * i as f64 / 8.0);
        for a0 in levels(center[0], half[0]) {
            for w0 in levels(center[1], half[1]) {
                for a1 in levels(center[2], half[2]) {
                    for w1 in levels(center[3], half[3]) {
                        for a2 in levels(center[4], half[4]) {
                            for w2 in levels(center[5], half[5]) {
                                let raw = [ControlInput::new(a0, w0), ControlInput::new(a1, w1), ControlInput::new(a2, w2)];
                                let c = total_cost(problem, &rollout_clamped(x0, &raw, ego, dt));
                                if c < best {
                                    best = c;
                                    winner = [a0, w0, a1, w1, a2, w2];
                                }
                            }
                        }
                    }
                }
            }
        }
        center = winner;
        half = half.map(|h| h / 4.0);
    }
    best
}

/// Deterministic samples of `strategy`.
pub fn samples<S: Strategy>(strategy: S, count: usize) -> Vec<S::Value> {
    let mut runner = TestRunner::deterministic();
    (0..count).map(|_| strategy.new_tree(&mut runner).unwrap().current()).collect()
}

/// `|a - b| / max(1, |b|)`, the larger over all entries.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}
