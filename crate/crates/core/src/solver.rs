//! Constrained iterative LQR.
//!
//! Inequality constraints (collision ellipses, acceleration and yaw-rate
//! bounds) enter the objective through exponential barriers. Each iteration
//! linearizes the dynamics, quadratizes cost plus barriers around the current
//! trajectory, runs a regularized Riccati backward pass and accepts the first
//! line-search step whose true cost decreases.

use nalgebra::{Matrix2, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::constraints::{
    barrier, barrier_value, control_bound_residuals, safety_residual, BarrierParams, ObstacleEllipse, SafetyConfig,
};
use crate::objective::{quadratize_stage, quadratize_terminal, stage_cost, terminal_cost, CostParams, DesiredPath, StageQuadratic};
use crate::vehicle::{
    clamp_control, linearize, normalize_angle, step, Axle, ControlInput, ControlMatrix, EgoParams, StateMatrix,
    Trajectory, VehicleState,
};

pub type FeedbackGain = SMatrix<f64, 2, 4>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("regularized Q_uu is not positive definite at stage {stage}")]
    NotPositiveDefinite { stage: usize },
    #[error("no line-search step reduced the cost at maximum regularization {regularization:e} (iteration {iteration})")]
    Divergence { iteration: usize, regularization: f64 },
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Number of control stages `N`.
    pub horizon: usize,
    pub dt: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step changes the cost by less than this.
    pub cost_tolerance: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_factor: f64,
    pub line_search_alphas: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            dt: 0.1,
            max_iterations: 100,
            cost_tolerance: 1e-3,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e6,
            reg_factor: 10.0,
            line_search_alphas: (0..=10).map(|k| 0.5f64.powi(k)).collect(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let alphas_ok = self.line_search_alphas.first() == Some(&1.0)
            && self.line_search_alphas.windows(2).all(|w| w[1] < w[0])
            && self.line_search_alphas.iter().all(|a| *a > 0.0);
        let ok = self.horizon >= 1
            && self.dt > 0.0
            && self.max_iterations >= 1
            && self.cost_tolerance >= 0.0
            && 0.0 <= self.reg_min
            && self.reg_min <= self.reg_init
            && self.reg_init <= self.reg_max
            && self.reg_factor > 1.0
            && alphas_ok;
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidInput(format!("solver configuration out of range: {self:?}")))
        }
    }
}

/// Barrier stiffness for the two constraint families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSet {
    pub safety: BarrierParams,
    pub control: BarrierParams,
}

impl Default for BarrierSet {
    fn default() -> Self {
        Self {
            safety: BarrierParams { q1: 5.0, q2: 10.0 },
            control: BarrierParams { q1: 0.1, q2: 30.0 },
        }
    }
}

/// Everything that defines one optimal-control problem besides `x0`.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub ego: &'a EgoParams,
    pub cost: &'a CostParams,
    pub path: &'a DesiredPath,
    /// Predicted obstacles, one list per stage `0..=N`.
    pub obstacles: &'a [Vec<ObstacleEllipse>],
    pub safety: &'a SafetyConfig,
    pub barriers: &'a BarrierSet,
}

impl Problem<'_> {
    fn safety_barrier_cost(&self, stage: usize, x: &VehicleState) -> f64 {
        let mut total = 0.0;
        for obs in &self.obstacles[stage] {
            for axle in Axle::BOTH {
                let r = safety_residual(x, self.ego, obs, self.safety, axle).value;
                total += barrier_value(r, &self.barriers.safety);
            }
        }
        total
    }

    fn control_barrier_cost(&self, x: &VehicleState, u: &ControlInput) -> f64 {
        control_bound_residuals(u, x, self.ego)
            .iter()
            .map(|r| barrier_value(r.value, &self.barriers.control))
            .sum()
    }

    /// Magnitude of the most negative raw residual over every constraint of
    /// `traj`, or zero when all hold.
    pub fn max_violation(&self, traj: &Trajectory) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, x) in traj.states.iter().enumerate() {
            for obs in &self.obstacles[i] {
                for axle in Axle::BOTH {
                    worst = worst.min(safety_residual(x, self.ego, obs, self.safety, axle).value);
                }
            }
            if let Some(u) = traj.controls.get(i) {
                for r in control_bound_residuals(u, x, self.ego) {
                    worst = worst.min(r.value);
                }
            }
        }
        if worst < 0.0 {
            -worst
        } else {
            0.0
        }
    }
}

/// Barrier-augmented cost of a trajectory.
pub fn total_cost(problem: &Problem<'_>, traj: &Trajectory) -> f64 {
    let n = traj.horizon();
    let mut j = 0.0;
    for i in 0..n {
        let (x, u) = (&traj.states[i], &traj.controls[i]);
        j += stage_cost(x, u, problem.cost, problem.path);
        j += problem.safety_barrier_cost(i, x);
        j += problem.control_barrier_cost(x, u);
    }
    let xn = &traj.states[n];
    j + terminal_cost(xn, problem.cost, problem.path) + problem.safety_barrier_cost(n, xn)
}

/// Dynamics Jacobians and cost model of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageModel {
    pub a: StateMatrix,
    pub b: ControlMatrix,
    pub cost: StageQuadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub stages: Vec<StageModel>,
    pub terminal: StageQuadratic,
}

fn add_safety_barriers(m: &mut StageQuadratic, problem: &Problem<'_>, stage: usize, x: &VehicleState) {
    for obs in &problem.obstacles[stage] {
        for axle in Axle::BOTH {
            let res = safety_residual(x, problem.ego, obs, problem.safety, axle);
            let value = barrier_value(res.value, &problem.barriers.safety);
            let q2 = problem.barriers.safety.q2;
            let g = res.gradient.fixed_rows::<4>(0).into_owned();
            m.p += value;
            m.q += g * (-q2 * value);
            m.q_xx += g * g.transpose() * (q2 * q2 * value);
        }
    }
}

fn add_control_barriers(m: &mut StageQuadratic, problem: &Problem<'_>, x: &VehicleState, u: &ControlInput) {
    for res in control_bound_residuals(u, x, problem.ego) {
        let t = barrier(&res, &problem.barriers.control);
        m.p += t.value;
        m.q += t.gradient.fixed_rows::<4>(0);
        m.r += t.gradient.fixed_rows::<2>(4);
        m.q_xx += t.hessian.fixed_view::<4, 4>(0, 0);
        m.r_uu += t.hessian.fixed_view::<2, 2>(4, 4);
        m.h_ux += t.hessian.fixed_view::<2, 4>(4, 0);
    }
}

/// Linearizes dynamics and quadratizes cost plus barriers along `traj`.
pub fn quadratize(problem: &Problem<'_>, traj: &Trajectory) -> Expansion {
    let n = traj.horizon();
    let stages = (0..n)
        .map(|i| {
            let (x, u) = (&traj.states[i], &traj.controls[i]);
            let (a, b) = linearize(x, u, traj.dt);
            let mut cost = quadratize_stage(x, u, problem.cost, problem.path);
            add_safety_barriers(&mut cost, problem, i, x);
            add_control_barriers(&mut cost, problem, x, u);
            StageModel { a, b, cost }
        })
        .collect();
    let xn = &traj.states[n];
    let mut terminal = quadratize_terminal(xn, problem.cost, problem.path);
    add_safety_barriers(&mut terminal, problem, n, xn);
    Expansion { stages, terminal }
}

/// Feedforward and feedback gains of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub feedforward: Vec<Vector2<f64>>,
    pub feedback: Vec<FeedbackGain>,
    /// Predicted cost decrease of a full (`alpha = 1`) step.
    pub expected_reduction: f64,
}

impl Gains {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            feedforward: vec![Vector2::zeros(); horizon],
            feedback: vec![FeedbackGain::zeros(); horizon],
            expected_reduction: 0.0,
        }
    }
}

/// Riccati recursion from the terminal stage back to stage 0, with
/// `regularization * I` added to every `Q_uu`.
pub fn backward_pass(expansion: &Expansion, regularization: f64) -> Result<Gains, SolverError> {
    let n = expansion.stages.len();
    let mut gains = Gains::zeros(n);
    let mut v_x = expansion.terminal.q;
    let mut v_xx = expansion.terminal.q_xx;
    let mut expected = 0.0;

    for i in (0..n).rev() {
        let StageModel { a, b, cost } = &expansion.stages[i];
        let q_x = cost.q + a.transpose() * v_x;
        let q_u = cost.r + b.transpose() * v_x;
        let q_xx = cost.q_xx + a.transpose() * v_xx * a;
        let q_uu = cost.r_uu + b.transpose() * v_xx * b;
        let q_ux = cost.h_ux + b.transpose() * v_xx * a;

        let q_uu_reg = q_uu + Matrix2::identity() * regularization;
        let chol = q_uu_reg.cholesky().ok_or(SolverError::NotPositiveDefinite { stage: i })?;
        let k = -chol.solve(&q_u);
        let big_k = -chol.solve(&q_ux);

        expected -= k.dot(&q_u) + 0.5 * k.dot(&(q_uu * k));

        v_x = q_x + big_k.transpose() * q_uu * k + big_k.transpose() * q_u + q_ux.transpose() * k;
        let next = q_xx + big_k.transpose() * q_uu * big_k + big_k.transpose() * q_ux + q_ux.transpose() * big_k;
        v_xx = 0.5 * (next + next.transpose());

        gains.feedforward[i] = k;
        gains.feedback[i] = big_k;
    }
    gains.expected_reduction = expected;
    Ok(gains)
}

fn state_error(x: &VehicleState, nominal: &VehicleState) -> Vector4<f64> {
    Vector4::new(
        x.px - nominal.px,
        x.py - nominal.py,
        x.v - nominal.v,
        normalize_angle(x.theta - nominal.theta),
    )
}

/// Closed-loop rollout of the gains through the nonlinear dynamics. Controls
/// are clamped onto the mechanical bounds before they are applied.
pub fn forward_pass(
    problem: &Problem<'_>,
    nominal: &Trajectory,
    gains: &Gains,
    alpha: f64,
    x0: VehicleState,
) -> (Trajectory, f64) {
    let n = nominal.horizon();
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    states.push(x0);
    for i in 0..n {
        let x = states[i];
        let du = gains.feedforward[i] * alpha + gains.feedback[i] * state_error(&x, &nominal.states[i]);
        let raw = ControlInput::new(nominal.controls[i].a + du[0], nominal.controls[i].theta_dot + du[1]);
        let u = clamp_control(&raw, x.v, problem.ego);
        states.push(step(&x, &u, nominal.dt));
        controls.push(u);
    }
    let traj = Trajectory { states, controls, dt: nominal.dt };
    let cost = total_cost(problem, &traj);
    (traj, cost)
}

/// Output of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub converged: bool,
    pub iterations: usize,
    /// Barrier-augmented cost of `trajectory`.
    pub final_cost: f64,
    /// Magnitude of the most negative raw constraint residual, zero if none.
    pub max_constraint_violation: f64,
    /// Wall-clock solve time in milliseconds.
    pub solve_time_ms: f64,
}

/// Reusable solver. One instance is meant for one thread at a time.
#[derive(Debug, Clone)]
pub struct CilqrSolver {
    config: SolverConfig,
}

impl CilqrSolver {
    pub fn new(config: SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn solve(
        &self,
        x0: VehicleState,
        problem: &Problem<'_>,
        warm_start: Option<&[ControlInput]>,
    ) -> Result<PlanResult, SolverError> {
        let started = Instant::now();
        let cfg = &self.config;
        let n = cfg.horizon;
        if problem.obstacles.len() != n + 1 {
            return Err(SolverError::InvalidInput(format!(
                "expected {} obstacle stages, got {}",
                n + 1,
                problem.obstacles.len()
            )));
        }
        if !x0.is_finite() {
            return Err(SolverError::InvalidInput(format!("non-finite initial state {x0:?}")));
        }
        let initial = match warm_start {
            Some(w) if w.len() != n => {
                return Err(SolverError::InvalidInput(format!("warm start has {} controls, expected {n}", w.len())))
            }
            Some(w) => w.to_vec(),
            None => vec![ControlInput::ZERO; n],
        };

        // Initial rollout goes through the same clamping as every later one.
        let seed = Trajectory::rollout(x0, initial, cfg.dt);
        let (mut traj, mut cost) = forward_pass(problem, &seed, &Gains::zeros(n), 0.0, x0);

        let mut reg = cfg.reg_init;
        let mut iterations = 0;
        let mut converged = false;

        while iterations < cfg.max_iterations {
            iterations += 1;
            let expansion = quadratize(problem, &traj);
            let accepted = loop {
                let gains = match backward_pass(&expansion, reg) {
                    Ok(g) => g,
                    Err(SolverError::NotPositiveDefinite { .. }) => {
                        reg *= cfg.reg_factor;
                        if reg > cfg.reg_max {
                            return Err(SolverError::Divergence { iteration: iterations, regularization: reg });
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let found = cfg
                    .line_search_alphas
                    .iter()
                    .map(|&alpha| forward_pass(problem, &traj, &gains, alpha, x0))
                    .find(|(_, c)| *c < cost);
                if found.is_some() || gains.expected_reduction < cfg.cost_tolerance {
                    break found;
                }
                reg *= cfg.reg_factor;
                if reg > cfg.reg_max {
                    return Err(SolverError::Divergence { iteration: iterations, regularization: reg });
                }
            };

            match accepted {
                Some((candidate, candidate_cost)) => {
                    let improvement = cost - candidate_cost;
                    traj = candidate;
                    cost = candidate_cost;
                    reg = (reg / cfg.reg_factor).max(cfg.reg_min);
                    if improvement < cfg.cost_tolerance {
                        converged = true;
                        break;
                    }
                }
                None => {
                    // The model predicts no meaningful decrease: stationary point.
                    converged = true;
                    break;
                }
            }
        }

        let max_constraint_violation = problem.max_violation(&traj);
        Ok(PlanResult {
            trajectory: traj,
            converged,
            iterations,
            final_cost: cost,
            max_constraint_violation,
            solve_time_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// One-shot convenience wrapper around [`CilqrSolver::solve`].
pub fn solve(
    x0: VehicleState,
    problem: &Problem<'_>,
    config: &SolverConfig,
    warm_start: Option<&[ControlInput]>,
) -> Result<PlanResult, SolverError> {
    CilqrSolver::new(config.clone())?.solve(x0, problem, warm_start)
}
