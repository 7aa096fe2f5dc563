//! Quadratic stage and terminal costs: control effort, speed tracking and
//! desired-path tracking.

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{normalize_angle, ControlInput, Trajectory, VehicleState};

/// Polyline the ego is pulled toward. Waypoints have strictly increasing `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredPath {
    points: Vec<[f64; 2]>,
}

impl DesiredPath {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig("desired path needs at least two waypoints".into()));
        }
        if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::InvalidConfig("desired path x must be strictly increasing".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("desired path has non-finite waypoints".into()));
        }
        Ok(Self { points })
    }

    /// Straight path at lateral position `y` spanning `[x_start, x_end]`.
    pub fn horizontal(y: f64, x_start: f64, x_end: f64) -> Result<Self> {
        Self::new(vec![[x_start, y], [x_end, y]])
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }
}

/// Closest point on the polyline. Ties go to the earlier segment.
pub fn project_to_path(path: &DesiredPath, point: [f64; 2]) -> [f64; 2] {
    project_with_heading(path, point).0
}

/// Closest point on the polyline and the heading of the segment it lies on.
pub fn project_with_heading(path: &DesiredPath, point: [f64; 2]) -> ([f64; 2], f64) {
    let mut best = path.points[0];
    let mut best_heading = 0.0;
    let mut best_d2 = f64::INFINITY;
    for seg in path.points.windows(2) {
        let [ax, ay] = seg[0];
        let (ex, ey) = (seg[1][0] - ax, seg[1][1] - ay);
        let t = (((point[0] - ax) * ex + (point[1] - ay) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let cand = [ax + t * ex, ay + t * ey];
        let d2 = (point[0] - cand[0]).powi(2) + (point[1] - cand[1]).powi(2);
        if d2 < best_d2 {
            best_d2 = d2;
            best = cand;
            best_heading = ey.atan2(ex);
        }
    }
    (best, best_heading)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub w_acc: f64,
    pub w_yawrate: f64,
    pub w_vel: f64,
    /// Reference speed of the low-velocity penalty.
    pub v_ref: f64,
    pub w_path_lat: f64,
    pub w_path_long: f64,
    /// Weight on the squared heading error relative to the path segment.
    pub w_heading: f64,
    /// Multiplier on the state weights at the final stage.
    pub terminal_scale: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            w_acc: 1.0,
            w_yawrate: 50.0,
            w_vel: 0.5,
            v_ref: 2.0,
            w_path_lat: 2.0,
            w_path_long: 0.0,
            w_heading: 0.0,
            terminal_scale: 5.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.w_acc,
            self.w_yawrate,
            self.w_vel,
            self.w_path_lat,
            self.w_path_long,
            self.w_heading,
            self.terminal_scale,
        ];
        if w.iter().all(|x| *x >= 0.0 && x.is_finite()) && w[..6].iter().any(|x| *x > 0.0) && self.v_ref.is_finite()
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("cost weights must be non-negative with one positive: {self:?}")))
        }
    }
}

fn state_terms(state: &VehicleState, params: &CostParams, (target, heading): ([f64; 2], f64)) -> f64 {
    params.w_vel * (state.v - params.v_ref).powi(2)
        + params.w_path_lat * (state.py - target[1]).powi(2)
        + params.w_path_long * (state.px - target[0]).powi(2)
        + params.w_heading * normalize_angle(state.theta - heading).powi(2)
}

pub fn stage_cost(state: &VehicleState, control: &ControlInput, params: &CostParams, path: &DesiredPath) -> f64 {
    let target = project_with_heading(path, state.position());
    params.w_acc * control.a.powi(2) + params.w_yawrate * control.theta_dot.powi(2) + state_terms(state, params, target)
}

pub fn terminal_cost(state: &VehicleState, params: &CostParams, path: &DesiredPath) -> f64 {
    let target = project_with_heading(path, state.position());
    params.terminal_scale * state_terms(state, params, target)
}

/// Second-order model of one stage's cost about an expansion point, in
/// deviation coordinates: `p + q.dx + r.du + 1/2 dx'Q dx + 1/2 du'R du + du'H dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageQuadratic {
    pub p: f64,
    pub q: Vector4<f64>,
    pub r: Vector2<f64>,
    pub q_xx: Matrix4<f64>,
    pub r_uu: Matrix2<f64>,
    pub h_ux: SMatrix<f64, 2, 4>,
}

impl StageQuadratic {
    pub fn evaluate(&self, dx: &Vector4<f64>, du: &Vector2<f64>) -> f64 {
        self.p
            + self.q.dot(dx)
            + self.r.dot(du)
            + 0.5 * dx.dot(&(self.q_xx * dx))
            + 0.5 * du.dot(&(self.r_uu * du))
            + du.dot(&(self.h_ux * dx))
    }
}

/// Quadratic model of the whole horizon: one entry per control stage plus the
/// terminal state term (whose control parts are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansion {
    pub stages: Vec<StageQuadratic>,
    pub terminal: StageQuadratic,
}

fn expand_state(state: &VehicleState, params: &CostParams, path: &DesiredPath, scale: f64) -> StageQuadratic {
    // The projection point is held fixed during the expansion.
    let (target, heading) = project_with_heading(path, state.position());
    let (wl, wt, wv) = (params.w_path_long * scale, params.w_path_lat * scale, params.w_vel * scale);
    let wh = params.w_heading * scale;
    let ex = state.px - target[0];
    let ey = state.py - target[1];
    let ev = state.v - params.v_ref;
    let eh = normalize_angle(state.theta - heading);
    StageQuadratic {
        p: wv * ev * ev + wt * ey * ey + wl * ex * ex + wh * eh * eh,
        q: Vector4::new(2.0 * wl * ex, 2.0 * wt * ey, 2.0 * wv * ev, 2.0 * wh * eh),
        r: Vector2::zeros(),
        q_xx: Matrix4::from_diagonal(&Vector4::new(2.0 * wl, 2.0 * wt, 2.0 * wv, 2.0 * wh)),
        r_uu: Matrix2::zeros(),
        h_ux: SMatrix::zeros(),
    }
}

pub fn quadratize_stage(
    state: &VehicleState,
    control: &ControlInput,
    params: &CostParams,
    path: &DesiredPath,
) -> StageQuadratic {
    let mut m = expand_state(state, params, path, 1.0);
    m.p += params.w_acc * control.a.powi(2) + params.w_yawrate * control.theta_dot.powi(2);
    m.r = Vector2::new(2.0 * params.w_acc * control.a, 2.0 * params.w_yawrate * control.theta_dot);
    m.r_uu = Matrix2::from_diagonal(&Vector2::new(2.0 * params.w_acc, 2.0 * params.w_yawrate));
    m
}

pub fn quadratize_terminal(state: &VehicleState, params: &CostParams, path: &DesiredPath) -> StageQuadratic {
    expand_state(state, params, path, params.terminal_scale)
}

pub fn quadratize_cost(trajectory: &Trajectory, params: &CostParams, path: &DesiredPath) -> CostExpansion {
    let stages = trajectory
        .controls
        .iter()
        .zip(&trajectory.states)
        .map(|(u, x)| quadratize_stage(x, u, params, path))
        .collect();
    let terminal = quadratize_terminal(trajectory.states.last().expect("trajectory has states"), params, path);
    CostExpansion { stages, terminal }
}
