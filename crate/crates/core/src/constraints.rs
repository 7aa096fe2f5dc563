//! Mechanical and collision constraints, and their exponential barrier
//! expansion over the six stage variables `(px, py, v, theta, a, theta_dot)`.
//!
//! Every residual follows the same sign convention: `value >= 0` means the
//! constraint holds.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{circle_center, yaw_rate_bounds, Axle, ControlInput, EgoParams, VehicleState};

pub type StageVector = SVector<f64, 6>;
pub type StageMatrix = SMatrix<f64, 6, 6>;

const IDX_PX: usize = 0;
const IDX_PY: usize = 1;
const IDX_V: usize = 2;
const IDX_THETA: usize = 3;
const IDX_A: usize = 4;
const IDX_YAW_RATE: usize = 5;

/// Keep-out ellipse around a surrounding vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleEllipse {
    pub center: [f64; 2],
    pub yaw: f64,
    pub half_long_axis: f64,
    pub half_short_axis: f64,
}

impl ObstacleEllipse {
    pub fn new(center: [f64; 2], yaw: f64, half_long_axis: f64, half_short_axis: f64) -> Result<Self> {
        if !(half_long_axis >= half_short_axis && half_short_axis > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ellipse axes must satisfy a >= b > 0, got a = {half_long_axis}, b = {half_short_axis}"
            )));
        }
        Ok(Self { center, yaw, half_long_axis, half_short_axis })
    }

    /// Coordinates of `point` in the ellipse's body frame.
    pub fn to_local(&self, point: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = point[0] - self.center[0];
        let dy = point[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    /// Margin added to both ellipse axes on top of the ego circle radius.
    pub s_min: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self { s_min: 0.25 }
    }
}

/// Exponential barrier `q1 * exp(-q2 * r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierParams {
    pub q1: f64,
    pub q2: f64,
}

impl BarrierParams {
    pub fn validate(&self) -> Result<()> {
        if self.q1 > 0.0 && self.q2 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("barrier parameters must be positive: {self:?}")))
        }
    }
}

/// A constraint value with its gradient over one stage's decision variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintResidual {
    pub value: f64,
    pub gradient: StageVector,
}

/// Collision residual of one ego circle against one inflated obstacle ellipse.
pub fn safety_residual(
    ego_state: &VehicleState,
    ego: &EgoParams,
    obstacle: &ObstacleEllipse,
    cfg: &SafetyConfig,
    axle: Axle,
) -> ConstraintResidual {
    let inflate = ego.circle_radius + cfg.s_min;
    let long = obstacle.half_long_axis + inflate;
    let short = obstacle.half_short_axis + inflate;
    let center = circle_center(ego_state, ego, axle);
    let [lx, ly] = obstacle.to_local(center);
    let value = (lx / long).powi(2) + (ly / short).powi(2) - 1.0;

    // d value / d circle center, through the rotation into the obstacle frame.
    let (s, c) = obstacle.yaw.sin_cos();
    let gx = 2.0 * lx / (long * long);
    let gy = 2.0 * ly / (short * short);
    let dcx = gx * c - gy * s;
    let dcy = gx * s + gy * c;

    let mut gradient = StageVector::zeros();
    gradient[IDX_PX] = dcx;
    gradient[IDX_PY] = dcy;
    if axle == Axle::Front {
        let (st, ct) = ego_state.theta.sin_cos();
        gradient[IDX_THETA] = ego.wheelbase * (-st * dcx + ct * dcy);
    }
    ConstraintResidual { value, gradient }
}

/// Residuals `a - a_min`, `a_max - a`, `theta_dot - theta_dot_min(v)`,
/// `theta_dot_max(v) - theta_dot`.
pub fn control_bound_residuals(
    control: &ControlInput,
    state: &VehicleState,
    ego: &EgoParams,
) -> [ConstraintResidual; 4] {
    let (lo, hi) = yaw_rate_bounds(state.v, ego);
    // Bounds are flat below standstill.
    let moving = if state.v > 0.0 { 1.0 } else { 0.0 };
    let dlo_dv = moving * ego.delta_min.tan() / ego.wheelbase;
    let dhi_dv = moving * ego.delta_max.tan() / ego.wheelbase;

    let mut g = [StageVector::zeros(); 4];
    g[0][IDX_A] = 1.0;
    g[1][IDX_A] = -1.0;
    g[2][IDX_YAW_RATE] = 1.0;
    g[2][IDX_V] = -dlo_dv;
    g[3][IDX_YAW_RATE] = -1.0;
    g[3][IDX_V] = dhi_dv;

    let values = [
        control.a - ego.a_min,
        ego.a_max - control.a,
        control.theta_dot - lo,
        hi - control.theta_dot,
    ];
    [0, 1, 2, 3].map(|i| ConstraintResidual { value: values[i], gradient: g[i] })
}

/// Value, gradient and Gauss-Newton hessian of a barrier term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierTerm {
    pub value: f64,
    pub gradient: StageVector,
    pub hessian: StageMatrix,
}

pub fn barrier_value(residual: f64, params: &BarrierParams) -> f64 {
    params.q1 * (-params.q2 * residual).exp()
}

/// Exponential barrier and its quadratization. The residual's own curvature
/// is dropped, so the hessian is a scaled outer product and always PSD.
pub fn barrier(residual: &ConstraintResidual, params: &BarrierParams) -> BarrierTerm {
    let value = barrier_value(residual.value, params);
    let slope = -params.q2 * value;
    let curvature = params.q2 * params.q2 * value;
    BarrierTerm {
        value,
        gradient: residual.gradient * slope,
        hessian: residual.gradient * residual.gradient.transpose() * curvature,
    }
}
