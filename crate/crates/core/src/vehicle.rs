//! Kinematic bicycle model: continuous dynamics, explicit Euler step,
//! analytic Jacobians and the two-circle ego footprint.
//!
//! The state reference point is the rear-axle center. Yaw is kept in
//! `(-pi, pi]`.

use std::f64::consts::PI;

use nalgebra::{Matrix4, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVector = Vector4<f64>;
pub type ControlVector = Vector2<f64>;
pub type StateMatrix = Matrix4<f64>;
pub type ControlMatrix = SMatrix<f64, 4, 2>;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// `[px, py, v, theta]` of any vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub theta: f64,
}

impl VehicleState {
    pub fn new(px: f64, py: f64, v: f64, theta: f64) -> Self {
        Self {
            px,
            py,
            v,
            theta: normalize_angle(theta),
        }
    }

    pub fn to_vector(&self) -> StateVector {
        Vector4::new(self.px, self.py, self.v, self.theta)
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.v.is_finite() && self.theta.is_finite()
    }

    pub fn position(&self) -> [f64; 2] {
        [self.px, self.py]
    }
}

/// `[a, theta_dot]` applied to the ego vehicle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub theta_dot: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { a: 0.0, theta_dot: 0.0 };

    pub fn new(a: f64, theta_dot: f64) -> Self {
        Self { a, theta_dot }
    }

    pub fn to_vector(&self) -> ControlVector {
        Vector2::new(self.a, self.theta_dot)
    }

    pub fn from_vector(u: &ControlVector) -> Self {
        Self::new(u[0], u[1])
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.theta_dot.is_finite()
    }
}

/// Ego geometry and mechanical limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgoParams {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    /// Radius of both footprint circles.
    pub circle_radius: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Steering-angle bounds of the front wheels (rad).
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for EgoParams {
    fn default() -> Self {
        let length = 4.5;
        let width = 1.8;
        Self {
            wheelbase: 2.8,
            length,
            width,
            circle_radius: ((length / 4.0).powi(2) + (width / 2.0).powi(2)).sqrt(),
            a_min: -4.0,
            a_max: 2.0,
            delta_min: -0.6,
            delta_max: 0.6,
        }
    }
}

impl EgoParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a_min < 0.0
            && self.a_max > 0.0
            && self.delta_min < 0.0
            && self.delta_max > 0.0
            && self.wheelbase > 0.0
            && self.circle_radius > 0.0
            && self.length > 0.0
            && self.width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("ego parameters out of range: {self:?}")))
        }
    }

    /// Offset from the rear axle to the footprint center along the heading.
    /// Overhangs are taken symmetric, so this is half the wheelbase.
    pub fn center_offset(&self) -> f64 {
        0.5 * self.wheelbase
    }

    /// Geometric center of the footprint rectangle.
    pub fn footprint_center(&self, state: &VehicleState) -> [f64; 2] {
        let c = self.center_offset();
        [
            state.px + c * state.theta.cos(),
            state.py + c * state.theta.sin(),
        ]
    }
}

/// Continuous-time state derivative `[v cos(theta), v sin(theta), a, theta_dot]`.
pub fn derivative(state: &VehicleState, control: &ControlInput) -> StateVector {
    let (s, c) = state.theta.sin_cos();
    Vector4::new(state.v * c, state.v * s, control.a, control.theta_dot)
}

/// One explicit Euler step of the bicycle dynamics.
///
/// Kept out of line: inlined copies may evaluate the trigonometry through
/// different libm entry points and break bit-exact rollout reproducibility.
#[inline(never)]
pub fn step(state: &VehicleState, control: &ControlInput, dt: f64) -> VehicleState {
    let d = derivative(state, control);
    VehicleState::new(
        state.px + d[0] * dt,
        state.py + d[1] * dt,
        state.v + d[2] * dt,
        state.theta + d[3] * dt,
    )
}

/// Jacobians `(A, B)` of [`step`] with respect to state and control.
pub fn linearize(state: &VehicleState, _control: &ControlInput, dt: f64) -> (StateMatrix, ControlMatrix) {
    let (s, c) = state.theta.sin_cos();
    let mut a = Matrix4::identity();
    a[(0, 2)] = dt * c;
    a[(0, 3)] = -dt * state.v * s;
    a[(1, 2)] = dt * s;
    a[(1, 3)] = dt * state.v * c;
    let mut b = ControlMatrix::zeros();
    b[(2, 0)] = dt;
    b[(3, 1)] = dt;
    (a, b)
}

/// Which of the two footprint circles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axle {
    Front,
    Rear,
}

impl Axle {
    pub const BOTH: [Axle; 2] = [Axle::Front, Axle::Rear];
}

/// Centers of the front-axle and rear-axle circles, in that order.
pub fn ego_circles(state: &VehicleState, params: &EgoParams) -> ([f64; 2], [f64; 2]) {
    let front = [
        state.px + params.wheelbase * state.theta.cos(),
        state.py + params.wheelbase * state.theta.sin(),
    ];
    (front, [state.px, state.py])
}

pub fn circle_center(state: &VehicleState, params: &EgoParams, axle: Axle) -> [f64; 2] {
    let (front, rear) = ego_circles(state, params);
    match axle {
        Axle::Front => front,
        Axle::Rear => rear,
    }
}

/// Yaw-rate limits implied by the steering bounds at speed `v`.
/// Negative speeds are treated as standstill.
pub fn yaw_rate_bounds(v: f64, params: &EgoParams) -> (f64, f64) {
    let v = v.max(0.0);
    (
        v * params.delta_min.tan() / params.wheelbase,
        v * params.delta_max.tan() / params.wheelbase,
    )
}

/// Clamps a control onto the acceleration and speed-dependent yaw-rate bounds.
pub fn clamp_control(control: &ControlInput, v: f64, params: &EgoParams) -> ControlInput {
    let (lo, hi) = yaw_rate_bounds(v, params);
    ControlInput::new(
        control.a.clamp(params.a_min, params.a_max),
        control.theta_dot.clamp(lo, hi),
    )
}

/// A horizon of `N + 1` states and `N` controls at a fixed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<VehicleState>,
    pub controls: Vec<ControlInput>,
    pub dt: f64,
}

impl Trajectory {
    /// Rolls `controls` out from `x0` through [`step`].
    pub fn rollout(x0: VehicleState, controls: Vec<ControlInput>, dt: f64) -> Self {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0);
        for u in &controls {
            let next = step(states.last().unwrap(), u, dt);
            states.push(next);
        }
        Self { states, controls, dt }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// True when every state follows from its predecessor by [`step`] exactly.
    pub fn is_consistent(&self) -> bool {
        self.states.len() == self.controls.len() + 1
            && self
                .controls
                .iter()
                .enumerate()
                .all(|(i, u)| step(&self.states[i], u, self.dt) == self.states[i + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 0.1;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn derivative_examples() {
        let d = derivative(&VehicleState::new(0.0, 0.0, 0.0, 0.0), &ControlInput::ZERO);
        assert_eq!(d, Vector4::zeros());

        let d = derivative(&VehicleState::new(0.0, 0.0, 2.0, 0.0), &ControlInput::new(1.0, 0.0));
        assert_eq!(d, Vector4::new(2.0, 0.0, 1.0, 0.0));

        let d = derivative(&VehicleState::new(0.0, 0.0, 1.0, PI / 2.0), &ControlInput::new(0.0, 0.1));
        assert!(close(d[0], 0.0) && close(d[1], 1.0) && d[2] == 0.0 && d[3] == 0.1);
    }

    #[test]
    fn step_examples() {
        let rest = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(step(&rest, &ControlInput::ZERO, DT), rest);

        let s = step(&VehicleState::new(0.0, 0.0, 2.0, 0.0), &ControlInput::new(1.0, 0.0), DT);
        assert!(close(s.px, 0.2) && close(s.py, 0.0) && close(s.v, 2.1) && close(s.theta, 0.0));

        let s = step(&VehicleState::new(0.0, 0.0, 1.0, PI / 2.0), &ControlInput::ZERO, DT);
        assert!(close(s.px, 0.0) && close(s.py, 0.1) && close(s.v, 1.0) && close(s.theta, PI / 2.0));
    }

    #[test]
    fn yaw_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert!(close(normalize_angle(-PI), PI));
        assert!(close(normalize_angle(3.0 * PI / 2.0), -PI / 2.0));
        let s = step(&VehicleState::new(0.0, 0.0, 0.0, 3.1), &ControlInput::new(0.0, 1.0), DT);
        assert!(s.theta < 0.0 && s.theta > -PI);
    }

    #[test]
    fn linearize_at_rest() {
        let (a, b) = linearize(&VehicleState::new(0.0, 0.0, 0.0, 0.0), &ControlInput::ZERO, DT);
        let mut expect_a = Matrix4::identity();
        expect_a[(0, 2)] = DT;
        assert_eq!(a, expect_a);
        let mut expect_b = ControlMatrix::zeros();
        expect_b[(2, 0)] = DT;
        expect_b[(3, 1)] = DT;
        assert_eq!(b, expect_b);
    }

    #[test]
    fn linearize_vanishing_step() {
        let (a, b) = linearize(&VehicleState::new(1.0, 2.0, 3.0, 0.4), &ControlInput::new(0.5, 0.1), 1e-12);
        assert!((a - Matrix4::identity()).amax() < 1e-10);
        assert!(b.amax() < 1e-10);
    }

    #[test]
    fn ego_circle_examples() {
        let p = EgoParams::default();
        let (f, r) = ego_circles(&VehicleState::new(0.0, 0.0, 1.0, 0.0), &p);
        assert_eq!(r, [0.0, 0.0]);
        assert!(close(f[0], 2.8) && close(f[1], 0.0));

        let (f, r) = ego_circles(&VehicleState::new(0.0, 0.0, 1.0, PI / 2.0), &p);
        assert_eq!(r, [0.0, 0.0]);
        assert!(close(f[0], 0.0) && close(f[1], 2.8));

        let degenerate = EgoParams { wheelbase: 0.0, ..p };
        let (f, r) = ego_circles(&VehicleState::new(3.0, 1.0, 1.0, 0.7), &degenerate);
        assert_eq!(f, r);
    }

    #[test]
    fn default_circles_cover_quarter_points() {
        let p = EgoParams::default();
        assert!((p.circle_radius - 1.440_703).abs() < 1e-6);
    }

    #[test]
    fn yaw_rate_bound_examples() {
        let p = EgoParams::default();
        assert_eq!(yaw_rate_bounds(0.0, &p), (0.0, 0.0));

        let p5 = EgoParams { delta_max: 0.5, delta_min: -0.5, ..p };
        let (lo, hi) = yaw_rate_bounds(2.0, &p5);
        assert!((hi - 0.390_2).abs() < 1e-4);
        assert_eq!(lo, -hi);
    }

    #[test]
    fn straight_line_keeps_lateral_position() {
        let controls = vec![ControlInput::new(0.7, 0.0); 50];
        let traj = Trajectory::rollout(VehicleState::new(0.0, 1.25, 3.0, 0.0), controls, DT);
        assert!(traj.states.iter().all(|s| s.py == 1.25));
    }

    fn fd_jacobians(x: &VehicleState, u: &ControlInput, dt: f64) -> (StateMatrix, ControlMatrix) {
        let h = 1e-6;
        let xv = x.to_vector();
        let uv = u.to_vector();
        let f = |xv: StateVector, uv: ControlVector| {
            // Raw Euler map without yaw wrapping so differences stay smooth.
            let s = VehicleState { px: xv[0], py: xv[1], v: xv[2], theta: xv[3] };
            let d = derivative(&s, &ControlInput::from_vector(&uv));
            xv + d * dt
        };
        let mut a = StateMatrix::zeros();
        for j in 0..4 {
            let mut e = StateVector::zeros();
            e[j] = h;
            a.set_column(j, &((f(xv + e, uv) - f(xv - e, uv)) / (2.0 * h)));
        }
        let mut b = ControlMatrix::zeros();
        for j in 0..2 {
            let mut e = ControlVector::zeros();
            e[j] = h;
            b.set_column(j, &((f(xv, uv + e) - f(xv, uv - e)) / (2.0 * h)));
        }
        (a, b)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn jacobians_match_finite_differences(
            px in -50.0..50.0f64, py in -5.0..5.0f64, v in 0.0..10.0f64, theta in -3.0..3.0f64,
            a in -4.0..2.0f64, w in -1.0..1.0f64, dt in 0.01..0.2f64,
        ) {
            let x = VehicleState::new(px, py, v, theta);
            let u = ControlInput::new(a, w);
            let (ja, jb) = linearize(&x, &u, dt);
            let (fa, fb) = fd_jacobians(&x, &u, dt);
            prop_assert!((ja - fa).amax() < 1e-6);
            prop_assert!((jb - fb).amax() < 1e-6);
        }

        #[test]
        fn rollout_is_bit_consistent(
            v0 in 0.0..6.0f64,
            controls in proptest::collection::vec((-4.0..2.0f64, -0.5..0.5f64), 1..60),
        ) {
            let controls = controls.into_iter().map(|(a, w)| ControlInput::new(a, w)).collect();
            let traj = Trajectory::rollout(VehicleState::new(0.0, 0.0, v0, 0.0), controls, DT);
            prop_assert!(traj.is_consistent());
        }

        #[test]
        fn yaw_rate_bound_is_monotone(v1 in 0.0..20.0f64, dv in 0.0..20.0f64) {
            let p = EgoParams::default();
            prop_assert!(yaw_rate_bounds(v1, &p).1 <= yaw_rate_bounds(v1 + dv, &p).1);
        }
    }
}
