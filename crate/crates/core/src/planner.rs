//! Receding-horizon interaction loop.
//!
//! Each cycle filters the adjacent vehicles, predicts them at constant
//! velocity, solves the barrier problem for the active desired path and
//! verifies the raw constraints of the result. A failed check walks the
//! fallback ladder (target lane with offset, target centerline, original
//! lane), and when every rung fails the ego brakes in place.

use serde::{Deserialize, Serialize};

use crate::constraints::{control_bound_residuals, safety_residual, ObstacleEllipse, SafetyConfig};
use crate::error::{Error, Result};
use crate::objective::{CostParams, DesiredPath};
use crate::solver::{BarrierSet, CilqrSolver, PlanResult, Problem, SolverConfig};
use crate::vehicle::{clamp_control, step, Axle, ControlInput, EgoParams, Trajectory, VehicleState};

/// Longitudinal extent of every desired path. Wide enough that endpoint
/// clamping never matters for a run.
const PATH_X_RANGE: (f64, f64) = (-1.0e4, 1.0e5);

/// A vehicle sharing the road with the ego, as the planner perceives it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurroundingVehicle {
    pub id: usize,
    /// Reference point is the footprint center.
    pub state: VehicleState,
    pub length: f64,
    pub width: f64,
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    /// Look-ahead distance of the braking rule.
    pub reaction_gap: f64,
    /// Radius of the disc this vehicle presents to others' braking rule.
    pub disc_radius: f64,
}

impl SurroundingVehicle {
    pub fn ellipse_at(&self, state: &VehicleState) -> ObstacleEllipse {
        ObstacleEllipse {
            center: state.position(),
            yaw: state.theta,
            half_long_axis: self.ellipse_a,
            half_short_axis: self.ellipse_b,
        }
    }
}

/// Keeps vehicles within `window` of the ego longitudinally (closed interval).
pub fn filter_adjacent(all: &[SurroundingVehicle], ego: &VehicleState, window: f64) -> Vec<SurroundingVehicle> {
    all.iter().filter(|v| (v.state.px - ego.px).abs() <= window).copied().collect()
}

/// Constant-velocity, constant-yaw prediction over `horizon` steps.
pub fn predict(vehicle: &SurroundingVehicle, horizon: usize, dt: f64) -> Vec<VehicleState> {
    let s = vehicle.state;
    let (sin, cos) = s.theta.sin_cos();
    (0..=horizon)
        .map(|i| {
            let t = i as f64 * dt;
            VehicleState { px: s.px + t * s.v * cos, py: s.py + t * s.v * sin, v: s.v, theta: s.theta }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedVehicle {
    pub vehicle: SurroundingVehicle,
    pub states: Vec<VehicleState>,
}

/// Predictions for every filtered vehicle over one horizon.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub vehicles: Vec<PredictedVehicle>,
}

impl PredictionSet {
    pub fn build(vehicles: &[SurroundingVehicle], horizon: usize, dt: f64) -> Self {
        Self {
            vehicles: vehicles
                .iter()
                .map(|v| PredictedVehicle { vehicle: *v, states: predict(v, horizon, dt) })
                .collect(),
        }
    }

    /// One ellipse per vehicle per stage, stage-major.
    pub fn obstacles_per_stage(&self, horizon: usize) -> Vec<Vec<ObstacleEllipse>> {
        (0..=horizon)
            .map(|i| self.vehicles.iter().map(|p| p.vehicle.ellipse_at(&p.states[i])).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ViolatedConstraint {
    Collision { vehicle_id: usize, axle: Axle },
    /// Index into `[a >= a_min, a <= a_max, yaw rate >= min, yaw rate <= max]`.
    ControlBound { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub stage: usize,
    pub constraint: ViolatedConstraint,
    pub residual: f64,
}

/// Outcome of [`check_safety`]; safe iff no violations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub violations: Vec<Violation>,
}

impl SafetyVerdict {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn min_residual(&self) -> Option<f64> {
        self.violations.iter().map(|v| v.residual).reduce(f64::min)
    }
}

/// Raw (barrier-free) check of both ego circles against every predicted
/// ellipse at stages `0..=N` and of the control bounds at `0..N`.
pub fn check_safety(
    trajectory: &Trajectory,
    predictions: &PredictionSet,
    ego: &EgoParams,
    safety: &SafetyConfig,
) -> SafetyVerdict {
    let mut violations = Vec::new();
    for (i, x) in trajectory.states.iter().enumerate() {
        for p in &predictions.vehicles {
            let obs = p.vehicle.ellipse_at(&p.states[i]);
            for axle in Axle::BOTH {
                let r = safety_residual(x, ego, &obs, safety, axle).value;
                if r < 0.0 {
                    violations.push(Violation {
                        stage: i,
                        constraint: ViolatedConstraint::Collision { vehicle_id: p.vehicle.id, axle },
                        residual: r,
                    });
                }
            }
        }
        if let Some(u) = trajectory.controls.get(i) {
            for (index, r) in control_bound_residuals(u, x, ego).iter().enumerate() {
                if r.value < 0.0 {
                    violations.push(Violation {
                        stage: i,
                        constraint: ViolatedConstraint::ControlBound { index },
                        residual: r.value,
                    });
                }
            }
        }
    }
    SafetyVerdict { violations }
}

/// Brake as hard as allowed without reversing and steer the yaw back to zero.
pub fn backup_command(ego: &VehicleState, params: &EgoParams, steps: usize, dt: f64) -> Vec<ControlInput> {
    let mut x = *ego;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let raw = ControlInput::new((-x.v / dt).max(params.a_min), -x.theta / dt);
        let u = clamp_control(&raw, x.v, params);
        out.push(u);
        x = step(&x, &u, dt);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionParams {
    pub lateral_tolerance: f64,
    pub yaw_tolerance: f64,
    pub hold_steps: usize,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self { lateral_tolerance: 0.2, yaw_tolerance: 0.05, hold_steps: 10 }
    }
}

fn settled(ego: &VehicleState, target_y: f64, params: &CompletionParams) -> bool {
    (ego.py - target_y).abs() <= params.lateral_tolerance && ego.theta.abs() <= params.yaw_tolerance
}

/// True iff the last `hold_steps` executed states are all settled on the
/// target centerline.
pub fn detect_completion(history: &[VehicleState], target_y: f64, params: &CompletionParams) -> bool {
    history.len() >= params.hold_steps
        && history[history.len() - params.hold_steps..].iter().all(|x| settled(x, target_y, params))
}

/// Streaming form of [`detect_completion`].
#[derive(Debug, Clone, Default)]
pub struct CompletionDetector {
    params: CompletionParams,
    streak: usize,
}

impl CompletionDetector {
    pub fn new(params: CompletionParams) -> Self {
        Self { params, streak: 0 }
    }

    pub fn update(&mut self, ego: &VehicleState, target_y: f64) -> bool {
        if settled(ego, target_y, &self.params) {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.complete()
    }

    pub fn complete(&self) -> bool {
        self.streak >= self.params.hold_steps
    }

    pub fn streak(&self) -> usize {
        self.streak
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    Attempting,
    Aborting,
    Backup,
    Completed,
}

impl PlannerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerMode::Attempting => "attempting",
            PlannerMode::Aborting => "aborting",
            PlannerMode::Backup => "backup",
            PlannerMode::Completed => "completed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attempting" => Some(PlannerMode::Attempting),
            "aborting" => Some(PlannerMode::Aborting),
            "backup" => Some(PlannerMode::Backup),
            "completed" => Some(PlannerMode::Completed),
            _ => None,
        }
    }
}

/// Lane geometry shared by the planner and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lanes {
    pub original_centerline_y: f64,
    pub target_centerline_y: f64,
    pub lane_width: f64,
}

impl Lanes {
    pub fn new(original_centerline_y: f64, target_centerline_y: f64) -> Result<Self> {
        let lane_width = (original_centerline_y - target_centerline_y).abs();
        if lane_width <= 0.0 || !lane_width.is_finite() {
            return Err(Error::InvalidConfig("lanes must be distinct".into()));
        }
        Ok(Self { original_centerline_y, target_centerline_y, lane_width })
    }

    /// Unit lateral direction pointing from the target lane to the original one.
    pub fn toward_original(&self) -> f64 {
        (self.original_centerline_y - self.target_centerline_y).signum()
    }

    /// Target-lane path shifted by `offset` toward the original lane.
    pub fn target_path(&self, offset: f64) -> Result<DesiredPath> {
        DesiredPath::horizontal(self.target_centerline_y + offset * self.toward_original(), PATH_X_RANGE.0, PATH_X_RANGE.1)
    }

    pub fn original_path(&self) -> Result<DesiredPath> {
        DesiredPath::horizontal(self.original_centerline_y, PATH_X_RANGE.0, PATH_X_RANGE.1)
    }
}

/// One entry of the fallback ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRung {
    pub path: DesiredPath,
    /// Whether this rung continues the lane change or abandons it.
    pub aborts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Controls executed per solve.
    pub lambda: usize,
    pub filter_window: f64,
    /// Lateral offset of the first rung from the target centerline, toward
    /// the original lane.
    pub path_offset: f64,
    /// When false only the first rung is tried before the backup.
    pub use_fallback_ladder: bool,
    /// Once the ego holds the active target-lane path within this lateral
    /// distance and `capture_yaw`, it retargets to the lane centerline.
    pub capture_tolerance: f64,
    pub capture_yaw: f64,
    /// The ego also retargets once it is within this lateral distance of the
    /// target centerline (zero disables).
    pub settle_band: f64,
    pub ego: EgoParams,
    pub cost: CostParams,
    pub safety: SafetyConfig,
    pub barriers: BarrierSet,
    pub solver: SolverConfig,
    pub completion: CompletionParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lambda: 1,
            filter_window: 30.0,
            path_offset: 0.4,
            use_fallback_ladder: true,
            capture_tolerance: 0.1,
            capture_yaw: 0.05,
            settle_band: 0.5,
            ego: EgoParams::default(),
            cost: CostParams { w_heading: 3.0, ..CostParams::default() },
            safety: SafetyConfig::default(),
            barriers: BarrierSet::default(),
            solver: SolverConfig::default(),
            completion: CompletionParams::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 1 || self.lambda >= self.solver.horizon {
            return Err(Error::InvalidConfig(format!(
                "lambda must satisfy 1 <= lambda < N, got {} with N = {}",
                self.lambda, self.solver.horizon
            )));
        }
        if !(self.filter_window > 0.0) {
            return Err(Error::InvalidConfig("filter window must be positive".into()));
        }
        if !(self.safety.s_min >= 0.0) {
            return Err(Error::InvalidConfig("s_min must be non-negative".into()));
        }
        self.ego.validate()?;
        self.cost.validate()?;
        self.barriers.safety.validate()?;
        self.barriers.control.validate()?;
        self.solver.validate().map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Mutable state carried between planning cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub lambda: usize,
    pub mode: PlannerMode,
    pub active_path: DesiredPath,
    pub previous_solution: Option<Vec<ControlInput>>,
    pub fallback_ladder: Vec<PathRung>,
    pub lanes: Lanes,
}

impl PlannerState {
    pub fn new(lanes: Lanes, config: &PlannerConfig) -> Result<Self> {
        let first = PathRung { path: lanes.target_path(config.path_offset)?, aborts: false };
        let mut ladder = vec![first.clone()];
        if config.use_fallback_ladder {
            ladder.push(PathRung { path: lanes.target_path(0.0)?, aborts: false });
            ladder.push(PathRung { path: lanes.original_path()?, aborts: true });
        }
        Ok(Self {
            lambda: config.lambda,
            mode: PlannerMode::Attempting,
            active_path: first.path,
            previous_solution: None,
            fallback_ladder: ladder,
            lanes,
        })
    }
}

/// What one planning cycle decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStepOutput {
    /// The `lambda` controls to execute.
    pub controls: Vec<ControlInput>,
    pub mode: PlannerMode,
    /// Index of the ladder rung used, `None` for the backup.
    pub rung: Option<usize>,
    /// Result of the last solve attempted this cycle.
    pub result: Option<PlanResult>,
    /// Verdict of the last safety check run this cycle.
    pub verdict: Option<SafetyVerdict>,
    pub predictions: PredictionSet,
    /// Summed wall-clock time of every solve this cycle (ms).
    pub solve_time_ms: f64,
    pub solver_iterations: usize,
}

fn shift_controls(controls: &[ControlInput], by: usize) -> Vec<ControlInput> {
    let last = *controls.last().expect("non-empty control sequence");
    controls.iter().skip(by).copied().chain(std::iter::repeat(last).take(by.min(controls.len()))).collect()
}

/// One receding-horizon cycle.
pub fn plan_step(
    ego: &VehicleState,
    vehicles: &[SurroundingVehicle],
    state: &mut PlannerState,
    config: &PlannerConfig,
) -> PlanStepOutput {
    let solver_cfg = &config.solver;
    let horizon = solver_cfg.horizon;
    let filtered = filter_adjacent(vehicles, ego, config.filter_window);
    let predictions = PredictionSet::build(&filtered, horizon, solver_cfg.dt);
    let obstacles = predictions.obstacles_per_stage(horizon);

    let active_y = state.active_path.points()[0][1];
    let captured = (ego.py - active_y).abs() <= config.capture_tolerance && ego.theta.abs() <= config.capture_yaw;
    let settled = (ego.py - state.lanes.target_centerline_y).abs() <= config.settle_band;
    if state.mode == PlannerMode::Attempting && (captured || settled) {
        state.mode = PlannerMode::Completed;
    }
    let rungs: Vec<PathRung> = if state.mode == PlannerMode::Completed {
        vec![PathRung { path: state.lanes.target_path(0.0).expect("valid lanes"), aborts: false }]
    } else {
        state.fallback_ladder.clone()
    };

    let solver = CilqrSolver::new(solver_cfg.clone()).expect("validated solver config");
    let mut out = PlanStepOutput {
        controls: Vec::new(),
        mode: PlannerMode::Backup,
        rung: None,
        result: None,
        verdict: None,
        predictions,
        solve_time_ms: 0.0,
        solver_iterations: 0,
    };

    for (index, rung) in rungs.iter().enumerate() {
        let problem = Problem {
            ego: &config.ego,
            cost: &config.cost,
            path: &rung.path,
            obstacles: &obstacles,
            safety: &config.safety,
            barriers: &config.barriers,
        };
        let Ok(result) = solver.solve(*ego, &problem, state.previous_solution.as_deref()) else {
            continue;
        };
        out.solve_time_ms += result.solve_time_ms;
        out.solver_iterations += result.iterations;
        let verdict = check_safety(&result.trajectory, &out.predictions, &config.ego, &config.safety);
        let safe = verdict.is_safe();
        out.verdict = Some(verdict);
        if safe {
            let controls = &result.trajectory.controls;
            out.controls = controls[..state.lambda].to_vec();
            state.previous_solution = Some(shift_controls(controls, state.lambda));
            state.active_path = rung.path.clone();
            if state.mode != PlannerMode::Completed {
                state.mode = if rung.aborts { PlannerMode::Aborting } else { PlannerMode::Attempting };
            }
            out.mode = state.mode;
            out.rung = Some(index);
            out.result = Some(result);
            return out;
        }
        out.result = Some(result);
    }

    out.controls = backup_command(ego, &config.ego, state.lambda, solver_cfg.dt);
    state.previous_solution = None;
    if state.mode != PlannerMode::Completed {
        state.mode = PlannerMode::Backup;
    }
    out.mode = PlannerMode::Backup;
    out
}
