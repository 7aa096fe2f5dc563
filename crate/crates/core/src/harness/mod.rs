//! Closed-loop runs, grid sweeps, the desired-path study and trace export.

mod export;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use export::{read_trace_csv, read_trace_jsonl, write_run, write_trace_csv, write_trace_jsonl, TraceRow, CSV_FIXED_COLUMNS};

use crate::constraints::safety_residual;
use crate::error::{Error, Result};
use crate::planner::{plan_step, CompletionDetector, PlannerConfig, PlannerState, SurroundingVehicle};
use crate::vehicle::VehicleState;
use crate::vehicle::Axle;
use crate::world::{build_scenario, PlannerTrace, ScenarioLayout, StepRecord, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub v0: f64,
    pub d0: f64,
    pub layout: ScenarioLayout,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { v0: 2.0, d0: 10.0, layout: ScenarioLayout::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub planner: PlannerConfig,
    /// When true the planner's reference speed follows the scenario's `v0`.
    pub reference_speed_from_v0: bool,
    pub sim_duration_s: f64,
    /// Time the ego must keep the completed state before a run stops early.
    pub completion_hold_s: f64,
    /// Reserved: every component is deterministic.
    pub random_seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            planner: PlannerConfig::default(),
            reference_speed_from_v0: true,
            sim_duration_s: 30.0,
            completion_hold_s: 1.0,
            random_seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim_duration_s > 0.0) || !self.sim_duration_s.is_finite() {
            return Err(Error::InvalidConfig("sim_duration_s must be positive".into()));
        }
        if !(self.completion_hold_s >= 0.0) {
            return Err(Error::InvalidConfig("completion_hold_s must be non-negative".into()));
        }
        self.planner.validate()
    }

    /// Planner settings actually used for a run.
    pub fn effective_planner(&self) -> PlannerConfig {
        let mut p = self.planner.clone();
        if self.reference_speed_from_v0 {
            p.cost.v_ref = self.scenario.v0;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl TimingStats {
    /// Nearest-rank percentiles. Empty input gives zeros.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self { p50: 0.0, p95: 0.0, max: 0.0 };
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| sorted[((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Self { p50: rank(0.5), p95: rank(0.95), max: sorted[sorted.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub success: bool,
    pub completion_time_s: Option<f64>,
    pub collision: bool,
    pub min_separation_m: f64,
    /// Smallest raw safety residual of the executed ego states against the
    /// true vehicle states.
    pub min_safety_residual: f64,
    pub solve_time_ms: TimingStats,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Vec<StepRecord>,
    /// World after the last executed step.
    pub final_world: World,
}

/// Smallest raw residual of the ego circles against every vehicle ellipse.
pub fn executed_safety_residual(ego: &VehicleState, vehicles: &[SurroundingVehicle], config: &PlannerConfig) -> f64 {
    vehicles
        .iter()
        .flat_map(|v| {
            let obs = v.ellipse_at(&v.state);
            Axle::BOTH.map(|axle| safety_residual(ego, &config.ego, &obs, &config.safety, axle).value)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Closed-loop run without writing files.
pub fn simulate(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let planner_cfg = config.effective_planner();
    let sc = &config.scenario;
    let mut world = build_scenario(sc.v0, sc.d0, &sc.layout, &planner_cfg.ego)?;
    let mut planner = PlannerState::new(world.lanes, &planner_cfg)?;
    let mut detector = CompletionDetector::new(planner_cfg.completion);
    let target_y = world.lanes.target_centerline_y;
    let dt = world.dt;
    let max_steps = (config.sim_duration_s / dt).round() as usize;
    let hold_steps = (config.completion_hold_s / dt).round() as usize;
    let settle_steps = planner_cfg.completion.hold_steps;

    let mut trace: Vec<StepRecord> = Vec::new();
    let mut completion_step: Option<usize> = None;
    let mut collision = false;
    let mut min_residual = f64::INFINITY;
    let mut timings = Vec::new();

    'outer: while trace.len() < max_steps {
        let out = plan_step(&world.ego, &world.vehicles, &mut planner, &planner_cfg);
        timings.push(out.solve_time_ms);
        for (i, u) in out.controls.iter().enumerate() {
            min_residual = min_residual.min(executed_safety_residual(&world.ego, &world.vehicles, &planner_cfg));
            let mut rec = world.step(*u);
            rec.planner = Some(PlannerTrace {
                mode: out.mode,
                path_rung: out.rung,
                solve_time_ms: if i == 0 { out.solve_time_ms } else { 0.0 },
                solver_iterations: if i == 0 { out.solver_iterations } else { 0 },
            });
            trace.push(rec);
            if world.true_collision().is_some() {
                collision = true;
                break 'outer;
            }
            if detector.update(&world.ego, target_y) && completion_step.is_none() {
                // Completion dates from the first state of the settled streak.
                completion_step = Some(trace.len() + 1 - settle_steps);
            }
            if let Some(c) = completion_step {
                if trace.len() >= c + settle_steps - 1 + hold_steps {
                    break 'outer;
                }
            }
            if trace.len() >= max_steps {
                break 'outer;
            }
        }
    }
    min_residual = min_residual.min(executed_safety_residual(&world.ego, &world.vehicles, &planner_cfg));

    let min_separation =
        trace.iter().map(|r| r.min_true_separation).fold(world.min_true_separation(), f64::min);
    let completion_time_s = completion_step.map(|s| s as f64 * dt);
    let summary = RunSummary {
        success: completion_step.is_some() && !collision,
        completion_time_s,
        collision,
        min_separation_m: min_separation,
        min_safety_residual: min_residual,
        solve_time_ms: TimingStats::from_samples(&timings),
        steps: trace.len(),
    };
    Ok(RunOutput { summary, trace, final_world: world })
}

/// Closed-loop run; writes trace and summary files when an output directory
/// is configured.
pub fn run_scenario(config: &RunConfig) -> Result<RunOutput> {
    let out = simulate(config)?;
    if let Some(dir) = &config.output_dir {
        write_run(dir, &out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub v0: f64,
    pub d0: f64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub successes: usize,
    pub collisions: usize,
    pub success_rate: f64,
}

impl GridReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("v0,d0,success,completion_time_s,collision,min_separation_m,p50_ms,p95_ms,max_ms,steps,error\n");
        for c in &self.cells {
            match &c.summary {
                Some(r) => s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},\n",
                    c.v0,
                    c.d0,
                    r.success,
                    r.completion_time_s.map(|t| t.to_string()).unwrap_or_default(),
                    r.collision,
                    r.min_separation_m,
                    r.solve_time_ms.p50,
                    r.solve_time_ms.p95,
                    r.solve_time_ms.max,
                    r.steps
                )),
                None => s.push_str(&format!(
                    "{},{},false,,false,,,,,0,{}\n",
                    c.v0,
                    c.d0,
                    c.error.as_deref().unwrap_or("").replace(',', ";")
                )),
            }
        }
        s.push_str(&format!(
            "# success rate {}/{} ({:.1}%), collisions {}\n",
            self.successes,
            self.cells.len(),
            100.0 * self.success_rate,
            self.collisions
        ));
        s
    }
}

fn cell_dir(base: &Path, v0: f64, d0: f64) -> PathBuf {
    base.join(format!("v0_{v0}_d0_{d0}"))
}

fn run_cell(base: &RunConfig, v0: f64, d0: f64) -> GridCell {
    let mut cfg = base.clone();
    cfg.scenario.v0 = v0;
    cfg.scenario.d0 = d0;
    cfg.output_dir = base.output_dir.as_deref().map(|dir| cell_dir(dir, v0, d0));
    match run_scenario(&cfg) {
        Ok(out) => GridCell { v0, d0, summary: Some(out.summary), error: None },
        Err(e) => GridCell { v0, d0, summary: None, error: Some(e.to_string()) },
    }
}

/// One run per `(v0, d0)` pair, rows ordered by `(v0, d0)`.
pub fn run_grid(v0_set: &[f64], d0_set: &[f64], base: &RunConfig) -> Result<GridReport> {
    if v0_set.is_empty() || d0_set.is_empty() {
        return Err(Error::InvalidConfig("grid needs at least one v0 and one d0".into()));
    }
    let pairs: Vec<(f64, f64)> = v0_set.iter().flat_map(|&v| d0_set.iter().map(move |&d| (v, d))).collect();

    #[cfg(feature = "parallel")]
    let mut cells: Vec<GridCell> = {
        use rayon::prelude::*;
        pairs.par_iter().map(|&(v, d)| run_cell(base, v, d)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let mut cells: Vec<GridCell> = pairs.iter().map(|&(v, d)| run_cell(base, v, d)).collect();

    cells.sort_by(|a, b| a.v0.total_cmp(&b.v0).then(a.d0.total_cmp(&b.d0)));
    let successes = cells.iter().filter(|c| c.summary.as_ref().is_some_and(|s| s.success)).count();
    let collisions = cells.iter().filter(|c| c.summary.as_ref().is_some_and(|s| s.collision)).count();
    let report = GridReport { successes, collisions, success_rate: successes as f64 / cells.len() as f64, cells };
    if let Some(dir) = &base.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("grid.csv");
        std::fs::write(&path, report.to_table()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStudyRun {
    pub offset: f64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
    /// `(t, p_y, theta)` of the ego at every executed step.
    pub series: Vec<[f64; 3]>,
    /// Largest excursion past the target centerline, away from the original lane.
    pub max_overshoot: f64,
    pub max_abs_yaw: f64,
}

/// Same scenario once per fixed desired-path offset, fallback ladder off.
pub fn run_path_study(offsets: &[f64], base: &RunConfig) -> Result<Vec<PathStudyRun>> {
    if offsets.len() < 2 {
        return Err(Error::InvalidConfig("path study needs at least two offsets".into()));
    }
    let run_one = |&offset: &f64| {
        let mut cfg = base.clone();
        cfg.planner.path_offset = offset;
        cfg.planner.use_fallback_ladder = false;
        cfg.output_dir = base.output_dir.as_deref().map(|d| d.join(format!("offset_{offset}")));
        match run_scenario(&cfg) {
            Ok(out) => {
                let lanes = out.final_world.lanes;
                let dir = lanes.toward_original();
                let mut series: Vec<[f64; 3]> = out.trace.iter().map(|r| [r.time, r.ego.py, r.ego.theta]).collect();
                let last = out.final_world.ego;
                series.push([out.final_world.time, last.py, last.theta]);
                let max_overshoot =
                    series.iter().map(|s| -(s[1] - lanes.target_centerline_y) * dir).fold(0.0, f64::max);
                let max_abs_yaw = series.iter().map(|s| s[2].abs()).fold(0.0, f64::max);
                PathStudyRun { offset, summary: Some(out.summary), error: None, series, max_overshoot, max_abs_yaw }
            }
            Err(e) => PathStudyRun {
                offset,
                summary: None,
                error: Some(e.to_string()),
                series: Vec::new(),
                max_overshoot: f64::NAN,
                max_abs_yaw: f64::NAN,
            },
        }
    };

    #[cfg(feature = "parallel")]
    let runs = {
        use rayon::prelude::*;
        offsets.par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs = offsets.iter().map(run_one).collect();
    Ok(runs)
}

/// Default grid from the lane-change study.
pub const GRID_V0: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0];
pub const GRID_D0: [f64; 4] = [4.0, 6.0, 8.0, 10.0];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_ordering() {
        let s = TimingStats::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!((s.p50, s.p95, s.max), (3.0, 5.0, 5.0));
        let one = TimingStats::from_samples(&[2.5]);
        assert_eq!((one.p50, one.p95, one.max), (2.5, 2.5, 2.5));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"sim_duration_s": 10, "bogus": 1}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"sim_duration_s": 12, "scenario": {"v0": 3, "d0": 6}}"#).unwrap();
        assert_eq!(cfg.sim_duration_s, 12.0);
        assert_eq!(cfg.scenario.v0, 3.0);
        assert!(RunConfig::from_json(r#"{"sim_duration_s": 0}"#).unwrap().validate().is_err());
    }

    #[test]
    fn infeasible_spawn_is_reported() {
        let mut cfg = RunConfig::default();
        cfg.scenario.d0 = 0.5;
        assert!(matches!(simulate(&cfg), Err(Error::InvalidScenario(_))));
    }
}
