//! Browser bindings: run closed-loop scenarios and hand the page compact JSON
//! frames to draw.

use lanechange_core::harness::{run_path_study, simulate, RunConfig, RunSummary};
use lanechange_core::world::World;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Frame {
    pub t: f64,
    /// Footprint center x, y, heading, speed.
    pub ego: [f64; 4],
    pub mode: Option<&'static str>,
    pub solve_ms: f64,
    /// Footprint center x, y, speed and a braking flag per vehicle.
    pub vehicles: Vec<[f64; 4]>,
}

#[derive(Debug, Serialize)]
pub struct Playback {
    pub summary: RunSummary,
    pub original_y: f64,
    pub target_y: f64,
    pub lane_width: f64,
    pub length: f64,
    pub width: f64,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Serialize)]
pub struct OffsetSeries {
    pub offset: f64,
    pub success: bool,
    pub completion_time_s: Option<f64>,
    pub max_overshoot: f64,
    pub max_abs_yaw: f64,
    /// `(t, p_y, theta)` samples.
    pub series: Vec<[f64; 3]>,
}

fn config(v0: f64, d0: f64, path_offset: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scenario.v0 = v0;
    cfg.scenario.d0 = d0;
    cfg.planner.path_offset = path_offset;
    cfg
}

fn final_frame(world: &World, mode: Option<&'static str>) -> Frame {
    let [cx, cy] = world.ego_params.footprint_center(&world.ego);
    Frame {
        t: world.time,
        ego: [cx, cy, world.ego.theta, world.ego.v],
        mode,
        solve_ms: 0.0,
        vehicles: world.vehicles.iter().map(|v| [v.state.px, v.state.py, v.state.v, 0.0]).collect(),
    }
}

pub fn playback(v0: f64, d0: f64, path_offset: f64) -> Result<Playback, String> {
    let cfg = config(v0, d0, path_offset);
    let out = simulate(&cfg).map_err(|e| e.to_string())?;
    let ego = cfg.planner.ego;

    let mut frames: Vec<Frame> = out
        .trace
        .iter()
        .map(|r| {
            let [cx, cy] = ego.footprint_center(&r.ego);
            Frame {
                t: r.time,
                ego: [cx, cy, r.ego.theta, r.ego.v],
                mode: r.planner.map(|p| p.mode.as_str()),
                solve_ms: r.planner.map_or(0.0, |p| p.solve_time_ms),
                vehicles: r
                    .vehicles
                    .iter()
                    .map(|v| [v.state.px, v.state.py, v.state.v, if v.braking { 1.0 } else { 0.0 }])
                    .collect(),
            }
        })
        .collect();
    let last_mode = frames.last().and_then(|f| f.mode);
    frames.push(final_frame(&out.final_world, last_mode));

    let lanes = out.final_world.lanes;
    Ok(Playback {
        summary: out.summary,
        original_y: lanes.original_centerline_y,
        target_y: lanes.target_centerline_y,
        lane_width: (lanes.original_centerline_y - lanes.target_centerline_y).abs(),
        length: ego.length,
        width: ego.width,
        frames,
    })
}

pub fn offset_study(v0: f64, d0: f64, offsets: &[f64]) -> Result<Vec<OffsetSeries>, String> {
    let runs = run_path_study(offsets, &config(v0, d0, 0.0)).map_err(|e| e.to_string())?;
    Ok(runs
        .into_iter()
        .map(|r| OffsetSeries {
            offset: r.offset,
            success: r.summary.as_ref().is_some_and(|s| s.success),
            completion_time_s: r.summary.as_ref().and_then(|s| s.completion_time_s),
            max_overshoot: r.max_overshoot,
            max_abs_yaw: r.max_abs_yaw,
            series: r.series,
        })
        .collect())
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
    value.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

/// Closed-loop run as JSON: summary, lane geometry and one frame per step.
#[wasm_bindgen]
pub fn run_scenario(v0: f64, d0: f64, path_offset: f64) -> Result<String, JsValue> {
    to_js(playback(v0, d0, path_offset))
}

/// Lateral position and yaw over time for each desired-path offset.
#[wasm_bindgen]
pub fn compare_offsets(v0: f64, d0: f64, offsets: Vec<f64>) -> Result<String, JsValue> {
    to_js(offset_study(v0, d0, &offsets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn playback_has_a_frame_per_step_plus_final() {
        let p = playback(2.0, 10.0, 0.4).unwrap();
        assert_eq!(p.frames.len(), p.summary.steps + 1);
        assert!(p.summary.success);
        assert!(p.frames.iter().all(|f| f.vehicles.len() == 8));
        assert!(p.frames.windows(2).all(|w| w[1].t > w[0].t));
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"frames\""));
    }

    #[test]
    fn offset_study_keeps_order() {
        let runs = offset_study(2.0, 10.0, &[0.0, 0.5]).unwrap();
        assert_eq!(runs.iter().map(|r| r.offset).collect::<Vec<_>>(), vec![0.0, 0.5]);
        assert!(runs.iter().all(|r| r.success && !r.series.is_empty()));
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(playback(2.0, -1.0, 0.4).is_err());
        assert!(offset_study(2.0, 10.0, &[0.3]).is_err());
    }
}
