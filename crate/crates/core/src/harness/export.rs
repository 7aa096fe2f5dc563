//! Trace files: a flat CSV, JSON lines with full step records, and a summary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunOutput;
use crate::error::{Error, Result};
use crate::planner::PlannerMode;
use crate::world::StepRecord;

pub const CSV_FIXED_COLUMNS: [&str; 12] = [
    "t",
    "ego_px",
    "ego_py",
    "ego_v",
    "ego_theta",
    "ego_a",
    "ego_thetadot",
    "mode",
    "path_rung",
    "solve_ms",
    "solver_iters",
    "min_separation",
];

const VEHICLE_FIELDS: [&str; 4] = ["px", "py", "v", "a"];

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub ego_px: f64,
    pub ego_py: f64,
    pub ego_v: f64,
    pub ego_theta: f64,
    pub ego_a: f64,
    pub ego_thetadot: f64,
    pub mode: Option<PlannerMode>,
    pub path_rung: Option<usize>,
    pub solve_ms: f64,
    pub solver_iters: usize,
    pub min_separation: f64,
    /// `(id, [px, py, v, a])`, ascending id.
    pub vehicles: Vec<(usize, [f64; 4])>,
}

impl TraceRow {
    pub fn from_record(rec: &StepRecord) -> Self {
        let mut vehicles: Vec<(usize, [f64; 4])> =
            rec.vehicles.iter().map(|v| (v.id, [v.state.px, v.state.py, v.state.v, v.accel])).collect();
        vehicles.sort_by_key(|v| v.0);
        let p = rec.planner;
        Self {
            t: rec.time,
            ego_px: rec.ego.px,
            ego_py: rec.ego.py,
            ego_v: rec.ego.v,
            ego_theta: rec.ego.theta,
            ego_a: rec.ego_control.a,
            ego_thetadot: rec.ego_control.theta_dot,
            mode: p.map(|p| p.mode),
            path_rung: p.and_then(|p| p.path_rung),
            solve_ms: p.map_or(0.0, |p| p.solve_time_ms),
            solver_iters: p.map_or(0, |p| p.solver_iterations),
            min_separation: rec.min_true_separation,
            vehicles,
        }
    }
}

fn header(ids: &[usize]) -> Vec<String> {
    CSV_FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(ids.iter().flat_map(|k| VEHICLE_FIELDS.iter().map(move |f| format!("v{k}_{f}"))))
        .collect()
}

pub fn write_trace_csv(path: &Path, trace: &[StepRecord]) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::format(path, "refusing to export an empty trace"));
    }
    let rows: Vec<TraceRow> = trace.iter().map(TraceRow::from_record).collect();
    let ids: Vec<usize> = rows[0].vehicles.iter().map(|v| v.0).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(header(&ids)).map_err(csv_err)?;
    for r in &rows {
        let mut fields = vec![
            r.t.to_string(),
            r.ego_px.to_string(),
            r.ego_py.to_string(),
            r.ego_v.to_string(),
            r.ego_theta.to_string(),
            r.ego_a.to_string(),
            r.ego_thetadot.to_string(),
            r.mode.map(|m| m.as_str().to_string()).unwrap_or_default(),
            r.path_rung.map(|k| k.to_string()).unwrap_or_default(),
            r.solve_ms.to_string(),
            r.solver_iters.to_string(),
            r.min_separation.to_string(),
        ];
        fields.extend(r.vehicles.iter().flat_map(|(_, v)| v.map(|x| x.to_string())));
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if headers.len() < CSV_FIXED_COLUMNS.len() || headers.iter().zip(CSV_FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(Error::format(path, "unexpected header"));
    }
    let extra = &headers.iter().collect::<Vec<_>>()[CSV_FIXED_COLUMNS.len()..];
    if extra.len() % VEHICLE_FIELDS.len() != 0 {
        return Err(Error::format(path, "incomplete vehicle column block"));
    }
    let ids: Vec<usize> = extra
        .chunks(VEHICLE_FIELDS.len())
        .map(|block| {
            block[0]
                .strip_prefix('v')
                .and_then(|s| s.strip_suffix("_px"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad vehicle column {}", block[0])))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |col: &str| Error::format(path, format!("row {}: bad value in column {col}", line + 1));
        let num = |i: usize| record[i].parse::<f64>().map_err(|_| bad(&headers[i]));
        let mode = match &record[7] {
            "" => None,
            s => Some(PlannerMode::parse(s).ok_or_else(|| bad("mode"))?),
        };
        let path_rung = match &record[8] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("path_rung"))?),
        };
        let vehicles = ids
            .iter()
            .enumerate()
            .map(|(j, &id)| {
                let base = CSV_FIXED_COLUMNS.len() + 4 * j;
                Ok((id, [num(base)?, num(base + 1)?, num(base + 2)?, num(base + 3)?]))
            })
            .collect::<Result<_>>()?;
        rows.push(TraceRow {
            t: num(0)?,
            ego_px: num(1)?,
            ego_py: num(2)?,
            ego_v: num(3)?,
            ego_theta: num(4)?,
            ego_a: num(5)?,
            ego_thetadot: num(6)?,
            mode,
            path_rung,
            solve_ms: num(9)?,
            solver_iters: record[10].parse().map_err(|_| bad("solver_iters"))?,
            min_separation: num(11)?,
            vehicles,
        });
    }
    Ok(rows)
}

pub fn write_trace_jsonl(path: &Path, trace: &[StepRecord]) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::format(path, "refusing to export an empty trace"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in trace {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::format(path, e.to_string()))
        })
        .collect()
}

/// Writes `trace.csv`, `trace.jsonl` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trace_csv(&dir.join("trace.csv"), &out.trace)?;
    write_trace_jsonl(&dir.join("trace.jsonl"), &out.trace)?;
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.summary).map_err(|e| Error::format(&path, e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
