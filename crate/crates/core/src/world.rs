//! Ground-truth closed-loop simulation.
//!
//! Surrounding vehicles drive straight along their lane centerlines and react
//! to whoever is in front of them with a bang-bang rule: brake as hard as
//! allowed when a vehicle sits within the look-ahead gap, otherwise accelerate
//! back toward the cruise speed. They never yield deliberately. Collisions are
//! judged on the true rectangular footprints, independent of the ellipses the
//! planner uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{Lanes, PlannerMode, SurroundingVehicle};
use crate::vehicle::{step, ControlInput, EgoParams, VehicleState};

/// Behavior parameters shared by all surrounding vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficParams {
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Reaction gap is `reaction_offset + max(reaction_gap_min, reaction_headway * v)`,
    /// measured center to center.
    pub reaction_offset: f64,
    pub reaction_gap_min: f64,
    pub reaction_headway: f64,
    /// Disc radius presented to the reaction rule is `width / 2 + disc_margin`.
    pub disc_margin: f64,
    /// Ellipse half long axis is `length / 2 + ellipse_headway * v`.
    pub ellipse_headway: f64,
}

impl TrafficParams {
    pub fn with_cruise_speed(v_max: f64) -> Self {
        Self {
            v_max,
            a_min: -4.0,
            a_max: 2.0,
            reaction_offset: 4.5,
            reaction_gap_min: 2.0,
            reaction_headway: 0.75,
            disc_margin: 1.3,
            ellipse_headway: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.v_max,
            self.a_min,
            self.a_max,
            self.reaction_offset,
            self.reaction_gap_min,
            self.reaction_headway,
            self.disc_margin,
            self.ellipse_headway,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("traffic parameters must be finite".into()));
        }
        if self.v_max < 0.0 || self.a_min >= 0.0 || self.a_max <= 0.0 {
            return Err(Error::InvalidConfig("traffic needs v_max >= 0 and a_min < 0 < a_max".into()));
        }
        if self.reaction_offset < 0.0 || self.reaction_gap_min < 0.0 || self.reaction_headway < 0.0 {
            return Err(Error::InvalidConfig("reaction gap terms must be non-negative".into()));
        }
        if self.disc_margin < 0.0 || self.ellipse_headway < 0.0 {
            return Err(Error::InvalidConfig("disc margin and ellipse headway must be non-negative".into()));
        }
        Ok(())
    }

    pub fn reaction_gap(&self, v: f64) -> f64 {
        self.reaction_offset + self.reaction_gap_min.max(self.reaction_headway * v)
    }

    /// Recompute the speed-dependent fields of a vehicle.
    pub fn refresh(&self, vehicle: &mut SurroundingVehicle) {
        let v = vehicle.state.v;
        vehicle.ellipse_a = vehicle.length / 2.0 + self.ellipse_headway * v;
        vehicle.ellipse_b = vehicle.width / 2.0;
        vehicle.reaction_gap = self.reaction_gap(v);
        vehicle.disc_radius = vehicle.width / 2.0 + self.disc_margin;
    }
}

/// Something another vehicle may have to react to: a disc at a position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Participant {
    pub body: Body,
    pub position: [f64; 2],
    pub disc_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Body {
    Ego,
    Vehicle(usize),
}

/// Acceleration chosen by vehicle `k` and whether it is braking.
pub fn surrounding_accel(
    vehicle: &SurroundingVehicle,
    others: &[Participant],
    traffic: &TrafficParams,
    dt: f64,
) -> (f64, bool) {
    let s = &vehicle.state;
    let blocked = others.iter().any(|o| {
        o.body != Body::Vehicle(vehicle.id) && {
            let ahead = o.position[0] - s.px;
            (0.0..=vehicle.reaction_gap).contains(&ahead)
                && (o.position[1] - s.py).abs() <= o.disc_radius + vehicle.width / 2.0
        }
    });
    if blocked {
        (traffic.a_min.max(-s.v / dt), true)
    } else {
        (traffic.a_max.min((traffic.v_max - s.v) / dt), false)
    }
}

/// Oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: [f64; 2],
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Footprint {
    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [u, n] = self.axes();
        let [cx, cy] = self.center;
        let (l, w) = (self.half_length, self.half_width);
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .map(|(a, b)| [cx + a * l * u[0] + b * w * n[0], cy + a * l * u[1] + b * w * n[1]])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [u, n] = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        (d[0] * u[0] + d[1] * u[1]).abs() <= self.half_length && (d[0] * n[0] + d[1] * n[1]).abs() <= self.half_width
    }

    /// Separating-axis overlap test; touching counts as overlap.
    pub fn overlaps(&self, other: &Footprint) -> bool {
        self.min_axis_gap(other) <= 0.0
    }

    /// Largest gap of the projections over the four candidate axes. Negative
    /// values are the (negated) smallest overlap along any axis.
    fn min_axis_gap(&self, other: &Footprint) -> f64 {
        let (ca, cb) = (self.corners(), other.corners());
        self.axes()
            .into_iter()
            .chain(other.axes())
            .map(|axis| {
                let project = |cs: &[[f64; 2]; 4]| {
                    cs.iter().map(|p| p[0] * axis[0] + p[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
                };
                let (a_lo, a_hi) = project(&ca);
                let (b_lo, b_hi) = project(&cb);
                (b_lo - a_hi).max(a_lo - b_hi)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Euclidean distance between the rectangles when apart, minus the
    /// minimum separating-axis penetration when overlapping.
    pub fn separation(&self, other: &Footprint) -> f64 {
        let gap = self.min_axis_gap(other);
        if gap <= 0.0 {
            return gap;
        }
        let (ca, cb) = (self.corners(), other.corners());
        let vertex_edge = |pts: &[[f64; 2]; 4], poly: &[[f64; 2]; 4]| {
            pts.iter()
                .flat_map(|p| (0..4).map(move |i| point_segment_distance(*p, poly[i], poly[(i + 1) % 4])))
                .fold(f64::INFINITY, f64::min)
        };
        vertex_edge(&ca, &cb).min(vertex_edge(&cb, &ca))
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Per-vehicle entry of a [`StepRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: usize,
    pub state: VehicleState,
    pub accel: f64,
    pub braking: bool,
}

/// Planner-side fields of a step, filled in by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerTrace {
    pub mode: PlannerMode,
    pub path_rung: Option<usize>,
    pub solve_time_ms: f64,
    pub solver_iterations: usize,
}

/// Everything that happened over one simulation step, as seen at its start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub ego: VehicleState,
    pub ego_control: ControlInput,
    pub vehicles: Vec<VehicleRecord>,
    pub planner: Option<PlannerTrace>,
    /// Smallest rectangle separation between the ego and any vehicle.
    pub min_true_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub time: f64,
    pub ego: VehicleState,
    pub ego_params: EgoParams,
    pub vehicles: Vec<SurroundingVehicle>,
    pub lanes: Lanes,
    pub traffic: TrafficParams,
    pub dt: f64,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidScenario("dt must be positive".into()));
        }
        let width = (self.lanes.original_centerline_y - self.lanes.target_centerline_y).abs();
        if (width - self.lanes.lane_width).abs() > 1e-9 {
            return Err(Error::InvalidScenario("lane width must equal the centerline distance".into()));
        }
        self.traffic.validate()?;
        self.ego_params.validate()
    }

    pub fn ego_footprint(&self) -> Footprint {
        Footprint {
            center: self.ego_params.footprint_center(&self.ego),
            heading: self.ego.theta,
            half_length: self.ego_params.length / 2.0,
            half_width: self.ego_params.width / 2.0,
        }
    }

    pub fn ego_disc_radius(&self) -> f64 {
        self.ego_params.width / 2.0 + self.traffic.disc_margin
    }

    pub fn participants(&self) -> Vec<Participant> {
        let mut out = vec![Participant {
            body: Body::Ego,
            position: self.ego_params.footprint_center(&self.ego),
            disc_radius: self.ego_disc_radius(),
        }];
        out.extend(self.vehicles.iter().map(|v| Participant {
            body: Body::Vehicle(v.id),
            position: v.state.position(),
            disc_radius: v.disc_radius,
        }));
        out
    }

    pub fn min_true_separation(&self) -> f64 {
        let ego = self.ego_footprint();
        self.vehicles.iter().map(|v| ego.separation(&vehicle_footprint(v))).fold(f64::INFINITY, f64::min)
    }

    /// First overlapping pair, ego first, then vehicles by id.
    pub fn true_collision(&self) -> Option<(Body, Body)> {
        let mut bodies: Vec<(Body, Footprint)> = vec![(Body::Ego, self.ego_footprint())];
        let mut sorted: Vec<&SurroundingVehicle> = self.vehicles.iter().collect();
        sorted.sort_by_key(|v| v.id);
        bodies.extend(sorted.into_iter().map(|v| (Body::Vehicle(v.id), vehicle_footprint(v))));
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                if bodies[i].1.overlaps(&bodies[j].1) {
                    return Some((bodies[i].0, bodies[j].0));
                }
            }
        }
        None
    }

    /// Advance every vehicle by one `dt` using accelerations computed from the
    /// current snapshot.
    pub fn step(&mut self, ego_control: ControlInput) -> StepRecord {
        let participants = self.participants();
        let decisions: Vec<(f64, bool)> =
            self.vehicles.iter().map(|v| surrounding_accel(v, &participants, &self.traffic, self.dt)).collect();
        let record = StepRecord {
            time: self.time,
            ego: self.ego,
            ego_control,
            vehicles: self
                .vehicles
                .iter()
                .zip(&decisions)
                .map(|(v, &(accel, braking))| VehicleRecord { id: v.id, state: v.state, accel, braking })
                .collect(),
            planner: None,
            min_true_separation: self.min_true_separation(),
        };

        self.ego = step(&self.ego, &ego_control, self.dt);
        for (v, &(accel, _)) in self.vehicles.iter_mut().zip(&decisions) {
            let lane_y = v.state.py;
            let mut next = step(&v.state, &ControlInput::new(accel, 0.0), self.dt);
            next.v = next.v.max(0.0);
            next.py = lane_y;
            next.theta = 0.0;
            v.state = next;
            self.traffic.refresh(v);
        }
        self.time += self.dt;
        record
    }
}

pub fn vehicle_footprint(v: &SurroundingVehicle) -> Footprint {
    Footprint { center: v.state.position(), heading: v.state.theta, half_length: v.length / 2.0, half_width: v.width / 2.0 }
}

/// Geometry of the initial lane-change setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioLayout {
    pub original_centerline_y: f64,
    pub target_centerline_y: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    /// Smallest bumper-to-bumper gap accepted at spawn.
    pub min_gap: f64,
    /// Cruise speed of surrounding vehicles; `None` uses the initial speed.
    pub v_max: Option<f64>,
    pub a_min: f64,
    pub a_max: f64,
    pub reaction_offset: f64,
    pub reaction_gap_min: f64,
    pub reaction_headway: f64,
    pub disc_margin: f64,
    pub ellipse_headway: f64,
    pub dt: f64,
}

impl Default for ScenarioLayout {
    fn default() -> Self {
        let t = TrafficParams::with_cruise_speed(0.0);
        Self {
            original_centerline_y: 3.5,
            target_centerline_y: 0.0,
            vehicle_length: 4.5,
            vehicle_width: 1.8,
            min_gap: 1.0,
            v_max: None,
            a_min: t.a_min,
            a_max: t.a_max,
            reaction_offset: t.reaction_offset,
            reaction_gap_min: t.reaction_gap_min,
            reaction_headway: t.reaction_headway,
            disc_margin: t.disc_margin,
            ellipse_headway: t.ellipse_headway,
            dt: 0.1,
        }
    }
}

impl ScenarioLayout {
    pub fn traffic(&self, v0: f64) -> TrafficParams {
        TrafficParams {
            v_max: self.v_max.unwrap_or(v0),
            a_min: self.a_min,
            a_max: self.a_max,
            reaction_offset: self.reaction_offset,
            reaction_gap_min: self.reaction_gap_min,
            reaction_headway: self.reaction_headway,
            disc_margin: self.disc_margin,
            ellipse_headway: self.ellipse_headway,
        }
    }
}

/// Vehicle ids: 0..=3 in the target lane front to back, 4 and 5 ahead of
/// the ego in its own lane (4 nearest), 6 and 7 behind it (6 nearest).
pub fn build_scenario(v0: f64, d0: f64, layout: &ScenarioLayout, ego_params: &EgoParams) -> Result<World> {
    if !(v0 >= 0.0) || !v0.is_finite() {
        return Err(Error::InvalidScenario(format!("initial speed must be finite and non-negative, got {v0}")));
    }
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(Error::InvalidScenario(format!("gap must be finite and positive, got {d0}")));
    }
    if d0 < layout.min_gap {
        return Err(Error::InvalidScenario(format!(
            "gap {d0} m is below the minimum spawn gap of {} m",
            layout.min_gap
        )));
    }
    if !(layout.vehicle_length > 0.0 && layout.vehicle_width > 0.0) {
        return Err(Error::InvalidScenario("vehicle dimensions must be positive".into()));
    }
    ego_params.validate()?;
    let lanes = Lanes::new(layout.original_centerline_y, layout.target_centerline_y)?;
    let traffic = layout.traffic(v0);
    traffic.validate()?;

    let len = layout.vehicle_length;
    let pitch = len + d0;
    let ego_neighbor = ego_params.length / 2.0 + d0 + len / 2.0;
    let target = [1.5 * pitch, 0.5 * pitch, -0.5 * pitch, -1.5 * pitch].map(|x| (x, lanes.target_centerline_y));
    let original = [ego_neighbor + pitch, ego_neighbor, -ego_neighbor, -ego_neighbor - pitch]
        .map(|x| (x, lanes.original_centerline_y));
    let original = [original[1], original[0], original[2], original[3]];

    let vehicles = target
        .iter()
        .chain(original.iter())
        .enumerate()
        .map(|(id, &(px, py))| {
            let mut v = SurroundingVehicle {
                id,
                state: VehicleState::new(px, py, v0, 0.0),
                length: len,
                width: layout.vehicle_width,
                ellipse_a: 0.0,
                ellipse_b: 0.0,
                reaction_gap: 0.0,
                disc_radius: 0.0,
            };
            traffic.refresh(&mut v);
            v
        })
        .collect();

    // Footprint center of the ego sits at x = 0.
    let ego = VehicleState::new(-ego_params.center_offset(), lanes.original_centerline_y, v0, 0.0);
    let world = World { time: 0.0, ego, ego_params: *ego_params, vehicles, lanes, traffic, dt: layout.dt };
    world.validate()?;
    if let Some(pair) = world.true_collision() {
        return Err(Error::InvalidScenario(format!("overlapping spawn: {pair:?}")));
    }
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traffic() -> TrafficParams {
        TrafficParams::with_cruise_speed(3.0)
    }

    fn car(id: usize, px: f64, py: f64, v: f64, gap: f64) -> SurroundingVehicle {
        SurroundingVehicle {
            id,
            state: VehicleState::new(px, py, v, 0.0),
            length: 4.5,
            width: 1.8,
            ellipse_a: 2.25,
            ellipse_b: 0.9,
            reaction_gap: gap,
            disc_radius: 1.1,
        }
    }

    fn as_participant(v: &SurroundingVehicle) -> Participant {
        Participant { body: Body::Vehicle(v.id), position: v.state.position(), disc_radius: v.disc_radius }
    }

    #[test]
    fn accel_brakes_for_leader() {
        let follower = car(0, 0.0, 0.0, 3.0, 5.0);
        let leader = car(1, 2.0, 0.0, 3.0, 5.0);
        let (a, braking) = surrounding_accel(&follower, &[as_participant(&leader)], &traffic(), 0.1);
        assert_eq!(a, -4.0);
        assert!(braking);
    }

    #[test]
    fn accel_cruises_at_cap() {
        let k = car(0, 0.0, 0.0, 3.0, 5.0);
        let far = car(1, 20.0, 0.0, 3.0, 5.0);
        assert_eq!(surrounding_accel(&k, &[as_participant(&far)], &traffic(), 0.1), (0.0, false));
    }

    #[test]
    fn accel_ignores_laterally_clear_ego() {
        let k = car(0, 0.0, 0.0, 1.0, 5.0);
        let ego = Participant { body: Body::Ego, position: [2.0, 1.1 + 0.9 + 1e-6], disc_radius: 1.1 };
        let (a, braking) = surrounding_accel(&k, &[ego], &traffic(), 0.1);
        assert!(!braking);
        assert_eq!(a, 2.0);
        let ego = Participant { position: [2.0, 2.0], ..ego };
        assert!(surrounding_accel(&k, &[ego], &traffic(), 0.1).1);
    }

    #[test]
    fn accel_ignores_self_and_vehicles_behind() {
        let k = car(0, 0.0, 0.0, 3.0, 5.0);
        let behind = car(1, -1.0, 0.0, 3.0, 5.0);
        let (_, braking) = surrounding_accel(&k, &[as_participant(&k), as_participant(&behind)], &traffic(), 0.1);
        assert!(!braking);
    }

    #[test]
    fn braking_to_exact_stop() {
        let mut world = build_scenario(1.0, 10.0, &ScenarioLayout::default(), &EgoParams::default()).unwrap();
        world.vehicles.truncate(2);
        // Vehicle 1 crawling directly behind vehicle 0.
        world.vehicles[1].state = VehicleState::new(world.vehicles[0].state.px - 3.0, 0.0, 0.2, 0.0);
        world.traffic.refresh(&mut world.vehicles[1]);
        world.ego.px = -100.0;
        let rec = world.step(ControlInput::ZERO);
        assert!((rec.vehicles[1].accel + 2.0).abs() < 1e-12);
        assert_eq!(world.vehicles[1].state.v, 0.0);
    }

    #[test]
    fn steady_platoon_translates() {
        let layout = ScenarioLayout::default();
        let mut world = build_scenario(3.0, 10.0, &layout, &EgoParams::default()).unwrap();
        world.ego = VehicleState::new(-500.0, 3.5, 0.0, 0.0);
        let start: Vec<f64> = world.vehicles.iter().map(|v| v.state.px).collect();
        world.step(ControlInput::ZERO);
        for (v, x0) in world.vehicles.iter().zip(&start) {
            assert!((v.state.px - (x0 + 0.3)).abs() < 1e-12);
            assert_eq!(v.state.v, 3.0);
        }
    }

    #[test]
    fn step_is_deterministic() {
        let world = build_scenario(2.0, 6.0, &ScenarioLayout::default(), &EgoParams::default()).unwrap();
        let (mut a, mut b) = (world.clone(), world);
        let u = ControlInput::new(0.5, -0.05);
        for _ in 0..20 {
            assert_eq!(a.step(u), b.step(u));
        }
        assert_eq!(a, b);
    }

    #[test]
    fn rectangle_examples() {
        let r = Footprint { center: [0.0, 0.0], heading: 0.3, half_length: 2.25, half_width: 0.9 };
        assert!(r.overlaps(&r));
        let a = Footprint { center: [0.0, 0.0], heading: 0.0, half_length: 2.0, half_width: 1.0 };
        let b = Footprint { center: [4.5, 0.0], ..a };
        assert!(!a.overlaps(&b));
        assert!((a.separation(&b) - 0.5).abs() < 1e-12);
        let c = Footprint { center: [3.0, 0.0], ..a };
        assert!((a.separation(&c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_layout_gaps() {
        let ego = EgoParams::default();
        for (v0, d0) in [(2.0, 10.0), (5.0, 8.0), (0.5, 4.0)] {
            let w = build_scenario(v0, d0, &ScenarioLayout::default(), &ego).unwrap();
            assert_eq!(w.vehicles.len(), 8);
            assert!(w.vehicles.iter().all(|v| v.state.v == v0));
            let ego_center = ego.footprint_center(&w.ego)[0];
            assert!(ego_center.abs() < 1e-12);
            let xs = |ids: &[usize]| ids.iter().map(|&i| w.vehicles[i].state.px).collect::<Vec<_>>();
            for lane in [xs(&[0, 1, 2, 3]), xs(&[5, 4]).into_iter().chain([ego_center]).chain(xs(&[6, 7])).collect()] {
                for pair in lane.windows(2) {
                    assert!((pair[0] - pair[1] - 4.5 - d0).abs() < 1e-9, "{lane:?}");
                }
            }
            // Ego longitudinally midway between target-lane vehicles 1 and 2.
            assert!((w.vehicles[1].state.px + w.vehicles[2].state.px).abs() < 1e-9);
            assert!(w.true_collision().is_none());
        }
    }

    #[test]
    fn scenario_rejects_tight_gap() {
        let err = build_scenario(2.0, 0.5, &ScenarioLayout::default(), &EgoParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidScenario(_)));
        assert!(build_scenario(-1.0, 5.0, &ScenarioLayout::default(), &EgoParams::default()).is_err());
    }
}
