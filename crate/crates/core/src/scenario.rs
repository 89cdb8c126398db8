//! Domain types, the scenario file format and road-geometry queries.
//!
//! Scenario files are JSON. Field names carry their unit as a suffix
//! (`_m`, `_mps`, `_rad`, ...) and the top level is always
//! `road`, `vehicles`, `pf`, `iso`, `sim`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coordination::PlannerKind;
use crate::error::{Error, Result};

/// Straight two-lane road whose lower lane tapers into the upper one.
///
/// The lower edge is `y_bottom` before the taper, follows the line
/// `k_sl * x + b` across `[x_merge_start, x_merge_end]` and sits on the old
/// lane divider `y_lane` afterwards. `k_sl` and `b` are derived from the two
/// continuity conditions and never read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoadGeometryFile", into = "RoadGeometryFile")]
pub struct RoadGeometry {
    pub y_bottom: f64,
    pub y_lane: f64,
    pub y_upper: f64,
    pub x_merge_start: f64,
    pub x_merge_end: f64,
    pub lane_width: f64,
    k_sl: f64,
    b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadGeometryFile {
    y_bottom_m: f64,
    y_lane_m: f64,
    y_upper_m: f64,
    x_merge_start_m: f64,
    x_merge_end_m: f64,
    lane_width_m: f64,
}

impl TryFrom<RoadGeometryFile> for RoadGeometry {
    type Error = Error;

    fn try_from(f: RoadGeometryFile) -> Result<Self> {
        RoadGeometry::new(
            f.y_bottom_m,
            f.y_lane_m,
            f.y_upper_m,
            f.x_merge_start_m,
            f.x_merge_end_m,
            f.lane_width_m,
        )
    }
}

impl From<RoadGeometry> for RoadGeometryFile {
    fn from(r: RoadGeometry) -> Self {
        RoadGeometryFile {
            y_bottom_m: r.y_bottom,
            y_lane_m: r.y_lane,
            y_upper_m: r.y_upper,
            x_merge_start_m: r.x_merge_start,
            x_merge_end_m: r.x_merge_end,
            lane_width_m: r.lane_width,
        }
    }
}

impl RoadGeometry {
    pub fn new(
        y_bottom: f64,
        y_lane: f64,
        y_upper: f64,
        x_merge_start: f64,
        x_merge_end: f64,
        lane_width: f64,
    ) -> Result<Self> {
        let all = [y_bottom, y_lane, y_upper, x_merge_start, x_merge_end, lane_width];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("road", "all road fields must be finite"));
        }
        if x_merge_start >= x_merge_end {
            return Err(Error::validation(
                "road.x_merge_start_m",
                format!("must be below x_merge_end_m ({x_merge_start} >= {x_merge_end})"),
            ));
        }
        if !(y_bottom < y_lane && y_lane < y_upper) {
            return Err(Error::validation(
                "road.y_lane_m",
                "requires y_bottom_m < y_lane_m < y_upper_m",
            ));
        }
        if lane_width <= 0.0 {
            return Err(Error::validation("road.lane_width_m", "must be positive"));
        }
        let k_sl = (y_lane - y_bottom) / (x_merge_end - x_merge_start);
        Ok(RoadGeometry {
            y_bottom,
            y_lane,
            y_upper,
            x_merge_start,
            x_merge_end,
            lane_width,
            k_sl,
            b: y_bottom - k_sl * x_merge_start,
        })
    }

    /// Slope of the taper line.
    pub fn k_sl(&self) -> f64 {
        self.k_sl
    }

    /// Intercept of the taper line.
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn lower_lane_center(&self) -> f64 {
        0.5 * (self.y_bottom + self.y_lane)
    }

    pub fn upper_lane_center(&self) -> f64 {
        0.5 * (self.y_lane + self.y_upper)
    }

    /// True where the two-lane section (and thus the divider) exists.
    pub fn has_divider(&self, x: f64) -> bool {
        x < self.x_merge_start
    }

    /// Lower edge and its slope `dy/dx` at `x`.
    pub fn lower_edge(&self, x: f64) -> (f64, f64) {
        if x < self.x_merge_start {
            (self.y_bottom, 0.0)
        } else if x <= self.x_merge_end {
            // Interpolation form of k_sl * x + b: exact at both endpoints.
            (self.y_bottom + self.k_sl * (x - self.x_merge_start), self.k_sl)
        } else {
            (self.y_lane, 0.0)
        }
    }
}

/// Returns `(y_lower, y_upper)` of the drivable area at longitudinal position `x`.
pub fn road_edge_y(road: &RoadGeometry, x: f64) -> (f64, f64) {
    (road.lower_edge(x).0, road.y_upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleState {
    pub id: u32,
    #[serde(rename = "x_m")]
    pub x: f64,
    #[serde(rename = "y_m")]
    pub y: f64,
    #[serde(rename = "psi_rad", default)]
    pub psi: f64,
    #[serde(rename = "beta_rad", default)]
    pub beta: f64,
    #[serde(rename = "v_mps")]
    pub v: f64,
    #[serde(rename = "yaw_rate_radps", default)]
    pub yaw_rate: f64,
    #[serde(rename = "mass_kg")]
    pub mass: f64,
    #[serde(rename = "wheelbase_m")]
    pub wheelbase: f64,
    #[serde(rename = "width_m")]
    pub width: f64,
    #[serde(rename = "a_brake_max_mps2")]
    pub a_brake_max: f64,
}

impl VehicleState {
    /// Mid-size sedan defaults at the given pose and speed.
    pub fn sedan(id: u32, x: f64, y: f64, v: f64) -> Self {
        VehicleState {
            id,
            x,
            y,
            psi: 0.0,
            beta: 0.0,
            v,
            yaw_rate: 0.0,
            mass: 1500.0,
            wheelbase: 2.7,
            width: 1.8,
            a_brake_max: 8.0,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let finite = [
            self.x,
            self.y,
            self.psi,
            self.beta,
            self.v,
            self.yaw_rate,
            self.mass,
            self.wheelbase,
            self.width,
            self.a_brake_max,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(field, "all state fields must be finite"));
        }
        let positive = [
            ("v_mps", self.v >= 0.0),
            ("mass_kg", self.mass > 0.0),
            ("wheelbase_m", self.wheelbase > 0.0),
            ("width_m", self.width > 0.0),
            ("a_brake_max_mps2", self.a_brake_max > 0.0),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(Error::validation(format!("{field}.{name}"), "out of range"));
            }
        }
        Ok(())
    }
}

/// Gains and shape constants of every potential term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialParams {
    pub lambda: f64,
    #[serde(rename = "x_target_m")]
    pub x_target: f64,
    pub a_lane: f64,
    #[serde(rename = "sigma_lane_m")]
    pub sigma_lane: f64,
    pub xi: f64,
    pub a_obs: f64,
    pub epsilon: f64,
    /// Normalized potential level reached at longitudinal distance `D_min`.
    pub u_thresh: f64,
    pub u_cap: f64,
    /// Divide the kinetic terms of `D_min` by the vehicle masses.
    #[serde(default = "default_true")]
    pub dmin_mass_normalized: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PotentialParams {
    fn default() -> Self {
        PotentialParams {
            lambda: 5e-4,
            x_target: 2000.0,
            a_lane: 0.1,
            sigma_lane: 0.7,
            xi: 0.01,
            a_obs: 1.0,
            epsilon: 1e-3,
            u_thresh: 0.5,
            u_cap: 1e4,
            dmin_mass_normalized: true,
        }
    }
}

impl PotentialParams {
    pub fn validate(&self) -> Result<()> {
        let gains = [
            ("pf.lambda", self.lambda),
            ("pf.a_lane", self.a_lane),
            ("pf.sigma_lane_m", self.sigma_lane),
            ("pf.xi", self.xi),
            ("pf.a_obs", self.a_obs),
            ("pf.epsilon", self.epsilon),
            ("pf.u_cap", self.u_cap),
        ];
        for (name, v) in gains {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(name, "must be strictly positive"));
            }
        }
        if !self.x_target.is_finite() {
            return Err(Error::validation("pf.x_target_m", "must be finite"));
        }
        if !(self.u_thresh > 0.0 && self.u_thresh < 1.0) {
            return Err(Error::validation("pf.u_thresh", "must lie in (0, 1)"));
        }
        if self.epsilon >= self.a_obs {
            return Err(Error::validation("pf.epsilon", "must be below a_obs"));
        }
        Ok(())
    }

    /// Multiplies every amplitude (lambda, a_lane, xi, a_obs) by `k`.
    ///
    /// `epsilon` and `u_cap` scale along so that the obstacle shape and the
    /// clamp level stay put relative to the amplitudes.
    pub fn scaled_amplitudes(&self, k: f64) -> Self {
        PotentialParams {
            lambda: self.lambda * k,
            a_lane: self.a_lane * k,
            xi: self.xi * k,
            a_obs: self.a_obs * k,
            epsilon: self.epsilon * k,
            u_cap: self.u_cap * k,
            ..self.clone()
        }
    }
}

/// Per-vehicle entry of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub state: VehicleState,
    pub planner: PlannerKind,
    #[serde(rename = "v_target_mps")]
    pub v_target: f64,
    #[serde(rename = "v_limit_mps")]
    pub v_limit: f64,
    /// Whether this vehicle listens to the V2V bus.
    #[serde(default = "default_true")]
    pub receive_slp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Waypoints per plan, including the current position.
    pub horizon_n: usize,
    /// Time between consecutive planned waypoints.
    #[serde(rename = "plan_dt_s")]
    pub plan_dt: f64,
    #[serde(rename = "v_floor_mps")]
    pub v_floor: f64,
    pub mu: f64,
    #[serde(rename = "g_mps2")]
    pub g: f64,
    /// Waypoint headings are limited to this angle from the road axis.
    #[serde(rename = "heading_limit_rad")]
    pub heading_limit: f64,
    #[serde(rename = "speed_tol_mps")]
    pub speed_tol: f64,
    /// Lower bound on the step used for the geometric (tracked) path.
    #[serde(rename = "v_geometry_min_mps")]
    pub v_geometry_min: f64,
}

impl Default for IsoConfig {
    fn default() -> Self {
        IsoConfig {
            w1: 1.0,
            w2: 1.0,
            w3: 10.0,
            horizon_n: 25,
            plan_dt: 0.2,
            v_floor: 0.1,
            mu: 0.9,
            g: 9.81,
            heading_limit: 0.6,
            speed_tol: 1e-4,
            v_geometry_min: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Curvature bound used to derive the a2/a3 coefficient box.
    #[serde(rename = "kappa_max_inv_m")]
    pub kappa_max: f64,
    /// Linear weight decay along the queue; 0 gives unit weights.
    pub weight_decay: f64,
    /// Bound on |a0| and |a1|.
    pub coeff_abs_bound: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kappa_max: 0.1,
            weight_decay: 0.0,
            coeff_abs_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(rename = "lookahead_base_m")]
    pub lookahead_base: f64,
    #[serde(rename = "lookahead_gain_s")]
    pub lookahead_gain: f64,
    #[serde(rename = "kp_speed_per_s")]
    pub kp_speed: f64,
    #[serde(rename = "steer_max_rad")]
    pub steer_max: f64,
    #[serde(rename = "accel_max_mps2")]
    pub accel_max: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            lookahead_base: 6.0,
            lookahead_gain: 0.5,
            kp_speed: 1.0,
            steer_max: 0.5,
            accel_max: 3.0,
        }
    }
}

/// Linear 2-DOF bicycle parameters shared by all vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleModel {
    #[serde(rename = "cornering_front_n_per_rad")]
    pub cornering_front: f64,
    #[serde(rename = "cornering_rear_n_per_rad")]
    pub cornering_rear: f64,
    /// Yaw inertia; `None` uses `mass * l_f * l_r`.
    #[serde(rename = "yaw_inertia_kgm2", default)]
    pub yaw_inertia: Option<f64>,
    /// Share of the wheelbase between the center of gravity and the front axle.
    pub front_axle_fraction: f64,
    #[serde(rename = "substep_s")]
    pub substep: f64,
    /// Below this speed the kinematic model replaces the linear one.
    #[serde(rename = "v_kinematic_mps")]
    pub v_kinematic: f64,
}

impl Default for VehicleModel {
    fn default() -> Self {
        VehicleModel {
            cornering_front: 80_000.0,
            cornering_rear: 80_000.0,
            yaw_inertia: None,
            front_axle_fraction: 0.5,
            substep: 0.01,
            v_kinematic: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "dt_s")]
    pub dt: f64,
    #[serde(rename = "duration_s")]
    pub duration: f64,
    pub seed: u64,
    pub drop_probability: f64,
    /// Defaults to `x_merge_end + 100 m` when absent.
    #[serde(rename = "finish_line_m", default)]
    pub finish_line: Option<f64>,
    pub fit: FitConfig,
    pub control: ControlConfig,
    pub vehicle_model: VehicleModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            duration: 40.0,
            seed: 0,
            drop_probability: 0.0,
            finish_line: None,
            fit: FitConfig::default(),
            control: ControlConfig::default(),
            vehicle_model: VehicleModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub road: RoadGeometry,
    pub vehicles: Vec<VehicleSpec>,
    pub pf: PotentialParams,
    pub iso: IsoConfig,
    pub sim: SimConfig,
}

impl ScenarioConfig {
    /// The urgent merge: the ego (id 1, 20 m/s) must leave the ending lower
    /// lane while the obstacle (id 2, 15 m/s) drives slightly ahead in the
    /// upper lane. Geometry is a reconstruction, not measured data.
    pub fn default_merge() -> Self {
        let road = RoadGeometry::new(0.0, 3.5, 7.0, 160.0, 280.0, 3.5).expect("static geometry");
        let ego = VehicleSpec {
            state: VehicleState::sedan(1, 0.0, road.lower_lane_center(), 20.0),
            planner: PlannerKind::PfIso,
            v_target: 20.0,
            v_limit: 22.2,
            receive_slp: true,
        };
        let obstacle = VehicleSpec {
            state: VehicleState::sedan(2, 50.0, road.upper_lane_center(), 15.0),
            planner: PlannerKind::PfIso,
            v_target: 15.0,
            v_limit: 22.2,
            receive_slp: true,
        };
        ScenarioConfig {
            road,
            vehicles: vec![ego, obstacle],
            pf: PotentialParams::default(),
            iso: IsoConfig::default(),
            sim: SimConfig::default(),
        }
    }

    pub fn finish_line(&self) -> f64 {
        self.sim.finish_line.unwrap_or(self.road.x_merge_end + 100.0)
    }

    /// Returns a copy with every vehicle switched to `kind`.
    pub fn with_planner(&self, kind: PlannerKind) -> Self {
        let mut cfg = self.clone();
        for v in &mut cfg.vehicles {
            v.planner = kind;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.vehicles.is_empty() {
            return Err(Error::validation("vehicles", "at least one vehicle required"));
        }
        let mut ids: Vec<u32> = self.vehicles.iter().map(|v| v.state.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("vehicles", "vehicle ids must be unique"));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            let field = format!("vehicles.{i}.state");
            v.state.validate(&field)?;
            if v.state.psi.abs() >= 1.0 {
                return Err(Error::validation(
                    format!("{field}.psi_rad"),
                    "heading must satisfy |psi| < 1 rad",
                ));
            }
            if !(v.v_target.is_finite() && v.v_target > 0.0) {
                return Err(Error::validation(format!("vehicles.{i}.v_target_mps"), "must be positive"));
            }
            if !(v.v_limit.is_finite() && v.v_limit > 0.0) {
                return Err(Error::validation(format!("vehicles.{i}.v_limit_mps"), "must be positive"));
            }
        }
        self.pf.validate()?;

        let iso = &self.iso;
        for (name, w) in [("iso.w1", iso.w1), ("iso.w2", iso.w2), ("iso.w3", iso.w3)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::validation(name, "weights must be non-negative"));
            }
        }
        if iso.w1 == 0.0 && iso.w2 == 0.0 && iso.w3 == 0.0 {
            return Err(Error::validation("iso.w1", "weights must not all be zero"));
        }
        if iso.horizon_n < 4 {
            return Err(Error::validation(
                "iso.horizon_n",
                format!("at least 4 waypoints are needed for the cubic fit, got {}", iso.horizon_n),
            ));
        }
        positive("iso.plan_dt_s", iso.plan_dt)?;
        positive("iso.v_floor_mps", iso.v_floor)?;
        positive("iso.g_mps2", iso.g)?;
        positive("iso.speed_tol_mps", iso.speed_tol)?;
        positive("iso.v_geometry_min_mps", iso.v_geometry_min)?;
        if !(iso.mu > 0.0 && iso.mu <= 1.2) {
            return Err(Error::validation("iso.mu", "must lie in (0, 1.2]"));
        }
        if !(iso.heading_limit > 0.0 && iso.heading_limit < std::f64::consts::FRAC_PI_2) {
            return Err(Error::validation("iso.heading_limit_rad", "must lie in (0, pi/2)"));
        }

        let sim = &self.sim;
        positive("sim.dt_s", sim.dt)?;
        positive("sim.duration_s", sim.duration)?;
        if !(0.0..=1.0).contains(&sim.drop_probability) {
            return Err(Error::validation("sim.drop_probability", "must lie in [0, 1]"));
        }
        if let Some(x) = sim.finish_line {
            if !x.is_finite() {
                return Err(Error::validation("sim.finish_line_m", "must be finite"));
            }
        }
        positive("sim.fit.kappa_max_inv_m", sim.fit.kappa_max)?;
        positive("sim.fit.coeff_abs_bound", sim.fit.coeff_abs_bound)?;
        if !(0.0..1.0).contains(&sim.fit.weight_decay) {
            return Err(Error::validation("sim.fit.weight_decay", "must lie in [0, 1)"));
        }
        let c = &sim.control;
        positive("sim.control.lookahead_base_m", c.lookahead_base)?;
        if !(c.lookahead_gain.is_finite() && c.lookahead_gain >= 0.0) {
            return Err(Error::validation("sim.control.lookahead_gain_s", "must be non-negative"));
        }
        positive("sim.control.kp_speed_per_s", c.kp_speed)?;
        if c.kp_speed * sim.dt > 1.0 {
            return Err(Error::validation(
                "sim.control.kp_speed_per_s",
                "kp_speed * dt must not exceed 1 (speed loop would overshoot)",
            ));
        }
        positive("sim.control.steer_max_rad", c.steer_max)?;
        positive("sim.control.accel_max_mps2", c.accel_max)?;
        let m = &sim.vehicle_model;
        positive("sim.vehicle_model.cornering_front_n_per_rad", m.cornering_front)?;
        positive("sim.vehicle_model.cornering_rear_n_per_rad", m.cornering_rear)?;
        if let Some(iz) = m.yaw_inertia {
            positive("sim.vehicle_model.yaw_inertia_kgm2", iz)?;
        }
        if !(m.front_axle_fraction > 0.0 && m.front_axle_fraction < 1.0) {
            return Err(Error::validation("sim.vehicle_model.front_axle_fraction", "must lie in (0, 1)"));
        }
        positive("sim.vehicle_model.substep_s", m.substep)?;
        positive("sim.vehicle_model.v_kinematic_mps", m.v_kinematic)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| json_error(origin, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override; `key` is a dotted path into the
    /// JSON form (array elements by index, e.g. `vehicles.0.v_target_mps`).
    #[must_use = "returns the updated config"]
    pub fn apply_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not of the form key=value")))?;
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let slot = lookup_mut(&mut doc, key.trim())
            .ok_or_else(|| Error::Usage(format!("unknown override key `{key}`")))?;
        let raw = raw.trim();
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let cfg: ScenarioConfig = serde_json::from_value(doc).map_err(|e| Error::Validation {
            field: key.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every dotted key accepted by [`ScenarioConfig::apply_override`] for this config.
    pub fn override_keys(&self) -> Vec<String> {
        let doc = serde_json::to_value(self).expect("config serializes");
        let mut keys = Vec::new();
        collect_keys(&doc, String::new(), &mut keys);
        keys
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, "must be strictly positive"))
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn lookup_mut<'a>(doc: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    let mut cur = doc;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part)?,
            Value::Array(items) => items.get_mut(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn collect_keys(v: &Value, prefix: String, out: &mut Vec<String>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                collect_keys(child, join(k), out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                collect_keys(child, join(&i.to_string()), out);
            }
        }
        _ => out.push(prefix),
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_json_str(&text, path)
}

pub fn save_scenario(path: impl AsRef<Path>, cfg: &ScenarioConfig) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cfg.to_json() + "\n").map_err(|e| Error::io(path, e))
}
