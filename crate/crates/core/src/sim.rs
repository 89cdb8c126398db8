//! Closed-loop simulation of all vehicles.
//!
//! Each tick: deliver the previous tick's SLPs, plan every vehicle in id
//! order, broadcast the new SLPs, then track the first plan segment with
//! pure pursuit plus a proportional speed loop and integrate the vehicle
//! model. Vehicles are modelled as a linear 2-DOF bicycle (sideslip, yaw
//! rate) on a point-mass longitudinal axis.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordination::{bus_exchange, plan_step, Inboxes, Plan, PlannerKind, PlannerSettings, Recipient, SlpLogEntry};
use crate::error::{Error, Result};
use crate::field::{MinimumPolicy, World};
use crate::fit::CubicPath;
use crate::scenario::{road_edge_y, ControlConfig, ScenarioConfig, VehicleModel, VehicleState};

/// Steering and acceleration limits of the actuators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorLimits {
    pub steer_max: f64,
    pub accel_max: f64,
}

impl From<&ControlConfig> for ActuatorLimits {
    fn from(c: &ControlConfig) -> Self {
        ActuatorLimits {
            steer_max: c.steer_max,
            accel_max: c.accel_max,
        }
    }
}

/// Axle geometry and stiffness resolved for one vehicle.
#[derive(Debug, Clone, Copy)]
struct Chassis {
    cf: f64,
    cr: f64,
    lf: f64,
    lr: f64,
    mass: f64,
    iz: f64,
    wheelbase: f64,
}

impl Chassis {
    fn new(state: &VehicleState, model: &VehicleModel) -> Self {
        let lf = model.front_axle_fraction * state.wheelbase;
        let lr = state.wheelbase - lf;
        Chassis {
            cf: model.cornering_front,
            cr: model.cornering_rear,
            lf,
            lr,
            mass: state.mass,
            iz: model.yaw_inertia.unwrap_or(state.mass * lf * lr),
            wheelbase: state.wheelbase,
        }
    }

    /// `(dbeta, dyaw_rate)` of the linear single-track model.
    fn lateral(&self, beta: f64, r: f64, v: f64, steer: f64) -> (f64, f64) {
        let Chassis { cf, cr, lf, lr, mass, iz, .. } = *self;
        let dbeta = -(cf + cr) / (mass * v) * beta + ((cr * lr - cf * lf) / (mass * v * v) - 1.0) * r + cf / (mass * v) * steer;
        let dr = (cr * lr - cf * lf) / iz * beta - (cf * lf * lf + cr * lr * lr) / (iz * v) * r + cf * lf / iz * steer;
        (dbeta, dr)
    }

    /// Sideslip and yaw rate the kinematic bicycle imposes at low speed.
    fn kinematic(&self, v: f64, steer: f64) -> (f64, f64) {
        let beta = (self.lr * steer.tan() / self.wheelbase).atan();
        (beta, v * beta.cos() * steer.tan() / self.wheelbase)
    }

    /// Steady-state `(beta, yaw_rate)` under constant steer and speed.
    pub fn steady_state(&self, v: f64, steer: f64) -> (f64, f64) {
        let Chassis { cf, cr, lf, lr, mass, iz, .. } = *self;
        let a11 = -(cf + cr) / (mass * v);
        let a12 = (cr * lr - cf * lf) / (mass * v * v) - 1.0;
        let a21 = (cr * lr - cf * lf) / iz;
        let a22 = -(cf * lf * lf + cr * lr * lr) / (iz * v);
        let b1 = -cf / (mass * v) * steer;
        let b2 = -cf * lf / iz * steer;
        let det = a11 * a22 - a12 * a21;
        ((b1 * a22 - a12 * b2) / det, (a11 * b2 - a21 * b1) / det)
    }
}

/// Steady-state sideslip and yaw rate of `state`'s chassis at speed `v`.
pub fn steady_state_response(state: &VehicleState, model: &VehicleModel, v: f64, steer: f64) -> (f64, f64) {
    Chassis::new(state, model).steady_state(v, steer)
}

/// Pose part of the state integrated by RK4: x, y, psi, beta, yaw rate.
type Pose = [f64; 5];

fn speed_at(v0: f64, accel: f64, tau: f64) -> f64 {
    (v0 + accel * tau).max(0.0)
}

/// Advances `state` by `dt` under constant steer and acceleration commands.
///
/// Speed follows `v' = accel` exactly (clipped at zero, no reversing); the
/// rest of the state is integrated with fixed-step RK4 on substeps no longer
/// than `model.substep`.
pub fn vehicle_step(
    state: &VehicleState,
    steer: f64,
    accel: f64,
    dt: f64,
    model: &VehicleModel,
    limits: &ActuatorLimits,
) -> Result<VehicleState> {
    let steer = steer.clamp(-limits.steer_max, limits.steer_max);
    let accel = accel.clamp(-state.a_brake_max, limits.accel_max);
    let chassis = Chassis::new(state, model);
    let substeps = (dt / model.substep).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;

    let mut s: Pose = [state.x, state.y, state.psi, state.beta, state.yaw_rate];
    let mut v = state.v;
    for _ in 0..substeps {
        let v0 = v;
        let deriv = |p: &Pose, tau: f64| -> Pose {
            let vv = speed_at(v0, accel, tau);
            let (dbeta, dr) = if vv < model.v_kinematic {
                (0.0, 0.0)
            } else {
                chassis.lateral(p[3], p[4], vv, steer)
            };
            [
                vv * (p[2] + p[3]).cos(),
                vv * (p[2] + p[3]).sin(),
                p[4],
                dbeta,
                dr,
            ]
        };
        let add = |p: &Pose, k: &Pose, f: f64| -> Pose { std::array::from_fn(|i| p[i] + f * k[i]) };
        let k1 = deriv(&s, 0.0);
        let k2 = deriv(&add(&s, &k1, 0.5 * h), 0.5 * h);
        let k3 = deriv(&add(&s, &k2, 0.5 * h), 0.5 * h);
        let k4 = deriv(&add(&s, &k3, h), h);
        s = std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        v = speed_at(v0, accel, h);
        if v < model.v_kinematic {
            let (beta, r) = chassis.kinematic(v, steer);
            s[3] = beta;
            s[4] = r;
        }
    }
    let next = VehicleState {
        x: s[0],
        y: s[1],
        psi: s[2],
        beta: s[3],
        yaw_rate: s[4],
        v,
        ..*state
    };
    if s.iter().chain([&v]).all(|x| x.is_finite()) {
        Ok(next)
    } else {
        Err(Error::DynamicsDivergence {
            vehicle: state.id,
            tick: 0,
        })
    }
}

/// Point on `path` ahead of the vehicle at distance `lookahead`.
fn lookahead_point(state: &VehicleState, path: &CubicPath, lookahead: f64) -> [f64; 2] {
    let dist = |x: f64| (x - state.x).hypot(path.eval(x) - state.y);
    let (mut lo, mut hi) = (state.x, state.x + lookahead);
    if dist(lo) >= lookahead {
        return [hi, path.eval(hi)];
    }
    // dist(lo) < lookahead <= dist(hi)
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if dist(mid) < lookahead {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    [hi, path.eval(hi)]
}

/// Pure-pursuit steering toward the path point `lookahead` meters away.
///
/// Positive steer turns left (counter-clockwise); the result is clamped to
/// `steer_max`.
pub fn pure_pursuit_steer(state: &VehicleState, path: &CubicPath, lookahead: f64, steer_max: f64) -> f64 {
    let target = lookahead_point(state, path, lookahead);
    let (dx, dy) = (target[0] - state.x, target[1] - state.y);
    let ld = dx.hypot(dy);
    if ld == 0.0 {
        return 0.0;
    }
    let alpha = dy.atan2(dx) - state.psi;
    (2.0 * state.wheelbase * alpha.sin() / ld).atan().clamp(-steer_max, steer_max)
}

/// Proportional speed loop clipped to the braking and drive limits.
pub fn speed_track(state: &VehicleState, v_ref: f64, kp: f64, accel_max: f64) -> f64 {
    (kp * (v_ref - state.v)).clamp(-state.a_brake_max, accel_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub beta: f64,
    pub yaw_rate: f64,
    pub v: f64,
    pub steer: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrace {
    pub id: u32,
    pub planner: PlannerKind,
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "t,x,y,psi,beta,yaw_rate,v,steer,accel";

impl VehicleTrace {
    /// CSV with [`TRACE_HEADER`]; floats use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 120);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t, r.x, r.y, r.psi, r.beta, r.yaw_rate, r.v, r.steer, r.accel
            ));
        }
        out
    }
}

pub fn write_trace_csv(path: &Path, trace: &VehicleTrace) -> Result<()> {
    fs::write(path, trace.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_csv(&text, path)
}

pub fn parse_trace_csv(text: &str, origin: &Path) -> Result<Vec<TraceRecord>> {
    let schema = |line: usize, message: String| Error::Schema {
        path: origin.to_path_buf(),
        line,
        column: 1,
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(schema(1, format!("expected header `{TRACE_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let vals: Vec<f64> = l
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| schema(i + 2, format!("{e}")))?;
            if vals.len() != 9 {
                return Err(schema(i + 2, format!("expected 9 columns, got {}", vals.len())));
            }
            Ok(TraceRecord {
                t: vals[0],
                x: vals[1],
                y: vals[2],
                psi: vals[3],
                beta: vals[4],
                yaw_rate: vals[5],
                v: vals[6],
                steer: vals[7],
                accel: vals[8],
            })
        })
        .collect()
}

/// Motion-state summary of one vehicle's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub id: u32,
    pub max_abs_beta_rad: f64,
    pub max_abs_yaw_rate_radps: f64,
    pub max_abs_psi_rad: f64,
    pub min_speed_mps: f64,
    pub path_length_m: f64,
    /// RMS of the high-passed lateral position.
    pub lateral_oscillation_rms_m: f64,
}

/// Corner frequency of the oscillation high-pass.
pub const OSCILLATION_CUTOFF_HZ: f64 = 0.5;

/// Second-order Butterworth high-pass (bilinear transform), primed with the
/// first sample so a constant input yields zero output.
pub fn high_pass(signal: &[f64], cutoff_hz: f64, dt: f64) -> Vec<f64> {
    let Some(&first) = signal.first() else {
        return Vec::new();
    };
    let k = (std::f64::consts::PI * cutoff_hz * dt).tan();
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
    let (b0, b1, b2) = (norm, -2.0 * norm, norm);
    let a1 = 2.0 * (k * k - 1.0) * norm;
    let a2 = (1.0 - sqrt2 * k + k * k) * norm;
    let (mut x1, mut x2, mut y1, mut y2) = (first, first, 0.0, 0.0);
    signal
        .iter()
        .map(|&x| {
            let y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Records up to and including the first one at or past `finish`.
pub fn course_window(records: &[TraceRecord], finish: f64) -> &[TraceRecord] {
    match records.iter().position(|r| r.x >= finish) {
        Some(i) => &records[..=i],
        None => records,
    }
}

/// Metrics over the course: the trace is cut at the finish-line crossing and
/// the path length stops exactly at `finish`.
pub fn compute_metrics(id: u32, records: &[TraceRecord], dt: f64, finish: f64) -> RunMetrics {
    let records = course_window(records, finish);
    let max_abs = |f: fn(&TraceRecord) -> f64| records.iter().map(|r| f(r).abs()).fold(0.0, f64::max);
    let path_length_m = records
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let full = (b.x - a.x).hypot(b.y - a.y);
            if b.x > finish && a.x < finish {
                full * (finish - a.x) / (b.x - a.x)
            } else {
                full
            }
        })
        .sum();
    let ys: Vec<f64> = records.iter().map(|r| r.y).collect();
    let filtered = high_pass(&ys, OSCILLATION_CUTOFF_HZ, dt);
    let rms = if filtered.is_empty() {
        0.0
    } else {
        (filtered.iter().map(|v| v * v).sum::<f64>() / filtered.len() as f64).sqrt()
    };
    RunMetrics {
        id,
        max_abs_beta_rad: max_abs(|r| r.beta),
        max_abs_yaw_rate_radps: max_abs(|r| r.yaw_rate),
        max_abs_psi_rad: max_abs(|r| r.psi),
        min_speed_mps: records.iter().map(|r| r.v).fold(f64::INFINITY, f64::min),
        path_length_m,
        lateral_oscillation_rms_m: rms,
    }
}

/// Run-level facts beyond the per-vehicle metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ticks: u64,
    pub dt_s: f64,
    pub all_finished: bool,
    /// Smallest center-to-center distance between any two vehicles.
    pub min_separation_m: f64,
    pub collision: bool,
    /// Smallest gap between a vehicle's side and the road edge; negative
    /// means a vehicle left the road.
    pub min_edge_clearance_m: f64,
    /// Waypoint steps that fell back to the previous heading, per vehicle id.
    pub held_headings: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: RunSummary,
    pub metrics: Vec<RunMetrics>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub traces: Vec<VehicleTrace>,
    pub report: RunReport,
    pub slp_log: Vec<SlpLogEntry>,
    /// Inboxes as delivered, keyed by the tick that consumed them.
    pub inboxes: BTreeMap<u64, Inboxes>,
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("simulation aborted at tick {tick}: {error}")]
pub struct RunFailure {
    pub tick: u64,
    #[source]
    pub error: Error,
    pub partial: Box<RunOutput>,
}

/// Tick-by-tick driver behind [`run_scenario`].
pub struct Simulation {
    cfg: ScenarioConfig,
    settings: PlannerSettings,
    states: Vec<VehicleState>,
    inbox: Inboxes,
    rng: ChaCha8Rng,
    tick: u64,
    traces: Vec<VehicleTrace>,
    slp_log: Vec<SlpLogEntry>,
    inboxes: BTreeMap<u64, Inboxes>,
    min_separation: f64,
    min_edge_clearance: f64,
    held: BTreeMap<u32, usize>,
    last_plans: Vec<Plan>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut cfg = cfg.clone();
        cfg.vehicles.sort_by_key(|v| v.state.id);
        let mut settings = PlannerSettings::from_config(&cfg);
        settings.on_minimum = MinimumPolicy::HoldHeading;
        let states: Vec<VehicleState> = cfg.vehicles.iter().map(|v| v.state).collect();
        let traces = cfg
            .vehicles
            .iter()
            .map(|v| VehicleTrace {
                id: v.state.id,
                planner: v.planner,
                records: Vec::new(),
            })
            .collect();
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(cfg.sim.seed),
            inbox: states.iter().map(|s| (s.id, Vec::new())).collect(),
            held: states.iter().map(|s| (s.id, 0)).collect(),
            settings,
            states,
            tick: 0,
            traces,
            slp_log: Vec::new(),
            inboxes: BTreeMap::new(),
            min_separation: f64::INFINITY,
            min_edge_clearance: f64::INFINITY,
            last_plans: Vec::new(),
            cfg,
        };
        sim.update_extremes();
        Ok(sim)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.sim.dt
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// Plans of the most recent tick, in vehicle-id order.
    pub fn last_plans(&self) -> &[Plan] {
        &self.last_plans
    }

    pub fn is_done(&self) -> bool {
        let finish = self.cfg.finish_line();
        self.time() >= self.cfg.sim.duration - 1e-9 || self.states.iter().all(|s| s.x >= finish)
    }

    fn update_extremes(&mut self) {
        for s in &self.states {
            let (lower, upper) = road_edge_y(&self.cfg.road, s.x);
            let clearance = (s.y - lower).min(upper - s.y) - 0.5 * s.width;
            self.min_edge_clearance = self.min_edge_clearance.min(clearance);
        }
        for i in 0..self.states.len() {
            for j in i + 1..self.states.len() {
                let (a, b) = (&self.states[i], &self.states[j]);
                self.min_separation = self.min_separation.min((a.x - b.x).hypot(a.y - b.y));
            }
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<()> {
        let tick = self.tick;
        let t = self.time();
        let inbox = std::mem::take(&mut self.inbox);
        self.inboxes.insert(tick, inbox.clone());

        let mut plans = Vec::with_capacity(self.states.len());
        for (i, spec) in self.cfg.vehicles.iter().enumerate() {
            let me = self.states[i];
            let others: Vec<VehicleState> = self
                .states
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| *s)
                .collect();
            let world = World {
                road: &self.cfg.road,
                ego: &me,
                others: &others,
            };
            let received = inbox.get(&me.id).map(Vec::as_slice).unwrap_or(&[]);
            let plan = plan_step(spec.planner, &world, spec, received, &self.settings, tick)?;
            *self.held.entry(me.id).or_default() += plan.held_headings;
            plans.push(plan);
        }

        let messages: Vec<_> = plans.iter().map(|p| p.message.clone()).collect();
        let recipients: Vec<Recipient> = self
            .cfg
            .vehicles
            .iter()
            .map(|v| Recipient {
                id: v.state.id,
                receive: v.receive_slp,
            })
            .collect();
        let exchange = bus_exchange(&messages, &recipients, self.cfg.sim.drop_probability, &mut self.rng)?;
        self.slp_log.extend(exchange.log);

        let control = &self.cfg.sim.control;
        let limits = ActuatorLimits::from(control);
        let mut next_states = Vec::with_capacity(self.states.len());
        for (i, plan) in plans.iter().enumerate() {
            let s = &self.states[i];
            let lookahead = control.lookahead_base + control.lookahead_gain * s.v;
            let steer = pure_pursuit_steer(s, &plan.path, lookahead, control.steer_max);
            let accel = speed_track(s, plan.profile.speeds[0], control.kp_speed, control.accel_max);
            self.traces[i].records.push(TraceRecord {
                t,
                x: s.x,
                y: s.y,
                psi: s.psi,
                beta: s.beta,
                yaw_rate: s.yaw_rate,
                v: s.v,
                steer,
                accel: accel.clamp(-s.a_brake_max, limits.accel_max),
            });
            let next = vehicle_step(s, steer, accel, self.cfg.sim.dt, &self.cfg.sim.vehicle_model, &limits).map_err(|e| match e {
                Error::DynamicsDivergence { vehicle, .. } => Error::DynamicsDivergence { vehicle, tick },
                other => other,
            })?;
            next_states.push(next);
        }
        self.states = next_states;
        self.inbox = exchange.inboxes;
        self.last_plans = plans;
        self.tick += 1;
        self.update_extremes();
        Ok(())
    }

    fn output(&self) -> RunOutput {
        let dt = self.cfg.sim.dt;
        let finish = self.cfg.finish_line();
        let metrics = self.traces.iter().map(|t| compute_metrics(t.id, &t.records, dt, finish)).collect();
        let half_widths_min = self
            .states
            .iter()
            .flat_map(|a| self.states.iter().filter(move |b| b.id != a.id).map(move |b| 0.5 * (a.width + b.width)))
            .fold(f64::INFINITY, f64::min);
        RunOutput {
            traces: self.traces.clone(),
            report: RunReport {
                summary: RunSummary {
                    ticks: self.tick,
                    dt_s: dt,
                    all_finished: self.states.iter().all(|s| s.x >= finish),
                    min_separation_m: self.min_separation,
                    collision: self.min_separation <= half_widths_min,
                    min_edge_clearance_m: self.min_edge_clearance,
                    held_headings: self.held.clone(),
                },
                metrics,
            },
            slp_log: self.slp_log.clone(),
            inboxes: self.inboxes.clone(),
        }
    }

    pub fn finish(self) -> RunOutput {
        self.output()
    }
}

/// Runs a scenario to its duration or until every vehicle has crossed the
/// finish line.
pub fn run_scenario(cfg: &ScenarioConfig) -> std::result::Result<RunOutput, RunFailure> {
    let mut sim = Simulation::new(cfg).map_err(|error| RunFailure {
        tick: 0,
        error,
        partial: Box::new(RunOutput {
            traces: Vec::new(),
            report: RunReport {
                summary: RunSummary {
                    ticks: 0,
                    dt_s: cfg.sim.dt,
                    all_finished: false,
                    min_separation_m: f64::INFINITY,
                    collision: false,
                    min_edge_clearance_m: f64::INFINITY,
                    held_headings: BTreeMap::new(),
                },
                metrics: Vec::new(),
            },
            slp_log: Vec::new(),
            inboxes: BTreeMap::new(),
        }),
    })?;
    while !sim.is_done() {
        if let Err(error) = sim.step() {
            return Err(RunFailure {
                tick: sim.tick(),
                error,
                partial: Box::new(sim.output()),
            });
        }
    }
    Ok(sim.finish())
}

pub fn write_report_json(path: &Path, report: &RunReport) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let body = serde_json::to_string_pretty(report).expect("report serializes");
    f.write_all(body.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(|e| Error::io(path, e))
}
