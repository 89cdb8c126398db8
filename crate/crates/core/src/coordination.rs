//! Planner variants and the simulated V2V bus that carries shared local
//! paths (SLPs) between vehicles.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{generate_waypoints, MinimumPolicy, StepMode, WaypointOptions, WaypointQueue, World};
use crate::fit::{fit_cubic, queue_weights, CoeffBounds, CubicPath, FitProblem};
use crate::scenario::{FitConfig, IsoConfig, PotentialParams, ScenarioConfig, VehicleSpec, VehicleState};
use crate::speed::{iso_objective, max_speed_cap, optimize_speeds, IsoProblem, IsoWeights, SpeedProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlannerKind {
    /// Constant longitudinal speed.
    #[serde(rename = "PF_CS")]
    PfCs,
    /// Speed planning without the interaction term.
    #[serde(rename = "PF_SP")]
    PfSp,
    /// Interactive speed optimization against received SLPs.
    #[serde(rename = "PF_ISO")]
    PfIso,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 3] = [PlannerKind::PfCs, PlannerKind::PfSp, PlannerKind::PfIso];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerKind::PfCs => "PF_CS",
            PlannerKind::PfSp => "PF_SP",
            PlannerKind::PfIso => "PF_ISO",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "PF_CS" => Ok(PlannerKind::PfCs),
            "PF_SP" => Ok(PlannerKind::PfSp),
            "PF_ISO" => Ok(PlannerKind::PfIso),
            _ => Err(Error::Usage(format!("unknown planner `{s}` (expected PF_CS, PF_SP or PF_ISO)"))),
        }
    }
}

/// A vehicle's predicted waypoints as broadcast to the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlpMessage {
    pub sender: u32,
    pub tick: u64,
    /// `[x, y]` in meters; the first entry is the sender's position.
    pub waypoints: Vec<[f64; 2]>,
    /// One speed per segment.
    #[serde(rename = "speeds_mps")]
    pub speeds: Vec<f64>,
    #[serde(rename = "mass_kg")]
    pub mass: f64,
    #[serde(rename = "wheelbase_m")]
    pub wheelbase: f64,
    #[serde(rename = "width_m")]
    pub width: f64,
    #[serde(rename = "a_brake_max_mps2")]
    pub a_brake_max: f64,
    #[serde(rename = "heading_rad")]
    pub heading: f64,
}

impl SlpMessage {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 4 {
            return Err(Error::validation("waypoints", "an SLP carries at least 4 waypoints"));
        }
        if self.speeds.len() + 1 != self.waypoints.len() {
            return Err(Error::validation("speeds_mps", "one speed per segment required"));
        }
        Ok(())
    }

    /// The sender as it is predicted at waypoint `index`; beyond the end the
    /// last waypoint is held.
    pub fn sender_state_at(&self, index: usize) -> VehicleState {
        let wp = self.waypoints[index.min(self.waypoints.len() - 1)];
        let v = self.speeds[index.min(self.speeds.len() - 1)];
        VehicleState {
            id: self.sender,
            x: wp[0],
            y: wp[1],
            psi: self.heading,
            beta: 0.0,
            v,
            yaw_rate: 0.0,
            mass: self.mass,
            wheelbase: self.wheelbase,
            width: self.width,
            a_brake_max: self.a_brake_max,
        }
    }
}

/// Parameters `plan_step` needs from a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerSettings {
    pub pf: PotentialParams,
    pub iso: IsoConfig,
    pub fit: FitConfig,
    pub on_minimum: MinimumPolicy,
}

impl PlannerSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        PlannerSettings {
            pf: cfg.pf.clone(),
            iso: cfg.iso.clone(),
            fit: cfg.sim.fit.clone(),
            on_minimum: MinimumPolicy::Fail,
        }
    }

    pub fn waypoint_options(&self) -> WaypointOptions {
        WaypointOptions {
            heading_limit: Some(self.iso.heading_limit),
            on_minimum: self.on_minimum,
        }
    }

    pub fn weights(&self) -> IsoWeights {
        IsoWeights {
            w1: self.iso.w1,
            w2: self.iso.w2,
            w3: self.iso.w3,
        }
    }
}

/// One planning cycle's result.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub kind: PlannerKind,
    /// Fixed-step potential-field waypoints the path was fitted to.
    pub waypoints: WaypointQueue,
    pub path: CubicPath,
    pub profile: SpeedProfile,
    pub message: SlpMessage,
    /// Steps that fell back to the previous heading at a field minimum.
    pub held_headings: usize,
}

/// Plans one cycle for `world.ego`.
///
/// The path is the cubic fit of the potential-field waypoints generated
/// with a fixed step from the current speed. Its curvature caps the speeds.
/// The speed profile then depends on `kind`; PF_ISO with an empty inbox
/// plans exactly like PF_SP. The emitted SLP holds the waypoints re-stepped
/// with the planned speeds.
pub fn plan_step(
    kind: PlannerKind,
    world: &World<'_>,
    spec: &VehicleSpec,
    inbox: &[SlpMessage],
    settings: &PlannerSettings,
    tick: u64,
) -> Result<Plan> {
    let me = world.ego;
    let iso = &settings.iso;
    let n = iso.horizon_n;
    let opts = settings.waypoint_options();
    let tag = |e: Error| match e {
        Error::LocalMinimum { index, .. } => Error::LocalMinimum {
            index,
            vehicle: Some(me.id),
        },
        other => other,
    };

    let step = me.v.max(iso.v_geometry_min) * iso.plan_dt;
    let waypoints = generate_waypoints(world, &settings.pf, StepMode::Fixed(step), n, &opts).map_err(tag)?;
    let xs = waypoints.xs();
    let span = xs[n - 1] - xs[0];
    let bounds = CoeffBounds::from_curvature(settings.fit.kappa_max, span, settings.fit.coeff_abs_bound);
    let path = fit_cubic(&FitProblem::from_queue(
        &waypoints,
        queue_weights(n, settings.fit.weight_decay),
        bounds,
    ))?;
    let cap = max_speed_cap(&path, spec.v_limit, iso.mu, iso.g);

    let effective = match kind {
        PlannerKind::PfIso if inbox.is_empty() => PlannerKind::PfSp,
        k => k,
    };
    let (weights, slps) = match effective {
        PlannerKind::PfSp => (IsoWeights { w3: 0.0, ..settings.weights() }, &[][..]),
        _ => (settings.weights(), inbox),
    };
    let problem = IsoProblem {
        world: *world,
        slps,
        weights,
        pf: &settings.pf,
        dt: iso.plan_dt,
        caps: vec![cap; n],
        v_target: spec.v_target,
        v_floor: iso.v_floor,
        waypoint_opts: opts,
        tol: iso.speed_tol,
    };
    let profile = match effective {
        PlannerKind::PfCs => {
            let speeds = vec![me.v.min(cap); n];
            let objective = iso_objective(&problem, &speeds);
            SpeedProfile {
                speeds,
                caps: problem.caps.clone(),
                objective,
            }
        }
        _ => optimize_speeds(&problem),
    };

    let shared = generate_waypoints(
        world,
        &settings.pf,
        StepMode::SpeedCoupled {
            speeds: &profile.speeds,
            dt: iso.plan_dt,
        },
        n,
        &opts,
    )
    .map_err(tag)?;
    let message = SlpMessage {
        sender: me.id,
        tick,
        waypoints: shared.points,
        speeds: profile.speeds[..n - 1].to_vec(),
        mass: me.mass,
        wheelbase: me.wheelbase,
        width: me.width,
        a_brake_max: me.a_brake_max,
        heading: me.psi,
    };
    Ok(Plan {
        kind,
        held_headings: waypoints.held_headings + shared.held_headings,
        waypoints,
        path,
        profile,
        message,
    })
}

/// A bus endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recipient {
    pub id: u32,
    /// False silences the bus for this vehicle.
    pub receive: bool,
}

/// One broadcast message together with the vehicles that received it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlpLogEntry {
    #[serde(flatten)]
    pub message: SlpMessage,
    pub delivered_to: Vec<u32>,
}

pub type Inboxes = BTreeMap<u32, Vec<SlpMessage>>;

/// Result of one exchange: inboxes for the next tick and the log of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub inboxes: Inboxes,
    pub log: Vec<SlpLogEntry>,
}

/// Fans every message out to every other listening vehicle, dropping each
/// delivery independently with `drop_probability`.
///
/// Inboxes are keyed by recipient id and ordered by sender id. Every
/// recipient gets an entry, possibly empty.
pub fn bus_exchange<R: Rng + ?Sized>(
    messages: &[SlpMessage],
    recipients: &[Recipient],
    drop_probability: f64,
    rng: &mut R,
) -> Result<Exchange> {
    let mut sorted: Vec<&SlpMessage> = messages.iter().collect();
    sorted.sort_by_key(|m| m.sender);
    if let Some(w) = sorted.windows(2).find(|w| w[0].sender == w[1].sender) {
        return Err(Error::BusIntegrity {
            sender: w[0].sender,
            tick: w[0].tick,
        });
    }
    let mut targets: Vec<Recipient> = recipients.to_vec();
    targets.sort_by_key(|r| r.id);
    let mut inboxes: Inboxes = targets.iter().map(|r| (r.id, Vec::new())).collect();
    let mut log = Vec::with_capacity(sorted.len());
    for msg in sorted {
        let mut delivered_to = Vec::new();
        for r in targets.iter().filter(|r| r.receive && r.id != msg.sender) {
            let dropped = if drop_probability <= 0.0 {
                false
            } else if drop_probability >= 1.0 {
                true
            } else {
                rng.random_bool(drop_probability)
            };
            if !dropped {
                inboxes.get_mut(&r.id).expect("recipient registered").push(msg.clone());
                delivered_to.push(r.id);
            }
        }
        log.push(SlpLogEntry {
            message: msg.clone(),
            delivered_to,
        });
    }
    Ok(Exchange { inboxes, log })
}

/// Rebuilds the inboxes each tick saw from an SLP log: a message sent at
/// tick `t` sits in the inbox of tick `t + 1`.
pub fn replay_inboxes(entries: &[SlpLogEntry]) -> BTreeMap<u64, Inboxes> {
    let mut out: BTreeMap<u64, Inboxes> = BTreeMap::new();
    for e in entries {
        let tick = out.entry(e.message.tick + 1).or_default();
        for &r in &e.delivered_to {
            tick.entry(r).or_default().push(e.message.clone());
        }
    }
    for inboxes in out.values_mut() {
        for msgs in inboxes.values_mut() {
            msgs.sort_by_key(|m| m.sender);
        }
    }
    out
}

pub fn write_slp_log(path: &Path, entries: &[SlpLogEntry]) -> Result<()> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e).expect("log entry serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_slp_log(path: &Path) -> Result<Vec<SlpLogEntry>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: SlpLogEntry = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        entry.message.validate()?;
        entries.push(entry);
    }
    Ok(entries)
}
