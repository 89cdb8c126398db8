//! Potential terms, the universal field, its virtual force and the
//! waypoint queue obtained by stepping along the force direction.
//!
//! Each term is evaluated together with its analytic gradient so that the
//! potential and the force always describe the same function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{PotentialParams, RoadGeometry, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Force2 {
    pub fx: f64,
    pub fy: f64,
}

impl Force2 {
    pub fn norm(&self) -> f64 {
        self.fx.hypot(self.fy)
    }
}

/// Everything one vehicle perceives: the road, itself and the others.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub road: &'a RoadGeometry,
    pub ego: &'a VehicleState,
    pub others: &'a [VehicleState],
}

/// Value and gradient of one potential term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Term {
    value: f64,
    dx: f64,
    dy: f64,
}

impl Term {
    fn flat(value: f64) -> Self {
        Term {
            value,
            dx: 0.0,
            dy: 0.0,
        }
    }
}

fn attractive_term(x: f64, p: &PotentialParams) -> Term {
    let d = x - p.x_target;
    Term {
        value: 0.5 * p.lambda * d * d,
        dx: p.lambda * d,
        dy: 0.0,
    }
}

pub fn attractive_potential(x: f64, p: &PotentialParams) -> f64 {
    attractive_term(x, p).value
}

fn lane_divider_term(x: f64, y: f64, road: &RoadGeometry, p: &PotentialParams) -> Term {
    if !road.has_divider(x) {
        return Term::default();
    }
    let d = y - road.y_lane;
    let s2 = p.sigma_lane * p.sigma_lane;
    let value = p.a_lane * (-d * d / (2.0 * s2)).exp();
    Term {
        value,
        dx: 0.0,
        dy: -value * d / s2,
    }
}

/// Gaussian ridge on the lane divider; zero where the lanes have merged.
pub fn lane_divider_potential(x: f64, y: f64, road: &RoadGeometry, p: &PotentialParams) -> f64 {
    lane_divider_term(x, y, road, p).value
}

/// One edge: `d` is the clearance from the vehicle side to the edge,
/// `dd_dx`/`dd_dy` its partial derivatives.
fn edge_barrier(d: f64, dd_dx: f64, dd_dy: f64, p: &PotentialParams) -> Term {
    if d <= 0.0 {
        return Term::flat(p.u_cap);
    }
    let value = 0.5 * p.xi / (d * d);
    if value >= p.u_cap {
        return Term::flat(p.u_cap);
    }
    let dv_dd = -p.xi / (d * d * d);
    Term {
        value,
        dx: dv_dd * dd_dx,
        dy: dv_dd * dd_dy,
    }
}

fn road_edge_term(x: f64, y: f64, road: &RoadGeometry, width: f64, p: &PotentialParams) -> Term {
    let half = 0.5 * width;
    let (y_lower, slope) = road.lower_edge(x);
    let lower = edge_barrier(y - y_lower - half, -slope, 1.0, p);
    let upper = edge_barrier(road.y_upper - half - y, 0.0, -1.0, p);
    let value = lower.value + upper.value;
    if value >= p.u_cap {
        return Term::flat(p.u_cap);
    }
    Term {
        value,
        dx: lower.dx + upper.dx,
        dy: lower.dy + upper.dy,
    }
}

/// Inverse-square barriers on both road edges, each shifted inward by half
/// the vehicle width and clamped at `u_cap`.
pub fn road_edge_potential(x: f64, y: f64, road: &RoadGeometry, width: f64, p: &PotentialParams) -> f64 {
    road_edge_term(x, y, road, width, p).value
}

/// Braking-distance scale of the obstacle field, floored at the mean wheelbase.
///
/// With `dmin_mass_normalized` the kinetic terms are `v^2 / 2a`; otherwise the
/// mass-weighted `M v^2 / 2a` form is used verbatim.
pub fn min_braking_distance(ego: &VehicleState, obs: &VehicleState, p: &PotentialParams) -> f64 {
    let (m, m_o) = if p.dmin_mass_normalized {
        (1.0, 1.0)
    } else {
        (ego.mass, obs.mass)
    };
    let floor = 0.5 * (ego.wheelbase + obs.wheelbase);
    let d = m * ego.v * ego.v / (2.0 * ego.a_brake_max) - m_o * obs.v * obs.v / (2.0 * obs.a_brake_max) + floor;
    d.max(floor)
}

fn obstacle_term(px: f64, py: f64, obs: &VehicleState, ego: &VehicleState, p: &PotentialParams) -> Term {
    let sigma_x = min_braking_distance(ego, obs, p) * (-1.0 / p.u_thresh.ln()).sqrt();
    // (Y - Y_o)^2 / sigma_y collapses to |Y - Y_o| * s.
    let s = (2.0 * (p.a_obs / p.epsilon).ln()).sqrt();
    let dx = px - obs.x;
    let dy = py - obs.y;
    let sg = if dy > 0.0 {
        1.0
    } else if dy < 0.0 {
        -1.0
    } else {
        0.0
    };
    let psi = obs.psi;
    let c1 = 1.0 - psi * psi;
    let quad = dx * dx / sigma_x + dy.abs() * s - 2.0 * psi * dx * sg * s / sigma_x;
    let value = p.a_obs * (-0.5 * c1 * quad).exp();
    if value >= p.u_cap {
        return Term::flat(p.u_cap);
    }
    let de_dx = -0.5 * c1 * (2.0 * dx / sigma_x - 2.0 * psi * sg * s / sigma_x);
    let de_dy = -0.5 * c1 * sg * s;
    Term {
        value,
        dx: value * de_dx,
        dy: value * de_dy,
    }
}

/// Heading-aware exponential hill around `obs`, as seen by `ego`.
pub fn obstacle_potential(px: f64, py: f64, obs: &VehicleState, ego: &VehicleState, p: &PotentialParams) -> f64 {
    obstacle_term(px, py, obs, ego, p).value
}

/// Per-term values of the universal potential at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialBreakdown {
    pub attractive: f64,
    pub lane_divider: f64,
    pub road_edge: f64,
    pub obstacles: Vec<f64>,
}

impl PotentialBreakdown {
    pub fn total(&self) -> f64 {
        self.attractive + self.lane_divider + self.road_edge + self.obstacles.iter().sum::<f64>()
    }
}

pub fn potential_breakdown(px: f64, py: f64, world: &World<'_>, p: &PotentialParams) -> PotentialBreakdown {
    PotentialBreakdown {
        attractive: attractive_potential(px, p),
        lane_divider: lane_divider_potential(px, py, world.road, p),
        road_edge: road_edge_potential(px, py, world.road, world.ego.width, p),
        obstacles: world
            .others
            .iter()
            .map(|o| obstacle_potential(px, py, o, world.ego, p))
            .collect(),
    }
}

pub fn universal_potential(px: f64, py: f64, world: &World<'_>, p: &PotentialParams) -> f64 {
    potential_breakdown(px, py, world, p).total()
}

/// Negative analytic gradient of [`universal_potential`].
pub fn virtual_force(px: f64, py: f64, world: &World<'_>, p: &PotentialParams) -> Result<Force2> {
    let mut terms = [
        ("attractive", attractive_term(px, p)),
        ("lane_divider", lane_divider_term(px, py, world.road, p)),
        ("road_edge", road_edge_term(px, py, world.road, world.ego.width, p)),
    ]
    .into_iter()
    .chain(
        world
            .others
            .iter()
            .map(|o| ("obstacle", obstacle_term(px, py, o, world.ego, p))),
    );
    let (mut gx, mut gy) = (0.0, 0.0);
    terms.try_for_each(|(name, t)| {
        if t.dx.is_finite() && t.dy.is_finite() {
            gx += t.dx;
            gy += t.dy;
            Ok(())
        } else {
            Err(Error::NumericalDomain { term: name })
        }
    })?;
    Ok(Force2 { fx: -gx, fy: -gy })
}

/// False when `(px, py)` lies within `margin` of a place where the universal
/// potential is not differentiable: a clamp boundary, the divider cut-off,
/// the taper kinks, or the lateral cusp of an obstacle.
pub fn is_smooth_at(px: f64, py: f64, world: &World<'_>, p: &PotentialParams, margin: f64) -> bool {
    let road = world.road;
    if (px - road.x_merge_start).abs() <= margin || (px - road.x_merge_end).abs() <= margin {
        return false;
    }
    if world.others.iter().any(|o| (py - o.y).abs() <= margin) {
        return false;
    }
    let clamp_state = |x: f64, y: f64| {
        let edge = road_edge_term(x, y, road, world.ego.width, p);
        let lower = edge_barrier(y - road.lower_edge(x).0 - 0.5 * world.ego.width, 0.0, 0.0, p);
        let upper = edge_barrier(road.y_upper - 0.5 * world.ego.width - y, 0.0, 0.0, p);
        let obstacles: Vec<bool> = world
            .others
            .iter()
            .map(|o| obstacle_term(x, y, o, world.ego, p).value >= p.u_cap)
            .collect();
        (
            edge.value >= p.u_cap,
            lower.value >= p.u_cap,
            upper.value >= p.u_cap,
            obstacles,
        )
    };
    let centre = clamp_state(px, py);
    [(-margin, -margin), (-margin, margin), (margin, -margin), (margin, margin)]
        .iter()
        .all(|(ox, oy)| clamp_state(px + ox, py + oy) == centre)
}

/// Direction of the virtual force.
pub fn reference_heading(f: Force2) -> Result<f64> {
    if !(f.fx.is_finite() && f.fy.is_finite()) {
        return Err(Error::NumericalDomain { term: "virtual_force" });
    }
    if f.fx == 0.0 && f.fy == 0.0 {
        return Err(Error::LocalMinimum {
            index: 0,
            vehicle: None,
        });
    }
    Ok(f.fy.atan2(f.fx))
}

/// How consecutive waypoints are spaced.
#[derive(Debug, Clone, Copy)]
pub enum StepMode<'a> {
    /// Constant step length in meters.
    Fixed(f64),
    /// Segment `i` has length `speeds[i] * dt`.
    SpeedCoupled { speeds: &'a [f64], dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MinimumPolicy {
    #[default]
    Fail,
    /// Reuse the previous heading and count the event.
    HoldHeading,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WaypointOptions {
    /// Clamp on |heading| relative to the road axis.
    pub heading_limit: Option<f64>,
    pub on_minimum: MinimumPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointQueue {
    /// Starts at the vehicle position.
    pub points: Vec<[f64; 2]>,
    /// One entry per segment, `points.len() - 1` in total.
    pub step_lengths: Vec<f64>,
    /// Number of steps that fell back to the previous heading.
    #[serde(default)]
    pub held_headings: usize,
}

impl WaypointQueue {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[1]).collect()
    }

    pub fn path_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

/// Heading of the step leaving `point`. The flag reports a held heading.
pub fn step_heading(
    point: [f64; 2],
    previous: f64,
    world: &World<'_>,
    p: &PotentialParams,
    opts: &WaypointOptions,
) -> Result<(f64, bool)> {
    let force = virtual_force(point[0], point[1], world, p)?;
    let (heading, held) = match reference_heading(force) {
        Ok(h) => (h, false),
        Err(Error::LocalMinimum { .. }) if opts.on_minimum == MinimumPolicy::HoldHeading => (previous, true),
        Err(e) => return Err(e),
    };
    let heading = match opts.heading_limit {
        Some(limit) => heading.clamp(-limit, limit),
        None => heading,
    };
    Ok((heading, held))
}

/// Steps `n - 1` times along the reference heading, starting from the ego
/// position. The returned queue holds `n` points.
pub fn generate_waypoints(
    world: &World<'_>,
    p: &PotentialParams,
    step: StepMode<'_>,
    n: usize,
    opts: &WaypointOptions,
) -> Result<WaypointQueue> {
    if n < 4 {
        return Err(Error::validation("n", format!("waypoint count must be at least 4, got {n}")));
    }
    let lengths: Vec<f64> = match step {
        StepMode::Fixed(l) => vec![l; n - 1],
        StepMode::SpeedCoupled { speeds, dt } => {
            if speeds.len() < n - 1 {
                return Err(Error::validation(
                    "speeds",
                    format!("need {} segment speeds, got {}", n - 1, speeds.len()),
                ));
            }
            speeds[..n - 1].iter().map(|v| v * dt).collect()
        }
    };
    let mut points = Vec::with_capacity(n);
    let mut cur = [world.ego.x, world.ego.y];
    let mut heading = world.ego.psi;
    let mut held_headings = 0;
    points.push(cur);
    for (i, &l) in lengths.iter().enumerate() {
        let (h, held) = step_heading(cur, heading, world, p, opts).map_err(|e| match e {
            Error::LocalMinimum { vehicle, .. } => Error::LocalMinimum { index: i, vehicle },
            other => other,
        })?;
        heading = h;
        held_headings += usize::from(held);
        cur = [cur[0] + l * heading.cos(), cur[1] + l * heading.sin()];
        points.push(cur);
    }
    Ok(WaypointQueue {
        points,
        step_lengths: lengths,
        held_headings,
    })
}
