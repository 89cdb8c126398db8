#![allow(dead_code)]

pub mod invariants;
pub mod oracles;

use pfiso::field::{MinimumPolicy, WaypointOptions, World};
use pfiso::scenario::{PotentialParams, RoadGeometry};
use pfiso::speed::{IsoProblem, IsoWeights};
use pfiso::{ScenarioConfig, SlpMessage, VehicleState};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn default_road() -> RoadGeometry {
    ScenarioConfig::default_merge().road
}

/// `[x_min, x_max, y_min, y_max]` of the default road up to the finish line.
pub fn default_box() -> [f64; 4] {
    let cfg = ScenarioConfig::default_merge();
    [0.0, cfg.finish_line(), cfg.road.y_bottom, cfg.road.y_upper]
}

/// A straight, constant-speed SLP of `n` waypoints.
pub fn straight_slp(sender: &VehicleState, n: usize, dt: f64, tick: u64) -> SlpMessage {
    SlpMessage {
        sender: sender.id,
        tick,
        waypoints: (0..n).map(|i| [sender.x + sender.v * dt * i as f64, sender.y]).collect(),
        speeds: vec![sender.v; n - 1],
        mass: sender.mass,
        wheelbase: sender.wheelbase,
        width: sender.width,
        a_brake_max: sender.a_brake_max,
        heading: sender.psi,
    }
}

/// Small speed-planning instance: an ego behind and beside one sender.
#[derive(Debug, Clone)]
pub struct Toy {
    pub road: RoadGeometry,
    pub ego: VehicleState,
    pub others: Vec<VehicleState>,
    pub slps: Vec<SlpMessage>,
    pub pf: PotentialParams,
    pub weights: IsoWeights,
    pub caps: Vec<f64>,
    pub v_target: f64,
    pub dt: f64,
}

impl Toy {
    pub fn problem(&self) -> IsoProblem<'_> {
        IsoProblem {
            world: World {
                road: &self.road,
                ego: &self.ego,
                others: &self.others,
            },
            slps: &self.slps,
            weights: self.weights,
            pf: &self.pf,
            dt: self.dt,
            caps: self.caps.clone(),
            v_target: self.v_target,
            v_floor: 0.1,
            waypoint_opts: WaypointOptions {
                heading_limit: Some(0.6),
                on_minimum: MinimumPolicy::HoldHeading,
            },
            tol: 1e-6,
        }
    }
}

pub fn toy_instance(seed: u64, n: usize) -> Toy {
    let mut r = rng(seed);
    let road = default_road();
    let ego = VehicleState::sedan(
        1,
        r.random_range(0.0..120.0),
        road.lower_lane_center() + r.random_range(-0.3..0.3),
        r.random_range(8.0..20.0),
    );
    let sender = VehicleState::sedan(2, ego.x + r.random_range(5.0..30.0), road.upper_lane_center(), r.random_range(8.0..18.0));
    let dt = 0.5;
    Toy {
        road,
        ego,
        others: vec![sender],
        slps: vec![straight_slp(&sender, n, dt, 0)],
        pf: PotentialParams::default(),
        weights: IsoWeights {
            w1: r.random_range(0.5..2.0),
            w2: r.random_range(0.5..2.0),
            w3: r.random_range(1.0..20.0),
        },
        caps: (0..n).map(|_| r.random_range(10.0..25.0)).collect(),
        v_target: r.random_range(10.0..22.0),
        dt,
    }
}

/// A state mid-merge: the obstacle inside the taper, slightly yawed.
pub fn merging_snapshot() -> (VehicleState, VehicleState) {
    let mut obstacle = VehicleState::sedan(2, 200.0, 5.0, 12.0);
    obstacle.psi = 0.08;
    let ego = VehicleState::sedan(1, 190.0, 2.4, 19.0);
    (ego, obstacle)
}
