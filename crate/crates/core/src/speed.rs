//! Interactive speed optimization.
//!
//! The objective over the per-waypoint speeds `v_1..v_N` is
//!
//! ```text
//! w1 * Σ_{i<N} (X_{i+1} - X_i) / max(v_i, v_floor)
//! + w2 * Σ_i ½ (v_i - V_target)^2
//! + w3 * Σ_i ln max(ε, Σ_j U_OB(ego_i, slp_j,i))
//! ```
//!
//! where the ego waypoints are regenerated from the speeds (segment `i` is
//! `v_i * dt` long), so slowing down pulls the future waypoints back and
//! changes the interaction term. Each `v_i` is boxed in `[0, V_i^max]`.

use serde::{Deserialize, Serialize};

use crate::coordination::SlpMessage;
use crate::error::{Error, Result};
use crate::field::{generate_waypoints, obstacle_potential, step_heading, StepMode, WaypointOptions, World};
use crate::fit::{path_curvature, CubicPath, CurvatureMode};
use crate::scenario::{PotentialParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsoWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl IsoWeights {
    pub fn scaled(&self, k: f64) -> Self {
        IsoWeights {
            w1: self.w1 * k,
            w2: self.w2 * k,
            w3: self.w3 * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub speeds: Vec<f64>,
    pub caps: Vec<f64>,
    pub objective: f64,
}

/// Friction-circle speed cap from the leading-order curvature `2 a2`.
pub fn max_speed_cap(path: &CubicPath, v_limit: f64, mu: f64, g: f64) -> f64 {
    let kappa = path_curvature(path, path.x_offset, CurvatureMode::Quadratic).abs();
    if kappa == 0.0 {
        v_limit
    } else {
        v_limit.min((mu * g / kappa).sqrt())
    }
}

/// Obstacle potential of a shared waypoint, seen from an ego waypoint and
/// floored at `epsilon` so that its logarithm is finite.
///
/// `ego` and `sender` carry the positions and speeds at the compared
/// waypoint index.
pub fn slp_potential(ego: &VehicleState, sender: &VehicleState, p: &PotentialParams) -> f64 {
    obstacle_potential(ego.x, ego.y, sender, ego, p).max(p.epsilon)
}

/// The three summands of the objective before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IsoTerms {
    pub efficiency: f64,
    pub deviation: f64,
    pub interaction: f64,
}

/// One speed-planning instance.
#[derive(Debug, Clone)]
pub struct IsoProblem<'a> {
    /// `world.ego` is the planning vehicle at its current state.
    pub world: World<'a>,
    pub slps: &'a [SlpMessage],
    pub weights: IsoWeights,
    pub pf: &'a PotentialParams,
    /// Time between waypoints.
    pub dt: f64,
    /// Per-waypoint upper speed bound; its length is the horizon `N`.
    pub caps: Vec<f64>,
    pub v_target: f64,
    pub v_floor: f64,
    pub waypoint_opts: WaypointOptions,
    /// Golden-section termination width.
    pub tol: f64,
}

impl IsoProblem<'_> {
    pub fn horizon(&self) -> usize {
        self.caps.len()
    }

    fn interaction_active(&self) -> bool {
        self.weights.w3 != 0.0
    }

    /// Ego state placed at waypoint `wp` with speed `v`.
    fn ego_at(&self, wp: [f64; 2], v: f64) -> VehicleState {
        VehicleState {
            x: wp[0],
            y: wp[1],
            v,
            ..*self.world.ego
        }
    }

    fn interaction_at(&self, wp: [f64; 2], v: f64, index: usize) -> f64 {
        let ego = self.ego_at(wp, v);
        let total: f64 = self
            .slps
            .iter()
            .map(|m| obstacle_potential(ego.x, ego.y, &m.sender_state_at(index), &ego, self.pf))
            .sum();
        total.max(self.pf.epsilon).ln()
    }

    pub fn terms(&self, speeds: &[f64]) -> IsoTerms {
        let n = self.horizon();
        assert_eq!(speeds.len(), n, "one speed per waypoint");
        let Ok(queue) = generate_waypoints(
            &self.world,
            self.pf,
            StepMode::SpeedCoupled { speeds, dt: self.dt },
            n,
            &self.waypoint_opts,
        ) else {
            return IsoTerms {
                efficiency: f64::INFINITY,
                deviation: f64::INFINITY,
                interaction: f64::INFINITY,
            };
        };
        let efficiency = queue
            .points
            .windows(2)
            .zip(speeds)
            .map(|(w, &v)| (w[1][0] - w[0][0]) / v.max(self.v_floor))
            .sum();
        let deviation = speeds.iter().map(|v| 0.5 * (v - self.v_target).powi(2)).sum();
        let interaction = if self.interaction_active() {
            queue
                .points
                .iter()
                .zip(speeds)
                .enumerate()
                .map(|(i, (&wp, &v))| self.interaction_at(wp, v, i))
                .sum()
        } else {
            0.0
        };
        IsoTerms {
            efficiency,
            deviation,
            interaction,
        }
    }

    pub fn combine(&self, t: &IsoTerms) -> f64 {
        let w = &self.weights;
        let base = w.w1 * t.efficiency + w.w2 * t.deviation;
        if self.interaction_active() {
            base + w.w3 * t.interaction
        } else {
            base
        }
    }

    pub fn objective(&self, speeds: &[f64]) -> f64 {
        self.combine(&self.terms(speeds))
    }

    /// `V_target` clipped into every box.
    pub fn naive_profile(&self) -> Vec<f64> {
        self.caps.iter().map(|&c| self.v_target.clamp(0.0, c)).collect()
    }
}

pub fn iso_objective(problem: &IsoProblem<'_>, speeds: &[f64]) -> f64 {
    problem.objective(speeds)
}

const SCAN_POINTS: usize = 9;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Coarse scan of `[lo, hi]` followed by golden-section refinement around
/// the best scanned point.
fn minimize_1d(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    if hi <= lo {
        return (lo, f(lo));
    }
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|k| if k == SCAN_POINTS - 1 { hi } else { lo + step * k as f64 })
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let j = (0..SCAN_POINTS).fold(0, |b, k| if vals[k] < vals[b] { k } else { b });
    let (mut best_x, mut best_f) = (grid[j], vals[j]);

    let mut a = grid[j.saturating_sub(1)];
    let mut b = grid[(j + 1).min(SCAN_POINTS - 1)];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    for (x, fx) in [(c, fc), (d, fd)] {
        if fx < best_f {
            best_x = x;
            best_f = fx;
        }
    }
    (best_x, best_f)
}

/// Forward sweep over the speeds followed by one coordinate-descent pass.
///
/// Starts from the clipped target profile and only ever accepts improving
/// moves, so the result is never worse than that profile.
pub fn optimize_speeds(problem: &IsoProblem<'_>) -> SpeedProfile {
    let n = problem.horizon();
    let mut v = problem.naive_profile();
    let mut best = problem.objective(&v);
    for _pass in 0..2 {
        for i in 0..n {
            let mut trial = v.clone();
            let (vi, fi) = minimize_1d(
                |x| {
                    trial[i] = x;
                    problem.objective(&trial)
                },
                0.0,
                problem.caps[i],
                problem.tol,
            );
            if fi < best {
                v[i] = vi;
                best = fi;
            }
        }
    }
    SpeedProfile {
        speeds: v,
        caps: problem.caps.clone(),
        objective: best,
    }
}

pub const ORACLE_MAX_HORIZON: usize = 5;

/// Exhaustive minimization over a `grid_points`-per-axis grid of
/// `[0, V_i^max]^N`.
///
/// The objective is accumulated depth-first: the heading leaving a waypoint
/// only depends on its position, so each tree node evaluates one force and
/// the leaves only add the last speed's terms.
pub fn brute_force_speed_oracle(problem: &IsoProblem<'_>, grid_points: usize) -> Result<SpeedProfile> {
    let n = problem.horizon();
    if n > ORACLE_MAX_HORIZON {
        return Err(Error::OracleGuard {
            max: ORACLE_MAX_HORIZON,
            got: n,
        });
    }
    if grid_points < 2 {
        return Err(Error::validation("grid_points", "need at least 2 grid points"));
    }
    let grids: Vec<Vec<f64>> = problem
        .caps
        .iter()
        .map(|&c| {
            (0..grid_points)
                .map(|k| c * k as f64 / (grid_points - 1) as f64)
                .collect()
        })
        .collect();
    let mut search = GridSearch {
        problem,
        grids: &grids,
        current: vec![0.0; n],
        best: vec![0.0; n],
        best_value: f64::INFINITY,
    };
    let start = [problem.world.ego.x, problem.world.ego.y];
    search.descend(0, start, problem.world.ego.psi, 0.0, 0.0, 0.0);
    let speeds = search.best.clone();
    Ok(SpeedProfile {
        speeds,
        caps: problem.caps.clone(),
        objective: search.best_value,
    })
}

struct GridSearch<'p, 'a> {
    problem: &'p IsoProblem<'a>,
    grids: &'p [Vec<f64>],
    current: Vec<f64>,
    best: Vec<f64>,
    best_value: f64,
}

impl GridSearch<'_, '_> {
    fn descend(&mut self, i: usize, point: [f64; 2], heading: f64, eff: f64, dev: f64, inter: f64) {
        let pb = self.problem;
        let n = pb.horizon();
        let next_heading = if i + 1 < n {
            match step_heading(point, heading, &pb.world, pb.pf, &pb.waypoint_opts) {
                Ok((h, _)) => Some(h),
                Err(_) => return,
            }
        } else {
            None
        };
        for k in 0..self.grids[i].len() {
            let v = self.grids[i][k];
            self.current[i] = v;
            let dev = dev + 0.5 * (v - pb.v_target).powi(2);
            let inter = if pb.interaction_active() {
                inter + pb.interaction_at(point, v, i)
            } else {
                inter
            };
            match next_heading {
                None => {
                    let w = &pb.weights;
                    let mut value = w.w1 * eff + w.w2 * dev;
                    if pb.interaction_active() {
                        value += w.w3 * inter;
                    }
                    if value < self.best_value {
                        self.best_value = value;
                        self.best.copy_from_slice(&self.current);
                    }
                }
                Some(h) => {
                    let l = v * pb.dt;
                    let next = [point[0] + l * h.cos(), point[1] + l * h.sin()];
                    let eff = eff + (next[0] - point[0]) / v.max(pb.v_floor);
                    self.descend(i + 1, next, h, eff, dev, inter);
                }
            }
        }
    }
}
