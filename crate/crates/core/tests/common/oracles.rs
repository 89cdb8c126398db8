//! Independent reference computations for the field gradient, the cubic
//! fit and the speed optimizer.

use nalgebra::{DMatrix, DVector};
use pfiso::field::{is_smooth_at, universal_potential, virtual_force, World};
use pfiso::fit::{fit_cubic, CoeffBounds, FitProblem};
use pfiso::scenario::{road_edge_y, PotentialParams};
use pfiso::speed::{brute_force_speed_oracle, optimize_speeds, IsoProblem};
use pfiso::{ScenarioConfig, VehicleState};
use rand::RngExt;

use super::{default_box, default_road, merging_snapshot, rng, toy_instance};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference step: `FD_STEP`, shrunk near the road edges where the
/// inverse-square barrier varies on the scale of the clearance itself.
/// Inside the clamped band the field is flat and the full step is used.
pub fn fd_step(x: f64, y: f64, world: &World<'_>, p: &PotentialParams) -> f64 {
    let (lower, upper) = road_edge_y(world.road, x);
    let half = 0.5 * world.ego.width;
    let clamp = (0.5 * p.xi / p.u_cap).sqrt();
    [y - lower - half, upper - half - y]
        .into_iter()
        .filter(|d| *d > clamp)
        .fold(FD_STEP, |h, d| h.min(1e-4 * d))
}

#[derive(Debug, Clone)]
pub struct GradientCase {
    pub point: [f64; 2],
    pub analytic: [f64; 2],
    pub numeric: [f64; 2],
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub cases: Vec<GradientCase>,
    /// Draws rejected as clamp- or kink-adjacent.
    pub skipped: usize,
}

impl GradientReport {
    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

/// Central differences of `-U` against the analytic virtual force at `n`
/// uniform points of the default road box. Points alternate between the
/// initial scene and a mid-merge scene with a yawed obstacle.
pub fn gradient_oracle(seed: u64, n: usize) -> GradientReport {
    let cfg = ScenarioConfig::default_merge();
    let road = default_road();
    let p = PotentialParams::default();
    let [x0, x1, y0, y1] = default_box();
    let initial = (cfg.vehicles[0].state, cfg.vehicles[1].state);
    let scenes: [(VehicleState, VehicleState); 2] = [initial, merging_snapshot()];
    let mut r = rng(seed);
    let mut cases = Vec::with_capacity(n);
    let mut skipped = 0;
    while cases.len() < n {
        let (ego, obstacle) = &scenes[cases.len() % 2];
        let others = [*obstacle];
        let world = World {
            road: &road,
            ego,
            others: &others,
        };
        let (x, y) = (r.random_range(x0..x1), r.random_range(y0..y1));
        let h = fd_step(x, y, &world, &p);
        if !is_smooth_at(x, y, &world, &p, 2.0 * h.max(FD_STEP)) {
            skipped += 1;
            continue;
        }
        let u = |x: f64, y: f64| universal_potential(x, y, &world, &p);
        let numeric = [-(u(x + h, y) - u(x - h, y)) / (2.0 * h), -(u(x, y + h) - u(x, y - h)) / (2.0 * h)];
        let f = virtual_force(x, y, &world, &p).expect("finite force");
        let analytic = [f.fx, f.fy];
        let diff = (analytic[0] - numeric[0]).hypot(analytic[1] - numeric[1]);
        let scale = numeric[0].hypot(numeric[1]).max(1e-300);
        cases.push(GradientCase {
            point: [x, y],
            analytic,
            numeric,
            rel_err: diff / scale,
        });
    }
    GradientReport { cases, skipped }
}

/// A noisy cubic sampled at sorted abscissae.
pub fn random_fit_problem(seed: u64) -> FitProblem {
    let mut r = rng(seed);
    let n = r.random_range(6..=20usize);
    let x0 = r.random_range(0.0..300.0);
    let span = r.random_range(5.0..60.0);
    let mut xs: Vec<f64> = (0..n).map(|i| x0 + span * i as f64 / (n - 1) as f64).collect();
    for x in xs.iter_mut().skip(1).take(n - 2) {
        *x += r.random_range(-0.3..0.3) * span / (n - 1) as f64;
    }
    let c = [
        r.random_range(0.0..7.0),
        r.random_range(-0.3..0.3),
        r.random_range(-0.01..0.01),
        r.random_range(-1e-3..1e-3) / span,
    ];
    let ys = xs
        .iter()
        .map(|&x| {
            let t = x - x0;
            c[0] + t * (c[1] + t * (c[2] + t * c[3])) + r.random_range(-0.2..0.2)
        })
        .collect();
    let weights = (0..n).map(|_| r.random_range(0.2..2.0)).collect();
    FitProblem {
        xs,
        ys,
        weights,
        bounds: CoeffBounds::unbounded(),
    }
}

fn span_of(prob: &FitProblem) -> f64 {
    prob.xs.iter().map(|x| (x - prob.xs[0]).abs()).fold(0.0, f64::max)
}

/// Local-frame coefficients to unit-span coefficients.
pub fn to_scaled(a: &[f64; 4], span: f64) -> [f64; 4] {
    [a[0], a[1] * span, a[2] * span * span, a[3] * span.powi(3)]
}

pub fn from_scaled(c: &[f64; 4], span: f64) -> [f64; 4] {
    [c[0], c[1] / span, c[2] / (span * span), c[3] / span.powi(3)]
}

/// Weighted least squares with coefficient `fixed.0` pinned to `fixed.1`
/// (local frame), solved by SVD in unit-span coordinates. Returns local
/// coefficients.
pub fn closed_form_fit(prob: &FitProblem, fixed: Option<(usize, f64)>) -> [f64; 4] {
    let span = span_of(prob);
    let n = prob.xs.len();
    let fixed_scaled = fixed.map(|(k, a)| (k, to_scaled(&{
        let mut v = [0.0; 4];
        v[k] = a;
        v
    }, span)[k]));
    let free: Vec<usize> = (0..4).filter(|&k| fixed.is_none_or(|f| f.0 != k)).collect();
    let mut design = DMatrix::<f64>::zeros(n, free.len());
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        let t = (prob.xs[i] - prob.xs[0]) / span;
        let row = [1.0, t, t * t, t * t * t];
        let sw = prob.weights[i].sqrt();
        for (col, &k) in free.iter().enumerate() {
            design[(i, col)] = sw * row[k];
        }
        let pinned = fixed_scaled.map_or(0.0, |(k, c)| row[k] * c);
        rhs[i] = sw * (prob.ys[i] - pinned);
    }
    let sol = design.svd(true, true).solve(&rhs, 1e-14).expect("svd solve");
    let mut c = [0.0; 4];
    for (col, &k) in free.iter().enumerate() {
        c[k] = sol[col];
    }
    if let Some((k, v)) = fixed_scaled {
        c[k] = v;
    }
    from_scaled(&c, span)
}

/// Largest coefficient difference in unit-span coordinates, relative to
/// the coefficient magnitude.
pub fn coeff_error(prob: &FitProblem, a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let span = span_of(prob);
    let (ca, cb) = (to_scaled(a, span), to_scaled(b, span));
    let scale = 1.0 + cb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (0..4).map(|k| (ca[k] - cb[k]).abs()).fold(0.0, f64::max) / scale
}

#[derive(Debug, Clone)]
pub struct ActiveCase {
    pub index: usize,
    pub on_bound: bool,
    pub closed_form_err: f64,
    pub qp_objective: f64,
    pub grid_objective: f64,
    /// Largest objective gap a grid of this resolution can leave.
    pub cell_bound: f64,
}

impl ActiveCase {
    pub fn passes(&self, tol: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.grid_objective.abs());
        self.on_bound
            && self.closed_form_err < tol
            && self.qp_objective <= self.grid_objective + slack
            && self.grid_objective - self.qp_objective <= self.cell_bound + slack
    }
}

#[derive(Debug, Clone)]
pub struct QpReport {
    pub inactive_errors: Vec<f64>,
    pub active: Vec<ActiveCase>,
}

impl QpReport {
    pub fn max_inactive_err(&self) -> f64 {
        self.inactive_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Box around the unconstrained optimum that none of the coordinates reach.
fn loose_bounds(a: &[f64; 4]) -> CoeffBounds {
    let mut b = CoeffBounds::unbounded();
    for k in 0..4 {
        let w = 10.0 * (1.0 + a[k].abs());
        b.lower[k] = a[k] - w;
        b.upper[k] = a[k] + w;
    }
    b
}

const GRID: usize = 21;

/// Exhaustive search on a `GRID^4` lattice in unit-span coordinates. The
/// pinned axis starts exactly at its bound and extends into the feasible
/// side; the others cover `centre` with the lattice shifted by `jitter`
/// cells so that no node sits on the reference solution.
fn grid_min(prob: &FitProblem, centre: &[f64; 4], index: usize, upper_side: bool, jitter: &[f64; 4]) -> (f64, [f64; 4]) {
    let span = span_of(prob);
    let c = to_scaled(centre, span);
    let radius: [f64; 4] = std::array::from_fn(|k| 0.2 * (1.0 + c[k].abs()));
    let cell = |k: usize| 2.0 * radius[k] / (GRID - 1) as f64;
    let axis = |k: usize| -> Vec<f64> {
        if k == index {
            let dir = if upper_side { -1.0 } else { 1.0 };
            (0..GRID).map(|j| c[k] + dir * cell(k) * j as f64).collect()
        } else {
            let start = c[k] - radius[k] + (jitter[k] - 0.5) * cell(k);
            (0..GRID).map(|j| start + cell(k) * j as f64).collect()
        }
    };
    let axes: Vec<Vec<f64>> = (0..4).map(axis).collect();
    let mut best = f64::INFINITY;
    for &c0 in &axes[0] {
        for &c1 in &axes[1] {
            for &c2 in &axes[2] {
                for &c3 in &axes[3] {
                    let f = prob.objective(&from_scaled(&[c0, c1, c2, c3], span));
                    if f < best {
                        best = f;
                    }
                }
            }
        }
    }
    let spacing: [f64; 4] = std::array::from_fn(|k| if k == index { 0.0 } else { cell(k) });
    (best, spacing)
}

/// `½ Σ |H_ij| (r_i/2)(r_j/2)` for the unit-span normal matrix `H`.
fn cell_bound(prob: &FitProblem, spacing: &[f64; 4]) -> f64 {
    let span = span_of(prob);
    let mut h = [[0.0; 4]; 4];
    for (&x, &w) in prob.xs.iter().zip(&prob.weights) {
        let t = (x - prob.xs[0]) / span;
        let row = [1.0, t, t * t, t * t * t];
        for i in 0..4 {
            for j in 0..4 {
                h[i][j] += w * row[i] * row[j];
            }
        }
    }
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            s += h[i][j].abs() * 0.5 * spacing[i] * 0.5 * spacing[j];
        }
    }
    0.5 * s
}

/// 50 problems with inactive bounds against the closed form, then 20 with
/// one bound forced active against the pinned closed form and a 4-D grid.
pub fn qp_oracle(seed: u64, inactive: usize, active: usize) -> QpReport {
    let mut inactive_errors = Vec::with_capacity(inactive);
    for i in 0..inactive {
        let mut prob = random_fit_problem(seed.wrapping_add(i as u64));
        let reference = closed_form_fit(&prob, None);
        prob.bounds = loose_bounds(&reference);
        let fitted = fit_cubic(&prob).expect("fit");
        inactive_errors.push(coeff_error(&prob, &fitted.coeffs, &reference));
    }
    let mut cases = Vec::with_capacity(active);
    let mut r = rng(seed ^ 0xA5A5);
    for i in 0..active {
        let mut prob = random_fit_problem(seed.wrapping_add(10_000 + i as u64));
        let free = closed_form_fit(&prob, None);
        let index = i % 4;
        let upper_side = r.random_bool(0.5);
        let span = span_of(&prob);
        let c = to_scaled(&free, span)[index];
        let shift = r.random_range(0.1..0.5) * (1.0 + c.abs());
        let bound = if upper_side { c - shift } else { c + shift } / span.powi(index as i32);
        let mut bounds = CoeffBounds::unbounded();
        if upper_side {
            bounds.upper[index] = bound;
        } else {
            bounds.lower[index] = bound;
        }
        prob.bounds = bounds;
        let pinned = closed_form_fit(&prob, Some((index, bound)));
        let fitted = fit_cubic(&prob).expect("fit");
        let jitter: [f64; 4] = std::array::from_fn(|_| r.random_range(0.0..1.0));
        let (grid_objective, spacing) = grid_min(&prob, &pinned, index, upper_side, &jitter);
        cases.push(ActiveCase {
            index,
            on_bound: fitted.coeffs[index] == bound,
            closed_form_err: coeff_error(&prob, &fitted.coeffs, &pinned),
            qp_objective: prob.objective(&fitted.coeffs),
            grid_objective,
            cell_bound: cell_bound(&prob, &spacing),
        });
    }
    QpReport {
        inactive_errors,
        active: cases,
    }
}

#[derive(Debug, Clone)]
pub struct SpeedCase {
    pub optimized: f64,
    pub oracle: f64,
    pub cell_bound: f64,
}

impl SpeedCase {
    pub fn passes(&self) -> bool {
        self.optimized <= self.oracle + self.cell_bound
    }
}

/// Largest objective increase from the oracle argmin to any grid neighbour
/// one cell away.
pub fn speed_cell_bound(problem: &IsoProblem<'_>, argmin: &[f64], grid_points: usize) -> f64 {
    let n = argmin.len();
    let f0 = problem.objective(argmin);
    let mut worst = 0.0f64;
    let combos = 3usize.pow(n as u32);
    for code in 0..combos {
        let mut c = code;
        let mut v = argmin.to_vec();
        for (i, vi) in v.iter_mut().enumerate() {
            let step = problem.caps[i] / (grid_points - 1) as f64;
            let off = (c % 3) as f64 - 1.0;
            c /= 3;
            *vi = (*vi + off * step).clamp(0.0, problem.caps[i]);
        }
        worst = worst.max(problem.objective(&v) - f0);
    }
    worst
}

pub fn speed_oracle(seed: u64, instances: usize, horizon: usize, grid_points: usize) -> Vec<SpeedCase> {
    (0..instances)
        .map(|i| {
            let toy = toy_instance(seed.wrapping_add(i as u64), horizon);
            let problem = toy.problem();
            let oracle = brute_force_speed_oracle(&problem, grid_points).expect("oracle");
            let optimized = optimize_speeds(&problem);
            SpeedCase {
                optimized: optimized.objective,
                oracle: oracle.objective,
                cell_bound: speed_cell_bound(&problem, &oracle.speeds, grid_points),
            }
        })
        .collect()
}
