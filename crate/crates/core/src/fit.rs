//! Weighted cubic fit of a waypoint queue under a coefficient box.
//!
//! The fit is a 4-variable strictly convex QP. It is solved exactly by
//! enumerating the 3^4 free/lower/upper assignments and keeping the one that
//! satisfies the KKT conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::WaypointQueue;

/// `y = a0 + a1 u + a2 u^2 + a3 u^3` with `u = x - x_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicPath {
    pub coeffs: [f64; 4],
    pub x_offset: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl CubicPath {
    pub fn new(coeffs: [f64; 4]) -> Self {
        CubicPath {
            coeffs,
            x_offset: 0.0,
            x_min: f64::NEG_INFINITY,
            x_max: f64::INFINITY,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.x_offset;
        let [a0, a1, a2, a3] = self.coeffs;
        a0 + u * (a1 + u * (a2 + u * a3))
    }

    pub fn slope(&self, x: f64) -> f64 {
        let u = x - self.x_offset;
        let [_, a1, a2, a3] = self.coeffs;
        a1 + u * (2.0 * a2 + 3.0 * a3 * u)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let u = x - self.x_offset;
        2.0 * self.coeffs[2] + 6.0 * self.coeffs[3] * u
    }

    /// True outside the interval the path was fitted on.
    pub fn is_extrapolated(&self, x: f64) -> bool {
        x < self.x_min || x > self.x_max
    }
}

/// Horner evaluation of the path at `x`.
pub fn eval_path(path: &CubicPath, x: f64) -> f64 {
    path.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureMode {
    /// `f'' / (1 + f'^2)^{3/2}` at the query point.
    Exact,
    /// Leading-order `2 a2`, independent of position.
    Quadratic,
}

pub fn path_curvature(path: &CubicPath, x: f64, mode: CurvatureMode) -> f64 {
    match mode {
        CurvatureMode::Quadratic => 2.0 * path.coeffs[2],
        CurvatureMode::Exact => {
            let d1 = path.slope(x);
            path.second_derivative(x) / (1.0 + d1 * d1).powf(1.5)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffBounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl CoeffBounds {
    pub fn unbounded() -> Self {
        CoeffBounds {
            lower: [f64::NEG_INFINITY; 4],
            upper: [f64::INFINITY; 4],
        }
    }

    /// `|a2| <= kappa_max / 2`, `|a3| <= kappa_max / (6 span)`, `|a0|, |a1| <= abs_bound`.
    pub fn from_curvature(kappa_max: f64, span: f64, abs_bound: f64) -> Self {
        let a2 = 0.5 * kappa_max;
        let a3 = kappa_max / (6.0 * span.max(f64::MIN_POSITIVE));
        CoeffBounds {
            lower: [-abs_bound, -abs_bound, -a2, -a3],
            upper: [abs_bound, abs_bound, a2, a3],
        }
    }

    fn check(&self) -> Result<()> {
        for i in 0..4 {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InfeasibleBounds {
                    index: i,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(())
    }
}

/// Unit weights, or linearly decaying weights `1 - decay * i / (n - 1)`.
pub fn queue_weights(n: usize, decay: f64) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n).map(|i| 1.0 - decay * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub weights: Vec<f64>,
    /// Bounds on the coefficients in the frame where `xs[0]` is the origin.
    pub bounds: CoeffBounds,
}

impl FitProblem {
    pub fn from_queue(queue: &WaypointQueue, weights: Vec<f64>, bounds: CoeffBounds) -> Self {
        FitProblem {
            xs: queue.xs(),
            ys: queue.ys(),
            weights,
            bounds,
        }
    }

    /// `½ (Xa - Y)ᵀ W (Xa - Y)` for coefficients in the local frame.
    pub fn objective(&self, coeffs: &[f64; 4]) -> f64 {
        let x0 = self.xs[0];
        let path = CubicPath {
            coeffs: *coeffs,
            x_offset: x0,
            x_min: x0,
            x_max: x0,
        };
        0.5 * self
            .xs
            .iter()
            .zip(&self.ys)
            .zip(&self.weights)
            .map(|((&x, &y), &w)| {
                let r = path.eval(x) - y;
                w * r * r
            })
            .sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        let n = self.xs.len();
        if n < 4 {
            return Err(Error::DegenerateWaypoints(format!("at least 4 waypoints are needed, got {n}")));
        }
        if self.ys.len() != n || self.weights.len() != n {
            return Err(Error::validation("weights", "xs, ys and weights must have equal length"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::validation("weights", "weights must be positive"));
        }
        if self.xs.iter().chain(&self.ys).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateWaypoints("non-finite waypoint".into()));
        }
        self.bounds.check()
    }
}

/// Which side of the box a coordinate sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundState {
    Free,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQpSolution {
    pub x: [f64; 4],
    pub state: [BoundState; 4],
    /// Gradient `Hx + g` at the solution; the bound multipliers on fixed coordinates.
    pub gradient: [f64; 4],
    pub objective: f64,
}

type Mat4 = [[f64; 4]; 4];

fn quad_value(h: &Mat4, g: &[f64; 4], x: &[f64; 4]) -> f64 {
    let mut v = 0.0;
    for i in 0..4 {
        let hx: f64 = (0..4).map(|j| h[i][j] * x[j]).sum();
        v += x[i] * (0.5 * hx + g[i]);
    }
    v
}

/// Solves `A z = b` for the symmetric positive definite `A` by Cholesky.
/// `None` if `A` is not numerically positive definite.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 1e-13 * scale {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    for i in (0..n).rev() {
        z[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * z[k]).sum::<f64>()) / l[i][i];
    }
    Some(z)
}

/// Minimizes `½ xᵀHx + gᵀx` over `lower <= x <= upper` for positive definite `H`.
pub fn solve_box_qp(h: &Mat4, g: &[f64; 4], lower: &[f64; 4], upper: &[f64; 4], kkt_tol: f64) -> Result<BoxQpSolution> {
    let states = [BoundState::Free, BoundState::AtLower, BoundState::AtUpper];
    let mut best_kkt: Option<BoxQpSolution> = None;
    let mut best_feasible: Option<BoxQpSolution> = None;
    let mut saw_solvable = false;
    let gscale = 1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    for code in 0..81usize {
        let mut state = [BoundState::Free; 4];
        let mut c = code;
        for s in &mut state {
            *s = states[c % 3];
            c /= 3;
        }
        let mut x = [0.0; 4];
        let mut skip = false;
        for i in 0..4 {
            x[i] = match state[i] {
                BoundState::Free => 0.0,
                BoundState::AtLower => lower[i],
                BoundState::AtUpper => upper[i],
            };
            if !x[i].is_finite() && state[i] != BoundState::Free {
                skip = true;
            }
        }
        if skip {
            continue;
        }
        let free: Vec<usize> = (0..4).filter(|&i| state[i] == BoundState::Free).collect();
        if !free.is_empty() {
            let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| h[i][j]).collect()).collect();
            let b: Vec<f64> = free
                .iter()
                .map(|&i| {
                    -g[i] - (0..4)
                        .filter(|j| state[*j] != BoundState::Free)
                        .map(|j| h[i][j] * x[j])
                        .sum::<f64>()
                })
                .collect();
            let Some(z) = cholesky_solve(&a, &b) else {
                continue;
            };
            for (k, &i) in free.iter().enumerate() {
                x[i] = z[k];
            }
        }
        saw_solvable = true;
        let feasible = (0..4).all(|i| {
            let slack = 1e-12 * (1.0 + x[i].abs());
            x[i] >= lower[i] - slack && x[i] <= upper[i] + slack
        });
        if !feasible {
            continue;
        }
        for i in 0..4 {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
        let mut gradient = [0.0; 4];
        for i in 0..4 {
            gradient[i] = g[i] + (0..4).map(|j| h[i][j] * x[j]).sum::<f64>();
        }
        let kkt = (0..4).all(|i| match state[i] {
            BoundState::Free => true,
            BoundState::AtLower => gradient[i] >= -kkt_tol * gscale,
            BoundState::AtUpper => gradient[i] <= kkt_tol * gscale,
        });
        let sol = BoxQpSolution {
            x,
            state,
            gradient,
            objective: quad_value(h, g, &x),
        };
        let slot = if kkt { &mut best_kkt } else { &mut best_feasible };
        if slot.as_ref().is_none_or(|b| sol.objective < b.objective) {
            *slot = Some(sol);
        }
    }
    if !saw_solvable {
        return Err(Error::DegenerateWaypoints("normal matrix is not positive definite".into()));
    }
    best_kkt
        .or(best_feasible)
        .ok_or_else(|| Error::DegenerateWaypoints("no feasible active set".into()))
}

/// Solves the weighted box-constrained cubic fit.
///
/// Abscissae are shifted so that `xs[0]` is the origin and scaled to unit
/// span before forming the normal equations; the returned path carries the
/// shift in `x_offset`.
pub fn fit_cubic(prob: &FitProblem) -> Result<CubicPath> {
    Ok(fit_cubic_detailed(prob)?.0)
}

/// As [`fit_cubic`], also returning the QP solution in the scaled frame.
pub fn fit_cubic_detailed(prob: &FitProblem) -> Result<(CubicPath, BoxQpSolution)> {
    prob.validate()?;
    let x0 = prob.xs[0];
    let span = prob.xs.iter().map(|x| (x - x0).abs()).fold(0.0, f64::max);
    let mut distinct: Vec<f64> = prob.xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * span.max(1.0));
    if distinct.len() < 4 || span == 0.0 {
        return Err(Error::DegenerateWaypoints(format!(
            "need at least 4 distinct x values, got {}",
            distinct.len()
        )));
    }

    let mut h = [[0.0; 4]; 4];
    let mut g = [0.0; 4];
    for ((&x, &y), &w) in prob.xs.iter().zip(&prob.ys).zip(&prob.weights) {
        let t = (x - x0) / span;
        let row = [1.0, t, t * t, t * t * t];
        for i in 0..4 {
            g[i] -= w * row[i] * y;
            for j in 0..4 {
                h[i][j] += w * row[i] * row[j];
            }
        }
    }
    let mut lower = [0.0; 4];
    let mut upper = [0.0; 4];
    let mut s = 1.0;
    for k in 0..4 {
        lower[k] = prob.bounds.lower[k] * s;
        upper[k] = prob.bounds.upper[k] * s;
        s *= span;
    }
    let sol = solve_box_qp(&h, &g, &lower, &upper, 1e-8)?;

    let mut coeffs = [0.0; 4];
    let mut s = 1.0;
    for k in 0..4 {
        coeffs[k] = sol.x[k] / s;
        // Keep exact bound values when active.
        match sol.state[k] {
            BoundState::AtLower => coeffs[k] = prob.bounds.lower[k],
            BoundState::AtUpper => coeffs[k] = prob.bounds.upper[k],
            BoundState::Free => {}
        }
        s *= span;
    }
    let (x_min, x_max) = prob
        .xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok((
        CubicPath {
            coeffs,
            x_offset: x0,
            x_min,
            x_max,
        },
        sol,
    ))
}
