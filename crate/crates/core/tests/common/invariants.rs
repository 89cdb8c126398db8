//! Property checks run through a deterministic proptest runner, so the
//! same cases back both the `invariants` test target and the acceptance
//! report.

use std::fs;

use pfiso::coordination::{bus_exchange, plan_step, PlannerSettings, Recipient};
use pfiso::field::{
    generate_waypoints, is_smooth_at, obstacle_potential, potential_breakdown, reference_heading, virtual_force, MinimumPolicy, StepMode,
    WaypointOptions, World,
};
use pfiso::fit::{fit_cubic, fit_cubic_detailed, BoundState, CoeffBounds};
use pfiso::scenario::{road_edge_y, PotentialParams};
use pfiso::sim::{compute_metrics, read_trace_csv, write_trace_csv};
use pfiso::speed::{brute_force_speed_oracle, optimize_speeds};
use pfiso::{load_scenario, run_scenario, save_scenario, PlannerKind, ScenarioConfig, SlpMessage, VehicleSpec, VehicleState};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use super::oracles::{closed_form_fit, coeff_error, random_fit_problem};
use super::{default_box, default_road, straight_slp, toy_instance};

pub type Check = fn() -> Result<(), String>;

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

/// Every invariant with its name, in module order.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("road edge continuity", road_edge_continuity),
        ("scenario save/load round trip", scenario_round_trip),
        ("potential terms in [0, u_cap]", potential_terms_bounded),
        ("obstacle reflection symmetry at psi=0", obstacle_reflection_symmetry),
        ("heading invariant under amplitude scaling", heading_scale_invariance),
        ("speed-coupled waypoint length", speed_coupled_length),
        ("fit minimizer invariant under weight doubling", fit_weight_doubling),
        ("constrained fit objective >= unconstrained", constrained_objective_dominates),
        ("fit residual invariant under permutation", fit_permutation_invariance),
        ("speed profiles feasible", speed_profiles_feasible),
        ("interaction term monotone in w3", interaction_monotone_in_w3),
        ("speed argmin invariant under weight scaling", argmin_weight_scaling),
        ("w3=0 on a straight path clips V_target", straight_path_clips_target),
        ("optimizer never worse than naive profile", never_worse_than_naive),
        ("planning deterministic", planning_deterministic),
        ("message conservation", message_conservation),
        ("PF_SP equals PF_ISO at w3=0", sp_equals_iso_without_interaction),
        ("simulation deterministic", simulation_deterministic),
        ("speed never exceeds max(v0, V_limit)", energy_sanity),
        ("metrics recomputed from trace files", trace_metric_consistency),
    ]
}

pub fn road_edge_continuity() -> Result<(), String> {
    let road = default_road();
    check(512, (-100.0..500.0f64, 1e-9..1e-3f64), |(x, d)| {
        let (a, b) = (road_edge_y(&road, x), road_edge_y(&road, x + d));
        let bound = road.k_sl().abs() * d + 1e-12;
        prop_assert!((b.0 - a.0).abs() <= bound, "lower edge jumps at x={x}");
        prop_assert!((b.1 - a.1).abs() <= bound, "upper edge jumps at x={x}");
        Ok(())
    })
}

pub fn scenario_round_trip() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("scenario.json");
    check(
        64,
        (1e-6..1e-2f64, 0.1..10.0f64, -50.0..100.0f64, 0.5..1.0f64, any::<u64>(), 0.0..0.5f64),
        |(lambda, w1, x, mu, seed, drop)| {
            let mut cfg = ScenarioConfig::default_merge();
            cfg.pf.lambda = lambda;
            cfg.iso.w1 = w1;
            cfg.vehicles[0].state.x = x;
            cfg.iso.mu = mu;
            cfg.sim.seed = seed;
            cfg.sim.drop_probability = drop;
            cfg.sim.finish_line = Some(400.0 + x);
            save_scenario(&path, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = load_scenario(&path).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(back.pf.lambda.to_bits(), lambda.to_bits());
            prop_assert_eq!(back.vehicles[0].state.x.to_bits(), x.to_bits());
            prop_assert_eq!(back.sim.drop_probability.to_bits(), drop.to_bits());
            prop_assert_eq!(back.to_json(), cfg.to_json());
            prop_assert_eq!(back, cfg);
            Ok(())
        },
    )
}

fn vehicle_strategy(id: u32) -> impl Strategy<Value = VehicleState> {
    let [x0, x1, y0, y1] = default_box();
    (x0..x1, y0..y1, -0.3..0.3f64, 0.0..25.0f64).prop_map(move |(x, y, psi, v)| {
        let mut s = VehicleState::sedan(id, x, y, v);
        s.psi = psi;
        s
    })
}

pub fn potential_terms_bounded() -> Result<(), String> {
    let road = default_road();
    let p = PotentialParams::default();
    let [x0, x1, y0, y1] = default_box();
    check(
        1024,
        (vehicle_strategy(1), vehicle_strategy(2), vehicle_strategy(3), x0..x1, (y0 - 1.0)..(y1 + 1.0)),
        |(ego, a, b, x, y)| {
            let others = [a, b];
            let world = World {
                road: &road,
                ego: &ego,
                others: &others,
            };
            let parts = potential_breakdown(x, y, &world, &p);
            let mut terms = vec![parts.attractive, parts.lane_divider, parts.road_edge];
            terms.extend(parts.obstacles.iter().copied());
            for t in terms {
                prop_assert!((0.0..=p.u_cap).contains(&t), "term {t} out of range at ({x}, {y})");
            }
            Ok(())
        },
    )
}

pub fn obstacle_reflection_symmetry() -> Result<(), String> {
    let p = PotentialParams::default();
    check(1024, (vehicle_strategy(1), vehicle_strategy(2), -60.0..60.0f64, 0.0..4.0f64), |(ego, mut obs, dx, d)| {
        obs.psi = 0.0;
        let x = obs.x + dx;
        let up = obstacle_potential(x, obs.y + d, &obs, &ego, &p);
        let down = obstacle_potential(x, obs.y - d, &obs, &ego, &p);
        prop_assert!((up - down).abs() <= 1e-12 * up.abs().max(1e-300), "{up} vs {down}");
        Ok(())
    })
}

pub fn heading_scale_invariance() -> Result<(), String> {
    let road = default_road();
    let p = PotentialParams::default();
    let [x0, x1, y0, y1] = default_box();
    check(
        512,
        (vehicle_strategy(1), vehicle_strategy(2), x0..x1, y0..y1, 0.01..100.0f64),
        |(ego, obs, x, y, k)| {
            let others = [obs];
            let world = World {
                road: &road,
                ego: &ego,
                others: &others,
            };
            let scaled = p.scaled_amplitudes(k);
            prop_assume!(is_smooth_at(x, y, &world, &p, 1e-9));
            let h1 = virtual_force(x, y, &world, &p).and_then(reference_heading);
            let h2 = virtual_force(x, y, &world, &scaled).and_then(reference_heading);
            let (Ok(h1), Ok(h2)) = (h1, h2) else {
                return Err(TestCaseError::reject("local minimum"));
            };
            prop_assert!((h1 - h2).abs() <= 1e-12, "heading {h1} vs {h2} at k={k}");
            Ok(())
        },
    )
}

pub fn speed_coupled_length() -> Result<(), String> {
    let road = default_road();
    let p = PotentialParams::default();
    let opts = WaypointOptions {
        heading_limit: Some(0.6),
        on_minimum: MinimumPolicy::HoldHeading,
    };
    check(
        256,
        (vehicle_strategy(1), vehicle_strategy(2), prop::collection::vec(0.0..30.0f64, 3..30), 0.05..0.5f64),
        |(ego, obs, speeds, dt)| {
            let others = [obs];
            let world = World {
                road: &road,
                ego: &ego,
                others: &others,
            };
            let n = speeds.len() + 1;
            let q = generate_waypoints(&world, &p, StepMode::SpeedCoupled { speeds: &speeds, dt }, n, &opts)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let expected: f64 = speeds.iter().map(|v| v * dt).sum();
            prop_assert!((q.path_length() - expected).abs() <= 1e-9, "{} vs {expected}", q.path_length());
            Ok(())
        },
    )
}

pub fn fit_weight_doubling() -> Result<(), String> {
    check(256, any::<u64>(), |seed| {
        let prob = random_fit_problem(seed);
        let mut doubled = prob.clone();
        doubled.weights.iter_mut().for_each(|w| *w *= 2.0);
        let a = fit_cubic(&prob).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = fit_cubic(&doubled).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(coeff_error(&prob, &b.coeffs, &a.coeffs) < 1e-10);
        Ok(())
    })
}

pub fn constrained_objective_dominates() -> Result<(), String> {
    check(256, (any::<u64>(), prop::collection::vec((0.0..1.0f64, 0.05..0.5f64, any::<bool>()), 4)), |(seed, pins)| {
        let mut prob = random_fit_problem(seed);
        let free = closed_form_fit(&prob, None);
        let mut bounds = CoeffBounds::unbounded();
        let mut violated = false;
        for (k, &(roll, shift, upper)) in pins.iter().enumerate() {
            if roll < 0.3 {
                let delta = shift * (1.0 + free[k].abs());
                if upper {
                    bounds.upper[k] = free[k] - delta;
                } else {
                    bounds.lower[k] = free[k] + delta;
                }
                violated = true;
            }
        }
        prob.bounds = bounds;
        let (path, sol) = fit_cubic_detailed(&prob).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let f_c = prob.objective(&path.coeffs);
        let f_u = prob.objective(&free);
        let any_active = sol.state.iter().any(|s| *s != BoundState::Free);
        prop_assert!(f_c >= f_u * (1.0 - 1e-12), "constrained {f_c} below unconstrained {f_u}");
        if violated {
            prop_assert!(any_active && f_c > f_u, "binding bound left inactive");
        } else {
            prop_assert!(!any_active && close(f_c, f_u, 1e-9));
        }
        Ok(())
    })
}

pub fn fit_permutation_invariance() -> Result<(), String> {
    check(256, (any::<u64>(), any::<u64>()), |(seed, shuffle)| {
        let prob = random_fit_problem(seed);
        let mut order: Vec<usize> = (0..prob.xs.len()).collect();
        let mut r = super::rng(shuffle);
        for i in (1..order.len()).rev() {
            let j = rand::RngExt::random_range(&mut r, 0..=i);
            order.swap(i, j);
        }
        let mut perm = prob.clone();
        perm.xs = order.iter().map(|&i| prob.xs[i]).collect();
        perm.ys = order.iter().map(|&i| prob.ys[i]).collect();
        perm.weights = order.iter().map(|&i| prob.weights[i]).collect();
        let a = fit_cubic(&prob).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = fit_cubic(&perm).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (ra, rb) = (prob.objective(&a.coeffs), perm.objective(&b.coeffs));
        prop_assert!(close(ra, rb, 1e-9), "residual {ra} vs {rb}");
        Ok(())
    })
}

pub fn speed_profiles_feasible() -> Result<(), String> {
    check(48, (any::<u64>(), 4..10usize, prop::collection::vec(prop_oneof![Just(0.0), 0.0..25.0f64], 10)), |(seed, n, caps)| {
        let mut toy = toy_instance(seed, n);
        toy.caps = caps[..n].to_vec();
        let profile = optimize_speeds(&toy.problem());
        for (v, c) in profile.speeds.iter().zip(&toy.caps) {
            prop_assert!(*v >= 0.0 && v <= c, "speed {v} outside [0, {c}]");
        }
        Ok(())
    })
}

pub fn interaction_monotone_in_w3() -> Result<(), String> {
    check(24, (any::<u64>(), 0.0..10.0f64, 0.1..20.0f64), |(seed, w3a, extra)| {
        let mut toy = toy_instance(seed, 3);
        toy.weights.w3 = w3a.max(1e-3);
        let a = brute_force_speed_oracle(&toy.problem(), 20).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let ia = toy.problem().terms(&a.speeds).interaction;
        toy.weights.w3 += extra;
        let b = brute_force_speed_oracle(&toy.problem(), 20).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let ib = toy.problem().terms(&b.speeds).interaction;
        prop_assert!(ib <= ia + 1e-9 * (1.0 + ia.abs()), "interaction rose from {ia} to {ib}");
        Ok(())
    })
}

pub fn argmin_weight_scaling() -> Result<(), String> {
    check(24, (any::<u64>(), prop_oneof![Just(0.25), Just(0.5), Just(2.0), Just(8.0)], 0.1..10.0f64), |(seed, pow2, k)| {
        let toy = toy_instance(seed, 3);
        let base = brute_force_speed_oracle(&toy.problem(), 20).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut exact = toy.clone();
        exact.weights = toy.weights.scaled(pow2);
        let s = brute_force_speed_oracle(&exact.problem(), 20).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&s.speeds, &base.speeds);
        let mut general = toy.clone();
        general.weights = toy.weights.scaled(k);
        let g = brute_force_speed_oracle(&general.problem(), 20).map_err(|e| TestCaseError::fail(e.to_string()))?;
        if g.speeds != base.speeds {
            // Only a rounding-level tie may move the argmin.
            let pb = general.problem();
            prop_assert!(close(pb.objective(&g.speeds), pb.objective(&base.speeds), 1e-12));
        }
        Ok(())
    })
}

/// Only for targets with `½ w2 V_t² > w1 dt`; below that, stopping
/// shortens the horizon path enough to beat the target speed.
pub fn straight_path_clips_target() -> Result<(), String> {
    check(64, (any::<u64>(), 4..12usize, 3.0..30.0f64), |(seed, n, v_target)| {
        let mut toy = toy_instance(seed, n);
        toy.weights.w3 = 0.0;
        toy.v_target = v_target;
        let mut problem = toy.problem();
        problem.waypoint_opts.heading_limit = Some(0.0);
        let profile = optimize_speeds(&problem);
        for (v, c) in profile.speeds.iter().zip(&toy.caps) {
            let clip = v_target.clamp(0.0, *c);
            prop_assert!((v - clip).abs() <= 1e-4, "speed {v} vs clipped target {clip}");
        }
        Ok(())
    })
}

pub fn never_worse_than_naive() -> Result<(), String> {
    check(48, (any::<u64>(), 4..10usize), |(seed, n)| {
        let toy = toy_instance(seed, n);
        let problem = toy.problem();
        let naive = problem.objective(&problem.naive_profile());
        let profile = optimize_speeds(&problem);
        prop_assert!(profile.objective <= naive, "{} > naive {naive}", profile.objective);
        Ok(())
    })
}

fn short_merge(seed: u64, drop: f64, duration: f64, dx: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default_merge();
    cfg.sim.seed = seed;
    cfg.sim.drop_probability = drop;
    cfg.sim.duration = duration;
    cfg.vehicles[1].state.x += dx;
    cfg
}

fn planning_inputs(seed: u64, inbox_len: usize) -> (ScenarioConfig, Vec<SlpMessage>) {
    let toy = toy_instance(seed, 25);
    let mut cfg = ScenarioConfig::default_merge();
    cfg.vehicles[0].state = toy.ego;
    let inbox = (0..inbox_len)
        .map(|i| {
            let mut s = toy.others[0];
            s.id = 10 + i as u32;
            s.x += 7.0 * i as f64;
            straight_slp(&s, cfg.iso.horizon_n, cfg.iso.plan_dt, 3)
        })
        .collect();
    (cfg, inbox)
}

fn plan_for(cfg: &ScenarioConfig, kind: PlannerKind, inbox: &[SlpMessage]) -> Result<pfiso::Plan, TestCaseError> {
    let spec: &VehicleSpec = &cfg.vehicles[0];
    let others = [cfg.vehicles[1].state];
    let world = World {
        road: &cfg.road,
        ego: &spec.state,
        others: &others,
    };
    let mut settings = PlannerSettings::from_config(cfg);
    settings.on_minimum = MinimumPolicy::HoldHeading;
    plan_step(kind, &world, spec, inbox, &settings, 4).map_err(|e| TestCaseError::fail(e.to_string()))
}

pub fn planning_deterministic() -> Result<(), String> {
    check(24, (any::<u64>(), 0..3usize), |(seed, k)| {
        let (cfg, inbox) = planning_inputs(seed, k);
        for kind in PlannerKind::ALL {
            prop_assert_eq!(plan_for(&cfg, kind, &inbox)?, plan_for(&cfg, kind, &inbox)?);
        }
        Ok(())
    })
}

pub fn message_conservation() -> Result<(), String> {
    check(128, (2..7usize, any::<u64>()), |(v, seed)| {
        let messages: Vec<SlpMessage> = (0..v)
            .map(|i| straight_slp(&VehicleState::sedan(i as u32, 10.0 * i as f64, 1.75, 15.0), 4, 0.2, 0))
            .collect();
        let recipients: Vec<Recipient> = (0..v).map(|i| Recipient { id: i as u32, receive: true }).collect();
        let mut r = super::rng(seed);
        let ex = bus_exchange(&messages, &recipients, 0.0, &mut r).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let total: usize = ex.inboxes.values().map(Vec::len).sum();
        prop_assert_eq!(total, v * (v - 1));
        Ok(())
    })?;
    check(3, any::<u64>(), |seed| {
        let cfg = short_merge(seed, 0.0, 1.0, 0.0);
        let run = run_scenario(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let v = cfg.vehicles.len();
        for (tick, inboxes) in &run.inboxes {
            let total: usize = inboxes.values().map(Vec::len).sum();
            let want = if *tick == 0 { 0 } else { v * (v - 1) };
            prop_assert_eq!(total, want, "tick {}", tick);
        }
        Ok(())
    })
}

pub fn sp_equals_iso_without_interaction() -> Result<(), String> {
    check(24, (any::<u64>(), 0..4usize), |(seed, k)| {
        let (mut cfg, inbox) = planning_inputs(seed, k);
        cfg.iso.w3 = 0.0;
        let sp = plan_for(&cfg, PlannerKind::PfSp, &inbox)?;
        let iso = plan_for(&cfg, PlannerKind::PfIso, &inbox)?;
        prop_assert_eq!(&sp.path, &iso.path);
        prop_assert_eq!(&sp.profile, &iso.profile);
        prop_assert_eq!(&sp.message, &iso.message);
        prop_assert_eq!(&sp.waypoints, &iso.waypoints);
        Ok(())
    })
}

pub fn simulation_deterministic() -> Result<(), String> {
    check(3, (any::<u64>(), 0.0..0.5f64, -5.0..5.0f64), |(seed, drop, dx)| {
        let cfg = short_merge(seed, drop, 2.0, dx);
        let a = run_scenario(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = run_scenario(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (ta, tb) in a.traces.iter().zip(&b.traces) {
            prop_assert_eq!(ta.to_csv(), tb.to_csv());
        }
        prop_assert_eq!(a.slp_log, b.slp_log);
        prop_assert_eq!(a.report, b.report);
        Ok(())
    })
}

pub fn energy_sanity() -> Result<(), String> {
    check(4, (any::<u64>(), 10.0..30.0f64, 10.0..25.0f64, 0.0..0.3f64), |(seed, v_target, v_limit, drop)| {
        let mut cfg = short_merge(seed, drop, 3.0, 0.0);
        for v in &mut cfg.vehicles {
            v.v_target = v_target;
            v.v_limit = v_limit;
        }
        let run = run_scenario(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (trace, spec) in run.traces.iter().zip(&cfg.vehicles) {
            let bound = spec.state.v.max(spec.v_limit) + 1e-6;
            for r in &trace.records {
                prop_assert!(r.v <= bound, "vehicle {} at {} m/s over {bound}", trace.id, r.v);
            }
        }
        Ok(())
    })
}

pub fn trace_metric_consistency() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    check(3, (any::<u64>(), -5.0..5.0f64), |(seed, dx)| {
        let cfg = short_merge(seed, 0.0, 2.0, dx);
        let run = run_scenario(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (trace, metrics) in run.traces.iter().zip(&run.report.metrics) {
            let path = dir.path().join(format!("trace_{}.csv", trace.id));
            write_trace_csv(&path, trace).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let records = read_trace_csv(&path).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let again = compute_metrics(trace.id, &records, cfg.sim.dt, cfg.finish_line());
            prop_assert_eq!(&again, metrics);
            fs::remove_file(&path).ok();
        }
        Ok(())
    })
}
