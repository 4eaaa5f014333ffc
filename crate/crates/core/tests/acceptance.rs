//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any FAIL.

use std::path::Path;
use std::time::Instant;

use auvpilot::actuators::{
    actuator_matrix, applicable_rate, assemble_tau, rate_limit, static_limit, ActuatorBank, ActuatorVector, Allocator,
    LagState, MotorModel,
};
use auvpilot::autopilot::{run_mission, MissionRecord};
use auvpilot::config::RunConfig;
use auvpilot::controller::{ControlChannel, ControllerConfig, GainSchedule, Gains};
use auvpilot::dynamics::{
    added_mass, coriolis_added, coriolis_rigid, quadratic_damping, rigid_body_mass, Coefficient, DofMask, ModelParams,
    VehicleModel,
};
use auvpilot::guidance::{cross_track_error, WaypointPlan};
use auvpilot::identification::{self, run_stages, IdentStage, OptimizerConfig, ParameterBound, StageKind};
use auvpilot::regression::{self, FitOptions, SurgeDataset, TestDirection};
use auvpilot::simulator::{self, SimConfig, Simulator, TrajectoryLog};
use auvpilot::tuning::{self, GainBounds, StaircaseScenario};
use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn demo() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json");
    RunConfig::load(&path).expect("sample config loads")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn energy_neutrality() -> Outcome {
    let base = demo().model;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut p = base;
        p.mass_kg = rng.random_range(20.0..400.0);
        p.length_m = rng.random_range(0.8..5.0);
        p.radius_m = rng.random_range(0.05..0.4);
        for c in [Coefficient::CXud, Coefficient::CYvd, Coefficient::CZwd, Coefficient::CKpd, Coefficient::CMqd, Coefficient::CNrd] {
            p.coefficients.set(c, rng.random_range(0.0..2.0));
        }
        let nu = Vector6::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let m_norm = (rigid_body_mass(&p) + added_mass(&p)).norm();
        let c = coriolis_rigid(&p, &nu) + coriolis_added(&p, &nu);
        let power = (nu.transpose() * c * nu)[0].abs();
        worst = worst.max(power / (nu.norm_squared() * m_norm));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-9 && secs < 1.0,
        format!("max |nu^T C nu| / (|nu|^2 |M|) = {worst:.2e}, {secs:.3} s"),
    )
}

/// Surge-only vehicle with speed-independent thrust, `T = 4 p1 n^2`.
fn surge_setup(dt: f64, duration: f64, n: f64) -> (Simulator, f64, f64, f64, f64) {
    let cfg = demo();
    let mut bank = cfg.actuators;
    bank.stern.curve.p2_pos = 0.0;
    bank.stern.curve.p2_neg = 0.0;
    bank.geometry.alpha_p_rad = 0.0;
    bank.geometry.beta_p_rad = 0.0;
    let p = cfg.model;
    let model = VehicleModel::new(p).unwrap();
    let mass = model.mass_matrix()[(0, 0)];
    let mut sc = SimConfig::new(dt, duration);
    sc.v_const = DofMask::only(0);
    let mut sim = Simulator::new(model, bank, &sc).unwrap();
    sim.settle_motors(&[n, n, n, n, 0.0, 0.0]);
    let thrust = 4.0 * bank.stern.curve.p1_pos * n * n;
    (sim, thrust, p.coefficients.x_u, -quadratic_damping(&p)[0], mass)
}

fn run_surge(dt: f64, duration: f64, n: f64) -> f64 {
    let (mut sim, ..) = surge_setup(dt, duration, n);
    let samples = (duration / dt + 1e-9).floor() as usize + 1;
    let mut source = |_: usize, _: f64, _: &auvpilot::kinematics::VehicleState| -> ActuatorVector { [n, n, n, n, 0.0, 0.0] };
    let log = sim
        .run_from(Default::default(), samples, &mut source)
        .unwrap();
    log.rows.last().unwrap().state.nu[0]
}

fn terminal_velocity() -> Outcome {
    let n = 1200.0;
    let (_, thrust, x_u, b, mass) = surge_setup(0.01, 1.0, n);
    // T + X_u u - b u^2 = 0
    let (u1, u2) = {
        let d = (x_u * x_u + 4.0 * b * thrust).sqrt();
        ((x_u + d) / (2.0 * b), (x_u - d) / (2.0 * b))
    };
    let terminal = run_surge(0.01, 300.0, n);
    let rel = (terminal - u1).abs() / u1;
    let exact = |t: f64| {
        let c = u1 / u2;
        let e = (-(b / mass) * (u1 - u2) * t).exp();
        (u1 - u2 * c * e) / (1.0 - c * e)
    };
    let t_end = 8.0;
    let e1 = (run_surge(0.4, t_end, n) - exact(t_end)).abs();
    let e2 = (run_surge(0.2, t_end, n) - exact(t_end)).abs();
    let ratio = e1 / e2;
    check(
        rel < 1e-3 && (8.0..=32.0).contains(&ratio),
        format!("u_end = {terminal:.6} vs root {u1:.6} (rel {rel:.1e}); dt-halving error ratio {ratio:.2}"),
    )
}

fn regression_round_trip() -> Outcome {
    // general quadratics for the exact round trip, pure propeller curves for the noisy one
    let general = [[0.5, 2e-3, 1.5e-5], [-0.4, 1e-3, -1.0e-5], [2.0, 4e-3, 1.2e-5], [-1.5, 3e-3, -0.8e-5]];
    let propeller = [[0.0, 0.0, 1.5e-5], [0.0, 0.0, -1.0e-5], [0.0, 0.0, 1.0e-5], [0.0, 0.0, -0.8e-5]];
    let mut worst_clean: f64 = 0.0;
    let mut worst_b_clean: f64 = 1.0;
    let mut worst_noisy: f64 = 0.0;
    let mut worst_b_noisy: f64 = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let opts = FitOptions::default();
    for (k, d) in TestDirection::ALL.iter().enumerate() {
        let sign = if d.positive_rpm() { 1.0 } else { -1.0 };
        let n: Vec<f64> = (0..191).map(|i| sign * (100.0 + 10.0 * i as f64)).collect();
        let curve = |a: [f64; 3]| -> Vec<(f64, f64)> { n.iter().map(|&x| (x, a[0] + a[1] * x + a[2] * x * x)).collect() };

        let a = general[k];
        let r = regression::fit(&SurgeDataset::new(*d, curve(a)).unwrap(), &opts).map_err(|e| e.to_string())?;
        for (got, want) in r.a_hat.iter().zip(a) {
            worst_clean = worst_clean.max((got - want).abs() / want.abs());
        }
        worst_b_clean = worst_b_clean.min(r.b_det.unwrap_or(0.0));

        let a = propeller[k];
        let noisy: Vec<(f64, f64)> = curve(a)
            .into_iter()
            .map(|(x, f)| (x, f + Normal::new(0.0, 0.01 * f.abs()).unwrap().sample(&mut rng)))
            .collect();
        let rn = regression::fit(&SurgeDataset::new(*d, noisy).unwrap(), &opts).map_err(|e| e.to_string())?;
        // zero coefficients: error of their contribution at full speed relative to the peak force
        let peak = (a[2] * 2000.0 * 2000.0).abs();
        for (j, (got, want)) in rn.a_hat.iter().zip(a).enumerate() {
            let err = if want == 0.0 {
                (got * 2000f64.powi(j as i32)).abs() / peak
            } else {
                (got - want).abs() / want.abs()
            };
            worst_noisy = worst_noisy.max(err);
        }
        worst_b_noisy = worst_b_noisy.min(rn.b_det.unwrap_or(0.0));
    }
    check(
        worst_clean <= 1e-9 && worst_b_clean >= 1.0 - 1e-12 && worst_noisy <= 0.03 && worst_b_noisy > 0.99,
        format!(
            "noiseless: max rel {worst_clean:.1e}, min B {worst_b_clean:.15}; 1% noise: max err {worst_noisy:.4}, min B {worst_b_noisy:.5}"
        ),
    )
}

fn perturbed(truth: &ModelParams, coeffs: &[Coefficient]) -> ModelParams {
    let mut p = *truth;
    for (i, c) in coeffs.iter().enumerate() {
        let f = if i % 2 == 0 { 1.5 } else { 0.5 };
        p.coefficients.set(*c, truth.coefficients.get(*c) * f);
    }
    p
}

fn stage_plan(truth: &ModelParams) -> Vec<IdentStage> {
    StageKind::ORDER
        .iter()
        .map(|&kind| {
            let params = kind
                .coefficients()
                .iter()
                .map(|&c| {
                    let v = truth.coefficients.get(c);
                    let (low, high) = if v > 0.0 { (0.2 * v, 3.0 * v) } else { (3.0 * v, 0.2 * v) };
                    ParameterBound { coefficient: c, low, high }
                })
                .collect();
            IdentStage::new(kind, params)
        })
        .collect()
}

fn identify_all(truth: &ModelParams, bank: &ActuatorBank, seed: u64) -> auvpilot::Result<(ModelParams, Vec<identification::StageReport>)> {
    let stages = stage_plan(truth);
    let refs: Vec<TrajectoryLog> = StageKind::ORDER
        .iter()
        .map(|&k| identification::synthetic_reference(k, truth, bank, 0.05))
        .collect::<auvpilot::Result<_>>()?;
    let all: Vec<Coefficient> = StageKind::ORDER.iter().flat_map(|k| k.coefficients()).collect();
    let start = perturbed(truth, &all);
    let pairs: Vec<(IdentStage, &TrajectoryLog)> = stages.into_iter().zip(refs.iter()).collect();
    let opt = OptimizerConfig { seed, ..OptimizerConfig::default() };
    run_stages(&pairs, &start, bank, &opt)
}

fn self_identification() -> Outcome {
    let cfg = demo();
    let start = Instant::now();
    let (found, reports) = identify_all(&cfg.model, &cfg.actuators, 3).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut worst_err: f64 = 0.0;
    let mut worst_reduction: f64 = 1.0;
    for r in &reports {
        for c in r.stage.coefficients() {
            let t = cfg.model.coefficients.get(c);
            worst_err = worst_err.max((found.coefficients.get(c) - t).abs() / t.abs());
        }
        worst_reduction = worst_reduction.min(1.0 - r.final_q / r.initial_q);
    }
    check(
        worst_err < 0.05 && worst_reduction >= 0.9 && secs < 600.0,
        format!("max coefficient error {worst_err:.2e}, min Q reduction {:.4}%, {secs:.1} s", 100.0 * worst_reduction),
    )
}

fn lag_model() -> Outcome {
    let dt = 0.01;
    let m = MotorModel {
        n_max_pos_rpm: 2000.0,
        n_max_neg_rpm: -2000.0,
        n_min_pos_rpm: 100.0,
        n_min_neg_rpm: -100.0,
        n_acc_rpm_s: 500.0,
        n_dec_rpm_s: 800.0,
        gain: 0.9,
        lag_time_constant_s: 0.2,
        dead_time_s: 0.05,
    };
    let mut lag = LagState::new(&m, dt);
    let step = 1000.0;
    let target = 0.632 * m.gain * step;
    // outputs at t = dt, 2 dt, ...
    let out: Vec<f64> = (0..200).map(|_| lag.step(step)).collect();
    let t_at = |k: usize| (k + 1) as f64 * dt;
    let dead_zero = out.iter().enumerate().filter(|(k, _)| t_at(*k) < m.dead_time_s - 1e-12).all(|(_, v)| *v == 0.0);
    let hit = out.iter().position(|v| *v >= target).map(t_at).unwrap_or(f64::NAN);
    let expected = m.dead_time_s + m.lag_time_constant_s;
    check(
        dead_zero && (hit - expected).abs() <= dt + 1e-9,
        format!("63.2% reached at t = {hit:.2} s (expected {expected:.2} s), zero before dead time: {dead_zero}"),
    )
}

fn motor_limits() -> Outcome {
    let m = demo().actuators.stern.motor;
    let oracle = |n: f64| {
        if n >= m.n_max_pos_rpm {
            m.n_max_pos_rpm
        } else if n > 0.0 && n < m.n_min_pos_rpm {
            m.n_min_pos_rpm
        } else if n == 0.0 {
            0.0
        } else if n < 0.0 && n > m.n_min_neg_rpm {
            m.n_min_neg_rpm
        } else if n <= m.n_max_neg_rpm {
            m.n_max_neg_rpm
        } else {
            n
        }
    };
    let mut grid: Vec<f64> = (-10000..=10000).map(|k| k as f64 * 0.25).collect();
    for b in [m.n_max_pos_rpm, m.n_max_neg_rpm, m.n_min_pos_rpm, m.n_min_neg_rpm, 0.0] {
        grid.extend([b, b.next_up(), b.next_down()]);
    }
    let mismatches = grid.iter().filter(|&&n| static_limit(&m, n) != oracle(n)).count();
    let dt = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut prev = 0.0;
    let mut violations = 0;
    let mut target: f64 = 0.0;
    for k in 0..20000 {
        if k % 150 == 0 {
            target = static_limit(&m, rng.random_range(-2500.0..2500.0));
        }
        let next = rate_limit(&m, prev, target, dt);
        let growing = prev == 0.0 || prev * (next - prev) > 0.0;
        let bound = if growing { m.n_acc_rpm_s } else { m.n_dec_rpm_s } * dt;
        if (next - prev).abs() > bound * (1.0 + 1e-12) || applicable_rate(&m, prev, target) * dt < bound * (1.0 - 1e-12) {
            violations += 1;
        }
        prev = next;
    }
    check(
        mismatches == 0 && violations == 0,
        format!("{} static samples, {mismatches} mismatches; 20000 rate-limited steps, {violations} violations", grid.len()),
    )
}

fn surge_staircase() -> StaircaseScenario {
    StaircaseScenario {
        channel: ControlChannel::Surge,
        initial_value: 0.0,
        levels: vec![0.5, 1.0, 1.5, 2.0],
        step_duration_s: 20.0,
        settling_s: 5.0,
        corridor_fraction: 0.2,
        cruise_speed_m_s: 0.0,
        weight_lower: 1.0,
        weight_upper: 1.0,
        dt_s: 0.01,
    }
}

fn weak_surge(mut c: ControllerConfig) -> ControllerConfig {
    c.surge.schedule = GainSchedule::uniform(Gains { k_p: 4.0, k_i: 0.0, k_d: 0.0 });
    c
}

fn surge_bounds() -> GainBounds {
    GainBounds { k_p: [0.0, 400.0], k_i: [0.0, 100.0], k_d: [0.0, 20.0] }
}

fn guidance_closed_loop() -> Outcome {
    let cfg = demo();
    let truth = cfg.model;
    let bank = cfg.actuators;
    let (identified, _) = identify_all(&truth, &bank, 11).map_err(|e| e.to_string())?;
    let opt = OptimizerConfig { seed: 4, ..OptimizerConfig::default() };
    let base = weak_surge(cfg.controller.clone().unwrap());
    let (tuned, report) = tuning::tune(&surge_staircase(), &base, &surge_bounds(), &identified, &bank, &opt, false)
        .map_err(|e| e.to_string())?;
    let r0 = 2.0;
    let plan = WaypointPlan::new(
        vec![
            (Vector3::new(20.0, 0.0, 0.0), 1.0),
            (Vector3::new(40.0, 10.0, 3.0), 1.0),
            (Vector3::new(60.0, 10.0, 3.0), 1.2),
            (Vector3::new(80.0, 0.0, 0.0), 1.0),
        ],
        r0,
    )
    .unwrap();
    let sim = SimConfig::new(0.01, 150.0);
    let (log, records) = run_mission(&truth, &bank, &sim, &plan, &tuned).map_err(|e| e.to_string())?;
    let pos = |k: usize| log.rows[k].state.position();
    // each switch happens inside the sphere of the waypoint just left
    let mut visited = Vec::new();
    for k in 1..records.len() {
        let (a, b): (&MissionRecord, &MissionRecord) = (&records[k - 1], &records[k]);
        let reached = ((b.complete && !a.complete) || b.index != a.index).then_some(a.index);
        if let Some(i) = reached {
            if (pos(k) - plan.waypoints[i]).norm() <= r0 + 1e-9 {
                visited.push(i);
            }
        }
    }
    let in_order = visited == (0..plan.len()).collect::<Vec<_>>();
    // cross-track error where each leg's midpoint is passed
    let mut worst_mid: f64 = 0.0;
    for i in 0..plan.len() {
        let from = if i == 0 { Vector3::zeros() } else { plan.waypoints[i - 1] };
        let to = plan.waypoints[i];
        let axis = (to - from).normalize();
        let half = 0.5 * (to - from).norm();
        if let Some(k) = (0..records.len()).find(|&k| records[k].index == i && (pos(k) - from).dot(&axis) >= half) {
            worst_mid = worst_mid.max(cross_track_error(&pos(k), &from, &to));
        } else {
            worst_mid = f64::INFINITY;
        }
    }
    check(
        in_order && worst_mid < 2.0 * r0 && report.final_q == 0.0,
        format!(
            "spheres entered in order: {visited:?}; max mid-leg cross-track {worst_mid:.3} m (limit {}); tuning Q {}",
            2.0 * r0,
            report.final_q
        ),
    )
}

fn constraint_tuning() -> Outcome {
    let cfg = demo();
    let base = weak_surge(cfg.controller.clone().unwrap());
    let opt = OptimizerConfig { seed: 9, ..OptimizerConfig::default() };
    let scenario = surge_staircase();
    let start = Instant::now();
    let run = || tuning::tune(&scenario, &base, &surge_bounds(), &cfg.model, &cfg.actuators, &opt, false);
    let (a, ra) = run().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (b, rb) = run().map_err(|e| e.to_string())?;
    let same = a == b && ra.final_q == rb.final_q && ra.q_history == rb.q_history;
    check(
        ra.final_q == 0.0 && ra.initial_q > 0.0 && same && secs < 300.0,
        format!("Q {:.3} -> {}, repeat identical: {same}, {secs:.2} s", ra.initial_q, ra.final_q),
    )
}

fn allocation_round_trip() -> Outcome {
    let g = demo().actuators.geometry;
    let alloc = Allocator::new(&g).map_err(|e| e.to_string())?;
    let b = actuator_matrix(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let f = Vector6::from_fn(|_, _| rng.random_range(-50.0..50.0));
        let tau = b * f;
        let got = assemble_tau(&g, &alloc.allocate(&tau).map_err(|e| e.to_string())?);
        worst = worst.max((got - tau).norm() / tau.norm());
    }
    let surge = alloc.allocate(&Vector6::new(40.0, 0.0, 0.0, 0.0, 0.0, 0.0)).map_err(|e| e.to_string())?;
    let spread = surge[..4].iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - surge[..4].iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let equal = spread <= 1e-12 * surge[0].abs();
    check(
        worst <= 1e-8 && equal,
        format!("max relative residual {worst:.1e}; pure surge stern forces {:.6} (spread {spread:.1e})", surge[0]),
    )
}

fn campaign_bytes(cfg: &RunConfig) -> auvpilot::Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    let mut schedule = simulator::CommandSchedule::new(vec![(0.0, [1200.0, 1200.0, 900.0, 900.0, 300.0, 300.0])])?;
    let mut sc = cfg.simulation.clone();
    sc.duration_s = 30.0;
    let log = simulator::run(&VehicleModel::new(cfg.model)?, &cfg.actuators, &sc, &mut schedule)?;
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    out.push(buf);

    let (model, reports) = identify_all(&cfg.model, &cfg.actuators, 21)?;
    out.push(serde_json::to_vec(&model)?);
    out.push(identification::report_text(&reports).into_bytes());
    for r in &reports {
        let mut buf = Vec::new();
        r.write_history_csv(&mut buf)?;
        out.push(buf);
    }

    let opt = OptimizerConfig { seed: 21, ..OptimizerConfig::default() };
    let base = weak_surge(cfg.controller.clone().unwrap());
    let (tuned, report) = tuning::tune(&surge_staircase(), &base, &surge_bounds(), &cfg.model, &cfg.actuators, &opt, false)?;
    out.push(serde_json::to_vec(&tuned)?);
    out.push(report.text().into_bytes());
    let mut buf = Vec::new();
    report.trajectory.write_csv(&mut buf)?;
    out.push(buf);
    Ok(out)
}

fn determinism() -> Outcome {
    let cfg = demo();
    let a = campaign_bytes(&cfg).map_err(|e| e.to_string())?;
    let b = campaign_bytes(&cfg).map_err(|e| e.to_string())?;
    let bytes: usize = a.iter().map(Vec::len).sum();
    check(a == b, format!("{} outputs, {bytes} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("energy neutrality of the Coriolis terms", energy_neutrality),
        ("terminal velocity and RK4 order", terminal_velocity),
        ("regression round trip", regression_round_trip),
        ("staged self-identification", self_identification),
        ("motor lag step response", lag_model),
        ("static and rate limits", motor_limits),
        ("closed-loop waypoint guidance", guidance_closed_loop),
        ("constraint tuning on a speed staircase", constraint_tuning),
        ("allocation round trip", allocation_round_trip),
        ("determinism of simulate, identify and tune", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
