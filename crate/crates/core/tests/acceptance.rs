//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwnmpc::config::ConfigFile;
use uwnmpc::current::{to_body, to_inertial};
use uwnmpc::dynamics::coriolis_power;
use uwnmpc::gradcheck::random_problem;
use uwnmpc::mission::{self, Backoff, MissionConfig, MissionLog, MissionSettings, OcpSettings};
use uwnmpc::ocp::{self, ControlSequence};
use uwnmpc::workspace::Violation;
use uwnmpc::{
    solver, CurrentField, OcpProblem, Outcome, SolverConfig, Sphere, TerminalRegion, VehicleParams,
    VehicleState, VelocityBounds, Weights, Workspace,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn fixture_run() -> (MissionConfig, MissionLog, Duration) {
    let cfg = ConfigFile::tank_fixture().into_mission(None, 0).expect("fixture is valid");
    let started = Instant::now();
    let log = mission::run(&cfg).expect("mission runs");
    (cfg, log, started.elapsed())
}

fn fixture_mission() -> Verdict {
    let (cfg, log, elapsed) = fixture_run();
    let pillars = [(-0.625, -0.625), (0.9375, 0.0)];
    let mut min_gap = f64::INFINITY;
    let mut worst_vel = f64::NEG_INFINITY;
    let mut min_margin = f64::INFINITY;
    let prob = cfg.problem(cfg.mission.initial_state, cfg.mission.waypoints[0]);
    let mut truth = prob.clone();
    truth.workspace = cfg.workspace.clone();
    truth.bounds = cfg.ocp.bounds.clone();
    for s in log.states() {
        for (px, py) in pillars {
            min_gap = min_gap.min((s.x - px).hypot(s.y - py));
        }
        worst_vel = worst_vel
            .max((s.u_r + s.v_r).abs() - 0.5)
            .max(s.w_r.abs() - 0.25)
            .max(s.r_r.abs() - 1.0);
        min_margin = min_margin.min(common::margin(&truth, &common::arr(s)));
    }
    let thrust_ok = log.records.iter().all(|r| r.applied.to_array().iter().all(|t| (-12.0..=12.0).contains(t)));
    let laps_ok = log.arrivals.len() == 6;
    let pass = log.outcome == Outcome::Success
        && laps_ok
        && min_gap >= 0.46
        && min_margin >= 0.0
        && worst_vel <= 1e-6
        && thrust_ok
        && elapsed <= Duration::from_secs(300);
    verdict(
        pass,
        format!(
            "outcome {:?}, {} arrivals, min centre gap {min_gap:.4} m, min margin {min_margin:.4}, \
             worst velocity excess {worst_vel:.2e}, thrusts in box {thrust_ok}, {:.1?}",
            log.outcome,
            log.arrivals.len(),
            elapsed
        ),
    )
}

fn coriolis_passivity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mut p = VehicleParams::default();
        p.m11 = rng.random_range(0.1..100.0);
        p.m22 = rng.random_range(0.1..100.0);
        p.m33 = rng.random_range(0.1..100.0);
        p.m44 = rng.random_range(0.1..100.0);
        let s = VehicleState {
            u_r: rng.random_range(-2.0..2.0),
            v_r: rng.random_range(-2.0..2.0),
            w_r: rng.random_range(-2.0..2.0),
            r_r: rng.random_range(-3.0..3.0),
            ..VehicleState::default()
        };
        worst = worst.max(coriolis_power(&s, &p).abs());
    }
    verdict(worst <= 1e-10, format!("max |power| {worst:.2e} over 1e4 samples"))
}

fn gradient_correctness() -> Verdict {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (prob, seq) = random_problem(&mut rng, 10);
        let analytic: Vec<f64> = ocp::cost_gradient(&prob, &seq).into_iter().flatten().collect();
        let flat = seq.to_flat();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..flat.len() {
            let mut a = flat.clone();
            let mut b = flat.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (ocp::cost(&prob, &ControlSequence::from_flat(&a))
                - ocp::cost(&prob, &ControlSequence::from_flat(&b)))
                / (2.0 * h);
            err = err.max((analytic[i] - fd).abs());
            scale = scale.max(fd.abs());
        }
        worst = worst.max(err / scale);
    }
    verdict(worst <= 1e-5, format!("max relative error {worst:.2e} over 50 problems"))
}

fn tiny_instance(rng: &mut ChaCha8Rng) -> (OcpProblem, [f64; 3]) {
    let c = [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), 0.0];
    let mut workspace = Workspace::tank(5.0, 3.0, (-0.3, 1.5), 0.3);
    workspace.obstacles = vec![Sphere::pillar(-0.625, -0.625, 0.16), Sphere::pillar(0.9375, 0.0, 0.16)];
    let bounds = VelocityBounds::new(0.5, 0.25, 1.0);
    loop {
        let uv = rng.random_range(-0.5..0.5);
        let split = rng.random_range(0.0..1.0);
        let x0 = VehicleState {
            x: rng.random_range(-2.0..2.0),
            y: rng.random_range(-1.1..1.1),
            z: rng.random_range(0.1..1.1),
            psi: rng.random_range(-PI..PI),
            u_r: uv * split,
            v_r: uv * (1.0 - split),
            w_r: rng.random_range(-0.2..0.2),
            r_r: rng.random_range(-0.8..0.8),
        };
        let target = VehicleState::at_pose(
            x0.x + rng.random_range(-1.0..1.0),
            x0.y + rng.random_range(-1.0..1.0),
            x0.z,
            rng.random_range(-PI..PI),
        );
        let prob = OcpProblem {
            x0,
            target,
            horizon: 2,
            weights: Weights::default(),
            thrust_box: [12.0, 12.0, 0.0, 0.0],
            workspace: workspace.clone(),
            bounds: bounds.clone(),
            field: Arc::new(CurrentField::Uniform(c)),
            params: VehicleParams::default(),
            terminal_region: TerminalRegion::default(),
        };
        // position of x_1 does not depend on the input, so demand it is free
        let x1 = common::step(&common::arr(&x0), &[0.0; 4], c, &prob.params);
        let mut pos_only = prob.clone();
        pos_only.bounds = VelocityBounds::new(1e9, 1e9, 1e9);
        if common::margin(&pos_only, &x1) > 0.0 {
            return (prob, c);
        }
    }
}

fn oracle_domination() -> Verdict {
    let levels = [-12.0, -6.0, 0.0, 6.0, 12.0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SolverConfig::default();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut all_ok = true;
    for _ in 0..20 {
        let (prob, c) = tiny_instance(&mut rng);
        let mut best = f64::INFINITY;
        for a in levels {
            for b in levels {
                for d in levels {
                    for e in levels {
                        let taus = [[a, b, 0.0, 0.0], [d, e, 0.0, 0.0]];
                        let xs = common::rollout(&common::arr(&prob.x0), &taus, c, &prob.params);
                        if common::margin(&prob, &xs[1]) >= 0.0 {
                            best = best.min(common::cost(&prob, &taus, c));
                        }
                    }
                }
            }
        }
        let sol = solver::solve(&prob, None, &cfg).expect("valid instance");
        let taus = common::taus_of(&sol.seq.taus);
        let solver_cost = common::cost(&prob, &taus, c);
        let xs = common::rollout(&common::arr(&prob.x0), &taus, c, &prob.params);
        let feasible = common::margin(&prob, &xs[1]) >= -cfg.constraint_tol;
        let in_box = taus.iter().all(|t| t[0].abs() <= 12.0 && t[1].abs() <= 12.0 && t[2] == 0.0 && t[3] == 0.0);
        worst_gap = worst_gap.max(solver_cost - best);
        all_ok &= feasible && in_box && solver_cost <= best + 1e-6;
    }
    verdict(all_ok, format!("worst solver minus grid cost {worst_gap:.3e} over 20 instances"))
}

fn leg_config(current: f64) -> MissionConfig {
    let field = Arc::new(CurrentField::Uniform([current, 0.0, 0.0]));
    MissionConfig {
        params: VehicleParams::default(),
        workspace: Workspace::tank(5.0, 3.0, (-0.3, 1.5), 0.3),
        truth_field: field.clone(),
        controller_field: field,
        ocp: OcpSettings {
            horizon: 20,
            weights: Weights::default(),
            thrust_box: [12.0; 4],
            bounds: VelocityBounds::new(0.5, 0.25, 1.0),
            terminal_region: TerminalRegion::default(),
            backoff: Backoff {
                velocity: 0.01,
                clearance: 0.02,
            },
        },
        solver: SolverConfig::default(),
        mission: MissionSettings {
            initial_state: VehicleState::at_pose(-1.5, 0.0, 0.6, 0.0),
            waypoints: vec![VehicleState::at_pose(1.5, 0.0, 0.6, 0.0)],
            laps: 1,
            tick: 0.1,
            truth_substeps: 4,
            max_ticks: 1500,
            max_solver_failures: 30,
            measurement_noise: None,
        },
        seed: 5,
    }
}

fn energy(log: &MissionLog) -> f64 {
    log.records.iter().map(|r| r.applied.norm_squared() * log.tick).sum()
}

fn current_exploitation() -> Verdict {
    let runs = mission::run_batch(&[leg_config(0.1), leg_config(-0.1)], uwnmpc::Execution::Parallel);
    let aligned = runs[0].as_ref().expect("aligned run");
    let opposed = runs[1].as_ref().expect("opposed run");
    let (ea, eo) = (energy(aligned), energy(opposed));
    let ratio = ea / eo;
    let pass = aligned.outcome == Outcome::Success && opposed.outcome == Outcome::Success && ratio < 0.9;
    verdict(
        pass,
        format!(
            "aligned {ea:.2} ({:?}), opposed {eo:.2} ({:?}), ratio {ratio:.3}",
            aligned.outcome, opposed.outcome
        ),
    )
}

fn workspace_validator() -> Verdict {
    let ws = ConfigFile::tank_fixture().workspace;
    let accepted = ws.validate().is_empty();
    let mut tight = ws.clone();
    let first = tight.obstacles[0].center;
    tight.obstacles[1].center = [first[0] + 0.90, first[1], first[2]];
    let threshold = 2.0 * 0.3 + 0.16 + 0.16;
    let expected = threshold - 0.90;
    let found = tight.validate();
    let named = matches!(
        found.as_slice(),
        [Violation::ObstaclePair { i: 0, j: 1, margin }] if (margin - expected).abs() < 1e-12
    );
    verdict(accepted && named, format!("fixture accepted {accepted}; perturbed reports {found:?}"))
}

fn determinism() -> Verdict {
    let meta = [("seed", "0".to_owned())];
    let (_, a, _) = fixture_run();
    let (_, b, _) = fixture_run();
    let (ca, cb) = (a.to_csv(&meta), b.to_csv(&meta));
    verdict(ca.as_bytes() == cb.as_bytes(), format!("{} bytes, {} rows", ca.len(), a.records.len()))
}

fn transform_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut norm_err = 0.0f64;
    let mut trip_err = 0.0f64;
    for _ in 0..10_000 {
        let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let psi = rng.random_range(-10.0..10.0);
        let b = to_body(v, psi);
        let n = |a: [f64; 3]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        norm_err = norm_err.max((n(b) - n(v)).abs());
        let back = to_inertial(b, psi);
        trip_err = trip_err.max((0..3).map(|i| (back[i] - v[i]).abs()).fold(0.0, f64::max));
    }
    let mut wrap_err = 0.0f64;
    for _ in 0..200 {
        let (prob, seq) = random_problem(&mut rng, 10);
        let mut shifted = prob.clone();
        shifted.x0.psi += 2.0 * PI;
        wrap_err = wrap_err.max((ocp::cost(&prob, &seq) - ocp::cost(&shifted, &seq)).abs());
        let mut target_shift = prob.clone();
        target_shift.target.psi -= 2.0 * PI;
        wrap_err = wrap_err.max((ocp::cost(&prob, &seq) - ocp::cost(&target_shift, &seq)).abs());
    }
    let pass = norm_err <= 1e-12 && trip_err <= 1e-12 && wrap_err <= 1e-10;
    verdict(
        pass,
        format!("norm {norm_err:.1e}, round trip {trip_err:.1e}, yaw shift cost {wrap_err:.1e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("fixture mission", fixture_mission),
        ("coriolis passivity", coriolis_passivity),
        ("gradient correctness", gradient_correctness),
        ("solver vs grid oracle", oracle_domination),
        ("current exploitation", current_exploitation),
        ("workspace validator", workspace_validator),
        ("determinism", determinism),
        ("transform algebra", transform_algebra),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {}: {} {name}: {}", k + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
