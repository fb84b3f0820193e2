//! Finite-difference verification of the analytic derivatives.
//!
//! Both suites draw randomized fixtures from a seeded generator and compare
//! against central differences with step `h`. Samples in which any velocity
//! component comes within `KINK_MARGIN` of zero are redrawn, since `|v| v`
//! is not twice differentiable there.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::current::{CurrentField, CurrentSample, JetField};
use crate::dynamics::{step, step_jacobians, wrap_angle, ThrustCommand, VehicleParams, VehicleState, INPUT_DIM};
use crate::ocp::{self, ControlSequence, OcpProblem, TerminalRegion, Weights};
use crate::par::{self, Execution};
use crate::workspace::{VelocityBounds, Workspace};

pub const KINK_MARGIN: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Deliberate corruption of the analytic derivatives, for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Drops the factor 2 from the surge quadratic-drag derivative.
    QuadraticDragDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub jacobian_samples: usize,
    pub jacobian_max_rel_error: f64,
    pub gradient_instances: usize,
    pub gradient_max_rel_error: f64,
    pub pass: bool,
}

fn away_from_kinks(s: &VehicleState) -> bool {
    s.velocity().iter().all(|v| v.abs() >= KINK_MARGIN)
}

fn random_params(rng: &mut ChaCha8Rng) -> VehicleParams {
    VehicleParams {
        m11: rng.random_range(10.0..30.0),
        m22: rng.random_range(10.0..30.0),
        m33: rng.random_range(10.0..30.0),
        m44: rng.random_range(10.0..30.0),
        ..VehicleParams::default()
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
    loop {
        let s = VehicleState {
            x: rng.random_range(-2.0..2.0),
            y: rng.random_range(-1.2..1.2),
            z: rng.random_range(0.0..1.2),
            psi: rng.random_range(-PI..PI),
            u_r: rng.random_range(-0.6..0.6),
            v_r: rng.random_range(-0.6..0.6),
            w_r: rng.random_range(-0.3..0.3),
            r_r: rng.random_range(-1.0..1.0),
        };
        if away_from_kinks(&s) {
            return s;
        }
    }
}

fn random_thrust(rng: &mut ChaCha8Rng, scale: f64) -> ThrustCommand {
    ThrustCommand::from_array(std::array::from_fn(|_| rng.random_range(-scale..scale)))
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

fn apply_fault(fault: Option<Fault>, a: &mut crate::dynamics::StateJacobian, s: &VehicleState, p: &VehicleParams) {
    if let Some(Fault::QuadraticDragDerivative) = fault {
        a[(4, 4)] -= p.dt * p.x_uu * s.u_r.abs() / p.m11;
    }
}

/// Worst normwise relative error of `step_jacobians` over `samples` draws.
pub fn jacobian_check(seed: u64, samples: usize, h: f64, fault: Option<Fault>, mode: Execution) -> f64 {
    let errors = par::map_range(samples, mode, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let params = random_params(&mut rng);
        let s = random_state(&mut rng);
        let tau = random_thrust(&mut rng, 12.0);
        let c = CurrentSample::from_inertial([rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0], s.psi);
        let (mut a, b) = step_jacobians(&s, &tau, &c, &params);
        apply_fault(fault, &mut a, &s, &params);

        let f = |x: &VehicleState, t: &ThrustCommand| step(x, t, &c, &params).to_vector();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        let base = s.to_vector();
        for j in 0..8 {
            let mut xp = base;
            let mut xm = base;
            xp[j] += h;
            xm[j] -= h;
            // difference raw vectors so yaw wrapping cannot introduce jumps
            let mut d = f(&VehicleState::from_vector(&xp), &tau) - f(&VehicleState::from_vector(&xm), &tau);
            d[3] = wrap_angle(d[3]);
            let col = d / (2.0 * h);
            for i in 0..8 {
                err = err.max((col[i] - a[(i, j)]).abs());
                scale = scale.max(col[i].abs());
            }
        }
        for j in 0..INPUT_DIM {
            let mut tp = tau.to_array();
            let mut tm = tau.to_array();
            tp[j] += h;
            tm[j] -= h;
            let col = (f(&s, &ThrustCommand::from_array(tp)) - f(&s, &ThrustCommand::from_array(tm))) / (2.0 * h);
            let bscale = max_abs(col.iter().copied()).max(f64::MIN_POSITIVE);
            let berr = max_abs((0..8).map(|i| col[i] - b[(i, j)]));
            err = err.max(berr / bscale * scale);
        }
        err / scale.max(f64::MIN_POSITIVE)
    });
    errors.into_iter().fold(0.0, f64::max)
}

/// A random OCP with horizon at most `max_horizon` whose nominal rollout
/// keeps every velocity component away from zero and the yaw error away
/// from the wrap point.
pub fn random_problem(rng: &mut ChaCha8Rng, max_horizon: usize) -> (OcpProblem, ControlSequence) {
    loop {
        let horizon = rng.random_range(1..=max_horizon);
        let field = match rng.random_range(0..3) {
            0 => CurrentField::Uniform([0.0; 3]),
            1 => CurrentField::Uniform([rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), 0.0]),
            _ => CurrentField::Jet(JetField {
                origin: [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), 0.6],
                heading: rng.random_range(-PI..PI),
                speed: rng.random_range(0.05..0.2),
                width: rng.random_range(0.2..0.6),
                spread: rng.random_range(0.0..0.3),
            }),
        };
        let mut weights = Weights::default();
        for w in weights.q.iter_mut().chain(weights.p.iter_mut()) {
            *w = rng.random_range(0.1..20.0);
        }
        for w in weights.r.iter_mut() {
            *w = rng.random_range(1e-3..0.1);
        }
        let prob = OcpProblem {
            x0: random_state(rng),
            target: VehicleState {
                u_r: rng.random_range(-0.2..0.2),
                ..VehicleState::at_pose(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.1..1.1),
                    rng.random_range(-PI..PI),
                )
            },
            horizon,
            weights,
            thrust_box: [12.0; 4],
            workspace: Workspace::tank(5.0, 3.0, (-0.3, 1.5), 0.3),
            bounds: VelocityBounds::new(0.5, 0.25, 1.0),
            field: Arc::new(field),
            params: random_params(rng),
            terminal_region: TerminalRegion::default(),
        };
        let seq = ControlSequence {
            taus: (0..horizon).map(|_| random_thrust(rng, 6.0)).collect(),
        };
        let states = ocp::rollout(&prob, &seq);
        let usable = states.iter().all(away_from_kinks)
            && states.iter().all(|s| wrap_angle(s.psi - prob.target.psi).abs() < PI - 0.05);
        if usable {
            return (prob, seq);
        }
    }
}

/// Worst normwise relative error of `cost_gradient` over `instances` OCPs.
pub fn gradient_check(
    seed: u64,
    instances: usize,
    max_horizon: usize,
    h: f64,
    fault: Option<Fault>,
    mode: Execution,
) -> f64 {
    let errors = par::map_range(instances, mode, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + k as u64).wrapping_mul(0xD134_2543_DE82_EF95));
        let (prob, seq) = random_problem(&mut rng, max_horizon);
        let mut analytic: Vec<f64> = ocp::cost_gradient(&prob, &seq).into_iter().flatten().collect();
        if fault.is_some() {
            analytic[0] *= 1.0 + 1e-3;
        }
        let flat = seq.to_flat();
        let numeric: Vec<f64> = (0..flat.len())
            .map(|i| {
                let mut a = flat.clone();
                let mut b = flat.clone();
                a[i] += h;
                b[i] -= h;
                (ocp::cost(&prob, &ControlSequence::from_flat(&a)) - ocp::cost(&prob, &ControlSequence::from_flat(&b)))
                    / (2.0 * h)
            })
            .collect();
        let err = max_abs(analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        err / max_abs(numeric.iter().copied()).max(f64::MIN_POSITIVE)
    });
    errors.into_iter().fold(0.0, f64::max)
}

/// Runs both suites with the default step and tolerance.
pub fn run_all(seed: u64, fault: Option<Fault>, mode: Execution) -> GradcheckReport {
    let jacobian_samples = 100;
    let gradient_instances = 50;
    let j = jacobian_check(seed, jacobian_samples, DEFAULT_STEP, fault, mode);
    let g = gradient_check(seed, gradient_instances, 10, DEFAULT_STEP, fault, mode);
    GradcheckReport {
        seed,
        step: DEFAULT_STEP,
        tolerance: DEFAULT_TOLERANCE,
        jacobian_samples,
        jacobian_max_rel_error: j,
        gradient_instances,
        gradient_max_rel_error: g,
        pass: j <= DEFAULT_TOLERANCE && g <= DEFAULT_TOLERANCE,
    }
}
