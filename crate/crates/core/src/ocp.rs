//! Finite-horizon optimal control problem over a thrust sequence.
//!
//! ```text
//! min_tau  sum_{j<N} e_j' Q e_j + tau_j' R tau_j  +  e_N' P e_N
//! s.t.     x_{j+1} = step(x_j, tau_j)            x_0 = measured state
//!          x_j admissible                         j = 1..N-1
//!          |tau_j,i| <= tau_bar_i
//! ```
//!
//! `e_j` is the error to the target state with the yaw difference wrapped.
//! Gradients are accumulated backwards through the rollout (adjoint method)
//! using the analytic step Jacobians and the spatial gradient of the
//! controller's current model.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector4};
use serde::{Deserialize, Serialize};

use crate::current::{CurrentField, CurrentSample};
use crate::dynamics::{
    step, step_jacobians, wrap_angle, StateVector, ThrustCommand, VehicleParams, VehicleState, INPUT_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::workspace::{VelocityBounds, Workspace};

/// Diagonal weights of the running (`q`, `r`) and terminal (`p`) costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub q: [f64; STATE_DIM],
    pub r: [f64; INPUT_DIM],
    pub p: [f64; STATE_DIM],
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q: [10.0, 10.0, 10.0, 2.0, 0.5, 0.5, 0.5, 0.2],
            r: [0.002; INPUT_DIM],
            p: [50.0, 50.0, 50.0, 10.0, 2.0, 2.0, 2.0, 1.0],
        }
    }
}

/// Arrival region around a waypoint: a ball in position and a symmetric
/// band in yaw. Both bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalRegion {
    pub radius: f64,
    pub yaw_tolerance: f64,
}

impl Default for TerminalRegion {
    fn default() -> Self {
        Self {
            radius: 0.3,
            yaw_tolerance: 0.15,
        }
    }
}

impl TerminalRegion {
    pub fn contains(&self, target: &VehicleState, s: &VehicleState) -> bool {
        let dx = s.x - target.x;
        let dy = s.y - target.y;
        let dz = s.z - target.z;
        (dx * dx + dy * dy + dz * dz).sqrt() <= self.radius && wrap_angle(s.psi - target.psi).abs() <= self.yaw_tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlSequence {
    pub taus: Vec<ThrustCommand>,
}

impl ControlSequence {
    pub fn zeros(n: usize) -> Self {
        Self {
            taus: vec![ThrustCommand::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.taus.iter().flat_map(|t| t.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self {
            taus: flat
                .chunks_exact(INPUT_DIM)
                .map(|c| ThrustCommand::from_array([c[0], c[1], c[2], c[3]]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    /// Measured state at the current tick.
    pub x0: VehicleState,
    pub target: VehicleState,
    pub horizon: usize,
    pub weights: Weights,
    /// Per-thruster bound; a zero entry disables that thruster.
    pub thrust_box: [f64; INPUT_DIM],
    pub workspace: Workspace,
    pub bounds: VelocityBounds,
    /// The controller's model of the current.
    pub field: Arc<CurrentField>,
    pub params: VehicleParams,
    pub terminal_region: TerminalRegion,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("ocp.horizon", "horizon must be at least 1"));
        }
        let positive = |v: &[f64]| v.iter().all(|w| *w > 0.0 && w.is_finite());
        if !positive(&self.weights.q) {
            return Err(Error::config("ocp.weights.q", "weights must be positive"));
        }
        if !positive(&self.weights.r) {
            return Err(Error::config("ocp.weights.r", "weights must be positive"));
        }
        if !positive(&self.weights.p) {
            return Err(Error::config("ocp.weights.p", "weights must be positive"));
        }
        if self.thrust_box.iter().any(|b| !(*b >= 0.0 && b.is_finite())) || self.thrust_box.iter().all(|b| *b == 0.0) {
            return Err(Error::config(
                "ocp.thrust_box",
                "bounds must be non-negative with at least one active thruster",
            ));
        }
        if !self.bounds.is_valid() {
            return Err(Error::config("ocp.bounds", "velocity bounds must be positive"));
        }
        if !(self.terminal_region.radius > 0.0 && self.terminal_region.yaw_tolerance > 0.0) {
            return Err(Error::config("ocp.terminal_region", "region dimensions must be positive"));
        }
        if !self.x0.is_finite() || !self.target.is_finite() {
            return Err(Error::config("ocp.x0", "states must be finite"));
        }
        self.params.validate()?;
        if let Some(v) = self.workspace.validate().first() {
            return Err(Error::config(v.config_path(), v.to_string()));
        }
        Ok(())
    }

    /// Error state `x (-) target` with wrapped yaw.
    pub fn error(&self, s: &VehicleState) -> StateVector {
        let mut e = s.to_vector() - self.target.to_vector();
        e[3] = wrap_angle(s.psi - self.target.psi);
        e
    }

    fn current_at(&self, s: &VehicleState) -> (CurrentSample, Matrix3<f64>) {
        let (v, g) = self.field.sample_with_gradient(s.position());
        (CurrentSample::from_inertial(v, s.psi), g)
    }
}

/// Predicted states together with the current samples used along the way.
pub(crate) struct Trajectory {
    pub states: Vec<VehicleState>,
    currents: Vec<(CurrentSample, Matrix3<f64>)>,
}

pub(crate) fn simulate(prob: &OcpProblem, taus: &[ThrustCommand]) -> Trajectory {
    let mut states = Vec::with_capacity(taus.len() + 1);
    let mut currents = Vec::with_capacity(taus.len());
    let mut x = prob.x0;
    states.push(x);
    for tau in taus {
        let c = prob.current_at(&x);
        x = step(&x, tau, &c.0, &prob.params);
        currents.push(c);
        states.push(x);
    }
    Trajectory { states, currents }
}

/// Reverse accumulation of a scalar objective through the rollout.
///
/// `state_grads[j]` is the partial derivative with respect to `x_j`
/// (`j = 0..=N`), `input_grads[j]` the partial with respect to `tau_j`.
/// Returns the total derivative with respect to every thrust entry.
pub(crate) fn backpropagate(
    prob: &OcpProblem,
    taus: &[ThrustCommand],
    traj: &Trajectory,
    state_grads: &[StateVector],
    input_grads: &[Vector4<f64>],
) -> Vec<f64> {
    let n = taus.len();
    let mut out = vec![0.0; n * INPUT_DIM];
    let mut adjoint = state_grads[n];
    let dt = prob.params.dt;
    for j in (0..n).rev() {
        let (c, field_grad) = &traj.currents[j];
        let (mut a, b) = step_jacobians(&traj.states[j], &taus[j], c, &prob.params);
        for r in 0..3 {
            for k in 0..3 {
                a[(r, k)] += dt * field_grad[(r, k)];
            }
        }
        let gu = input_grads[j] + b.transpose() * adjoint;
        out[j * INPUT_DIM..(j + 1) * INPUT_DIM].copy_from_slice(gu.as_slice());
        adjoint = state_grads[j] + a.transpose() * adjoint;
    }
    out
}

/// Predicted states `x_0 .. x_N` under `seq`.
pub fn rollout(prob: &OcpProblem, seq: &ControlSequence) -> Vec<VehicleState> {
    simulate(prob, &seq.taus).states
}

pub(crate) fn cost_of(prob: &OcpProblem, taus: &[ThrustCommand], states: &[VehicleState]) -> f64 {
    let w = &prob.weights;
    let quad = |e: &StateVector, d: &[f64; STATE_DIM]| e.iter().zip(d).map(|(e, q)| q * e * e).sum::<f64>();
    let running: f64 = taus
        .iter()
        .zip(states)
        .map(|(tau, x)| {
            let e = prob.error(x);
            let u: f64 = tau.to_array().iter().zip(&w.r).map(|(t, r)| r * t * t).sum();
            quad(&e, &w.q) + u
        })
        .sum();
    running + quad(&prob.error(&states[taus.len()]), &w.p)
}

/// Tracking objective of `seq`.
pub fn cost(prob: &OcpProblem, seq: &ControlSequence) -> f64 {
    let traj = simulate(prob, &seq.taus);
    cost_of(prob, &seq.taus, &traj.states)
}

pub(crate) fn cost_partials(
    prob: &OcpProblem,
    taus: &[ThrustCommand],
    states: &[VehicleState],
) -> (Vec<StateVector>, Vec<Vector4<f64>>) {
    let w = &prob.weights;
    let n = taus.len();
    let scale = |e: StateVector, d: &[f64; STATE_DIM]| StateVector::from_fn(|i, _| 2.0 * d[i] * e[i]);
    let mut gx: Vec<StateVector> = states[..n].iter().map(|x| scale(prob.error(x), &w.q)).collect();
    gx.push(scale(prob.error(&states[n]), &w.p));
    let gu = taus
        .iter()
        .map(|t| Vector4::from_fn(|i, _| 2.0 * w.r[i] * t.to_array()[i]))
        .collect();
    (gx, gu)
}

/// Cost and its gradient, flattened as `[tau_0, tau_1, ...]`.
pub fn cost_and_gradient(prob: &OcpProblem, seq: &ControlSequence) -> (f64, Vec<f64>) {
    let traj = simulate(prob, &seq.taus);
    let c = cost_of(prob, &seq.taus, &traj.states);
    let (gx, gu) = cost_partials(prob, &seq.taus, &traj.states);
    (c, backpropagate(prob, &seq.taus, &traj, &gx, &gu))
}

/// Gradient of [`cost`] with respect to every thrust, one row per step.
pub fn cost_gradient(prob: &OcpProblem, seq: &ControlSequence) -> Vec<[f64; INPUT_DIM]> {
    cost_and_gradient(prob, seq)
        .1
        .chunks_exact(INPUT_DIM)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect()
}

/// State-constraint residuals of the predicted states `x_1 .. x_{N-1}`.
pub fn constraint_residuals(prob: &OcpProblem, seq: &ControlSequence) -> Vec<[f64; 4]> {
    let states = rollout(prob, seq);
    interior_residuals(prob, &states)
}

pub(crate) fn interior_residuals(prob: &OcpProblem, states: &[VehicleState]) -> Vec<[f64; 4]> {
    let n = states.len() - 1;
    states[1..n.max(1)]
        .iter()
        .map(|s| prob.workspace.state_constraint_residuals(&prob.bounds, s))
        .collect()
}

/// Whether `s` lies in the terminal region of the problem's target.
pub fn terminal_set_check(prob: &OcpProblem, s: &VehicleState) -> bool {
    prob.terminal_region.contains(&prob.target, s)
}
