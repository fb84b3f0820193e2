//! 4-DoF underwater vehicle model (surge, sway, heave, yaw).
//!
//! The state is `[x, y, z, psi, u_r, v_r, w_r, r_r]`: inertial pose followed by
//! body-frame velocities relative to the water. Roll and pitch are held at zero.
//! The discrete model is a single forward-Euler step
//!
//! ```text
//! x_{k+1} = x_k + dt * drift(x_k, v_c) + dt * [0; M^-1 T_A tau_k]
//! ```
//!
//! where the kinematic rows advect the pose by the inertial current and the
//! dynamic rows carry Coriolis coupling plus linear and quadratic drag.

use std::f64::consts::PI;

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::current::CurrentSample;
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateJacobian = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputJacobian = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Vehicle pose in the inertial frame plus relative body velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Yaw, kept in `(-pi, pi]`.
    pub psi: f64,
    pub u_r: f64,
    pub v_r: f64,
    pub w_r: f64,
    pub r_r: f64,
}

impl VehicleState {
    pub fn at_pose(x: f64, y: f64, z: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            z,
            psi: wrap_angle(psi),
            ..Self::default()
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.u_r, self.v_r, self.w_r, self.r_r]
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from_column_slice(&[
            self.x, self.y, self.z, self.psi, self.u_r, self.v_r, self.w_r, self.r_r,
        ])
    }

    /// Builds a state from a raw vector, wrapping yaw.
    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            x: v[0],
            y: v[1],
            z: v[2],
            psi: wrap_angle(v[3]),
            u_r: v[4],
            v_r: v[5],
            w_r: v[6],
            r_r: v[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Individual thruster forces: port, starboard, vertical, lateral (N).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThrustCommand {
    pub tau_po: f64,
    pub tau_s: f64,
    pub tau_ve: f64,
    pub tau_l: f64,
}

impl ThrustCommand {
    pub const ZERO: ThrustCommand = ThrustCommand {
        tau_po: 0.0,
        tau_s: 0.0,
        tau_ve: 0.0,
        tau_l: 0.0,
    };

    pub fn new(tau_po: f64, tau_s: f64, tau_ve: f64, tau_l: f64) -> Self {
        Self {
            tau_po,
            tau_s,
            tau_ve,
            tau_l,
        }
    }

    pub fn from_array(a: [f64; INPUT_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.tau_po, self.tau_s, self.tau_ve, self.tau_l]
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    pub fn norm_squared(&self) -> f64 {
        self.to_array().iter().map(|t| t * t).sum()
    }
}

/// Generalized body forces in the actuated DoF: surge, sway, heave, yaw.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyForces {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub n: f64,
}

impl BodyForces {
    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.n]
    }
}

/// Hydrodynamic and actuation parameters of the vehicle.
///
/// Masses include added mass. Drag coefficients follow the usual sign
/// convention and must be strictly negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub m11: f64,
    pub m22: f64,
    pub m33: f64,
    pub m44: f64,
    pub x_u: f64,
    pub y_v: f64,
    pub z_w: f64,
    pub n_r: f64,
    pub x_uu: f64,
    pub y_vv: f64,
    pub z_ww: f64,
    pub n_rr: f64,
    /// Thruster allocation matrix, row-major; rows are `[X, Y, Z, N]`,
    /// columns are `[port, starboard, vertical, lateral]`.
    pub allocation: [[f64; 4]; 4],
    /// Sampling period (s).
    pub dt: f64,
    /// Constant heave force (N) standing in for residual restoring forces.
    #[serde(default)]
    pub heave_bias: f64,
}

impl Default for VehicleParams {
    /// Synthetic parameter set sized like a small inspection ROV. These are
    /// not identified values of any real vehicle.
    fn default() -> Self {
        Self {
            m11: 18.0,
            m22: 24.0,
            m33: 22.0,
            m44: 12.0,
            x_u: -10.0,
            y_v: -15.0,
            z_w: -18.0,
            n_r: -8.0,
            x_uu: -20.0,
            y_vv: -25.0,
            z_ww: -28.0,
            n_rr: -6.0,
            // Port/starboard thrusters sit 0.2 m either side of the centre line,
            // the lateral thruster 0.1 m aft of the centre of gravity.
            allocation: [
                [1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.2, -0.2, 0.0, -0.1],
            ],
            dt: 0.1,
            heave_bias: 0.0,
        }
    }
}

impl VehicleParams {
    pub fn allocation_matrix(&self) -> Matrix4<f64> {
        let a = &self.allocation;
        Matrix4::new(
            a[0][0], a[0][1], a[0][2], a[0][3], a[1][0], a[1][1], a[1][2], a[1][3], a[2][0],
            a[2][1], a[2][2], a[2][3], a[3][0], a[3][1], a[3][2], a[3][3],
        )
    }

    pub fn masses(&self) -> [f64; 4] {
        [self.m11, self.m22, self.m33, self.m44]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::config(format!("vehicle.{field}"), why));
        for (name, m) in [("m11", self.m11), ("m22", self.m22), ("m33", self.m33), ("m44", self.m44)] {
            if !(m > 0.0 && m.is_finite()) {
                return bad(name, "mass terms must be positive and finite");
            }
        }
        let drag = [
            ("x_u", self.x_u),
            ("y_v", self.y_v),
            ("z_w", self.z_w),
            ("n_r", self.n_r),
            ("x_uu", self.x_uu),
            ("y_vv", self.y_vv),
            ("z_ww", self.z_ww),
            ("n_rr", self.n_rr),
        ];
        for (name, d) in drag {
            if !(d < 0.0 && d.is_finite()) {
                return bad(name, "drag coefficients must be strictly negative");
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", "sampling period must be positive");
        }
        if !self.heave_bias.is_finite() {
            return bad("heave_bias", "must be finite");
        }
        let t = self.allocation_matrix();
        if t.iter().any(|v| !v.is_finite()) {
            return bad("allocation", "entries must be finite");
        }
        let sv = t.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-12 * smax.max(1.0)) || !(smax / smin).is_finite() {
            return bad("allocation", "thruster allocation matrix must be invertible");
        }
        Ok(())
    }
}

/// Maps individual thruster forces to generalized body forces.
pub fn allocate(params: &VehicleParams, cmd: &ThrustCommand) -> BodyForces {
    let f = params.allocation_matrix() * cmd.to_vector();
    BodyForces {
        x: f[0],
        y: f[1],
        z: f[2],
        n: f[3],
    }
}

/// Continuous-time drift of the state, without the actuation term.
///
/// Only the inertial current enters: it advects the pose, while the
/// hydrodynamics act on the relative velocity alone.
pub fn drift(state: &VehicleState, current: &CurrentSample, params: &VehicleParams) -> StateVector {
    let (s, c) = state.psi.sin_cos();
    let VehicleState {
        u_r: u,
        v_r: v,
        w_r: w,
        r_r: r,
        ..
    } = *state;
    let [uc, vc, wc] = current.inertial;
    let p = params;
    StateVector::from_column_slice(&[
        u * c - v * s + uc,
        u * s + v * c + vc,
        w + wc,
        r,
        (p.m22 * v * r + p.x_u * u + p.x_uu * u.abs() * u) / p.m11,
        (-p.m11 * u * r + p.y_v * v + p.y_vv * v.abs() * v) / p.m22,
        (p.z_w * w + p.z_ww * w.abs() * w + p.heave_bias) / p.m33,
        ((p.m11 - p.m22) * u * v + p.n_r * r + p.n_rr * r.abs() * r) / p.m44,
    ])
}

/// Acceleration produced by the thrusters in the four velocity rows.
fn actuation(params: &VehicleParams, cmd: &ThrustCommand) -> [f64; 4] {
    let f = allocate(params, cmd).to_array();
    let m = params.masses();
    [f[0] / m[0], f[1] / m[1], f[2] / m[2], f[3] / m[3]]
}

/// One forward-Euler step of the discrete model.
pub fn step(
    state: &VehicleState,
    cmd: &ThrustCommand,
    current: &CurrentSample,
    params: &VehicleParams,
) -> VehicleState {
    step_with_dt(state, cmd, current, params, params.dt)
}

/// Euler step with an explicit step length; used for simulator sub-stepping.
pub fn step_with_dt(
    state: &VehicleState,
    cmd: &ThrustCommand,
    current: &CurrentSample,
    params: &VehicleParams,
    dt: f64,
) -> VehicleState {
    let mut next = state.to_vector() + drift(state, current, params) * dt;
    for (i, a) in actuation(params, cmd).into_iter().enumerate() {
        next[4 + i] += a * dt;
    }
    VehicleState::from_vector(&next)
}

/// Analytic Jacobians of [`step`] with respect to the state and the thrust.
///
/// The current is held fixed; spatial variation of the field is accounted for
/// by the caller. `d(|v| v)/dv = 2|v|`, which is 0 at the origin.
pub fn step_jacobians(
    state: &VehicleState,
    _cmd: &ThrustCommand,
    _current: &CurrentSample,
    params: &VehicleParams,
) -> (StateJacobian, InputJacobian) {
    let p = params;
    let dt = p.dt;
    let (s, c) = state.psi.sin_cos();
    let VehicleState {
        u_r: u,
        v_r: v,
        w_r: w,
        r_r: r,
        ..
    } = *state;

    let mut a = StateJacobian::zeros();
    // kinematics
    a[(0, 3)] = -u * s - v * c;
    a[(0, 4)] = c;
    a[(0, 5)] = -s;
    a[(1, 3)] = u * c - v * s;
    a[(1, 4)] = s;
    a[(1, 5)] = c;
    a[(2, 6)] = 1.0;
    a[(3, 7)] = 1.0;
    // surge
    a[(4, 4)] = (p.x_u + 2.0 * p.x_uu * u.abs()) / p.m11;
    a[(4, 5)] = p.m22 * r / p.m11;
    a[(4, 7)] = p.m22 * v / p.m11;
    // sway
    a[(5, 4)] = -p.m11 * r / p.m22;
    a[(5, 5)] = (p.y_v + 2.0 * p.y_vv * v.abs()) / p.m22;
    a[(5, 7)] = -p.m11 * u / p.m22;
    // heave
    a[(6, 6)] = (p.z_w + 2.0 * p.z_ww * w.abs()) / p.m33;
    // yaw
    a[(7, 4)] = (p.m11 - p.m22) * v / p.m44;
    a[(7, 5)] = (p.m11 - p.m22) * u / p.m44;
    a[(7, 7)] = (p.n_r + 2.0 * p.n_rr * r.abs()) / p.m44;

    let dfdx = StateJacobian::identity() + a * dt;

    let t = p.allocation_matrix();
    let m = p.masses();
    let mut dfdu = InputJacobian::zeros();
    for i in 0..4 {
        for j in 0..4 {
            dfdu[(4 + i, j)] = dt * t[(i, j)] / m[i];
        }
    }
    (dfdx, dfdu)
}

/// Power of the Coriolis/centripetal forces, `v_r . C(v_r) v_r`.
///
/// Identically zero for the skew-symmetric coupling of this model.
pub fn coriolis_power(state: &VehicleState, params: &VehicleParams) -> f64 {
    let VehicleState {
        u_r: u,
        v_r: v,
        r_r: r,
        ..
    } = *state;
    let p = params;
    u * (p.m22 * v * r) + v * (-p.m11 * u * r) + r * ((p.m11 - p.m22) * u * v)
}

/// Kinetic-energy-like quantity `sum m_ii v_i^2` of the relative velocity.
pub fn kinetic_measure(state: &VehicleState, params: &VehicleParams) -> f64 {
    state
        .velocity()
        .iter()
        .zip(params.masses())
        .map(|(v, m)| m * v * v)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn still() -> CurrentSample {
        CurrentSample::zero()
    }

    fn random_state(rng: &mut ChaCha8Rng, vmax: f64) -> VehicleState {
        VehicleState {
            x: rng.random_range(-2.0..2.0),
            y: rng.random_range(-1.0..1.0),
            z: rng.random_range(0.0..1.2),
            psi: rng.random_range(-PI..PI),
            u_r: rng.random_range(-vmax..vmax),
            v_r: rng.random_range(-vmax..vmax),
            w_r: rng.random_range(-vmax..vmax),
            r_r: rng.random_range(-vmax..vmax),
        }
    }

    #[test]
    fn wrap_angle_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn allocate_zero_and_identity() {
        let p = VehicleParams::default();
        assert_eq!(allocate(&p, &ThrustCommand::ZERO), BodyForces::default());
        let mut id = p.clone();
        id.allocation = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let f = allocate(&id, &ThrustCommand::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(f.to_array(), [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn allocate_default_matches_hand_product() {
        let p = VehicleParams::default();
        let f = allocate(&p, &ThrustCommand::new(5.0, 5.0, 0.0, 0.0));
        // rows: [1 1 0 0], [0 0 0 1], [0 0 1 0], [0.2 -0.2 0 -0.1]
        assert_eq!(f.to_array(), [10.0, 0.0, 0.0, 0.0]);
        let f = allocate(&p, &ThrustCommand::new(3.0, -1.0, 2.0, 4.0));
        let expect = [2.0, 4.0, 2.0, 0.6 + 0.2 - 0.4];
        for (a, b) in f.to_array().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn drift_equilibrium_and_pure_advection() {
        let p = VehicleParams::default();
        assert_eq!(drift(&VehicleState::default(), &still(), &p), StateVector::zeros());
        let s = VehicleState::at_pose(0.0, 0.0, 0.0, 1.234);
        let c = CurrentSample::from_inertial([0.1, 0.0, 0.0], s.psi);
        let d = drift(&s, &c, &p);
        let mut expect = StateVector::zeros();
        expect[0] = 0.1;
        assert_eq!(d, expect);
    }

    #[test]
    fn step_fixed_point_and_advection() {
        let p = VehicleParams::default();
        let z = VehicleState::default();
        assert_eq!(step(&z, &ThrustCommand::ZERO, &still(), &p), z);
        let c = CurrentSample::from_inertial([0.1, 0.0, 0.0], 0.0);
        let n = step(&z, &ThrustCommand::ZERO, &c, &p);
        assert_abs_diff_eq!(n.x, 0.01, epsilon = 1e-15);
        assert_eq!(n.velocity(), [0.0; 4]);
    }

    #[test]
    fn input_jacobian_is_scaled_allocation() {
        let p = VehicleParams::default();
        let (_, b) = step_jacobians(&VehicleState::default(), &ThrustCommand::ZERO, &still(), &p);
        let t = p.allocation_matrix();
        for j in 0..4 {
            for i in 0..4 {
                assert_eq!(b[(i, j)], 0.0);
                assert_abs_diff_eq!(b[(4 + i, j)], p.dt * t[(i, j)] / p.masses()[i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn state_jacobian_at_rest() {
        let p = VehicleParams::default();
        let (a, _) = step_jacobians(&VehicleState::default(), &ThrustCommand::ZERO, &still(), &p);
        let mut expect = StateJacobian::identity();
        expect[(0, 4)] = p.dt;
        expect[(1, 5)] = p.dt;
        expect[(2, 6)] = p.dt;
        expect[(3, 7)] = p.dt;
        expect[(4, 4)] += p.dt * p.x_u / p.m11;
        expect[(5, 5)] += p.dt * p.y_v / p.m22;
        expect[(6, 6)] += p.dt * p.z_w / p.m33;
        expect[(7, 7)] += p.dt * p.n_r / p.m44;
        assert_abs_diff_eq!(a, expect, epsilon = 1e-15);
    }

    #[test]
    fn coriolis_power_cancels() {
        let p = VehicleParams::default();
        let s = VehicleState {
            u_r: 1.0,
            v_r: 2.0,
            r_r: 3.0,
            ..Default::default()
        };
        assert_abs_diff_eq!(coriolis_power(&s, &p), 0.0, epsilon = 1e-12);
        assert_eq!(coriolis_power(&VehicleState::default(), &p), 0.0);
    }

    #[test]
    fn drag_dissipates_over_a_step() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut s = random_state(&mut rng, 1.0);
            let v = nalgebra::Vector4::from(s.velocity());
            if v.norm() > 1.0 {
                let k = rng.random_range(0.0..1.0) / v.norm();
                s.u_r *= k;
                s.v_r *= k;
                s.w_r *= k;
                s.r_r *= k;
            }
            let mut q = p.clone();
            q.dt = rng.random_range(1e-3..0.1);
            let n = step(&s, &ThrustCommand::ZERO, &still(), &q);
            assert!(kinetic_measure(&n, &q) <= kinetic_measure(&s, &q) + 1e-15);
        }
    }

    #[test]
    fn control_enters_affinely() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = random_state(&mut rng, 0.8);
            let c = CurrentSample::from_inertial([0.05, -0.02, 0.01], s.psi);
            let t1 = ThrustCommand::new(1.0, -2.0, 3.0, 0.5);
            let t2 = ThrustCommand::new(-4.0, 2.5, 1.0, -3.0);
            let t12 = ThrustCommand::from_array([-3.0, 0.5, 4.0, -2.5]);
            let lhs = step(&s, &t12, &c, &p).to_vector() - step(&s, &t1, &c, &p).to_vector();
            let rhs = step(&s, &t2, &c, &p).to_vector() - step(&s, &ThrustCommand::ZERO, &c, &p).to_vector();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = VehicleParams::default();
        assert!(p.validate().is_ok());
        p.x_uu = 0.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.allocation[3] = p.allocation[0];
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.m44 = -1.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.dt = 0.0;
        assert!(p.validate().is_err());
    }
}
