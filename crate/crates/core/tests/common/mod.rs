//! Independent re-statement of the vehicle model and tracking cost, written
//! from the model equations with plain arrays. Integration tests compare the
//! library against these.

#![allow(dead_code)]

use std::f64::consts::PI;

use uwnmpc::{OcpProblem, ThrustCommand, VehicleParams, VehicleState};

pub type S = [f64; 8];

pub fn wrap(a: f64) -> f64 {
    let mut b = a % (2.0 * PI);
    if b <= -PI {
        b += 2.0 * PI;
    } else if b > PI {
        b -= 2.0 * PI;
    }
    b
}

pub fn arr(s: &VehicleState) -> S {
    [s.x, s.y, s.z, s.psi, s.u_r, s.v_r, s.w_r, s.r_r]
}

/// Euler step under a spatially constant inertial current `c`.
pub fn step(x: &S, tau: &[f64; 4], c: [f64; 3], p: &VehicleParams) -> S {
    let [_, _, _, psi, u, v, w, r] = *x;
    let dt = p.dt;
    let mut f = [0.0; 4];
    for (i, fi) in f.iter_mut().enumerate() {
        for j in 0..4 {
            *fi += p.allocation[i][j] * tau[j];
        }
    }
    let xdot = u * psi.cos() - v * psi.sin() + c[0];
    let ydot = u * psi.sin() + v * psi.cos() + c[1];
    let zdot = w + c[2];
    let udot = (f[0] + p.m22 * v * r + p.x_u * u + p.x_uu * u * u.abs()) / p.m11;
    let vdot = (f[1] - p.m11 * u * r + p.y_v * v + p.y_vv * v * v.abs()) / p.m22;
    let wdot = (f[2] + p.heave_bias + p.z_w * w + p.z_ww * w * w.abs()) / p.m33;
    let rdot = (f[3] + (p.m11 - p.m22) * u * v + p.n_r * r + p.n_rr * r * r.abs()) / p.m44;
    [
        x[0] + dt * xdot,
        x[1] + dt * ydot,
        x[2] + dt * zdot,
        wrap(psi + dt * r),
        u + dt * udot,
        v + dt * vdot,
        w + dt * wdot,
        r + dt * rdot,
    ]
}

pub fn rollout(x0: &S, taus: &[[f64; 4]], c: [f64; 3], p: &VehicleParams) -> Vec<S> {
    let mut out = vec![*x0];
    for t in taus {
        let next = step(out.last().unwrap(), t, c, p);
        out.push(next);
    }
    out
}

pub fn stage(x: &S, target: &S, w: &[f64; 8]) -> f64 {
    (0..8)
        .map(|i| {
            let e = if i == 3 { wrap(x[3] - target[3]) } else { x[i] - target[i] };
            w[i] * e * e
        })
        .sum()
}

/// Tracking cost of `taus` for a problem whose field is uniform `c`.
pub fn cost(prob: &OcpProblem, taus: &[[f64; 4]], c: [f64; 3]) -> f64 {
    let xs = rollout(&arr(&prob.x0), taus, c, &prob.params);
    let target = arr(&prob.target);
    let w = &prob.weights;
    let mut j = 0.0;
    for (k, t) in taus.iter().enumerate() {
        j += stage(&xs[k], &target, &w.q);
        j += (0..4).map(|i| w.r[i] * t[i] * t[i]).sum::<f64>();
    }
    j + stage(&xs[taus.len()], &target, &w.p)
}

/// Smallest admissibility margin of `x` (signed-sum planar speed).
pub fn margin(prob: &OcpProblem, x: &S) -> f64 {
    let b = &prob.bounds;
    let ws = &prob.workspace;
    let mut m = (b.v_planar_max - (x[4] + x[5]).abs())
        .min(b.w_max - x[6].abs())
        .min(b.r_max - x[7].abs());
    for a in 0..3 {
        m = m.min(x[a] - ws.box_min[a] - ws.r_bar).min(ws.box_max[a] - x[a] - ws.r_bar);
    }
    for o in &ws.obstacles {
        let dz = if o.pillar { 0.0 } else { x[2] - o.center[2] };
        let d = ((x[0] - o.center[0]).powi(2) + (x[1] - o.center[1]).powi(2) + dz * dz).sqrt();
        m = m.min(d - o.radius - ws.r_bar);
    }
    m
}

pub fn taus_of(seq: &[ThrustCommand]) -> Vec<[f64; 4]> {
    seq.iter().map(|t| t.to_array()).collect()
}
