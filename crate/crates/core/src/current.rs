//! Inertial-frame water current models and their body-frame projection.
//!
//! Currents are static in time and irrotational in the inertial frame. Three
//! models are supported: a uniform stream, an analytic round jet (a thruster
//! plume), and a regular lattice ingested from an external flow solver.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Rotates an inertial vector into the body frame of a vehicle with yaw `psi`.
pub fn to_body(inertial: Vec3, psi: f64) -> Vec3 {
    let (s, c) = psi.sin_cos();
    let [u, v, w] = inertial;
    [c * u + s * v, -s * u + c * v, w]
}

/// Inverse of [`to_body`].
pub fn to_inertial(body: Vec3, psi: f64) -> Vec3 {
    let (s, c) = psi.sin_cos();
    let [u, v, w] = body;
    [c * u - s * v, s * u + c * v, w]
}

/// The current seen by the vehicle at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentSample {
    pub inertial: Vec3,
    pub body: Vec3,
}

impl CurrentSample {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_inertial(inertial: Vec3, psi: f64) -> Self {
        Self {
            inertial,
            body: to_body(inertial, psi),
        }
    }
}

/// Round jet issuing from a nozzle, flowing horizontally along `heading`.
///
/// Downstream of the nozzle (`s >= 0`) the core speed decays as `width / b(s)`
/// with half-width `b(s) = width + spread * s`, and the cross-section is
/// Gaussian in the lateral and vertical offsets. Upstream the plume falls off
/// as a Gaussian in `s` with the nozzle width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JetField {
    pub origin: Vec3,
    /// Heading of the jet axis in the horizontal plane (rad).
    pub heading: f64,
    /// Centre-line speed at the nozzle (m/s).
    pub speed: f64,
    /// Nozzle half-width (m).
    pub width: f64,
    /// Linear spreading rate of the half-width per metre downstream.
    pub spread: f64,
}

impl JetField {
    fn sample_with_gradient(&self, p: Vec3) -> (Vec3, Matrix3<f64>) {
        let (sh, ch) = self.heading.sin_cos();
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        let dz = p[2] - self.origin[2];
        let s = ch * dx + sh * dy;
        let n = -sh * dx + ch * dy;
        let r2 = n * n + dz * dz;

        // magnitude and its derivatives w.r.t. (s, n, dz)
        let (mag, dm_ds, dm_dn, dm_dz);
        if s >= 0.0 {
            let b = self.width + self.spread * s;
            let g = (-r2 / (b * b)).exp();
            mag = self.speed * self.width / b * g;
            // d/ds [w/b * exp(-r2/b^2)] with db/ds = spread
            dm_ds = mag * self.spread * (-1.0 / b + 2.0 * r2 / (b * b * b));
            dm_dn = mag * (-2.0 * n / (b * b));
            dm_dz = mag * (-2.0 * dz / (b * b));
        } else {
            let w2 = self.width * self.width;
            mag = self.speed * (-(r2 + s * s) / w2).exp();
            dm_ds = mag * (-2.0 * s / w2);
            dm_dn = mag * (-2.0 * n / w2);
            dm_dz = mag * (-2.0 * dz / w2);
        }
        // chain to inertial coordinates: ds/dx = ch, ds/dy = sh, dn/dx = -sh, dn/dy = ch
        let dm = [
            dm_ds * ch - dm_dn * sh,
            dm_ds * sh + dm_dn * ch,
            dm_dz,
        ];
        let dir = [ch, sh, 0.0];
        let v = [mag * ch, mag * sh, 0.0];
        let mut g = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                g[(i, j)] = dir[i] * dm[j];
            }
        }
        (v, g)
    }
}

/// Regular lattice of inertial current vectors.
///
/// Nodes are stored row-major with the z index varying fastest:
/// `index = (ix * ny + iy) * nz + iz`. A lattice with `nz = 1` is planar and
/// the field is constant in depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: Vec3,
    values: Vec<Vec3>,
    max_speed: f64,
}

impl CurrentGrid {
    pub fn new(dims: [usize; 3], origin: Vec3, spacing: Vec3, values: Vec<Vec3>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::config("grid.dims", "every dimension must be at least 1"));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::config("grid.spacing", "spacing must be positive"));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::config("grid.origin", "origin must be finite"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::config(
                "grid.values",
                format!("expected {n} node values, found {}", values.len()),
            ));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("grid.values", "node values must be finite"));
        }
        let max_speed = values.iter().map(|v| norm3(*v)).fold(0.0, f64::max);
        Ok(Self {
            dims,
            origin,
            spacing,
            values,
            max_speed,
        })
    }

    /// Largest node speed; no interpolated sample exceeds it.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn node(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        self.values[(ix * self.dims[1] + iy) * self.dims[2] + iz]
    }

    /// Parses the plain-text lattice format:
    ///
    /// ```text
    /// # comments and blank lines are ignored
    /// dims NX NY NZ
    /// origin X0 Y0 Z0
    /// spacing DX DY DZ
    /// u v w        <- NX*NY*NZ lines, z fastest
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut dims = None;
        let mut origin = None;
        let mut spacing = None;
        let mut values = Vec::new();
        let err = |line: usize, message: String| Error::Parse {
            what: "current grid".into(),
            line,
            message,
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap_or_default();
            let rest: Vec<&str> = tokens.collect();
            let floats = |toks: &[&str]| -> Result<Vec3> {
                if toks.len() != 3 {
                    return Err(err(line_no, format!("expected 3 numbers, found {}", toks.len())));
                }
                let mut out = [0.0; 3];
                for (o, t) in out.iter_mut().zip(toks) {
                    *o = t
                        .parse::<f64>()
                        .map_err(|e| err(line_no, format!("bad number `{t}`: {e}")))?;
                }
                Ok(out)
            };
            match head {
                "dims" => {
                    if rest.len() != 3 {
                        return Err(err(line_no, "dims needs 3 integers".into()));
                    }
                    let mut d = [0usize; 3];
                    for (o, t) in d.iter_mut().zip(&rest) {
                        *o = t
                            .parse()
                            .map_err(|e| err(line_no, format!("bad dimension `{t}`: {e}")))?;
                    }
                    dims = Some(d);
                }
                "origin" => origin = Some(floats(&rest)?),
                "spacing" => spacing = Some(floats(&rest)?),
                _ => {
                    if dims.is_none() || origin.is_none() || spacing.is_none() {
                        return Err(err(line_no, "node values before complete header".into()));
                    }
                    let mut all = vec![head];
                    all.extend(rest);
                    values.push(floats(&all)?);
                }
            }
        }
        let (Some(dims), Some(origin), Some(spacing)) = (dims, origin, spacing) else {
            return Err(err(text.lines().count(), "missing dims/origin/spacing header".into()));
        };
        Self::new(dims, origin, spacing, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [nx, ny, nz] = self.dims;
        let _ = writeln!(s, "dims {nx} {ny} {nz}");
        let [ox, oy, oz] = self.origin;
        let _ = writeln!(s, "origin {ox} {oy} {oz}");
        let [hx, hy, hz] = self.spacing;
        let _ = writeln!(s, "spacing {hx} {hy} {hz}");
        for [u, v, w] in &self.values {
            let _ = writeln!(s, "{u} {v} {w}");
        }
        s
    }

    /// Multilinear interpolation, clamped to the lattice hull, with the
    /// spatial Jacobian of the interpolant (zero along clamped axes).
    fn sample_with_gradient(&self, p: Vec3) -> (Vec3, Matrix3<f64>) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut live = [false; 3];
        for a in 0..3 {
            let n = self.dims[a];
            if n == 1 {
                continue;
            }
            let t = (p[a] - self.origin[a]) / self.spacing[a];
            let hi = (n - 1) as f64;
            let tc = t.clamp(0.0, hi);
            live[a] = t > 0.0 && t < hi;
            let i = (tc.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = tc - i as f64;
        }
        let mut v = [0.0; 3];
        let mut g = Matrix3::zeros();
        for corner in 0..8usize {
            let mut idx = [0usize; 3];
            let mut w = 1.0;
            let mut dw = [1.0; 3];
            let mut skip = false;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                if self.dims[a] == 1 {
                    if bit == 1 {
                        skip = true;
                    }
                    dw[a] = 0.0;
                    continue;
                }
                idx[a] = base[a] + bit;
                let (wa, dwa) = if bit == 1 {
                    (frac[a], 1.0 / self.spacing[a])
                } else {
                    (1.0 - frac[a], -1.0 / self.spacing[a])
                };
                for (b, d) in dw.iter_mut().enumerate() {
                    *d *= if b == a { dwa } else { wa };
                }
                w *= wa;
            }
            if skip {
                continue;
            }
            let node = self.node(idx[0], idx[1], idx[2]);
            for i in 0..3 {
                v[i] += w * node[i];
                for j in 0..3 {
                    if live[j] {
                        g[(i, j)] += dw[j] * node[i];
                    }
                }
            }
        }
        (v, g)
    }
}

fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// A static inertial current field.
#[derive(Debug, Clone, PartialEq)]
pub enum CurrentField {
    Uniform(Vec3),
    Jet(JetField),
    Grid(CurrentGrid),
}

impl Default for CurrentField {
    fn default() -> Self {
        CurrentField::Uniform([0.0; 3])
    }
}

impl CurrentField {
    /// Inertial current at `p`. Fields are static; `t` is accepted for
    /// interface stability only.
    pub fn sample(&self, p: Vec3, _t: f64) -> Vec3 {
        match self {
            CurrentField::Uniform(c) => *c,
            CurrentField::Jet(j) => j.sample_with_gradient(p).0,
            CurrentField::Grid(g) => g.sample_with_gradient(p).0,
        }
    }

    /// Inertial current at `p` and its spatial Jacobian `d v_i / d p_j`.
    pub fn sample_with_gradient(&self, p: Vec3) -> (Vec3, Matrix3<f64>) {
        match self {
            CurrentField::Uniform(c) => (*c, Matrix3::zeros()),
            CurrentField::Jet(j) => j.sample_with_gradient(p),
            CurrentField::Grid(g) => g.sample_with_gradient(p),
        }
    }

    pub fn sample_at(&self, p: Vec3, psi: f64) -> CurrentSample {
        CurrentSample::from_inertial(self.sample(p, 0.0), psi)
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, CurrentField::Uniform(_))
    }
}
