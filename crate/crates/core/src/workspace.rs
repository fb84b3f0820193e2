//! Spherical-world workspace: an axis-aligned tank with spherical (or
//! full-depth cylindrical) obstacles, and a vehicle covered by a ball of
//! radius `r_bar`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::current::Vec3;
use crate::dynamics::{StateVector, VehicleState};

/// Closed ball obstacle. With `pillar` set the obstacle is a vertical
/// cylinder through the whole water column and only the horizontal distance
/// to its axis matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    #[serde(default)]
    pub pillar: bool,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self {
            center,
            radius,
            pillar: false,
        }
    }

    pub fn pillar(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: [x, y, 0.0],
            radius,
            pillar: true,
        }
    }

    /// Offset from the obstacle centre (axis, for pillars) to `p`.
    fn offset(&self, p: Vec3) -> Vec3 {
        let z = if self.pillar { 0.0 } else { p[2] - self.center[2] };
        [p[0] - self.center[0], p[1] - self.center[1], z]
    }

    pub fn distance(&self, p: Vec3) -> f64 {
        let d = self.offset(p);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanarSpeedMode {
    /// `|u_r + v_r|`
    #[default]
    SignedSum,
    /// `sqrt(u_r^2 + v_r^2)`
    Norm,
}

/// Upper bounds on the relative velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityBounds {
    pub v_planar_max: f64,
    pub w_max: f64,
    pub r_max: f64,
    #[serde(default)]
    pub planar_mode: PlanarSpeedMode,
}

impl VelocityBounds {
    pub fn new(v_planar_max: f64, w_max: f64, r_max: f64) -> Self {
        Self {
            v_planar_max,
            w_max,
            r_max,
            planar_mode: PlanarSpeedMode::SignedSum,
        }
    }

    pub fn planar_speed(&self, s: &VehicleState) -> f64 {
        match self.planar_mode {
            PlanarSpeedMode::SignedSum => (s.u_r + s.v_r).abs(),
            PlanarSpeedMode::Norm => s.u_r.hypot(s.v_r),
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.v_planar_max, self.w_max, self.r_max]
            .iter()
            .all(|b| *b > 0.0 && b.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub box_min: Vec3,
    pub box_max: Vec3,
    #[serde(default)]
    pub obstacles: Vec<Sphere>,
    pub r_bar: f64,
}

/// A broken workspace invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Obstacles `i` and `j` are closer than `2 r_bar + r_i + r_j`; `margin`
    /// is the shortfall in metres.
    ObstaclePair { i: usize, j: usize, margin: f64 },
    ObstacleOutsideBox { i: usize },
    BadObstacle { i: usize },
    EmptyBox { axis: usize },
    BadRadius,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ObstaclePair { i, j, margin } => write!(
                f,
                "obstacles {i} and {j} leave no passage for the vehicle (short by {margin:.4} m)"
            ),
            Violation::ObstacleOutsideBox { i } => write!(f, "obstacle {i} centre lies outside the box"),
            Violation::BadObstacle { i } => write!(f, "obstacle {i} needs a finite centre and positive radius"),
            Violation::EmptyBox { axis } => write!(f, "box_min must be below box_max on axis {axis}"),
            Violation::BadRadius => write!(f, "r_bar must be positive"),
        }
    }
}

impl Violation {
    /// Dotted config path of the offending entry.
    pub fn config_path(&self) -> String {
        match self {
            Violation::ObstaclePair { i, .. }
            | Violation::ObstacleOutsideBox { i }
            | Violation::BadObstacle { i } => format!("workspace.obstacles[{i}]"),
            Violation::EmptyBox { .. } => "workspace.box_min".into(),
            Violation::BadRadius => "workspace.r_bar".into(),
        }
    }
}

/// One smooth inequality `value >= 0` with its gradient w.r.t. the state.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintTerm {
    pub value: f64,
    pub grad: StateVector,
}

impl Workspace {
    /// Tank centred on the origin horizontally.
    pub fn tank(length: f64, width: f64, z_range: (f64, f64), r_bar: f64) -> Self {
        Self {
            box_min: [-length / 2.0, -width / 2.0, z_range.0],
            box_max: [length / 2.0, width / 2.0, z_range.1],
            obstacles: Vec::new(),
            r_bar,
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.r_bar > 0.0 && self.r_bar.is_finite()) {
            out.push(Violation::BadRadius);
        }
        for axis in 0..3 {
            if !(self.box_min[axis] < self.box_max[axis]) {
                out.push(Violation::EmptyBox { axis });
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0 && o.radius.is_finite()) || o.center.iter().any(|c| !c.is_finite()) {
                out.push(Violation::BadObstacle { i });
                continue;
            }
            let axes = if o.pillar { 2 } else { 3 };
            if (0..axes).any(|a| o.center[a] < self.box_min[a] || o.center[a] > self.box_max[a]) {
                out.push(Violation::ObstacleOutsideBox { i });
            }
        }
        for i in 0..self.obstacles.len() {
            for j in i + 1..self.obstacles.len() {
                let (a, b) = (&self.obstacles[i], &self.obstacles[j]);
                let planar = a.pillar || b.pillar;
                let d = {
                    let dx = a.center[0] - b.center[0];
                    let dy = a.center[1] - b.center[1];
                    let dz = if planar { 0.0 } else { a.center[2] - b.center[2] };
                    (dx * dx + dy * dy + dz * dz).sqrt()
                };
                let required = 2.0 * self.r_bar + a.radius + b.radius;
                if !(d > required) {
                    out.push(Violation::ObstaclePair {
                        i,
                        j,
                        margin: required - d,
                    });
                }
            }
        }
        out
    }

    /// Signed free-space margin of the vehicle ball centred at `p`: the
    /// smallest gap to any obstacle or wall. Positive iff collision free.
    pub fn clearance(&self, p: Vec3) -> f64 {
        let walls = (0..3)
            .flat_map(|a| [p[a] - self.box_min[a], self.box_max[a] - p[a]])
            .fold(f64::INFINITY, f64::min)
            - self.r_bar;
        self.obstacles
            .iter()
            .map(|o| o.distance(p) - o.radius - self.r_bar)
            .fold(walls, f64::min)
    }

    /// Smallest obstacle-only margin (walls excluded); `+inf` without obstacles.
    pub fn obstacle_clearance(&self, p: Vec3) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance(p) - o.radius - self.r_bar)
            .fold(f64::INFINITY, f64::min)
    }

    /// Feasibility residuals `[planar, heave, yaw, clearance]`; the state is
    /// admissible iff all are non-negative.
    pub fn state_constraint_residuals(&self, bounds: &VelocityBounds, s: &VehicleState) -> [f64; 4] {
        [
            bounds.v_planar_max - bounds.planar_speed(s),
            bounds.w_max - s.w_r.abs(),
            bounds.r_max - s.r_r.abs(),
            self.clearance(s.position()),
        ]
    }

    /// Number of terms produced by [`Self::smooth_constraints`].
    pub fn smooth_constraint_count(&self, bounds: &VelocityBounds) -> usize {
        let planar = match bounds.planar_mode {
            PlanarSpeedMode::SignedSum => 2,
            PlanarSpeedMode::Norm => 1,
        };
        planar + 4 + 6 + self.obstacles.len()
    }

    /// Differentiable restatement of the admissible set used by the solver.
    ///
    /// Absolute-value bounds split into two linear inequalities, walls are
    /// linear, and obstacles use `d^2 - (r + r_bar)^2`, which has the same
    /// zero set as the clearance but no kink at the obstacle centre.
    pub fn smooth_constraints(&self, bounds: &VelocityBounds, s: &VehicleState, out: &mut Vec<ConstraintTerm>) {
        let unit = |i: usize, sign: f64| {
            let mut g = StateVector::zeros();
            g[i] = sign;
            g
        };
        match bounds.planar_mode {
            PlanarSpeedMode::SignedSum => {
                let sum = s.u_r + s.v_r;
                for sign in [1.0, -1.0] {
                    let mut g = StateVector::zeros();
                    g[4] = -sign;
                    g[5] = -sign;
                    out.push(ConstraintTerm {
                        value: bounds.v_planar_max - sign * sum,
                        grad: g,
                    });
                }
            }
            PlanarSpeedMode::Norm => {
                let mut g = StateVector::zeros();
                g[4] = -2.0 * s.u_r;
                g[5] = -2.0 * s.v_r;
                out.push(ConstraintTerm {
                    value: bounds.v_planar_max.powi(2) - s.u_r * s.u_r - s.v_r * s.v_r,
                    grad: g,
                });
            }
        }
        for sign in [1.0, -1.0] {
            out.push(ConstraintTerm {
                value: bounds.w_max - sign * s.w_r,
                grad: unit(6, -sign),
            });
            out.push(ConstraintTerm {
                value: bounds.r_max - sign * s.r_r,
                grad: unit(7, -sign),
            });
        }
        let p = s.position();
        for a in 0..3 {
            out.push(ConstraintTerm {
                value: p[a] - self.box_min[a] - self.r_bar,
                grad: unit(a, 1.0),
            });
            out.push(ConstraintTerm {
                value: self.box_max[a] - p[a] - self.r_bar,
                grad: unit(a, -1.0),
            });
        }
        for o in &self.obstacles {
            let d = o.offset(p);
            let reach = o.radius + self.r_bar;
            let mut g = StateVector::zeros();
            for a in 0..3 {
                g[a] = 2.0 * d[a];
            }
            out.push(ConstraintTerm {
                value: d[0] * d[0] + d[1] * d[1] + d[2] * d[2] - reach * reach,
                grad: g,
            });
        }
    }
}
