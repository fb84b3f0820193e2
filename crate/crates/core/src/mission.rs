//! Closed-loop receding-horizon execution against a truth simulator.
//!
//! Each tick solves the OCP for the active waypoint from the (optionally
//! perturbed) truth state, applies the first thrust of the plan for one tick
//! of truth integration, and warm-starts the next solve with the shifted
//! plan. Waypoints are visited in order and the list restarts for every lap.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::current::CurrentField;
use crate::dynamics::{step_with_dt, wrap_angle, ThrustCommand, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::ocp::{ControlSequence, OcpProblem, TerminalRegion, Weights};
use crate::par::{self, Execution};
use crate::solver::{solve, warm_start_shift, SolverConfig};
use crate::workspace::{VelocityBounds, Workspace};

/// Tightening of the constraints seen by the controller relative to the
/// truth constraints, absorbing prediction error over one tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backoff {
    /// Subtracted from every velocity bound (m/s and rad/s).
    #[serde(default)]
    pub velocity: f64,
    /// Added to the vehicle radius (m).
    #[serde(default)]
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSettings {
    pub horizon: usize,
    pub weights: Weights,
    pub thrust_box: [f64; 4],
    pub bounds: VelocityBounds,
    #[serde(default)]
    pub terminal_region: TerminalRegion,
    #[serde(default)]
    pub backoff: Backoff,
}

/// Additive Gaussian perturbation of the measured state (standard deviations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    pub position: f64,
    pub yaw: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSettings {
    pub initial_state: VehicleState,
    pub waypoints: Vec<VehicleState>,
    #[serde(default = "one")]
    pub laps: usize,
    /// Control period (s); must equal the model sampling period.
    pub tick: f64,
    #[serde(default = "one")]
    pub truth_substeps: usize,
    pub max_ticks: usize,
    /// Consecutive solves without a feasible plan before giving up.
    pub max_solver_failures: usize,
    #[serde(default)]
    pub measurement_noise: Option<MeasurementNoise>,
}

fn one() -> usize {
    1
}

/// Everything needed to run one mission.
#[derive(Debug, Clone)]
pub struct MissionConfig {
    pub params: VehicleParams,
    pub workspace: Workspace,
    pub truth_field: Arc<CurrentField>,
    pub controller_field: Arc<CurrentField>,
    pub ocp: OcpSettings,
    pub solver: SolverConfig,
    pub mission: MissionSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    ConstraintBreach,
    SolverFailure,
    Timeout,
}

/// One control tick. `state` is the truth state at the end of the tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub time: f64,
    pub state: VehicleState,
    pub applied: ThrustCommand,
    /// Smallest of the four truth-state residuals.
    pub min_residual: f64,
    pub clearance: f64,
    pub solver_cost: f64,
    pub solver_iterations: usize,
    pub solver_violation: f64,
    pub converged: bool,
    /// Index into the waypoint list of the target pursued during the tick.
    pub waypoint: usize,
    /// Cumulative energy proxy including this tick.
    pub energy: f64,
    pub plan: ControlSequence,
    pub warm_start: Option<ControlSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub waypoint: usize,
    pub lap: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    pub tick: f64,
    pub initial_state: VehicleState,
    pub records: Vec<TickRecord>,
    pub arrivals: Vec<Arrival>,
    pub outcome: Outcome,
}

/// Waypoint arrival: `state` (a truth state) is inside the terminal region.
pub fn arrival_check(state: &VehicleState, waypoint: &VehicleState, region: &TerminalRegion) -> bool {
    region.contains(waypoint, state)
}

/// `sum ||tau||^2 * tick` over the log.
pub fn energy_proxy(log: &MissionLog) -> f64 {
    log.records.iter().map(|r| r.applied.norm_squared() * log.tick).sum()
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        if let Some(v) = self.workspace.validate().first() {
            return Err(Error::config(v.config_path(), v.to_string()));
        }
        let m = &self.mission;
        if m.waypoints.is_empty() {
            return Err(Error::config("mission.waypoints", "at least one waypoint is required"));
        }
        if m.waypoints.iter().any(|w| !w.is_finite()) {
            return Err(Error::config("mission.waypoints", "waypoints must be finite"));
        }
        if m.laps == 0 {
            return Err(Error::config("mission.laps", "must be at least 1"));
        }
        if !(m.tick > 0.0) {
            return Err(Error::config("mission.tick", "must be positive"));
        }
        if (m.tick - self.params.dt).abs() > 1e-12 {
            return Err(Error::config(
                "mission.tick",
                format!("must equal vehicle.dt ({}) so one predicted step spans one tick", self.params.dt),
            ));
        }
        if m.truth_substeps == 0 {
            return Err(Error::config("mission.truth_substeps", "must be at least 1"));
        }
        if m.max_ticks == 0 {
            return Err(Error::config("mission.max_ticks", "must be at least 1"));
        }
        if let Some(n) = &m.measurement_noise {
            if [n.position, n.yaw, n.velocity].iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(Error::config("mission.measurement_noise", "standard deviations must be >= 0"));
            }
        }
        let b = &self.ocp.backoff;
        if !(b.velocity >= 0.0 && b.clearance >= 0.0) {
            return Err(Error::config("ocp.backoff", "backoff must be non-negative"));
        }
        let bounds = self.controller_bounds();
        if !bounds.is_valid() {
            return Err(Error::config("ocp.backoff.velocity", "backoff exceeds a velocity bound"));
        }
        if !m.initial_state.is_finite() {
            return Err(Error::config("mission.initial_state", "must be finite"));
        }
        if self.workspace.clearance(m.initial_state.position()) <= 0.0 {
            return Err(Error::config("mission.initial_state", "initial position is not in free space"));
        }
        self.problem(m.initial_state, m.waypoints[0]).validate()
    }

    fn controller_bounds(&self) -> VelocityBounds {
        let b = &self.ocp.bounds;
        let d = self.ocp.backoff.velocity;
        VelocityBounds {
            v_planar_max: b.v_planar_max - d,
            w_max: b.w_max - d,
            r_max: b.r_max - d,
            planar_mode: b.planar_mode,
        }
    }

    /// The OCP solved at a tick with measured state `x0`.
    pub fn problem(&self, x0: VehicleState, target: VehicleState) -> OcpProblem {
        let mut workspace = self.workspace.clone();
        workspace.r_bar += self.ocp.backoff.clearance;
        OcpProblem {
            x0,
            target,
            horizon: self.ocp.horizon,
            weights: self.ocp.weights.clone(),
            thrust_box: self.ocp.thrust_box,
            workspace,
            bounds: self.controller_bounds(),
            field: Arc::clone(&self.controller_field),
            params: self.params.clone(),
            terminal_region: self.ocp.terminal_region,
        }
    }
}

fn perturb(state: &VehicleState, noise: &MeasurementNoise, rng: &mut ChaCha8Rng) -> VehicleState {
    let mut draw = |sd: f64| {
        if sd > 0.0 {
            Normal::new(0.0, sd).map(|n| n.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    };
    VehicleState {
        x: state.x + draw(noise.position),
        y: state.y + draw(noise.position),
        z: state.z + draw(noise.position),
        psi: wrap_angle(state.psi + draw(noise.yaw)),
        u_r: state.u_r + draw(noise.velocity),
        v_r: state.v_r + draw(noise.velocity),
        w_r: state.w_r + draw(noise.velocity),
        r_r: state.r_r + draw(noise.velocity),
    }
}

/// Runs a mission to completion, breach, solver failure or tick budget.
pub fn run(cfg: &MissionConfig) -> Result<MissionLog> {
    cfg.validate()?;
    let m = &cfg.mission;
    let n_wp = m.waypoints.len();
    let total = n_wp * m.laps;
    let region = cfg.ocp.terminal_region;
    let sub_dt = m.tick / m.truth_substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut state = m.initial_state;
    let mut time = 0.0;
    let mut energy = 0.0;
    let mut active = 0usize;
    let mut warm: Option<ControlSequence> = None;
    let mut failures = 0usize;
    let mut records = Vec::new();
    let mut arrivals = Vec::new();
    let mut outcome = Outcome::Timeout;

    for tick in 0..=m.max_ticks {
        while active < total && arrival_check(&state, &m.waypoints[active % n_wp], &region) {
            arrivals.push(Arrival {
                waypoint: active % n_wp,
                lap: active / n_wp,
                time,
            });
            log::debug!("t={time:.2}s reached waypoint {} (lap {})", active % n_wp, active / n_wp);
            active += 1;
        }
        if active == total {
            outcome = Outcome::Success;
            break;
        }
        if tick == m.max_ticks {
            break;
        }

        let measured = match &m.measurement_noise {
            Some(n) => perturb(&state, n, &mut rng),
            None => state,
        };
        let target = m.waypoints[active % n_wp];
        let prob = cfg.problem(measured, target);
        let warm_start = warm.take();
        let sol = solve(&prob, warm_start.as_ref(), &cfg.solver)?;
        let applied = sol.seq.taus[0];

        for _ in 0..m.truth_substeps {
            let c = cfg.truth_field.sample_at(state.position(), state.psi);
            state = step_with_dt(&state, &applied, &c, &cfg.params, sub_dt);
        }
        time = (tick + 1) as f64 * m.tick;
        energy += applied.norm_squared() * m.tick;

        let residuals = cfg.workspace.state_constraint_residuals(&cfg.ocp.bounds, &state);
        let min_residual = residuals.iter().copied().fold(f64::INFINITY, f64::min);
        records.push(TickRecord {
            tick,
            time,
            state,
            applied,
            min_residual,
            clearance: residuals[3],
            solver_cost: sol.cost,
            solver_iterations: sol.iterations,
            solver_violation: sol.max_violation,
            converged: sol.converged,
            waypoint: active % n_wp,
            energy,
            plan: sol.seq.clone(),
            warm_start,
        });

        if min_residual < -cfg.solver.constraint_tol {
            log::warn!("t={time:.2}s constraint breach, residuals {residuals:?}");
            outcome = Outcome::ConstraintBreach;
            break;
        }
        if sol.max_violation > cfg.solver.constraint_tol {
            failures += 1;
            if failures > m.max_solver_failures {
                outcome = Outcome::SolverFailure;
                break;
            }
        } else {
            failures = 0;
        }
        warm = Some(warm_start_shift(&sol.seq));
    }

    Ok(MissionLog {
        tick: m.tick,
        initial_state: m.initial_state,
        records,
        arrivals,
        outcome,
    })
}

/// Runs independent missions, in parallel when enabled. Results keep the
/// input order.
pub fn run_batch(cfgs: &[MissionConfig], mode: Execution) -> Vec<Result<MissionLog>> {
    par::map(cfgs, mode, run)
}

/// Column order of [`MissionLog::to_csv`].
pub const CSV_COLUMNS: [&str; 23] = [
    "tick",
    "time",
    "x",
    "y",
    "z",
    "psi",
    "u_r",
    "v_r",
    "w_r",
    "r_r",
    "tau_po",
    "tau_s",
    "tau_ve",
    "tau_l",
    "min_residual",
    "clearance",
    "solver_cost",
    "solver_iterations",
    "solver_violation",
    "converged",
    "waypoint",
    "energy",
    "thrust_norm_sq",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub outcome: Outcome,
    pub ticks: usize,
    pub duration: f64,
    pub energy: f64,
    pub min_clearance: f64,
    pub min_obstacle_clearance: f64,
    pub max_velocity_violation: f64,
    pub max_thrust: f64,
    pub arrivals: Vec<Arrival>,
    pub leg_durations: Vec<f64>,
    pub config_hash: String,
    pub seed: u64,
}

impl MissionLog {
    pub fn states(&self) -> impl Iterator<Item = &VehicleState> {
        std::iter::once(&self.initial_state).chain(self.records.iter().map(|r| &r.state))
    }

    /// CSV with one row per tick. Lines starting with `#` carry metadata.
    pub fn to_csv(&self, metadata: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", CSV_COLUMNS.join(","));
        for r in &self.records {
            let s = &r.state;
            let t = &r.applied;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.tick,
                r.time,
                s.x,
                s.y,
                s.z,
                s.psi,
                s.u_r,
                s.v_r,
                s.w_r,
                s.r_r,
                t.tau_po,
                t.tau_s,
                t.tau_ve,
                t.tau_l,
                r.min_residual,
                r.clearance,
                r.solver_cost,
                r.solver_iterations,
                r.solver_violation,
                u8::from(r.converged),
                r.waypoint,
                r.energy,
                t.norm_squared(),
            );
        }
        out
    }

    pub fn summary(&self, cfg: &MissionConfig, config_hash: &str) -> MissionSummary {
        let bounds = &cfg.ocp.bounds;
        let mut min_clearance = f64::INFINITY;
        let mut min_obstacle = f64::INFINITY;
        let mut max_vel = 0.0f64;
        for s in self.states() {
            min_clearance = min_clearance.min(cfg.workspace.clearance(s.position()));
            min_obstacle = min_obstacle.min(cfg.workspace.obstacle_clearance(s.position()));
            let r = cfg.workspace.state_constraint_residuals(bounds, s);
            max_vel = max_vel.max(-r[0]).max(-r[1]).max(-r[2]);
        }
        let max_thrust = self
            .records
            .iter()
            .flat_map(|r| r.applied.to_array())
            .fold(0.0, |m: f64, t| m.max(t.abs()));
        let mut leg_durations = Vec::new();
        let mut prev = 0.0;
        for a in &self.arrivals {
            leg_durations.push(a.time - prev);
            prev = a.time;
        }
        MissionSummary {
            outcome: self.outcome,
            ticks: self.records.len(),
            duration: self.records.last().map_or(0.0, |r| r.time),
            energy: energy_proxy(self),
            min_clearance,
            min_obstacle_clearance: if min_obstacle.is_finite() { min_obstacle } else { f64::MAX },
            max_velocity_violation: max_vel,
            max_thrust,
            arrivals: self.arrivals.clone(),
            leg_durations,
            config_hash: config_hash.to_owned(),
            seed: cfg.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn simple_config(start: VehicleState, waypoint: VehicleState) -> MissionConfig {
        MissionConfig {
            params: VehicleParams::default(),
            workspace: Workspace::tank(5.0, 3.0, (-0.3, 1.5), 0.3),
            truth_field: Arc::new(CurrentField::default()),
            controller_field: Arc::new(CurrentField::default()),
            ocp: OcpSettings {
                horizon: 15,
                weights: Weights::default(),
                thrust_box: [12.0; 4],
                bounds: VelocityBounds::new(0.5, 0.25, 1.0),
                terminal_region: TerminalRegion::default(),
                backoff: Backoff {
                    velocity: 0.01,
                    clearance: 0.01,
                },
            },
            solver: SolverConfig::default(),
            mission: MissionSettings {
                initial_state: start,
                waypoints: vec![waypoint],
                laps: 1,
                tick: 0.1,
                truth_substeps: 1,
                max_ticks: 300,
                max_solver_failures: 20,
                measurement_noise: None,
            },
            seed: 0,
        }
    }

    #[test]
    fn already_at_waypoint() {
        let s = VehicleState::at_pose(0.0, 0.0, 0.6, 0.0);
        let log = run(&simple_config(s, s)).unwrap();
        assert_eq!(log.outcome, Outcome::Success);
        assert!(log.records.len() <= 1);
        assert_eq!(energy_proxy(&log), 0.0);
    }

    #[test]
    fn arrival_conjunction() {
        let w = VehicleState::at_pose(1.0, 0.0, 0.5, 0.0);
        let r = TerminalRegion::default();
        assert!(arrival_check(&w, &w, &r));
        let s = VehicleState::at_pose(1.29, 0.0, 0.5, 0.14);
        assert!(arrival_check(&s, &w, &r));
        let s = VehicleState::at_pose(1.29, 0.0, 0.5, 0.16);
        assert!(!arrival_check(&s, &w, &r));
    }

    #[test]
    fn energy_proxy_arithmetic() {
        let rec = |applied| TickRecord {
            tick: 0,
            time: 0.0,
            state: VehicleState::default(),
            applied,
            min_residual: 0.0,
            clearance: 0.0,
            solver_cost: 0.0,
            solver_iterations: 0,
            solver_violation: 0.0,
            converged: true,
            waypoint: 0,
            energy: 0.0,
            plan: ControlSequence::default(),
            warm_start: None,
        };
        let mut log = MissionLog {
            tick: 0.1,
            initial_state: VehicleState::default(),
            records: vec![rec(ThrustCommand::ZERO); 10],
            arrivals: vec![],
            outcome: Outcome::Success,
        };
        assert_eq!(energy_proxy(&log), 0.0);
        log.records = vec![rec(ThrustCommand::new(2.0, 0.0, 0.0, 0.0)); 10];
        assert_abs_diff_eq!(energy_proxy(&log), 4.0, epsilon = 1e-12);
        let mut head = log.clone();
        let tail_records = head.records.split_off(4);
        let tail = MissionLog {
            records: tail_records,
            ..log.clone()
        };
        assert_abs_diff_eq!(energy_proxy(&head) + energy_proxy(&tail), energy_proxy(&log), epsilon = 1e-12);
    }

    #[test]
    fn short_leg_reaches_waypoint() {
        let cfg = simple_config(
            VehicleState::at_pose(-1.0, 0.0, 0.6, 0.0),
            VehicleState::at_pose(0.5, 0.3, 0.8, 0.5),
        );
        let log = run(&cfg).unwrap();
        assert_eq!(log.outcome, Outcome::Success);
        for (k, r) in log.records.iter().enumerate() {
            assert_eq!(r.applied, r.plan.taus[0]);
            if k > 0 {
                assert_eq!(r.warm_start.as_ref(), Some(&warm_start_shift(&log.records[k - 1].plan)));
                assert!(r.time > log.records[k - 1].time);
                assert!(r.energy >= log.records[k - 1].energy);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let s = VehicleState::at_pose(0.0, 0.0, 0.6, 0.0);
        let mut c = simple_config(s, s);
        c.mission.tick = 0.05;
        assert!(run(&c).is_err());
        let mut c = simple_config(s, s);
        c.mission.waypoints.clear();
        assert!(run(&c).is_err());
        let mut c = simple_config(VehicleState::at_pose(2.45, 0.0, 0.6, 0.0), s);
        c.mission.laps = 1;
        assert!(matches!(run(&c), Err(Error::Config { path, .. }) if path == "mission.initial_state"));
    }
}
