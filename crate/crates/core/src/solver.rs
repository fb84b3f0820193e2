//! Augmented-Lagrangian solver for [`OcpProblem`].
//!
//! Input bounds are handled exactly by projection onto the thrust box. State
//! constraints enter through a Powell-Hestenes-Rockafellar penalty
//!
//! ```text
//! L(tau) = J(tau) + 1/(2 rho) * sum_i ( max(0, mu_i - rho c_i(tau))^2 - mu_i^2 )
//! ```
//!
//! which is minimised over the box by spectral projected gradient steps with
//! a monotone Armijo backtracking search. Multipliers are updated as
//! `mu_i <- max(0, mu_i - rho c_i)` and `rho` grows while the violation stalls.

use std::time::{Duration, Instant};

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::dynamics::{StateVector, ThrustCommand, VehicleState, INPUT_DIM};
use crate::error::{Error, Result};
use crate::ocp::{self, ControlSequence, OcpProblem};
use crate::workspace::ConstraintTerm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearch {
    /// Step shrink factor per backtrack, in (0, 1).
    pub shrink: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Tolerance on the infinity norm of the projected gradient step.
    pub grad_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Largest accepted state-constraint violation (m, m/s, rad/s).
    pub constraint_tol: f64,
    #[serde(default)]
    pub line_search: LineSearch,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 12,
            max_inner_iters: 300,
            grad_tol: 1e-4,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e7,
            constraint_tol: 1e-4,
            line_search: LineSearch::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: &str| Err(Error::config(format!("solver.{f}"), m));
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return err("max_outer_iters", "iteration limits must be positive");
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("penalty_init", self.penalty_init),
            ("penalty_max", self.penalty_max),
            ("constraint_tol", self.constraint_tol),
            ("line_search.armijo", self.line_search.armijo),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(name, "must be positive");
            }
        }
        if !(self.penalty_growth > 1.0) {
            return err("penalty_growth", "must exceed 1");
        }
        if !(self.line_search.shrink > 0.0 && self.line_search.shrink < 1.0) {
            return err("line_search.shrink", "must lie in (0, 1)");
        }
        if self.line_search.max_backtracks == 0 {
            return err("line_search.max_backtracks", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub seq: ControlSequence,
    pub predicted: Vec<VehicleState>,
    pub cost: f64,
    /// Largest state-constraint violation over `x_1 .. x_{N-1}`, 0 if feasible.
    pub max_violation: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    pub solve_time: Duration,
}

/// Clamps every thrust to `[-bound_i, bound_i]`.
pub fn project_box(seq: &ControlSequence, thrust_box: &[f64; INPUT_DIM]) -> ControlSequence {
    let mut flat = seq.to_flat();
    project_flat(&mut flat, thrust_box);
    ControlSequence::from_flat(&flat)
}

fn project_flat(flat: &mut [f64], thrust_box: &[f64; INPUT_DIM]) {
    for (k, v) in flat.iter_mut().enumerate() {
        let b = thrust_box[k % INPUT_DIM];
        *v = v.clamp(-b, b);
    }
}

/// Receding-horizon shift: drop the first command and repeat the last.
pub fn warm_start_shift(prev: &ControlSequence) -> ControlSequence {
    let mut taus: Vec<ThrustCommand> = prev.taus.iter().skip(1).copied().collect();
    if let Some(last) = prev.taus.last() {
        taus.push(*last);
    }
    ControlSequence { taus }
}

/// Multipliers and penalty of the current outer iteration.
struct Penalty<'a> {
    multipliers: &'a [f64],
    rho: f64,
}

struct Evaluator<'a> {
    prob: &'a OcpProblem,
    per_state: usize,
    terms: Vec<ConstraintTerm>,
}

impl<'a> Evaluator<'a> {
    fn new(prob: &'a OcpProblem) -> Self {
        Self {
            prob,
            per_state: prob.workspace.smooth_constraint_count(&prob.bounds),
            terms: Vec::new(),
        }
    }

    fn constraint_count(&self) -> usize {
        self.prob.horizon.saturating_sub(1) * self.per_state
    }

    fn constraint_values(&mut self, states: &[VehicleState]) -> Vec<f64> {
        let n = self.prob.horizon;
        let mut out = Vec::with_capacity(self.constraint_count());
        for s in &states[1..n.max(1)] {
            self.terms.clear();
            self.prob.workspace.smooth_constraints(&self.prob.bounds, s, &mut self.terms);
            out.extend(self.terms.iter().map(|t| t.value));
        }
        out
    }

    fn merit(&mut self, flat: &[f64], pen: &Penalty) -> f64 {
        self.merit_impl(flat, pen, false).0
    }

    fn merit_and_grad(&mut self, flat: &[f64], pen: &Penalty) -> (f64, Vec<f64>) {
        let (f, g) = self.merit_impl(flat, pen, true);
        (f, g.unwrap_or_default())
    }

    fn merit_impl(&mut self, flat: &[f64], pen: &Penalty, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let prob = self.prob;
        let seq = ControlSequence::from_flat(flat);
        let traj = ocp::simulate(prob, &seq.taus);
        let mut f = ocp::cost_of(prob, &seq.taus, &traj.states);
        let (mut gx, gu): (Vec<StateVector>, Vec<Vector4<f64>>) = if want_grad {
            ocp::cost_partials(prob, &seq.taus, &traj.states)
        } else {
            (Vec::new(), Vec::new())
        };
        let n = prob.horizon;
        for j in 1..n {
            self.terms.clear();
            prob.workspace.smooth_constraints(&prob.bounds, &traj.states[j], &mut self.terms);
            let base = (j - 1) * self.per_state;
            for (i, term) in self.terms.iter().enumerate() {
                let mu = pen.multipliers[base + i];
                let shifted = mu - pen.rho * term.value;
                if shifted > 0.0 {
                    f += (shifted * shifted - mu * mu) / (2.0 * pen.rho);
                    if want_grad {
                        gx[j] -= term.grad * shifted;
                    }
                } else {
                    f -= mu * mu / (2.0 * pen.rho);
                }
            }
        }
        if !want_grad {
            return (f, None);
        }
        (f, Some(ocp::backpropagate(prob, &seq.taus, &traj, &gx, &gu)))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|| P(tau - g) - tau ||_inf`
fn stationarity(flat: &[f64], grad: &[f64], thrust_box: &[f64; INPUT_DIM]) -> f64 {
    flat.iter()
        .zip(grad)
        .enumerate()
        .map(|(k, (t, g))| {
            let b = thrust_box[k % INPUT_DIM];
            ((t - g).clamp(-b, b) - t).abs()
        })
        .fold(0.0, f64::max)
}

struct InnerResult {
    stationarity: f64,
    iterations: usize,
}

/// Spectral projected gradient on the augmented Lagrangian with fixed
/// multipliers. `flat` is updated in place and stays inside the box.
fn inner_solve(
    eval: &mut Evaluator,
    flat: &mut Vec<f64>,
    pen: &Penalty,
    cfg: &SolverConfig,
) -> InnerResult {
    let bx = eval.prob.thrust_box;
    let ls = &cfg.line_search;
    let (mut f, mut g) = eval.merit_and_grad(flat, pen);
    let mut alpha = 1.0 / inf_norm(&g).max(1e-12);
    let mut stat = stationarity(flat, &g, &bx);
    let mut iterations = 0;
    while iterations < cfg.max_inner_iters && stat > cfg.grad_tol {
        iterations += 1;
        let mut target: Vec<f64> = flat.iter().zip(&g).map(|(t, gi)| t - alpha * gi).collect();
        project_flat(&mut target, &bx);
        let dir: Vec<f64> = target.iter().zip(flat.iter()).map(|(p, t)| p - t).collect();
        let slope = dot(&g, &dir);
        if !(slope < 0.0) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..ls.max_backtracks {
            let mut trial: Vec<f64> = flat.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            project_flat(&mut trial, &bx);
            let ft = eval.merit(&trial, pen);
            if ft <= f + ls.armijo * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= ls.shrink;
        }
        let Some((trial, ft)) = accepted else {
            break;
        };
        let (ft, gt) = {
            let (fv, gv) = eval.merit_and_grad(&trial, pen);
            debug_assert_eq!(fv.to_bits(), ft.to_bits());
            (fv, gv)
        };
        debug_assert!(ft <= f, "merit increased: {ft} > {f}");
        let s: Vec<f64> = trial.iter().zip(flat.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-10, 1e10) } else { 1e4 };
        *flat = trial;
        f = ft;
        g = gt;
        stat = stationarity(flat, &g, &bx);
    }
    InnerResult {
        stationarity: stat,
        iterations,
    }
}

fn max_violation(prob: &OcpProblem, states: &[VehicleState]) -> f64 {
    ocp::interior_residuals(prob, states)
        .iter()
        .flatten()
        .fold(0.0, |m: f64, r| m.max(-r))
}

/// Solves the OCP from `warm` (or a zero sequence).
///
/// The returned thrusts always satisfy the box exactly. `converged` is set
/// when the state constraints hold to `constraint_tol` and the projected
/// gradient is below `grad_tol`; otherwise the best iterate found is returned.
pub fn solve(prob: &OcpProblem, warm: Option<&ControlSequence>, cfg: &SolverConfig) -> Result<OcpSolution> {
    let start = Instant::now();
    prob.validate()?;
    cfg.validate()?;
    let n = prob.horizon;
    let mut flat = match warm {
        Some(w) if w.len() != n => {
            return Err(Error::config(
                "warm_start",
                format!("warm start has {} steps, horizon is {n}", w.len()),
            ))
        }
        Some(w) => w.to_flat(),
        None => vec![0.0; n * INPUT_DIM],
    };
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("warm_start", "warm start must be finite"));
    }
    project_flat(&mut flat, &prob.thrust_box);

    let mut eval = Evaluator::new(prob);
    let mut multipliers = vec![0.0; eval.constraint_count()];
    let mut rho = cfg.penalty_init;
    let mut iterations = 0;
    let mut last_violation = f64::INFINITY;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut converged = false;

    for _ in 0..cfg.max_outer_iters {
        let inner = inner_solve(
            &mut eval,
            &mut flat,
            &Penalty {
                multipliers: &multipliers,
                rho,
            },
            cfg,
        );
        iterations += inner.iterations;

        let seq = ControlSequence::from_flat(&flat);
        let states = ocp::rollout(prob, &seq);
        let violation = max_violation(prob, &states);
        let cost = ocp::cost_of(prob, &seq.taus, &states);
        let better = match &best {
            None => true,
            Some((bv, bc, _)) => {
                let (feas, bfeas) = (violation <= cfg.constraint_tol, *bv <= cfg.constraint_tol);
                match (feas, bfeas) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => cost <= *bc,
                    (false, false) => violation <= *bv,
                }
            }
        };
        if better {
            best = Some((violation, cost, flat.clone()));
        }

        if violation <= cfg.constraint_tol && inner.stationarity <= cfg.grad_tol {
            converged = true;
            best = Some((violation, cost, flat.clone()));
            break;
        }

        let values = eval.constraint_values(&states);
        for (mu, c) in multipliers.iter_mut().zip(&values) {
            *mu = (*mu - rho * c).max(0.0);
        }
        if violation > cfg.constraint_tol && violation > 0.25 * last_violation {
            rho = (rho * cfg.penalty_growth).min(cfg.penalty_max);
        }
        last_violation = violation;
    }

    let (_, _, flat) = best.expect("at least one outer iteration");
    let seq = ControlSequence::from_flat(&flat);
    let predicted = ocp::rollout(prob, &seq);
    let cost = ocp::cost_of(prob, &seq.taus, &predicted);
    let max_violation = max_violation(prob, &predicted);
    Ok(OcpSolution {
        seq,
        predicted,
        cost,
        max_violation,
        iterations,
        converged,
        solve_time: start.elapsed(),
    })
}
