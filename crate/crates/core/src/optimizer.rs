//! Damped Gauss-Newton minimization of the blended maneuver cost with an
//! augmented-Lagrangian outer loop for the inequality constraints and a final
//! least-norm feasibility polish.

use std::time::{Duration, Instant};

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{combined_views, evaluate_views, project_all, CostReport, CostView, CostWeights};
use crate::error::{PlannerError, Result};
use crate::path::{Point, RefPath};
use crate::prob::ManeuverWeights;
use crate::safety::{build_constraints, stop_distance, ConstraintRecord};
use crate::scene::Scene;
use crate::trajectory::{CombinedVector, ManeuverId, Trajectory};

/// Constraint violation accepted as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

const MAX_PENALTY: f64 = 1e9;
const MAX_POLISH_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Bound on the Lagrangian gradient norm (max-norm) at convergence.
    pub convergence_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Initial Levenberg-Marquardt damping, relative to the curvature diagonal.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: 30,
            max_inner_iters: 100,
            convergence_tol: 1e-6,
            penalty_init: 100.0,
            penalty_growth: 10.0,
            damping: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.max_outer_iters == 0 {
            errors.push("solver.max_outer_iters must be positive".to_string());
        }
        if self.max_inner_iters == 0 {
            errors.push("solver.max_inner_iters must be positive".to_string());
        }
        if !(self.convergence_tol > 0.0) {
            errors.push("solver.convergence_tol must be positive".to_string());
        }
        if !(self.penalty_init > 0.0) {
            errors.push("solver.penalty_init must be positive".to_string());
        }
        if !(self.penalty_growth > 1.0) {
            errors.push("solver.penalty_growth must exceed 1".to_string());
        }
        if !(self.damping >= 0.0) {
            errors.push("solver.damping must be nonnegative".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PlannerError::Validation(errors))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution<P = CombinedVector> {
    pub vector: P,
    pub cost: CostReport,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// Along-path ego state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoState {
    /// m
    pub s: f64,
    /// lateral offset, m
    #[serde(default)]
    pub d: f64,
    /// m/s
    pub v: f64,
}

struct Problem<'a> {
    scene: &'a Scene,
    weights: &'a CostWeights,
    step: f64,
    views: Vec<CostView>,
    constraints: Vec<ConstraintRecord>,
    first_free: usize,
}

struct Outcome {
    points: Vec<Point>,
    kkt: f64,
    violation: f64,
    converged: bool,
    iterations: usize,
}

struct Merit {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Problem<'_> {
    fn free_len(&self, points: &[Point]) -> usize {
        2 * (points.len() - self.first_free)
    }

    fn apply(&self, points: &mut [Point], z: &DVector<f64>) {
        for (k, p) in points[self.first_free..].iter_mut().enumerate() {
            p.x = z[2 * k];
            p.y = z[2 * k + 1];
        }
    }

    fn gather(&self, points: &[Point]) -> DVector<f64> {
        DVector::from_iterator(
            self.free_len(points),
            points[self.first_free..].iter().flat_map(|p| [p.x, p.y]),
        )
    }

    /// Augmented-Lagrangian merit `f + Σ ψ(c_k)` restricted to free coordinates.
    fn merit(&self, points: &[Point], lambda: &[f64], rho: f64, with_hessian: bool) -> Result<Merit> {
        let (acc, _) = evaluate_views(points, &self.views, self.weights, self.scene, self.step, with_hessian)?;
        let offset = 2 * self.first_free;
        let n = self.free_len(points);
        let mut value = acc.f;
        let mut grad = DVector::from_iterator(n, acc.grad[offset..].iter().copied());
        let mut hess = match acc.hess {
            Some(h) => h.view((offset, offset), (n, n)).into_owned(),
            None => DMatrix::zeros(0, 0),
        };
        if !self.constraints.is_empty() {
            let proj = project_all(points, &self.scene.path);
            for (rec, &lam) in self.constraints.iter().zip(lambda) {
                let lin = rec.ineq.linearize(&proj);
                let c = lin.value;
                if c < lam / rho {
                    value += -lam * c + 0.5 * rho * c * c;
                    let mult = rho * c - lam;
                    let free: Vec<(usize, f64)> = lin
                        .grad
                        .iter()
                        .filter(|(i, _)| *i >= offset)
                        .map(|&(i, g)| (i - offset, g))
                        .collect();
                    for &(i, g) in &free {
                        grad[i] += mult * g;
                    }
                    if with_hessian {
                        for &(i, gi) in &free {
                            for &(j, gj) in &free {
                                hess[(i, j)] += rho * gi * gj;
                            }
                        }
                        if let Some((kappa, dir)) = &lin.concave_dir {
                            let coeff = -mult * kappa;
                            let dir: Vec<(usize, f64)> = dir
                                .iter()
                                .filter(|(i, _)| *i >= offset)
                                .map(|&(i, g)| (i - offset, g))
                                .collect();
                            for &(i, di) in &dir {
                                for &(j, dj) in &dir {
                                    hess[(i, j)] += coeff * di * dj;
                                }
                            }
                        }
                    }
                } else {
                    value -= lam * lam / (2.0 * rho);
                }
            }
        }
        Ok(Merit { value, grad, hess })
    }

    fn constraint_values(&self, points: &[Point]) -> Vec<f64> {
        let proj = project_all(points, &self.scene.path);
        self.constraints.iter().map(|r| r.ineq.value(&proj)).collect()
    }

    /// Lagrangian gradient `∇f − Σ λ_k ∇c_k` (max-norm over free coordinates).
    fn kkt_residual(&self, points: &[Point], lambda: &[f64]) -> Result<f64> {
        let (acc, _) = evaluate_views(points, &self.views, self.weights, self.scene, self.step, false)?;
        let offset = 2 * self.first_free;
        let mut g = acc.grad[offset..].to_vec();
        let proj = project_all(points, &self.scene.path);
        for (rec, &lam) in self.constraints.iter().zip(lambda) {
            if lam == 0.0 {
                continue;
            }
            for (i, gi) in rec.ineq.linearize(&proj).grad {
                if i >= offset {
                    g[i - offset] -= lam * gi;
                }
            }
        }
        Ok(g.iter().fold(0.0, |m, x| m.max(x.abs())))
    }

    /// Levenberg-Marquardt on the merit; returns the number of accepted steps.
    fn inner(&self, points: &mut Vec<Point>, lambda: &[f64], rho: f64, cfg: &SolverConfig) -> Result<usize> {
        let mut z = self.gather(points);
        let n = z.len();
        if n == 0 {
            return Ok(0);
        }
        let mut mu = cfg.damping;
        let mut merit = self.merit(points, lambda, rho, true)?;
        let grad_floor = 1e-3 * cfg.convergence_tol;
        let mut accepted = 0;
        let mut trial = points.clone();
        for _ in 0..cfg.max_inner_iters {
            let gnorm = merit.grad.amax();
            if gnorm <= grad_floor {
                break;
            }
            let diag_scale = (0..n).map(|i| merit.hess[(i, i)]).fold(0.0, f64::max).max(1.0);
            let mut moved = false;
            while mu <= 1e12 {
                let mut a = merit.hess.clone();
                for i in 0..n {
                    a[(i, i)] += mu * (a[(i, i)] + 1e-9 * diag_scale) + 1e-14 * diag_scale;
                }
                let Some(chol) = a.cholesky() else {
                    mu = (mu * 10.0).max(1e-12);
                    continue;
                };
                let delta = chol.solve(&(-&merit.grad));
                let z_try = &z + &delta;
                self.apply(&mut trial, &z_try);
                let candidate = self.merit(&trial, lambda, rho, false)?;
                if candidate.value < merit.value {
                    z = z_try;
                    std::mem::swap(points, &mut trial);
                    trial.clone_from(points);
                    merit = self.merit(points, lambda, rho, true)?;
                    mu = (mu * 0.1).max(1e-15);
                    accepted += 1;
                    moved = delta.amax() > 1e-15 * (1.0 + z.amax());
                    break;
                }
                mu = (mu * 10.0).max(1e-12);
            }
            if !moved {
                break;
            }
        }
        Ok(accepted)
    }

    /// Least-norm correction onto the violated constraints.
    fn polish(&self, points: &mut [Point]) {
        let offset = 2 * self.first_free;
        let n = self.free_len(points);
        for _ in 0..MAX_POLISH_STEPS {
            let proj = project_all(points, &self.scene.path);
            let rows: Vec<_> = self
                .constraints
                .iter()
                .map(|r| r.ineq.linearize(&proj))
                .filter(|lin| lin.value < 1e-10)
                .collect();
            if rows.iter().all(|lin| lin.value >= 0.0) {
                return;
            }
            let m = rows.len();
            let mut jac = DMatrix::<f64>::zeros(m, n);
            let mut rhs = DVector::<f64>::zeros(m);
            for (r, lin) in rows.iter().enumerate() {
                for &(i, g) in &lin.grad {
                    if i >= offset {
                        jac[(r, i - offset)] += g;
                    }
                }
                rhs[r] = 1e-9 - lin.value;
            }
            let gram = &jac * jac.transpose() + DMatrix::identity(m, m) * 1e-12;
            let Some(chol) = gram.cholesky() else {
                return;
            };
            let delta = jac.transpose() * chol.solve(&rhs);
            let mut z = self.gather(points);
            z += delta;
            self.apply(points, &z);
        }
    }

    fn solve(&self, mut points: Vec<Point>, cfg: &SolverConfig) -> Result<Outcome> {
        let m = self.constraints.len();
        let mut lambda = vec![0.0; m];
        let mut rho = cfg.penalty_init;
        let mut prev_violation = f64::INFINITY;
        let mut iterations = 0;
        let mut kkt = f64::INFINITY;
        let mut violation = f64::INFINITY;
        let mut converged = false;
        for outer in 0..cfg.max_outer_iters {
            iterations += self.inner(&mut points, &lambda, rho, cfg)?;
            let values = self.constraint_values(&points);
            violation = values.iter().map(|c| (-c).max(0.0)).fold(0.0, f64::max);
            for (lam, c) in lambda.iter_mut().zip(&values) {
                *lam = (*lam - rho * c).max(0.0);
            }
            kkt = self.kkt_residual(&points, &lambda)?;
            debug!("outer {outer}: violation {violation:.3e}, kkt {kkt:.3e}, rho {rho:.1e}");
            if violation <= 1e-3 * FEASIBILITY_TOL && kkt <= cfg.convergence_tol {
                converged = true;
                break;
            }
            if violation > 0.25 * prev_violation {
                rho = (rho * cfg.penalty_growth).min(MAX_PENALTY);
            }
            prev_violation = violation;
        }
        if violation > 0.0 {
            self.polish(&mut points);
            let values = self.constraint_values(&points);
            violation = values.iter().map(|c| (-c).max(0.0)).fold(0.0, f64::max);
            kkt = self.kkt_residual(&points, &lambda)?;
        }
        converged = converged || (violation <= FEASIBILITY_TOL && kkt <= cfg.convergence_tol);
        let converged = converged && violation <= FEASIBILITY_TOL && kkt <= cfg.convergence_tol;
        Ok(Outcome { points, kkt, violation, converged, iterations })
    }

    fn infeasible(&self, points: &[Point]) -> PlannerError {
        let values = self.constraint_values(points);
        PlannerError::Infeasible {
            violated: self
                .constraints
                .iter()
                .zip(values)
                .filter(|(_, c)| *c < -FEASIBILITY_TOL)
                .map(|(r, _)| r.label())
                .collect(),
        }
    }
}

/// Locally optimal single maneuver for `seed`, keeping points `0..=n_pin` fixed.
pub fn solve_single(
    seed: &Trajectory,
    maneuver: ManeuverId,
    scene: &Scene,
    weights: &CostWeights,
    cfg: &SolverConfig,
    a_max: f64,
) -> Result<Solution<Trajectory>> {
    if !matches!(maneuver, ManeuverId::A | ManeuverId::B) {
        return Err(PlannerError::Input(format!("cannot optimize maneuver {maneuver} on its own")));
    }
    weights.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let indices: Vec<usize> = (0..seed.len()).collect();
    let constraints = build_constraints(
        scene,
        &[(maneuver, indices.clone())],
        seed.n_pin(),
        seed.n_pin() + 1,
        seed.len(),
        seed.step(),
        a_max,
    )?;
    let problem = Problem {
        scene,
        weights,
        step: seed.step(),
        views: vec![CostView { class: maneuver, weight: 1.0, indices }],
        constraints,
        first_free: seed.n_pin() + 1,
    };
    let out = problem.solve(seed.points().to_vec(), cfg)?;
    if out.violation > FEASIBILITY_TOL {
        return Err(problem.infeasible(&out.points));
    }
    let (_, breakdown) = evaluate_views(&out.points, &problem.views, weights, scene, seed.step(), false)?;
    let j = breakdown.per_view[0];
    let per_maneuver = if maneuver == ManeuverId::A { (j, 0.0) } else { (0.0, j) };
    Ok(Solution {
        vector: Trajectory::new(out.points, seed.step(), seed.t0(), seed.n_pin())?,
        cost: CostReport { total: j, per_term: breakdown.per_term, per_maneuver },
        kkt_residual: out.kkt,
        constraint_violation: out.violation,
        converged: out.converged,
        iterations: out.iterations,
        wall_time: start.elapsed(),
    })
}

/// Minimizes `w_a·J_A + w_b·J_B` over the combined vector subject to the
/// constraints of both branches; pinned points stay fixed.
pub fn solve_combined(
    seed: &CombinedVector,
    mw: &ManeuverWeights,
    scene: &Scene,
    weights: &CostWeights,
    cfg: &SolverConfig,
    a_max: f64,
) -> Result<Solution> {
    weights.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let layout = seed.layout();
    let maneuvers = [ManeuverId::A, ManeuverId::B]
        .into_iter()
        .map(|m| Ok((m, layout.maneuver_indices(m)?)))
        .collect::<Result<Vec<_>>>()?;
    let constraints = build_constraints(
        scene,
        &maneuvers,
        layout.n_pin,
        layout.pinned_points(),
        layout.total_points(),
        seed.step(),
        a_max,
    )?;
    let problem = Problem {
        scene,
        weights,
        step: seed.step(),
        views: combined_views(seed, mw),
        constraints,
        first_free: layout.pinned_points(),
    };
    let out = problem.solve(seed.points().to_vec(), cfg)?;
    if out.violation > FEASIBILITY_TOL {
        return Err(problem.infeasible(&out.points));
    }
    let vector = CombinedVector::from_storage(layout, out.points, seed.step(), seed.t0())?;
    let cost = crate::cost::combined_cost(&vector, weights, mw, scene)?;
    Ok(Solution {
        vector,
        cost,
        kkt_residual: out.kkt,
        constraint_violation: out.violation,
        converged: out.converged,
        iterations: out.iterations,
        wall_time: start.elapsed(),
    })
}

/// Along-path position after braking at `a_max` for time `t` from speed `v`.
fn braking_offset(v: f64, a_max: f64, t: f64) -> f64 {
    let t_stop = v / a_max;
    let t = t.min(t_stop);
    v * t - 0.5 * a_max * t * t
}

/// Full-braking fallback: constant deceleration to standstill along the path
/// at the current lateral offset, sampled every `step` seconds.
pub fn solve_fallback_z(
    state: &EgoState,
    a_max: f64,
    path: &RefPath,
    step: f64,
    len: usize,
    t0: f64,
) -> Result<Trajectory> {
    // validates v and a_max
    stop_distance(state.v, a_max)?;
    let points = (0..len)
        .map(|i| path.point_at(state.s + braking_offset(state.v, a_max, i as f64 * step), state.d))
        .collect();
    Trajectory::new(points, step, t0, 0)
}
