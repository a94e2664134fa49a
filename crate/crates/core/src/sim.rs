//! Receding-horizon closed loop: each cycle seeds the combined vector from
//! the previous plan, blends the maneuvers by the decision object's existence
//! probability, solves, and executes only the `(t_pin, t_2pin]` window.

use std::time::Duration;

use log::{info, warn};
use serde::Serialize;

use crate::cost::CostWeights;
use crate::error::{PlannerError, Result};
use crate::optimizer::{solve_combined, solve_fallback_z, EgoState, Solution, SolverConfig};
use crate::path::{Point, RefPath};
use crate::prob::{detection_weights, DetectorModel, ManeuverWeights};
use crate::safety::check_stop_feasibility;
use crate::scenario::{entropy, Scenario};
use crate::scene::Scene;
use crate::trajectory::{build_combined, constant_velocity, extract_maneuver, CombinedVector, Layout, ManeuverId, Trajectory};

/// Everything a planning cycle needs besides the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub layout: Layout,
    pub step: f64,
    pub weights: CostWeights,
    pub solver: SolverConfig,
    pub detector: DetectorModel,
    pub a_max: f64,
    pub entropy_threshold: f64,
    /// Replaces the existence-derived blend when set.
    pub weights_override: Option<ManeuverWeights>,
}

impl PlannerConfig {
    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        Ok(PlannerConfig {
            layout: s.layout()?,
            step: s.horizon.step,
            weights: s.weights,
            solver: s.solver,
            detector: s.detector,
            a_max: s.a_max_brake,
            entropy_threshold: s.intention_entropy_threshold,
            weights_override: None,
        })
    }

    pub fn replan_interval(&self) -> f64 {
        self.layout.n_pin as f64 * self.step
    }
}

/// Commitment rule: stay undecided (C) while the intention entropy reaches
/// `threshold`, otherwise pick the cheaper of A and B.
pub fn entropy_gate(intention: &[f64], threshold: f64, costs: (f64, f64)) -> Result<ManeuverId> {
    if entropy(intention)? >= threshold {
        Ok(ManeuverId::C)
    } else if costs.0 <= costs.1 {
        Ok(ManeuverId::A)
    } else {
        Ok(ManeuverId::B)
    }
}

fn collapsed(m: ManeuverId) -> ManeuverWeights {
    match m {
        ManeuverId::B => ManeuverWeights { w_a: 0.0, w_b: 1.0 },
        _ => ManeuverWeights { w_a: 1.0, w_b: 0.0 },
    }
}

/// Result of one planning cycle.
#[derive(Debug, Clone)]
pub struct ReplanOutcome {
    /// Plan carried into the next cycle; its points `n_pin ..= 2·n_pin` are pinned there.
    pub plan: Trajectory,
    /// Executed points `n_pin + 1 ..= 2·n_pin`.
    pub window: Vec<Point>,
    pub solution: Option<Solution>,
    pub weights: ManeuverWeights,
    pub p_exist: Option<f64>,
    pub committed: ManeuverId,
    /// Gate decision that persists into the next cycle.
    pub gate: Option<ManeuverId>,
    pub min_margin: Option<f64>,
    pub fallback: bool,
    pub violated: Vec<String>,
}

/// Braking plan that keeps the pinned prefix of `seed` and decelerates at
/// `a_max` from its last pinned point.
pub fn fallback_plan(seed: &CombinedVector, path: &RefPath, cfg: &PlannerConfig) -> Result<Trajectory> {
    let n_pin = cfg.layout.n_pin;
    let pinned = seed.pinned();
    let end = path.project(&pinned[n_pin]);
    let v = if n_pin >= 1 {
        ((end.s - path.project(&pinned[n_pin - 1]).s) / cfg.step).max(0.0)
    } else {
        0.0
    };
    let len = cfg.layout.maneuver_len(ManeuverId::A) - n_pin;
    let z = solve_fallback_z(&EgoState { s: end.s, d: end.d, v }, cfg.a_max, path, cfg.step, len, seed.t0() + n_pin as f64 * cfg.step)?;
    let mut points = pinned[..n_pin].to_vec();
    // keep the pinned end point bit-exact rather than its re-projection
    points.push(pinned[n_pin]);
    points.extend_from_slice(&z.points()[1..]);
    Trajectory::new(points, cfg.step, seed.t0(), n_pin)
}

/// Smallest stop margin of `plan` against every active object.
fn plan_margin(plan: &Trajectory, scene: &Scene, a_max: f64) -> Result<Option<f64>> {
    let mut out: Option<f64> = None;
    for obj in scene.active_objects() {
        for m in check_stop_feasibility(plan, obj, a_max, &scene.path)? {
            out = Some(out.map_or(m, |o| o.min(m)));
        }
    }
    Ok(out)
}

/// One planning cycle starting one replanning interval after `prev.t0()`.
/// `gate` is the decision carried over from the previous cycle.
pub fn replan_step(prev: &Trajectory, scene: &Scene, cfg: &PlannerConfig, gate: Option<ManeuverId>) -> Result<ReplanOutcome> {
    let n_pin = cfg.layout.n_pin;
    if n_pin == 0 {
        return Err(PlannerError::Input("closed-loop execution needs n_pin ≥ 1".into()));
    }
    let seed = build_combined(prev, n_pin, cfg.layout.n)?;
    let decision = scene.decision_object();
    let p_exist = decision.map(|o| o.p_exist);
    let blend = match (cfg.weights_override, p_exist) {
        (Some(w), _) => w.normalized(),
        (None, Some(p)) => detection_weights(p, &cfg.detector)?,
        (None, None) => ManeuverWeights { w_a: 1.0, w_b: 0.0 },
    };
    let intention = decision.and_then(|o| o.intention).or_else(|| scene.active_objects().find_map(|o| o.intention));
    let gate_open = match intention {
        Some(q) => entropy(&q)? < cfg.entropy_threshold,
        None => false,
    };

    let solve = |seed: &CombinedVector, w: &ManeuverWeights| solve_combined(seed, w, scene, &cfg.weights, &cfg.solver, cfg.a_max);
    let attempt: Result<(Solution, ManeuverWeights, Option<ManeuverId>)> = (|| {
        match (gate_open, gate) {
            (true, Some(m)) => {
                let w = collapsed(m);
                Ok((solve(&seed, &w)?, w, Some(m)))
            }
            (true, None) => {
                let first = solve(&seed, &blend)?;
                let m = entropy_gate(&intention.expect("gate open implies intention"), cfg.entropy_threshold, first.cost.per_maneuver)?;
                let w = collapsed(m);
                let mut second = solve(&first.vector, &w)?;
                second.iterations += first.iterations;
                second.wall_time += first.wall_time;
                Ok((second, w, Some(m)))
            }
            (false, _) => Ok((solve(&seed, &blend)?, blend, None)),
        }
    })();

    match attempt {
        Ok((solution, weights, gate)) => {
            let follow = match gate {
                Some(m) => m,
                None if weights.w_a >= weights.w_b => ManeuverId::A,
                None => ManeuverId::B,
            };
            let plan = extract_maneuver(&solution.vector, follow)?;
            let window = plan.points()[n_pin + 1..=2 * n_pin].to_vec();
            Ok(ReplanOutcome {
                min_margin: plan_margin(&plan, scene, cfg.a_max)?,
                plan,
                window,
                solution: Some(solution),
                weights,
                p_exist,
                committed: gate.unwrap_or(ManeuverId::C),
                gate,
                fallback: false,
                violated: Vec::new(),
            })
        }
        Err(PlannerError::Infeasible { violated }) => {
            warn!("plan at t = {:.3} infeasible ({} constraints), committing full braking", seed.t0(), violated.len());
            let plan = fallback_plan(&seed, &scene.path, cfg)?;
            let window = plan.points()[n_pin + 1..=2 * n_pin].to_vec();
            Ok(ReplanOutcome {
                min_margin: plan_margin(&plan, scene, cfg.a_max)?,
                plan,
                window,
                solution: None,
                weights: blend,
                p_exist,
                committed: ManeuverId::Z,
                gate: None,
                fallback: true,
                violated,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    /// Start time of the plan, s.
    pub t: f64,
    pub w_a: f64,
    pub w_b: f64,
    pub p_exist: Option<f64>,
    pub j_a: Option<f64>,
    pub j_b: Option<f64>,
    pub total: Option<f64>,
    pub min_margin: Option<f64>,
    pub committed: ManeuverId,
    pub iterations: usize,
    pub converged: bool,
    pub fallback: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Largest along-path deceleration, m/s².
    pub max_decel: f64,
    /// Largest jerk magnitude, m/s³.
    pub max_jerk: f64,
    /// Smallest stop margin over all cycles; absent when no object was active.
    pub min_margin: Option<f64>,
    pub collision: bool,
    pub fallback_count: usize,
    pub replans: usize,
    #[serde(skip)]
    pub solver_time: Duration,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    /// Executed points from t = 0: the first plan's pinned prefix followed by
    /// every executed window.
    pub executed: Trajectory,
    /// Plan of each cycle, in order.
    pub plans: Vec<Trajectory>,
    pub steps: Vec<StepLog>,
    pub metrics: Metrics,
}

impl SimResult {
    /// Equality of everything except solver wall times.
    pub fn same_outcome(&self, other: &SimResult) -> bool {
        let untimed = |r: &SimResult| {
            let steps: Vec<StepLog> = r.steps.iter().map(|s| StepLog { wall_time: Duration::ZERO, ..s.clone() }).collect();
            (steps, Metrics { solver_time: Duration::ZERO, ..r.metrics.clone() })
        };
        self.executed == other.executed && self.plans == other.plans && untimed(self) == untimed(other)
    }

    /// Largest first-difference mismatch, m/s, between consecutive plans over
    /// the points they share.
    pub fn max_velocity_jump(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for pair in self.plans.windows(2) {
            let (a, b) = (pair[0].points(), pair[1].points());
            let n_pin = pair[0].n_pin();
            for j in 0..n_pin {
                let va = (a[n_pin + j + 1] - a[n_pin + j]) / pair[0].step();
                let vb = (b[j + 1] - b[j]) / pair[1].step();
                worst = worst.max((va - vb).norm());
            }
        }
        worst
    }

    /// Do consecutive plans share their overlapping points bit-exactly?
    pub fn pinned_consistent(&self) -> bool {
        self.plans.windows(2).all(|pair| {
            let n_pin = pair[0].n_pin();
            pair[0].points()[n_pin..=2 * n_pin] == pair[1].points()[..=n_pin]
        })
    }
}

/// Along-path acceleration and 2-D jerk magnitude extremes of `t`.
pub fn motion_extremes(t: &Trajectory, path: &RefPath) -> (f64, f64) {
    let s: Vec<f64> = t.points().iter().map(|p| path.project(p).s).collect();
    let h = t.step();
    let max_decel = s
        .windows(3)
        .map(|w| -(w[2] - 2.0 * w[1] + w[0]) / (h * h))
        .fold(0.0, f64::max);
    let p = t.points();
    let max_jerk = p
        .windows(4)
        .map(|w| ((w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]) / (h * h * h)).norm())
        .fold(0.0, f64::max);
    (max_decel, max_jerk)
}

/// Plan of the cycle before `t_start`, cruising at the ego speed, such that
/// the next combined vector starts exactly at `ego` at time `t_start`.
pub fn cruise_history(path: &RefPath, ego: &EgoState, cfg: &PlannerConfig, t_start: f64) -> Result<Trajectory> {
    let interval = cfg.replan_interval();
    let tangent = path.project(&path.point_at(ego.s, ego.d)).tangent;
    let start = path.point_at(ego.s - ego.v * interval, ego.d);
    constant_velocity(start, tangent * ego.v, cfg.layout.maneuver_len(ManeuverId::A), cfg.step, t_start - interval, cfg.layout.n_pin)
}

/// Runs `duration / interval` planning cycles at `t = k·interval`.
pub fn run_closed_loop(scenario: &Scenario, duration: f64, cfg: &PlannerConfig) -> Result<SimResult> {
    let n_pin = cfg.layout.n_pin;
    if n_pin == 0 {
        return Err(PlannerError::Validation(vec!["horizon.n_pin: closed-loop execution needs n_pin ≥ 1".into()]));
    }
    let interval = cfg.replan_interval();
    let cycles = (duration / interval).round();
    if !(duration > 0.0) || (cycles * interval - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(PlannerError::Validation(vec![format!(
            "duration: {duration} s is not a positive multiple of the replan interval {interval} s"
        )]));
    }
    let cycles = cycles as usize;
    let path = scenario.path()?;
    let mut prev = cruise_history(&path, &scenario.ego_init, cfg, 0.0)?;

    let mut executed: Vec<Point> = Vec::new();
    let mut plans = Vec::with_capacity(cycles);
    let mut steps = Vec::with_capacity(cycles);
    let mut gate = None;
    for k in 0..cycles {
        let t = k as f64 * interval;
        let scene = scenario.scene_at(t)?;
        let out = replan_step(&prev, &scene, cfg, gate)?;
        if k == 0 {
            executed.extend_from_slice(&out.plan.points()[..=n_pin]);
        }
        executed.extend_from_slice(&out.window);
        let cost = out.solution.as_ref().map(|s| &s.cost);
        steps.push(StepLog {
            t,
            w_a: out.weights.w_a,
            w_b: out.weights.w_b,
            p_exist: out.p_exist,
            j_a: cost.map(|c| c.per_maneuver.0),
            j_b: cost.map(|c| c.per_maneuver.1),
            total: cost.map(|c| c.total),
            min_margin: out.min_margin,
            committed: out.committed,
            iterations: out.solution.as_ref().map_or(0, |s| s.iterations),
            converged: out.solution.as_ref().is_some_and(|s| s.converged),
            fallback: out.fallback,
            wall_time: out.solution.as_ref().map_or(Duration::ZERO, |s| s.wall_time),
        });
        info!(
            "t = {t:.2}: committed {} w = ({:.3}, {:.3}) margin {:?}",
            out.committed, out.weights.w_a, out.weights.w_b, out.min_margin
        );
        gate = out.gate;
        prev = out.plan.clone();
        plans.push(out.plan);
    }

    let executed = Trajectory::new(executed, cfg.step, 0.0, n_pin)?;
    let (max_decel, max_jerk) = motion_extremes(&executed, &path);
    let collision = scenario.objects.iter().filter(|o| o.is_real() && o.crossing.is_none()).any(|o| {
        executed
            .points()
            .iter()
            .enumerate()
            .any(|(i, p)| path.project(p).s >= o.true_position(executed.time_at(i)))
    });
    let min_margin = steps.iter().filter_map(|s| s.min_margin).reduce(f64::min);
    let metrics = Metrics {
        max_decel,
        max_jerk,
        min_margin,
        collision,
        fallback_count: steps.iter().filter(|s| s.fallback).count(),
        replans: steps.len(),
        solver_time: steps.iter().map(|s| s.wall_time).sum(),
    };
    Ok(SimResult { executed, plans, steps, metrics })
}
