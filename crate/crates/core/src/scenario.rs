//! Scenario description: geometry, ego start, horizon, detector, object
//! traces with existence schedules, and the synthetic predictor that turns a
//! trace into a [`Scene`] at a given time. Scenarios are stored as TOML.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostWeights;
use crate::error::{PlannerError, Result};
use crate::optimizer::{EgoState, SolverConfig};
use crate::path::{Point, RefPath};
use crate::prob::{DetectorModel, TruncatedNormal};
use crate::safety::{yield_intention_clear, FovBoundary};
use crate::scene::{Behavior, PredictedObject, Scene};
use crate::trajectory::Layout;

pub const SCENARIO_VERSION: u32 = 1;

/// Times within this distance are treated as equal when sampling schedules.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub n: usize,
    /// s
    pub step: f64,
    pub n_pin: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig { n: 30, step: 0.2, n_pin: 2 }
    }
}

impl HorizonConfig {
    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.n, self.n_pin)
    }

    /// Time between two planning cycles, s.
    pub fn replan_interval(&self) -> f64 {
        self.n_pin as f64 * self.step
    }

    /// Longest maneuver in the combined layout.
    pub fn prediction_steps(&self) -> usize {
        self.n + self.n_pin + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    /// s
    pub t: f64,
    /// Existence probability from `t` on; absent means the object is not listed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_exist: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentionEntry {
    pub t: f64,
    pub pass: f64,
    #[serde(rename = "yield")]
    pub yield_: f64,
}

/// A road user on a crossing path, approaching the conflict zone at `s0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crossing {
    /// distance of the crossing vehicle to the conflict zone at t = 0, m
    pub distance0: f64,
    /// its speed at t = 0, m/s
    pub speed0: f64,
    /// its constant deceleration, m/s² (0 keeps the speed)
    #[serde(default)]
    pub decel: f64,
}

impl Crossing {
    /// `(speed, distance_to_conflict)` at time `t`.
    pub fn state_at(&self, t: f64) -> (f64, f64) {
        let t = t.max(0.0);
        if self.decel <= 0.0 {
            return (self.speed0, self.distance0 - self.speed0 * t);
        }
        let t_stop = self.speed0 / self.decel;
        let tt = t.min(t_stop);
        let travelled = self.speed0 * tt - 0.5 * self.decel * tt * tt;
        ((self.speed0 - self.decel * tt).max(0.0), self.distance0 - travelled)
    }
}

fn default_truncation() -> f64 {
    3.0
}

fn default_branch_b() -> Behavior {
    Behavior::Yield
}

fn is_ignore(b: &Behavior) -> bool {
    *b == Behavior::Ignore
}

fn is_yield(b: &Behavior) -> bool {
    *b == Behavior::Yield
}

fn is_default_truncation(k: &f64) -> bool {
    *k == default_truncation()
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectTrace {
    pub id: String,
    /// along-path position of the object's rear at t = 0, m
    pub s0: f64,
    /// along-path speed, m/s
    #[serde(default, skip_serializing_if = "is_zero")]
    pub speed: f64,
    /// position spread at the start of each prediction, m
    pub sigma0: f64,
    /// spread growth over the prediction horizon, m/s
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sigma_rate: f64,
    /// truncation at mean ± truncation·sigma
    #[serde(default = "default_truncation", skip_serializing_if = "is_default_truncation")]
    pub truncation: f64,
    #[serde(default, skip_serializing_if = "is_ignore")]
    pub branch_a: Behavior,
    #[serde(default = "default_branch_b", skip_serializing_if = "is_yield")]
    pub branch_b: Behavior,
    /// Ground truth; defaults to "the last schedule entry reports certainty".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<bool>,
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intention: Vec<IntentionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing: Option<Crossing>,
}

impl ObjectTrace {
    /// Existence probability listed at time `t`, `None` while unlisted.
    pub fn p_exist_at(&self, t: f64) -> Option<f64> {
        self.schedule.iter().take_while(|e| e.t <= t + TIME_EPS).last().and_then(|e| e.p_exist)
    }

    pub fn intention_at(&self, t: f64) -> Option<[f64; 2]> {
        self.intention
            .iter()
            .take_while(|e| e.t <= t + TIME_EPS)
            .last()
            .map(|e| [e.pass, e.yield_])
    }

    pub fn is_real(&self) -> bool {
        self.real.unwrap_or_else(|| self.schedule.last().and_then(|e| e.p_exist) == Some(1.0))
    }

    /// Nominal along-path position at time `t`.
    pub fn true_position(&self, t: f64) -> f64 {
        self.s0 + self.speed * t
    }

    /// Predicted positions for `steps` samples starting at `t0`.
    pub fn predict(&self, t0: f64, steps: usize, step: f64) -> Result<Vec<TruncatedNormal>> {
        (0..steps)
            .map(|k| {
                let dt = k as f64 * step;
                let sigma = self.sigma0 + self.sigma_rate * dt;
                TruncatedNormal::symmetric(self.true_position(t0 + dt), sigma, self.truncation)
            })
            .collect()
    }

    /// Crossing road users stop constraining the ego once they can clearly
    /// still stop before the conflict zone.
    pub fn yield_clear_at(&self, t: f64, a_comfort: f64) -> bool {
        self.crossing.is_some_and(|c| {
            let (v, dist) = c.state_at(t);
            dist >= 0.0 && yield_intention_clear(v, dist, a_comfort)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// m
    pub corridor_half_width: f64,
    /// m/s²
    pub a_max_brake: f64,
    /// m/s²
    pub a_comfort: f64,
    /// nats
    pub intention_entropy_threshold: f64,
    /// polyline `[[x, y], ...]`, m
    pub ref_path: Vec<[f64; 2]>,
    pub ego_init: EgoState,
    pub horizon: HorizonConfig,
    pub detector: DetectorModel,
    pub weights: CostWeights,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov: Option<FovBoundary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<ObjectTrace>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let de = toml::Deserializer::parse(text).map_err(|e| PlannerError::Parse(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let inner = inner.trim();
            if path == "." {
                PlannerError::Parse(inner.to_string())
            } else {
                PlannerError::Parse(format!("{path}: {inner}"))
            }
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlannerError::Parse(e.to_string()))
    }

    pub fn path(&self) -> Result<RefPath> {
        RefPath::new(self.ref_path.iter().map(|&[x, y]| Point::new(x, y)).collect())
    }

    pub fn layout(&self) -> Result<Layout> {
        self.horizon.layout()
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errors.push(msg);
            }
        };
        check(
            self.version == SCENARIO_VERSION,
            format!("version: unsupported scenario version {} (expected {SCENARIO_VERSION})", self.version),
        );
        check(
            self.corridor_half_width > 0.0,
            format!("corridor_half_width: must be positive, got {}", self.corridor_half_width),
        );
        check(self.a_max_brake > 0.0, format!("a_max_brake: must be positive, got {}", self.a_max_brake));
        check(self.a_comfort > 0.0, format!("a_comfort: must be positive, got {}", self.a_comfort));
        check(
            self.intention_entropy_threshold >= 0.0,
            format!("intention_entropy_threshold: must be nonnegative, got {}", self.intention_entropy_threshold),
        );
        if let Err(e) = self.path() {
            check(false, format!("ref_path: {e}"));
        }
        check(
            self.ego_init.v >= 0.0 && self.ego_init.v.is_finite(),
            format!("ego_init.v: must be a nonnegative speed, got {}", self.ego_init.v),
        );
        check(
            self.ego_init.s.is_finite() && self.ego_init.d.is_finite(),
            "ego_init: position must be finite".into(),
        );
        check(
            self.horizon.step > 0.0 && self.horizon.step.is_finite(),
            format!("horizon.step: must be positive, got {}", self.horizon.step),
        );
        check(self.horizon.n_pin >= 1, "horizon.n_pin: must be at least 1".into());
        if let Err(e) = self.horizon.layout() {
            check(false, format!("horizon: {e}"));
        }
        if let Err(e) = self.detector.validate() {
            check(false, format!("detector: {e}"));
        }
        if let Err(PlannerError::Validation(list)) = self.weights.validate() {
            errors.extend(list);
        }
        if let Err(PlannerError::Validation(list)) = self.solver.validate() {
            errors.extend(list);
        }
        if let Some(fov) = &self.fov {
            if !fov.s_visible.is_finite() {
                errors.push("fov.s_visible: must be finite".into());
            }
            if !(fov.sigma > 0.0) {
                errors.push(format!("fov.sigma: must be positive, got {}", fov.sigma));
            }
        }
        let mut ids = BTreeSet::new();
        for (k, o) in self.objects.iter().enumerate() {
            let at = format!("objects[{k}]");
            if !ids.insert(o.id.as_str()) {
                errors.push(format!("{at}.id: duplicate object id {:?}", o.id));
            }
            if !(o.sigma0 > 0.0) {
                errors.push(format!("{at}.sigma0: must be positive, got {}", o.sigma0));
            }
            if !(o.sigma_rate >= 0.0) {
                errors.push(format!("{at}.sigma_rate: must be nonnegative, got {}", o.sigma_rate));
            }
            if !(o.truncation > 0.0) {
                errors.push(format!("{at}.truncation: must be positive, got {}", o.truncation));
            }
            if !o.s0.is_finite() || !o.speed.is_finite() {
                errors.push(format!("{at}: s0 and speed must be finite"));
            }
            if o.schedule.is_empty() {
                errors.push(format!("{at}.schedule: must list at least one entry"));
            }
            for (i, e) in o.schedule.iter().enumerate() {
                if i > 0 && !(e.t > o.schedule[i - 1].t) {
                    errors.push(format!("{at}.schedule[{i}].t: times must be strictly increasing"));
                }
                if let Some(p) = e.p_exist {
                    if !(0.0..=1.0).contains(&p) {
                        errors.push(format!("{at}.schedule[{i}].p_exist: {p} is not a probability"));
                    }
                }
            }
            for (i, e) in o.intention.iter().enumerate() {
                if i > 0 && !(e.t > o.intention[i - 1].t) {
                    errors.push(format!("{at}.intention[{i}].t: times must be strictly increasing"));
                }
                if entropy(&[e.pass, e.yield_]).is_err() {
                    errors.push(format!("{at}.intention[{i}]: pass and yield must be probabilities summing to 1"));
                }
            }
            for (name, b) in [("branch_a", o.branch_a), ("branch_b", o.branch_b)] {
                if let Behavior::PassLateral(off) = b {
                    if !(off.abs() < self.corridor_half_width) {
                        errors.push(format!("{at}.{name}: pass offset {off} must lie inside the corridor"));
                    }
                }
            }
            if let Some(c) = &o.crossing {
                if !(c.speed0 >= 0.0) || !(c.decel >= 0.0) || !c.distance0.is_finite() {
                    errors.push(format!("{at}.crossing: speed0 and decel must be nonnegative, distance0 finite"));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PlannerError::Validation(errors))
        }
    }

    /// Planning snapshot at time `t`: listed objects with predictions over
    /// the longest maneuver, plus the hypothetical object at the end of the
    /// visible field until a percepted crossing road user clearly yields.
    pub fn scene_at(&self, t: f64) -> Result<Scene> {
        let steps = self.horizon.prediction_steps();
        let mut scene = Scene::empty(self.path()?, self.corridor_half_width);
        let mut fov_cleared = false;
        for trace in &self.objects {
            let Some(p) = trace.p_exist_at(t) else { continue };
            let yielding = trace.yield_clear_at(t, self.a_comfort);
            fov_cleared |= yielding;
            scene.objects.push(PredictedObject {
                id: trace.id.clone(),
                p_exist: p,
                active: !yielding,
                hypothetical: false,
                behavior_a: trace.branch_a,
                behavior_b: trace.branch_b,
                track: trace.predict(t, steps, self.horizon.step)?,
                intention: trace.intention_at(t),
            });
        }
        if let Some(fov) = &self.fov {
            let mut hypo = fov.hypothetical_object(steps, default_truncation())?;
            hypo.active = !fov_cleared;
            scene.objects.push(hypo);
        }
        Ok(scene)
    }

    /// Replaces every uncertain (`p < 1`) listed existence probability.
    pub fn with_existence(&self, p: f64) -> Scenario {
        let mut out = self.clone();
        for o in &mut out.objects {
            for e in &mut o.schedule {
                if let Some(q) = e.p_exist.as_mut() {
                    if *q < 1.0 {
                        *q = p;
                    }
                }
            }
        }
        out
    }
}

/// Shannon entropy in nats of a discrete distribution.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PlannerError::Input(format!("{probs:?} is not a probability distribution")));
    }
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PlannerError::Io(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::from_toml_str(&text)?;
    scenario.validate()?;
    Ok(scenario)
}
