//! Snapshot of the planning environment at one replanning instant: the
//! reference path, the corridor, and every listed object with its predicted
//! position distributions over the horizon.

use serde::{Deserialize, Serialize};

use crate::error::{PlannerError, Result};
use crate::path::RefPath;
use crate::prob::TruncatedNormal;
use crate::trajectory::ManeuverId;

/// How one maneuver branch treats an object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    /// The object is assumed absent in this branch.
    #[default]
    Ignore,
    /// Stay behind the object's lower position bound over the whole branch.
    Yield,
    /// Pass at a signed lateral offset (positive = left of the path).
    PassLateral(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedObject {
    pub id: String,
    pub p_exist: f64,
    /// Constraint switch; cleared once the object's yield intention is clear.
    pub active: bool,
    pub hypothetical: bool,
    pub behavior_a: Behavior,
    pub behavior_b: Behavior,
    /// Predicted along-path position at each horizon step, relative to the plan start.
    pub track: Vec<TruncatedNormal>,
    /// Optional intention distribution `(pass, yield)` of the other road user.
    pub intention: Option<[f64; 2]>,
}

impl PredictedObject {
    pub fn behavior(&self, id: ManeuverId) -> Behavior {
        match id {
            ManeuverId::B => self.behavior_b,
            _ => self.behavior_a,
        }
    }

    /// Position distributions used for the soft collision cost of a maneuver
    /// class; `None` when that maneuver does not interact longitudinally.
    pub fn prediction_for(&self, id: ManeuverId) -> Option<&[TruncatedNormal]> {
        match self.behavior(id) {
            Behavior::Yield if self.active => Some(&self.track),
            _ => None,
        }
    }

    pub fn lower_bound(&self, step: usize) -> Result<f64> {
        self.track.get(step).map(|d| d.lower).ok_or_else(|| {
            PlannerError::Input(format!("object {} has no prediction for step {step}", self.id))
        })
    }

    /// Does this object drive the A/B weighting? Only listed objects whose
    /// branches treat them differently do.
    pub fn is_decision_object(&self) -> bool {
        !self.hypothetical && self.active && self.behavior_a != self.behavior_b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub path: RefPath,
    pub corridor_half_width: f64,
    pub objects: Vec<PredictedObject>,
}

impl Scene {
    pub fn empty(path: RefPath, corridor_half_width: f64) -> Self {
        Scene { path, corridor_half_width, objects: Vec::new() }
    }

    pub fn active_objects(&self) -> impl Iterator<Item = &PredictedObject> {
        self.objects.iter().filter(|o| o.active)
    }

    /// Closest active decision object at the start of the horizon.
    pub fn decision_object(&self) -> Option<&PredictedObject> {
        self.objects
            .iter()
            .filter(|o| o.is_decision_object() && !o.track.is_empty())
            .min_by(|a, b| a.track[0].lower.total_cmp(&b.track[0].lower))
    }
}
