//! Benchmark suite: the 21-task catalog in 10 groups, seeded scenario
//! generation, goal instantiation, final-state evaluation, feasibility
//! evaluation, and suite-level aggregation with replayable logs.

mod catalog;
mod ground;
mod suite;

pub use catalog::{build_catalog, instantiate_task, task_by_id, InstantiateError, TaskDef, TaskInstance, TaskKind};
pub use ground::ground_instruction;
pub use suite::{
    aggregate, read_trials_jsonl, run_suite, GroupSummary, SkippedTrial, SuiteConfig, SuiteReport,
    SuiteRunOptions, TaskSummary, DEFAULT_GOALS_PER_SCENARIO, DEFAULT_SCENARIO_COUNT,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::primitives::TaskStatus;
use crate::world::{ObjectId, SceneState, Support, Vec3};

/// Evaluation distance bound from the success metric: an object counts as
/// placed when its final pose is within this of its goal pose (inclusive).
pub const EVAL_DELTA: f64 = 0.02;

/// The ten task groups. The canonical suite is {SM, SA, SS, PM, SR} (13
/// tasks); the robustness suite is {CR, SP, FR, LR, ER} (8 tasks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskGroup {
    SM,
    SA,
    SS,
    PM,
    SR,
    CR,
    SP,
    FR,
    LR,
    ER,
}

impl TaskGroup {
    pub const ALL: [TaskGroup; 10] = [
        TaskGroup::SM,
        TaskGroup::SA,
        TaskGroup::SS,
        TaskGroup::PM,
        TaskGroup::SR,
        TaskGroup::CR,
        TaskGroup::SP,
        TaskGroup::FR,
        TaskGroup::LR,
        TaskGroup::ER,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskGroup::SM => "SM",
            TaskGroup::SA => "SA",
            TaskGroup::SS => "SS",
            TaskGroup::PM => "PM",
            TaskGroup::SR => "SR",
            TaskGroup::CR => "CR",
            TaskGroup::SP => "SP",
            TaskGroup::FR => "FR",
            TaskGroup::LR => "LR",
            TaskGroup::ER => "ER",
        }
    }

    pub fn long_name(&self) -> &'static str {
        match self {
            TaskGroup::SM => "Simple Manipulation",
            TaskGroup::SA => "Spatial Allocation",
            TaskGroup::SS => "Stable Stacking",
            TaskGroup::PM => "Perceptual Matching",
            TaskGroup::SR => "Spatial Reasoning",
            TaskGroup::CR => "Conditional Reasoning",
            TaskGroup::SP => "Sequential Planning",
            TaskGroup::FR => "Feasibility Recognition",
            TaskGroup::LR => "Linguistic Robustness",
            TaskGroup::ER => "Error Recovery",
        }
    }

    pub fn in_canonical_suite(&self) -> bool {
        matches!(self, TaskGroup::SM | TaskGroup::SA | TaskGroup::SS | TaskGroup::PM | TaskGroup::SR)
    }
}

impl std::fmt::Display for TaskGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Canonical,
    Robustness,
    All,
}

impl Suite {
    pub fn parse(name: &str) -> Option<Suite> {
        match name {
            "canonical" => Some(Suite::Canonical),
            "robustness" => Some(Suite::Robustness),
            "all" => Some(Suite::All),
            _ => None,
        }
    }

    pub fn includes(&self, group: TaskGroup) -> bool {
        match self {
            Suite::All => true,
            Suite::Canonical => group.in_canonical_suite(),
            Suite::Robustness => !group.in_canonical_suite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

/// Goal poses per moved object; untouched objects are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    targets: BTreeMap<ObjectId, Vec3>,
}

impl GoalSpec {
    pub fn new(targets: BTreeMap<ObjectId, Vec3>) -> Self {
        Self { targets }
    }

    pub fn targets(&self) -> &BTreeMap<ObjectId, Vec3> {
        &self.targets
    }

    pub fn insert(&mut self, id: ObjectId, target: Vec3) {
        self.targets.insert(id, target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// One randomized benchmark scenario: a pair count and a world spawn seed,
/// both a deterministic function of `(master_seed, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: u32,
    pub n_pairs: usize,
    pub seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives `count` scenarios from a master seed. Pair counts are uniform over
/// {2, 3, 4}.
pub fn generate_scenarios(master_seed: u64, count: u32) -> Vec<Scenario> {
    (0..count)
        .map(|index| {
            let seed = splitmix64(master_seed ^ splitmix64(index as u64 + 1));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_pairs = rng.gen_range(2..=4usize);
            Scenario { index, n_pairs, seed }
        })
        .collect()
}

/// Deterministic per-trial goal seed.
pub fn goal_seed_for(master_seed: u64, task_id: &str, scenario_index: u32, repetition: u32) -> u64 {
    let mut acc = splitmix64(master_seed ^ 0x5eed_ba11);
    for byte in task_id.bytes() {
        acc = splitmix64(acc ^ byte as u64);
    }
    splitmix64(acc ^ ((scenario_index as u64) << 32 | repetition as u64))
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("unknown goal object {id}")]
    UnknownGoalObject { id: ObjectId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEval {
    pub id: ObjectId,
    pub distance: f64,
    /// What the object ended up resting on — the looser containment
    /// diagnostic that rides along with the strict distance criterion.
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pass: bool,
    pub per_object: Vec<ObjectEval>,
}

/// Final-state success: every constrained object within `delta` (inclusive)
/// of its goal pose. An empty goal passes vacuously.
pub fn evaluate(scene: &SceneState, goal: &GoalSpec, delta: f64) -> Result<EvalReport, EvalError> {
    let mut per_object = Vec::with_capacity(goal.len());
    let mut pass = true;
    for (id, target) in goal.targets() {
        let obj = scene
            .object(id)
            .ok_or_else(|| EvalError::UnknownGoalObject { id: id.clone() })?;
        let d = obj.pose.distance(target);
        if d > delta {
            pass = false;
        }
        per_object.push(ObjectEval { id: id.clone(), distance: d, support: obj.supported_by.clone() });
    }
    Ok(EvalReport { pass, per_object })
}

/// Feasibility-labeled tasks pass iff the predicted status matches the label.
/// Redundant movements are a metric, not a failure.
pub fn evaluate_feasibility(predicted: TaskStatus, label: Feasibility) -> bool {
    match label {
        Feasibility::Infeasible => predicted == TaskStatus::Infeasible,
        Feasibility::Feasible => predicted == TaskStatus::Success,
    }
}

/// Scales a 3-pair base difficulty by ±0.5 per pair, clamped to [1, 5].
pub fn scale_difficulty(base: f64, n_pairs: usize) -> f64 {
    (base + 0.5 * (n_pairs as f64 - 3.0)).clamp(1.0, 5.0)
}
