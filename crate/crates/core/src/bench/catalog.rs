//! The 21-task catalog and per-scenario task instantiation.
//!
//! Group semantics are the contract; the concrete wordings are authored here.
//! Instructions always name concrete colors and coordinates, and every
//! positional goal is placed with clearance from bowls, blocks, and other
//! goals so that feasible-labeled instances stay solvable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{
    spawn_scene, Color, FailureProfile, ObjectId, ObjectKind, RigidObject, SceneState, Vec3,
    WorldConfig, WorldError, BLOCK_EDGE, BLOCK_HALF_EDGE, BOWL_INTERIOR_Z,
};

use super::{scale_difficulty, Feasibility, GoalSpec, Scenario, TaskGroup};

/// Minimum 2D clearance of an authored goal position from object centers and
/// from other goal positions. Safely above both the bowl capture radius
/// (0.05) and the footprint separation (0.06).
const GOAL_CLEARANCE: f64 = 0.065;
/// Authored goal positions stay inside this half-extent around the origin.
const GOAL_BOUND: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BlockToBowl,
    BlockToPosition,
    LineArrangement,
    Corners,
    Halves,
    StackAll,
    StackColorOrder,
    MatchColors,
    CrossMapping,
    NamedPairing,
    ClosestBlock,
    Midpoint,
    KthNearest,
    IfElse,
    ConditionalChain,
    OrderedPlacement,
    MoveThenStack,
    AbsentColor,
    ParaphrasedBlockToBowl,
    ParaphrasedMatchColors,
    StackAllWithDrops,
}

#[derive(Debug, Clone)]
pub struct TaskDef {
    pub id: &'static str,
    pub group: TaskGroup,
    /// Difficulty label at three block-bowl pairs.
    pub base_difficulty: f64,
    pub feasibility: Feasibility,
    pub failure_override: Option<FailureProfile>,
    pub kind: TaskKind,
}

/// A concrete trial task: rendered instruction, goal poses, and the objects
/// the instruction references (used for feasibility detection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub group: TaskGroup,
    pub instruction: String,
    pub goal: GoalSpec,
    pub required: Vec<ObjectId>,
    pub feasibility: Feasibility,
    pub failure: FailureProfile,
    /// Labeled difficulty scaled to the scenario's pair count.
    pub difficulty: f64,
}

#[derive(Debug, Clone, Error)]
pub enum InstantiateError {
    #[error("scenario incompatible: {detail}")]
    ScenarioIncompatible { detail: String },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// All 21 tasks: 13 canonical (SM 2, SA 3, SS 2, PM 3, SR 3) and 8 robustness
/// (CR 2, SP 2, FR 1, LR 2, ER 1).
pub fn build_catalog() -> Vec<TaskDef> {
    use Feasibility::{Feasible, Infeasible};
    use TaskGroup::*;
    let t = |id, group, base_difficulty, feasibility, failure_override, kind| TaskDef {
        id,
        group,
        base_difficulty,
        feasibility,
        failure_override,
        kind,
    };
    vec![
        t("sm_block_to_bowl", SM, 1.0, Feasible, None, TaskKind::BlockToBowl),
        t("sm_block_to_position", SM, 1.5, Feasible, None, TaskKind::BlockToPosition),
        t("sa_line", SA, 2.0, Feasible, None, TaskKind::LineArrangement),
        t("sa_corners", SA, 2.5, Feasible, None, TaskKind::Corners),
        t("sa_halves", SA, 2.5, Feasible, None, TaskKind::Halves),
        t("ss_stack_all", SS, 3.0, Feasible, None, TaskKind::StackAll),
        t("ss_stack_color_order", SS, 3.5, Feasible, None, TaskKind::StackColorOrder),
        t("pm_match_colors", PM, 1.5, Feasible, None, TaskKind::MatchColors),
        t("pm_cross_mapping", PM, 2.0, Feasible, None, TaskKind::CrossMapping),
        t("pm_named_pairing", PM, 2.0, Feasible, None, TaskKind::NamedPairing),
        t("sr_closest", SR, 4.0, Feasible, None, TaskKind::ClosestBlock),
        t("sr_midpoint", SR, 4.5, Feasible, None, TaskKind::Midpoint),
        t("sr_kth_nearest", SR, 4.5, Feasible, None, TaskKind::KthNearest),
        t("cr_if_else", CR, 4.0, Feasible, None, TaskKind::IfElse),
        t("cr_conditional_chain", CR, 4.5, Feasible, None, TaskKind::ConditionalChain),
        t("sp_ordered", SP, 2.0, Feasible, None, TaskKind::OrderedPlacement),
        t("sp_move_then_stack", SP, 2.5, Feasible, None, TaskKind::MoveThenStack),
        t("fr_absent_color", FR, 2.5, Infeasible, None, TaskKind::AbsentColor),
        t("lr_block_to_bowl", LR, 1.5, Feasible, None, TaskKind::ParaphrasedBlockToBowl),
        t("lr_match_colors", LR, 1.5, Feasible, None, TaskKind::ParaphrasedMatchColors),
        t(
            "er_stack_recover",
            ER,
            3.5,
            Feasible,
            Some(FailureProfile { drop_probability: 0.3, drop_scatter_sigma: 0.05 }),
            TaskKind::StackAllWithDrops,
        ),
    ]
}

pub fn task_by_id(id: &str) -> Option<TaskDef> {
    build_catalog().into_iter().find(|t| t.id == id)
}

/// Renders a task against a scenario: spawns the scenario scene (the same
/// deterministic spawn the trial runner performs), samples goal parameters
/// from `goal_seed`, and computes the goal poses.
pub fn instantiate_task(
    def: &TaskDef,
    scenario: &Scenario,
    goal_seed: u64,
) -> Result<TaskInstance, InstantiateError> {
    let config = WorldConfig::default();
    let scene = spawn_scene(&config, scenario.n_pairs, scenario.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(goal_seed);
    let mut builder = InstanceBuilder { def, scene: &scene, rng: &mut rng };

    let (instruction, goal, required) = match def.kind {
        TaskKind::BlockToBowl => builder.block_to_bowl(false),
        TaskKind::ParaphrasedBlockToBowl => builder.block_to_bowl(true),
        TaskKind::BlockToPosition => builder.block_to_position()?,
        TaskKind::LineArrangement => builder.line_arrangement()?,
        TaskKind::Corners => builder.corners()?,
        TaskKind::Halves => builder.halves()?,
        TaskKind::StackAll | TaskKind::StackAllWithDrops => builder.stack_all(),
        TaskKind::StackColorOrder => builder.stack_color_order(),
        TaskKind::MatchColors => builder.match_colors(false),
        TaskKind::ParaphrasedMatchColors => builder.match_colors(true),
        TaskKind::CrossMapping => builder.cross_mapping(),
        TaskKind::NamedPairing => builder.named_pairing(),
        TaskKind::ClosestBlock => builder.closest_block(),
        TaskKind::Midpoint => builder.midpoint(),
        TaskKind::KthNearest => builder.kth_nearest(),
        TaskKind::IfElse => builder.if_else(),
        TaskKind::ConditionalChain => builder.conditional_chain()?,
        TaskKind::OrderedPlacement => builder.ordered_placement()?,
        TaskKind::MoveThenStack => builder.move_then_stack()?,
        TaskKind::AbsentColor => builder.absent_color(),
    };

    Ok(TaskInstance {
        task_id: def.id.to_string(),
        group: def.group,
        instruction,
        goal,
        required,
        feasibility: def.feasibility,
        failure: def.failure_override.unwrap_or_default(),
        difficulty: scale_difficulty(def.base_difficulty, scenario.n_pairs),
    })
}

type Parts = (String, GoalSpec, Vec<ObjectId>);

/// Nearest clear spot to `desired`: inside the goal bound, clear of every
/// object center and every already-claimed goal position. Deterministic
/// spiral search.
fn find_clear_position(
    scene: &SceneState,
    desired: (f64, f64),
    claimed: &[(f64, f64)],
) -> Option<(f64, f64)> {
    let is_clear = |x: f64, y: f64| {
        if x.abs() > GOAL_BOUND || y.abs() > GOAL_BOUND {
            return false;
        }
        let objects_ok = scene.objects().iter().all(|o| {
            ((o.pose.x - x).powi(2) + (o.pose.y - y).powi(2)).sqrt() >= GOAL_CLEARANCE
        });
        let claims_ok = claimed
            .iter()
            .all(|(cx, cy)| ((cx - x).powi(2) + (cy - y).powi(2)).sqrt() >= GOAL_CLEARANCE);
        objects_ok && claims_ok
    };

    if is_clear(desired.0, desired.1) {
        return Some(desired);
    }
    let mut radius = 0.02;
    while radius <= 0.45 {
        for step in 0..16 {
            let angle = std::f64::consts::TAU * (step as f64) / 16.0;
            let (x, y) = (desired.0 + radius * angle.cos(), desired.1 + radius * angle.sin());
            if is_clear(x, y) {
                return Some((x, y));
            }
        }
        radius += 0.02;
    }
    None
}

struct InstanceBuilder<'a> {
    #[allow(dead_code)]
    def: &'a TaskDef,
    scene: &'a SceneState,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> InstanceBuilder<'a> {
    fn blocks(&self) -> Vec<&'a RigidObject> {
        self.scene.objects().iter().filter(|o| o.kind == ObjectKind::Block).collect()
    }

    fn bowls(&self) -> Vec<&'a RigidObject> {
        self.scene.objects().iter().filter(|o| o.kind == ObjectKind::Bowl).collect()
    }

    fn blocks_by_color_name(&self) -> Vec<&'a RigidObject> {
        let mut blocks = self.blocks();
        blocks.sort_by_key(|b| b.color.name());
        blocks
    }

    fn pick<'b>(&mut self, items: &[&'b RigidObject]) -> &'b RigidObject {
        items[self.rng.gen_range(0..items.len())]
    }

    fn bowl_of(&self, color: Color) -> &'a RigidObject {
        self.scene
            .objects()
            .iter()
            .find(|o| o.kind == ObjectKind::Bowl && o.color == color)
            .expect("spawn pairs every block with a bowl")
    }

    fn bowl_goal(&self, bowl: &RigidObject) -> Vec3 {
        Vec3::new(bowl.pose.x, bowl.pose.y, BOWL_INTERIOR_Z)
    }

    fn clear_position(
        &self,
        desired: (f64, f64),
        claimed: &[(f64, f64)],
    ) -> Option<(f64, f64)> {
        find_clear_position(self.scene, desired, claimed)
    }

    fn sampled_clear_position(
        &mut self,
        claimed: &[(f64, f64)],
    ) -> Result<(f64, f64), InstantiateError> {
        let desired = (self.rng.gen_range(-0.18..0.18), self.rng.gen_range(-0.18..0.18));
        self.clear_position(desired, claimed).ok_or_else(|| InstantiateError::ScenarioIncompatible {
            detail: "no clear goal position available".to_string(),
        })
    }

    // --- SM -----------------------------------------------------------------

    fn block_to_bowl(&mut self, paraphrased: bool) -> Parts {
        let block = self.pick(&self.blocks()).clone();
        let bowl = self.pick(&self.bowls()).clone();
        let instruction = if paraphrased {
            format!(
                "When you get a moment, could you gently tuck the block that is {} into the {} bowl? Thanks!",
                block.color.name(),
                bowl.color.name()
            )
        } else {
            format!("Put the {} block into the {} bowl.", block.color.name(), bowl.color.name())
        };
        let mut goal = GoalSpec::default();
        goal.insert(block.id.clone(), self.bowl_goal(&bowl));
        (instruction, goal, vec![block.id.clone(), bowl.id.clone()])
    }

    fn block_to_position(&mut self) -> Result<Parts, InstantiateError> {
        let block = self.pick(&self.blocks()).clone();
        let (x, y) = self.sampled_clear_position(&[])?;
        let instruction = format!(
            "Move the {} block to position ({x:.3}, {y:.3}).",
            block.color.name()
        );
        let mut goal = GoalSpec::default();
        goal.insert(block.id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE));
        Ok((instruction, goal, vec![block.id.clone()]))
    }

    // --- SA -----------------------------------------------------------------

    fn line_arrangement(&mut self) -> Result<Parts, InstantiateError> {
        let blocks: Vec<RigidObject> = self.blocks_by_color_name().into_iter().cloned().collect();
        let n = blocks.len();
        // Lines near the edge still keep blocks fully inside the workspace.
        let bound = 0.22;

        let scene = self.scene;
        let cell_clear = |x: f64, y: f64| {
            x.abs() <= bound
                && y.abs() <= bound
                && scene.objects().iter().all(|o| {
                    ((o.pose.x - x).powi(2) + (o.pose.y - y).powi(2)).sqrt() >= GOAL_CLEARANCE
                })
        };
        // cells for a line at origin (ox, oy): vertical swaps the axes.
        let line_cells = |ox: f64, oy: f64, spacing: f64, vertical: bool| -> Vec<(f64, f64)> {
            (0..n)
                .map(|i| {
                    if vertical {
                        (ox, oy + spacing * i as f64)
                    } else {
                        (ox + spacing * i as f64, oy)
                    }
                })
                .collect()
        };
        let line_fits = |ox: f64, oy: f64, spacing: f64, vertical: bool| {
            line_cells(ox, oy, spacing, vertical).iter().all(|&(x, y)| cell_clear(x, y))
        };

        let mut found: Option<(f64, f64, f64, bool)> = None;
        'search: for spacing in [0.1, 0.08] {
            let span = spacing * (n as f64 - 1.0);
            for _ in 0..200 {
                let vertical = self.rng.gen_bool(0.5);
                let ox = self.rng.gen_range(-bound..(bound - if vertical { 0.0 } else { span }));
                let oy = self.rng.gen_range(-bound..(bound - if vertical { span } else { 0.0 }));
                if line_fits(ox, oy, spacing, vertical) {
                    found = Some((ox, oy, spacing, vertical));
                    break 'search;
                }
            }
            // Sampling missed; sweep a grid in both orientations so any
            // feasible origin is found.
            for vertical in [false, true] {
                let mut oy = -bound;
                while oy <= bound {
                    let mut ox = -bound;
                    while ox <= bound {
                        if line_fits(ox, oy, spacing, vertical) {
                            found = Some((ox, oy, spacing, vertical));
                            break 'search;
                        }
                        ox += 0.01;
                    }
                    oy += 0.01;
                }
            }
        }
        let (ox, oy, spacing, vertical) = found.ok_or_else(|| {
            InstantiateError::ScenarioIncompatible {
                detail: "no room for the line arrangement".to_string(),
            }
        })?;

        let mut goal = GoalSpec::default();
        let mut clauses = Vec::new();
        for (block, (x, y)) in blocks.iter().zip(line_cells(ox, oy, spacing, vertical)) {
            goal.insert(block.id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE));
            clauses.push(format!("the {} block at ({x:.3}, {y:.3})", block.color.name()));
        }
        let instruction = format!(
            "Arrange the blocks in a straight line with {spacing:.3} m spacing: {}.",
            clauses.join(", ")
        );
        let required = blocks.iter().map(|b| b.id.clone()).collect();
        Ok((instruction, goal, required))
    }

    fn corners(&mut self) -> Result<Parts, InstantiateError> {
        let corners = [(-0.18, -0.18), (-0.18, 0.18), (0.18, -0.18), (0.18, 0.18)];
        let blocks: Vec<RigidObject> = self.blocks_by_color_name().into_iter().cloned().collect();
        let mut claimed: Vec<(f64, f64)> = Vec::new();
        let mut goal = GoalSpec::default();
        let mut clauses = Vec::new();
        for (block, corner) in blocks.iter().zip(corners.iter()) {
            let (x, y) = self.clear_position(*corner, &claimed).ok_or_else(|| {
                InstantiateError::ScenarioIncompatible { detail: "corner blocked".to_string() }
            })?;
            claimed.push((x, y));
            goal.insert(block.id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE));
            clauses.push(format!("the {} block to ({x:.3}, {y:.3})", block.color.name()));
        }
        let instruction = format!(
            "Move each block to its own corner of the workspace: {}.",
            clauses.join(", ")
        );
        let required = blocks.iter().map(|b| b.id.clone()).collect();
        Ok((instruction, goal, required))
    }

    fn halves(&mut self) -> Result<Parts, InstantiateError> {
        let right = self.rng.gen_bool(0.5);
        let side_name = if right { "right" } else { "left" };
        let blocks: Vec<RigidObject> = self.blocks_by_color_name().into_iter().cloned().collect();
        let mut claimed: Vec<(f64, f64)> = Vec::new();
        let mut goal = GoalSpec::default();
        let mut clauses = Vec::new();
        for block in &blocks {
            let mut spot = None;
            for _ in 0..200 {
                let magnitude = self.rng.gen_range(0.06..0.18);
                let x = if right { magnitude } else { -magnitude };
                let y = self.rng.gen_range(-0.18..0.18);
                if let Some((cx, cy)) = self.clear_position((x, y), &claimed) {
                    // The nudge may not cross the center line.
                    if (right && cx >= 0.05) || (!right && cx <= -0.05) {
                        spot = Some((cx, cy));
                        break;
                    }
                }
            }
            let (x, y) = spot.ok_or_else(|| InstantiateError::ScenarioIncompatible {
                detail: format!("no room in the {side_name} half"),
            })?;
            claimed.push((x, y));
            goal.insert(block.id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE));
            clauses.push(format!("the {} block to ({x:.3}, {y:.3})", block.color.name()));
        }
        let instruction = format!(
            "Move every block into the {side_name} half of the workspace: {}.",
            clauses.join(", ")
        );
        let required = blocks.iter().map(|b| b.id.clone()).collect();
        Ok((instruction, goal, required))
    }

    // --- SS / ER ------------------------------------------------------------

    fn stack_goals(&self, base: &RigidObject, movers: &[&RigidObject]) -> GoalSpec {
        let mut goal = GoalSpec::default();
        for (level, mover) in movers.iter().enumerate() {
            goal.insert(
                mover.id.clone(),
                Vec3::new(
                    base.pose.x,
                    base.pose.y,
                    BLOCK_HALF_EDGE + BLOCK_EDGE * (level as f64 + 1.0),
                ),
            );
        }
        goal
    }

    fn stack_all(&mut self) -> Parts {
        let blocks = self.blocks();
        let base = self.pick(&blocks).clone();
        let movers: Vec<&RigidObject> = self
            .blocks_by_color_name()
            .into_iter()
            .filter(|b| b.id != base.id)
            .collect();
        let order: Vec<&str> = movers.iter().map(|m| m.color.name()).collect();
        let instruction = format!(
            "Stack all blocks into a single tower on the {} block, adding them in this order: {}.",
            base.color.name(),
            order.join(", then ")
        );
        let goal = self.stack_goals(&base, &movers);
        let mut required = vec![base.id.clone()];
        required.extend(movers.iter().map(|m| m.id.clone()));
        (instruction, goal, required)
    }

    fn stack_color_order(&mut self) -> Parts {
        let blocks = self.blocks();
        let base = self.pick(&blocks).clone();
        let mut movers: Vec<&RigidObject> =
            self.blocks().into_iter().filter(|b| b.id != base.id).collect();
        movers.sort_by_key(|b| b.color.name());
        movers.shuffle(self.rng);
        let order: Vec<&str> = movers.iter().map(|m| m.color.name()).collect();
        let instruction = format!(
            "Build a tower on the {} block, stacking the other blocks in this exact order from bottom to top: {}.",
            base.color.name(),
            order.join(", then ")
        );
        let goal = self.stack_goals(&base, &movers);
        let mut required = vec![base.id.clone()];
        required.extend(movers.iter().map(|m| m.id.clone()));
        (instruction, goal, required)
    }

    // --- PM / LR ------------------------------------------------------------

    fn match_colors(&mut self, paraphrased: bool) -> Parts {
        let blocks: Vec<RigidObject> = self.blocks_by_color_name().into_iter().cloned().collect();
        let mut goal = GoalSpec::default();
        let mut required = Vec::new();
        for block in &blocks {
            let bowl = self.bowl_of(block.color);
            goal.insert(block.id.clone(), self.bowl_goal(bowl));
            required.push(block.id.clone());
            required.push(bowl.id.clone());
        }
        let instruction = if paraphrased {
            "Every block has a home: the bowl that shares its color. Please send each block home."
                .to_string()
        } else {
            "Put each block into the bowl of the same color.".to_string()
        };
        (instruction, goal, required)
    }

    fn cross_mapping(&mut self) -> Parts {
        let blocks: Vec<RigidObject> = self.blocks_by_color_name().into_iter().cloned().collect();
        let n = blocks.len();
        let shift = self.rng.gen_range(1..n);
        let mut goal = GoalSpec::default();
        let mut required = Vec::new();
        let mut clauses = Vec::new();
        for (i, block) in blocks.iter().enumerate() {
            let bowl_color = blocks[(i + shift) % n].color;
            let bowl = self.bowl_of(bowl_color);
            goal.insert(block.id.clone(), self.bowl_goal(bowl));
            required.push(block.id.clone());
            required.push(bowl.id.clone());
            clauses.push(format!(
                "the {} block into the {} bowl",
                block.color.name(),
                bowl_color.name()
            ));
        }
        let instruction = format!(
            "Put each block into a bowl of a different color, exactly like this: {}.",
            clauses.join(", ")
        );
        (instruction, goal, required)
    }

    fn named_pairing(&mut self) -> Parts {
        let blocks: Vec<RigidObject> = self.blocks_by_color_name().into_iter().cloned().collect();
        let mut bowl_colors: Vec<Color> = blocks.iter().map(|b| b.color).collect();
        bowl_colors.shuffle(self.rng);
        let mut goal = GoalSpec::default();
        let mut required = Vec::new();
        let mut clauses = Vec::new();
        for (block, bowl_color) in blocks.iter().zip(bowl_colors.iter()) {
            let bowl = self.bowl_of(*bowl_color);
            goal.insert(block.id.clone(), self.bowl_goal(bowl));
            required.push(block.id.clone());
            required.push(bowl.id.clone());
            clauses.push(format!(
                "the {} block goes into the {} bowl",
                block.color.name(),
                bowl_color.name()
            ));
        }
        let instruction = format!("Pair the blocks with bowls as instructed: {}.", clauses.join("; "));
        (instruction, goal, required)
    }

    // --- SR -----------------------------------------------------------------

    fn closest_block(&mut self) -> Parts {
        let bowl = self.pick(&self.bowls()).clone();
        let blocks = self.blocks();
        let chosen = blocks
            .iter()
            .min_by(|a, b| {
                a.pose
                    .distance(&bowl.pose)
                    .partial_cmp(&b.pose.distance(&bowl.pose))
                    .expect("finite distances")
            })
            .expect("scenes have blocks");
        let instruction = format!(
            "Find the block that is closest to the {} bowl and put that block into the {} bowl.",
            bowl.color.name(),
            bowl.color.name()
        );
        let mut goal = GoalSpec::default();
        goal.insert(chosen.id.clone(), self.bowl_goal(&bowl));
        (instruction, goal, vec![chosen.id.clone(), bowl.id.clone()])
    }

    fn midpoint(&mut self) -> Parts {
        let bowls = self.bowls();
        let first = self.pick(&bowls).clone();
        let others: Vec<&RigidObject> = bowls.into_iter().filter(|b| b.id != first.id).collect();
        let second = self.pick(&others).clone();
        let block = self.pick(&self.blocks()).clone();
        let mx = (first.pose.x + second.pose.x) / 2.0;
        let my = (first.pose.y + second.pose.y) / 2.0;
        let instruction = format!(
            "Move the {} block to the exact midpoint between the {} bowl and the {} bowl.",
            block.color.name(),
            first.color.name(),
            second.color.name()
        );
        let mut goal = GoalSpec::default();
        goal.insert(block.id.clone(), Vec3::new(mx, my, BLOCK_HALF_EDGE));
        (instruction, goal, vec![block.id.clone(), first.id.clone(), second.id.clone()])
    }

    fn kth_nearest(&mut self) -> Parts {
        let bowl = self.pick(&self.bowls()).clone();
        let mut blocks = self.blocks();
        blocks.sort_by(|a, b| {
            a.pose
                .distance(&bowl.pose)
                .partial_cmp(&b.pose.distance(&bowl.pose))
                .expect("finite distances")
        });
        let k = self.rng.gen_range(2..=blocks.len());
        let chosen = blocks[k - 1];
        let ordinal = match k {
            2 => "second",
            3 => "third",
            _ => "fourth",
        };
        let instruction = format!(
            "Rank the blocks by distance to the {} bowl, from nearest to farthest, and put the {ordinal} nearest block into that bowl.",
            bowl.color.name()
        );
        let mut goal = GoalSpec::default();
        goal.insert(chosen.id.clone(), self.bowl_goal(&bowl));
        (instruction, goal, vec![chosen.id.clone(), bowl.id.clone()])
    }

    // --- CR -----------------------------------------------------------------

    fn two_distinct_blocks(&mut self) -> (RigidObject, RigidObject) {
        let blocks = self.blocks();
        let first = self.pick(&blocks).clone();
        let rest: Vec<&RigidObject> = blocks.into_iter().filter(|b| b.id != first.id).collect();
        let second = self.pick(&rest).clone();
        (first, second)
    }

    fn if_else(&mut self) -> Parts {
        let (a, b) = self.two_distinct_blocks();
        let bowl = self.pick(&self.bowls()).clone();
        let condition = a.pose.x < b.pose.x;
        let chosen = if condition { &a } else { &b };
        let instruction = format!(
            "If the {} block is to the left of the {} block (smaller x), put the {} block into the {} bowl; otherwise put the {} block into the {} bowl.",
            a.color.name(),
            b.color.name(),
            a.color.name(),
            bowl.color.name(),
            b.color.name(),
            bowl.color.name()
        );
        let mut goal = GoalSpec::default();
        goal.insert(chosen.id.clone(), self.bowl_goal(&bowl));
        (instruction, goal, vec![a.id.clone(), b.id.clone(), bowl.id.clone()])
    }

    fn conditional_chain(&mut self) -> Result<Parts, InstantiateError> {
        let (a, b) = self.two_distinct_blocks();
        let bowl = self.bowl_of(a.color).clone();
        let first_left = a.pose.x < b.pose.x;
        let (mover, other) = if first_left { (&a, &b) } else { (&b, &a) };

        let mut goal = GoalSpec::default();
        goal.insert(mover.id.clone(), self.bowl_goal(&bowl));

        let p1 = self.sampled_clear_position(&[])?;
        let p2 = self.sampled_clear_position(&[p1])?;
        let bowl_left = bowl.pose.x < 0.0;
        let spot = if bowl_left { p1 } else { p2 };
        goal.insert(other.id.clone(), Vec3::new(spot.0, spot.1, BLOCK_HALF_EDGE));

        let instruction = format!(
            "If the {} block is to the left of the {} block (smaller x), put the {} block into the {} bowl; otherwise put the {} block into that bowl. Then take the block you did not move: if the {} bowl sits in the left half of the workspace (x < 0), move that block to ({:.3}, {:.3}); otherwise move it to ({:.3}, {:.3}).",
            a.color.name(),
            b.color.name(),
            a.color.name(),
            a.color.name(),
            b.color.name(),
            a.color.name(),
            p1.0,
            p1.1,
            p2.0,
            p2.1
        );
        Ok((instruction, goal, vec![a.id.clone(), b.id.clone(), bowl.id.clone()]))
    }

    // --- SP -----------------------------------------------------------------

    fn ordered_placement(&mut self) -> Result<Parts, InstantiateError> {
        let mut blocks: Vec<RigidObject> = self.blocks().into_iter().cloned().collect();
        blocks.shuffle(self.rng);
        let count = blocks.len().min(3);
        let movers = &blocks[..count];

        let mut goal = GoalSpec::default();
        let mut required = Vec::new();
        let mut clauses = Vec::new();
        let connectors = ["First", "Then", "Finally"];
        for (i, block) in movers.iter().enumerate() {
            let connector = connectors[i.min(2)];
            if i + 1 < count {
                let bowl = self.bowl_of(block.color);
                goal.insert(block.id.clone(), self.bowl_goal(bowl));
                required.push(block.id.clone());
                required.push(bowl.id.clone());
                clauses.push(format!(
                    "{connector}, put the {} block into the {} bowl.",
                    block.color.name(),
                    block.color.name()
                ));
            } else {
                let (x, y) = self.sampled_clear_position(&[])?;
                goal.insert(block.id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE));
                required.push(block.id.clone());
                clauses.push(format!(
                    "{connector}, move the {} block to ({x:.3}, {y:.3}).",
                    block.color.name()
                ));
            }
        }
        Ok((clauses.join(" "), goal, required))
    }

    fn move_then_stack(&mut self) -> Result<Parts, InstantiateError> {
        let (bottom, top) = self.two_distinct_blocks();
        let (x, y) = self.sampled_clear_position(&[])?;
        let instruction = format!(
            "First move the {} block to ({x:.3}, {y:.3}); then stack the {} block on top of it.",
            bottom.color.name(),
            top.color.name()
        );
        let mut goal = GoalSpec::default();
        goal.insert(bottom.id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE));
        goal.insert(top.id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE + BLOCK_EDGE));
        Ok((instruction, goal, vec![bottom.id.clone(), top.id.clone()]))
    }

    // --- FR -----------------------------------------------------------------

    fn absent_color(&mut self) -> Parts {
        let present: Vec<Color> = self.scene.objects().iter().map(|o| o.color).collect();
        let absent: Vec<Color> =
            Color::ALL.iter().copied().filter(|c| !present.contains(c)).collect();
        let missing = absent[self.rng.gen_range(0..absent.len())];
        let bowl = self.pick(&self.bowls()).clone();
        let instruction = format!(
            "Put the {} block into the {} bowl.",
            missing.name(),
            bowl.color.name()
        );
        let required = vec![ObjectId::for_object(ObjectKind::Block, missing)];
        (instruction, GoalSpec::default(), required)
    }
}
