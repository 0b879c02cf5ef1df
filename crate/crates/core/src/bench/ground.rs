//! Maps ad-hoc natural-language instructions onto goal specs so `solve` can
//! grade one-off runs (and drive the oracle backend). Covers the common
//! instruction shapes; anything else returns `None` and runs ungraded.

use regex::Regex;
use std::sync::OnceLock;

use crate::world::{Color, ObjectId, ObjectKind, SceneState, Vec3, BLOCK_HALF_EDGE, BOWL_INTERIOR_Z};

use super::{Feasibility, GoalSpec, TaskGroup, TaskInstance};

fn re(pattern: &str, slot: &'static OnceLock<Regex>) -> &'static Regex {
    slot.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn closest_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(r"(?i)block (?:that is )?closest to the (\w+) bowl", &RE)
}

fn block_to_bowl_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(r"(?i)the (?:block (?:that is|colored) )?(\w+)(?: block)? (?:in|into|to) the (\w+)(?:-colored)? bowl", &RE)
}

fn match_colors_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(r"(?i)(each|every) block.*(same|matching|shares its|its) color|send (each|every) block home", &RE)
}

fn to_position_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(r"(?i)move the (\w+) block to (?:position )?\(?\s*(-?[0-9.]+)\s*,\s*(-?[0-9.]+)", &RE)
}

fn stack_all_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(r"(?i)stack all (?:the )?blocks?.*on(?:to)? the (\w+) block", &RE)
}

fn adhoc(
    group: TaskGroup,
    instruction: &str,
    difficulty: f64,
    goal: GoalSpec,
    required: Vec<ObjectId>,
    feasibility: Feasibility,
) -> TaskInstance {
    TaskInstance {
        task_id: format!("adhoc_{}", group.name().to_lowercase()),
        group,
        instruction: instruction.to_string(),
        goal,
        required,
        feasibility,
        failure: Default::default(),
        difficulty,
    }
}

/// Grounds an instruction against a scene. Returns `None` when no known
/// instruction shape matches.
pub fn ground_instruction(instruction: &str, scene: &SceneState) -> Option<TaskInstance> {
    let bowl_center = |color: Color| {
        scene
            .objects()
            .iter()
            .find(|o| o.kind == ObjectKind::Bowl && o.color == color)
            .map(|b| (b.id.clone(), Vec3::new(b.pose.x, b.pose.y, BOWL_INTERIOR_Z)))
    };

    // "the block closest to the X bowl" (check before the generic to-bowl shape).
    if let Some(cap) = closest_re().captures(instruction) {
        let bowl_color = Color::parse(&cap[1].to_lowercase())?;
        let (bowl_id, target) = bowl_center(bowl_color)?;
        let bowl_pose = scene.object(&bowl_id)?.pose;
        let chosen = scene
            .objects()
            .iter()
            .filter(|o| o.kind == ObjectKind::Block)
            .min_by(|a, b| {
                a.pose
                    .distance(&bowl_pose)
                    .partial_cmp(&b.pose.distance(&bowl_pose))
                    .expect("finite")
            })?;
        let mut goal = GoalSpec::default();
        goal.insert(chosen.id.clone(), target);
        return Some(adhoc(
            TaskGroup::SR,
            instruction,
            4.0,
            goal,
            vec![chosen.id.clone(), bowl_id],
            Feasibility::Feasible,
        ));
    }

    // "put each block into the bowl of the same color" and paraphrases.
    if match_colors_re().is_match(instruction) {
        let mut goal = GoalSpec::default();
        let mut required = Vec::new();
        for block in scene.objects().iter().filter(|o| o.kind == ObjectKind::Block) {
            let (bowl_id, target) = bowl_center(block.color)?;
            goal.insert(block.id.clone(), target);
            required.push(block.id.clone());
            required.push(bowl_id);
        }
        if goal.is_empty() {
            return None;
        }
        return Some(adhoc(TaskGroup::PM, instruction, 1.5, goal, required, Feasibility::Feasible));
    }

    // "move the X block to (x, y)".
    if let Some(cap) = to_position_re().captures(instruction) {
        let block_color = Color::parse(&cap[1].to_lowercase())?;
        let x: f64 = cap[2].parse().ok()?;
        let y: f64 = cap[3].parse().ok()?;
        let block_id = ObjectId::for_object(ObjectKind::Block, block_color);
        if scene.object(&block_id).is_none() {
            return Some(adhoc(
                TaskGroup::FR,
                instruction,
                2.5,
                GoalSpec::default(),
                vec![block_id],
                Feasibility::Infeasible,
            ));
        }
        let mut goal = GoalSpec::default();
        goal.insert(block_id.clone(), Vec3::new(x, y, BLOCK_HALF_EDGE));
        return Some(adhoc(TaskGroup::SM, instruction, 1.5, goal, vec![block_id], Feasibility::Feasible));
    }

    // "stack all blocks on the X block".
    if let Some(cap) = stack_all_re().captures(instruction) {
        let base_color = Color::parse(&cap[1].to_lowercase())?;
        let base_id = ObjectId::for_object(ObjectKind::Block, base_color);
        let base = scene.object(&base_id)?;
        let mut movers: Vec<_> = scene
            .objects()
            .iter()
            .filter(|o| o.kind == ObjectKind::Block && o.id != base_id)
            .collect();
        movers.sort_by_key(|b| b.color.name());
        let mut goal = GoalSpec::default();
        let mut required = vec![base_id.clone()];
        for (level, mover) in movers.iter().enumerate() {
            goal.insert(
                mover.id.clone(),
                Vec3::new(
                    base.pose.x,
                    base.pose.y,
                    BLOCK_HALF_EDGE + 0.05 * (level as f64 + 1.0),
                ),
            );
            required.push(mover.id.clone());
        }
        return Some(adhoc(TaskGroup::SS, instruction, 3.0, goal, required, Feasibility::Feasible));
    }

    // "put the X block into the Y bowl" — also the infeasible shape when the
    // named block color is absent.
    if let Some(cap) = block_to_bowl_re().captures(instruction) {
        let block_color = Color::parse(&cap[1].to_lowercase())?;
        let bowl_color = Color::parse(&cap[2].to_lowercase())?;
        let block_id = ObjectId::for_object(ObjectKind::Block, block_color);
        if scene.object(&block_id).is_none() {
            return Some(adhoc(
                TaskGroup::FR,
                instruction,
                2.5,
                GoalSpec::default(),
                vec![block_id],
                Feasibility::Infeasible,
            ));
        }
        let (bowl_id, target) = bowl_center(bowl_color)?;
        let mut goal = GoalSpec::default();
        goal.insert(block_id.clone(), target);
        return Some(adhoc(
            TaskGroup::SM,
            instruction,
            1.0,
            goal,
            vec![block_id, bowl_id],
            Feasibility::Feasible,
        ));
    }

    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{spawn_scene, WorldConfig};

    fn scene() -> SceneState {
        spawn_scene(&WorldConfig::default(), 3, 77).unwrap()
    }

    #[test]
    fn grounds_block_to_bowl() {
        let scene = scene();
        let block = scene.objects().iter().find(|o| o.kind == ObjectKind::Block).unwrap();
        let bowl = scene.objects().iter().find(|o| o.kind == ObjectKind::Bowl).unwrap();
        let text = format!(
            "Put the {} block into the {} bowl.",
            block.color.name(),
            bowl.color.name()
        );
        let instance = ground_instruction(&text, &scene).unwrap();
        assert_eq!(instance.group, TaskGroup::SM);
        assert_eq!(instance.goal.len(), 1);
        assert_eq!(instance.feasibility, Feasibility::Feasible);
    }

    #[test]
    fn grounds_absent_color_as_infeasible() {
        let scene = scene();
        let absent = Color::ALL
            .iter()
            .find(|c| !scene.objects().iter().any(|o| &o.color == *c))
            .unwrap();
        let bowl = scene.objects().iter().find(|o| o.kind == ObjectKind::Bowl).unwrap();
        let text = format!(
            "Put the {} block into the {} bowl.",
            absent.name(),
            bowl.color.name()
        );
        let instance = ground_instruction(&text, &scene).unwrap();
        assert_eq!(instance.feasibility, Feasibility::Infeasible);
        assert!(instance.goal.is_empty());
    }

    #[test]
    fn grounds_match_colors_and_closest() {
        let scene = scene();
        let matched = ground_instruction("Put each block into the bowl of the same color.", &scene).unwrap();
        assert_eq!(matched.goal.len(), 3);

        let bowl = scene.objects().iter().find(|o| o.kind == ObjectKind::Bowl).unwrap();
        let text = format!(
            "Find the block closest to the {} bowl and put that block into the {} bowl.",
            bowl.color.name(),
            bowl.color.name()
        );
        let closest = ground_instruction(&text, &scene).unwrap();
        assert_eq!(closest.group, TaskGroup::SR);
        assert_eq!(closest.goal.len(), 1);
    }

    #[test]
    fn unknown_instruction_returns_none() {
        assert!(ground_instruction("Do a backflip.", &scene()).is_none());
    }
}
