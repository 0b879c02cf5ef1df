//! End-to-end trial behavior: budget enforcement, fault handling, slow-mode
//! structure, feasibility recognition, and mode selection.

use tablebot_core::agent::{run_trial, AgentConfig, ModeOverride, PromptSet};
use tablebot_core::bench::{
    generate_scenarios, instantiate_task, task_by_id, Scenario, TaskInstance,
};
use tablebot_core::monitor::ThinkingMode;
use tablebot_core::primitives::{ExecutionOutcome, TaskStatus};
use tablebot_core::reasoner::{BackendFactory, BackendKind, FaultMode};
use tablebot_core::world::{spawn_scene, WorldConfig};

fn prompts() -> PromptSet {
    PromptSet::builtin()
}

fn oracle() -> BackendFactory {
    BackendFactory::new(BackendKind::Oracle).unwrap()
}

fn fault(mode: FaultMode) -> BackendFactory {
    BackendFactory::new(BackendKind::Fault { mode }).unwrap()
}

fn instance_for(task_id: &str, scenario: &Scenario, goal_seed: u64) -> TaskInstance {
    instantiate_task(&task_by_id(task_id).unwrap(), scenario, goal_seed).unwrap()
}

#[test]
fn oracle_simple_manipulation_is_fast_and_short() {
    let scenario = Scenario { index: 0, n_pairs: 3, seed: 11 };
    let task = instance_for("sm_block_to_bowl", &scenario, 4);
    let record = run_trial(&task, &scenario, 4, &oracle(), &AgentConfig::default(), &prompts());

    assert_eq!(record.mode, ThinkingMode::Fast, "SM at 3 pairs is labeled 1.0");
    assert_eq!(record.predicted_status, TaskStatus::Success);
    assert!(record.evaluation_pass);
    assert_eq!(record.steps_completed, 1);
    // Mode selection + one movement + finish.
    assert!(record.invocation_count <= 3, "got {}", record.invocation_count);
    assert_eq!(record.recovery_events, 0);
    assert_eq!(record.rationale_count, 0);
}

#[test]
fn loop_forever_fault_exhausts_exactly_the_budget() {
    let scenario = Scenario { index: 0, n_pairs: 2, seed: 5 };
    for task_id in ["sm_block_to_bowl", "ss_stack_all", "sr_closest"] {
        let task = instance_for(task_id, &scenario, 9);
        let record = run_trial(
            &task,
            &scenario,
            9,
            &fault(FaultMode::LoopForever),
            &AgentConfig::default(),
            &prompts(),
        );
        assert_eq!(record.invocation_count, 20, "{task_id}");
        assert_eq!(record.predicted_status, TaskStatus::Failure, "{task_id}");
        assert!(!record.evaluation_pass, "{task_id}");
    }
}

#[test]
fn invalid_call_fault_is_rejected_every_time_and_leaves_the_scene_alone() {
    let scenario = Scenario { index: 0, n_pairs: 3, seed: 8 };
    let task = instance_for("pm_match_colors", &scenario, 2);
    let record = run_trial(
        &task,
        &scenario,
        2,
        &fault(FaultMode::InvalidCall),
        &AgentConfig::default(),
        &prompts(),
    );

    assert_eq!(record.predicted_status, TaskStatus::Failure);
    assert!(record.invocation_count <= 20);
    assert_eq!(record.steps_completed, 0);
    assert!(record.memory.steps().iter().all(|s| s.outcome.is_none()), "nothing executed");
    assert!(record.recovery_events > 0, "rejections are recovery events");

    // The final scene equals the untouched spawn.
    let fresh = spawn_scene(
        &WorldConfig { failure: task.failure, ..WorldConfig::default() },
        scenario.n_pairs,
        scenario.seed,
    )
    .unwrap();
    assert_eq!(record.final_scene, fresh.snapshot());
}

#[test]
fn wrong_object_fault_finishes_but_fails_evaluation() {
    let scenario = Scenario { index: 0, n_pairs: 3, seed: 21 };
    let task = instance_for("pm_match_colors", &scenario, 3);
    let record = run_trial(
        &task,
        &scenario,
        3,
        &fault(FaultMode::WrongObject),
        &AgentConfig::default(),
        &prompts(),
    );
    assert_eq!(record.predicted_status, TaskStatus::Success, "the fault lies about success");
    assert!(!record.evaluation_pass, "the evaluator catches the lie");
}

#[test]
fn silent_fault_fails_gracefully_within_budget() {
    let scenario = Scenario { index: 0, n_pairs: 2, seed: 13 };
    let task = instance_for("sm_block_to_bowl", &scenario, 7);
    let record = run_trial(
        &task,
        &scenario,
        7,
        &fault(FaultMode::Silent),
        &AgentConfig::default(),
        &prompts(),
    );
    assert_eq!(record.predicted_status, TaskStatus::Failure);
    assert!(record.invocation_count <= 20);
    assert!(record.diagnostic.is_some());
}

#[test]
fn fr_slow_trial_finishes_infeasible_in_two_invocations() {
    // At 4 pairs the FR label scales to 3.0, so auto mode runs slow.
    let scenarios = generate_scenarios(1, 40);
    let scenario = scenarios.iter().find(|s| s.n_pairs == 4).copied().unwrap();
    let task = instance_for("fr_absent_color", &scenario, 6);
    let record = run_trial(&task, &scenario, 6, &oracle(), &AgentConfig::default(), &prompts());

    assert_eq!(record.mode, ThinkingMode::Slow);
    assert_eq!(record.predicted_status, TaskStatus::Infeasible);
    assert!(record.evaluation_pass, "correct infeasible prediction passes");
    assert_eq!(record.invocation_count, 2, "mode selection + reasoning only");
    assert_eq!(record.rationale_count, 1);
    assert_eq!(record.redundant_actions, 0);
    assert_eq!(record.steps_completed, 0);
}

#[test]
fn fr_fast_trial_finishes_infeasible_without_reasoning() {
    // At 2 pairs the FR label scales to 2.0, so auto mode stays fast.
    let scenarios = generate_scenarios(1, 40);
    let scenario = scenarios.iter().find(|s| s.n_pairs == 2).copied().unwrap();
    let task = instance_for("fr_absent_color", &scenario, 6);
    let record = run_trial(&task, &scenario, 6, &oracle(), &AgentConfig::default(), &prompts());

    assert_eq!(record.mode, ThinkingMode::Fast);
    assert_eq!(record.predicted_status, TaskStatus::Infeasible);
    assert!(record.evaluation_pass);
    assert_eq!(record.invocation_count, 2, "mode selection + finish call");
    assert_eq!(record.rationale_count, 0);
}

#[test]
fn sr_slow_trial_writes_distance_calculations_into_the_rationale() {
    let scenario = Scenario { index: 0, n_pairs: 3, seed: 33 };
    let task = instance_for("sr_closest", &scenario, 12);
    let record = run_trial(&task, &scenario, 12, &oracle(), &AgentConfig::default(), &prompts());

    assert_eq!(record.mode, ThinkingMode::Slow, "SR is labeled 4.0+");
    assert!(record.evaluation_pass);
    assert_eq!(record.rationale_count, 1);
    let rationale = &record.memory.rationales()[0];
    assert!(rationale.parsed.calculations.contains("distance("), "pairwise distances listed");
    assert_eq!(rationale.parsed.plan.len(), 1, "one object to move");

    // The moved object matches an independent argmin over the spawn.
    let scene = spawn_scene(&WorldConfig::default(), 3, 33).unwrap();
    let (goal_object, target) = record.goal.targets().iter().next().unwrap();
    let bowl = scene
        .objects()
        .iter()
        .find(|o| (o.pose.x - target.x).abs() < 1e-12 && (o.pose.y - target.y).abs() < 1e-12)
        .unwrap();
    let closest = scene
        .objects()
        .iter()
        .filter(|o| o.kind == tablebot_core::world::ObjectKind::Block)
        .min_by(|a, b| {
            a.pose
                .distance(&bowl.pose)
                .partial_cmp(&b.pose.distance(&bowl.pose))
                .unwrap()
        })
        .unwrap();
    assert_eq!(goal_object, &closest.id);
}

#[test]
fn er_slow_trials_replan_once_per_recovery_event() {
    let scenarios = generate_scenarios(7, 6);
    let mut saw_deviation = false;
    for scenario in &scenarios {
        for goal_seed in 0..3 {
            let task = instance_for("er_stack_recover", scenario, goal_seed);
            let record =
                run_trial(&task, scenario, goal_seed, &oracle(), &AgentConfig::default(), &prompts());
            assert_eq!(record.mode, ThinkingMode::Slow, "ER scales to >= 3.0 at every pair count");
            assert_eq!(record.predicted_status, TaskStatus::Success);
            assert!(record.evaluation_pass);
            assert_eq!(
                record.rationale_count,
                1 + record.recovery_events,
                "scenario {} goal {goal_seed}",
                scenario.index
            );
            if record.recovery_events > 0 {
                saw_deviation = true;
                // Each deviated movement is superseded and later redone.
                let deviated = record
                    .memory
                    .steps()
                    .iter()
                    .filter(|s| s.superseded && matches!(s.outcome, Some(ExecutionOutcome::Moved { .. })))
                    .count() as u32;
                assert_eq!(deviated, record.recovery_events);
            }
        }
    }
    assert!(saw_deviation, "0.3 drop probability must produce deviations across 18 trials");
}

#[test]
fn open_loop_er_trials_do_not_recover() {
    let scenarios = generate_scenarios(7, 6);
    let open = AgentConfig { open_loop: true, ..AgentConfig::default() };
    let mut failures = 0;
    let mut total = 0;
    for scenario in &scenarios {
        for goal_seed in 0..3 {
            let task = instance_for("er_stack_recover", scenario, goal_seed);
            let record = run_trial(&task, scenario, goal_seed, &oracle(), &open, &prompts());
            assert_eq!(record.recovery_events, 0, "no recovery feedback in open loop");
            assert_eq!(record.rationale_count, 1, "no replanning in open loop");
            total += 1;
            if !record.evaluation_pass {
                failures += 1;
            }
        }
    }
    assert!(failures > 0, "drops must go uncorrected in open loop ({failures}/{total})");
}

#[test]
fn mode_boundary_is_inclusive_at_the_threshold() {
    // FR at 4 pairs scales to exactly 3.0: slow (inclusive boundary).
    let scenarios = generate_scenarios(1, 40);
    let scenario = scenarios.iter().find(|s| s.n_pairs == 4).copied().unwrap();
    let task = instance_for("fr_absent_color", &scenario, 1);
    assert_eq!(task.difficulty, 3.0);
    let record = run_trial(&task, &scenario, 1, &oracle(), &AgentConfig::default(), &prompts());
    assert_eq!(record.mode, ThinkingMode::Slow);
    assert_eq!(record.predicted_difficulty, 3.0);
}

#[test]
fn mode_override_rows_behave_like_ft_and_st() {
    let scenario = Scenario { index: 0, n_pairs: 3, seed: 3 };
    let task = instance_for("sr_midpoint", &scenario, 5);

    let fast_config = AgentConfig { mode_override: ModeOverride::Fast, ..AgentConfig::default() };
    let fast = run_trial(&task, &scenario, 5, &oracle(), &fast_config, &prompts());
    assert_eq!(fast.mode, ThinkingMode::Fast);
    assert!(fast.mode_overridden);
    assert!(fast.evaluation_pass, "the oracle solves SR regardless of mode");
    assert_eq!(fast.rationale_count, 0);

    let slow_config = AgentConfig { mode_override: ModeOverride::Slow, ..AgentConfig::default() };
    let slow = run_trial(&task, &scenario, 5, &oracle(), &slow_config, &prompts());
    assert_eq!(slow.mode, ThinkingMode::Slow);
    assert!(slow.evaluation_pass);
    assert!(slow.rationale_count >= 1);

    assert!(
        slow.total_input_tokens > fast.total_input_tokens,
        "slow context carries the reasoning stage: {} <= {}",
        slow.total_input_tokens,
        fast.total_input_tokens
    );
}

#[test]
fn trial_records_are_deterministic_modulo_wall_clock() {
    let scenario = Scenario { index: 0, n_pairs: 3, seed: 17 };
    let task = instance_for("ss_stack_color_order", &scenario, 8);
    let a = run_trial(&task, &scenario, 8, &oracle(), &AgentConfig::default(), &prompts());
    let b = run_trial(&task, &scenario, 8, &oracle(), &AgentConfig::default(), &prompts());

    let strip = |record: &tablebot_core::agent::TrialRecord| {
        let mut value = serde_json::to_value(record).unwrap();
        let obj = value.as_object_mut().unwrap();
        obj.remove("wall_time_s");
        obj.remove("wall_time_per_step_s");
        value
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn budget_of_one_fails_before_any_action() {
    let scenario = Scenario { index: 0, n_pairs: 2, seed: 2 };
    let task = instance_for("sm_block_to_bowl", &scenario, 1);
    let config = AgentConfig { invocation_budget: 1, ..AgentConfig::default() };
    let record = run_trial(&task, &scenario, 1, &oracle(), &config, &prompts());
    assert_eq!(record.invocation_count, 1, "the selector consumed the whole budget");
    assert_eq!(record.predicted_status, TaskStatus::Failure);
}

#[test]
fn oracle_plan_pm_shape_and_simulated_execution() {
    use tablebot_core::primitives::{execute_call, validate_call};
    use tablebot_core::reasoner::{oracle_plan, TaskContext};

    let scenario = Scenario { index: 0, n_pairs: 3, seed: 14 };
    let task = instance_for("pm_match_colors", &scenario, 2);
    let config = WorldConfig::default();
    let mut scene = spawn_scene(&config, 3, 14).unwrap();
    let observation = scene.observe(0.0);

    let ctx = TaskContext::new(task.goal.clone(), task.required.clone(), task.difficulty);
    let (calls, rationale) = oracle_plan(&observation, &ctx);

    assert_eq!(calls.len(), 4, "three movements then finish");
    assert!(calls[..3].iter().all(|c| c.is_movement()));
    assert_eq!(calls[3].primitive, "finish");
    assert!(rationale.feasible);
    assert_eq!(rationale.plan.len(), 3, "one plan line per moved object");

    // Executing the static plan satisfies the goal under the success metric.
    for call in &calls {
        assert!(validate_call(call, &scene, &config).is_valid());
        execute_call(call, &mut scene, &config);
    }
    let report = tablebot_core::bench::evaluate(&scene, &task.goal, 0.02).unwrap();
    assert!(report.pass);
}

#[test]
fn oracle_plan_orders_stacks_bottom_up_and_permutations_fail() {
    use tablebot_core::primitives::{execute_call, validate_call, ExecutionOutcome};
    use tablebot_core::reasoner::{oracle_plan, TaskContext};

    let scenario = Scenario { index: 0, n_pairs: 4, seed: 6 };
    let task = instance_for("ss_stack_all", &scenario, 3);
    let config = WorldConfig::default();
    let mut scene = spawn_scene(&config, 4, 6).unwrap();
    let observation = scene.observe(0.0);
    let ctx = TaskContext::new(task.goal.clone(), task.required.clone(), task.difficulty);
    let (calls, _) = oracle_plan(&observation, &ctx);

    let movements: Vec<_> = calls.iter().filter(|c| c.is_movement()).cloned().collect();
    assert_eq!(movements.len(), 3, "three blocks stack onto the base");
    let zs: Vec<f64> = movements.iter().map(|c| c.position("target").unwrap().z).collect();
    assert!(zs.windows(2).all(|w| w[0] < w[1]), "bottom-up target order: {zs:?}");

    // In plan order, everything lands where intended.
    {
        let mut sim = scene.clone();
        for call in &movements {
            match execute_call(call, &mut sim, &config) {
                ExecutionOutcome::Moved { intended, achieved, .. } => {
                    assert_eq!(intended, achieved)
                }
                other => panic!("expected Moved, got {other:?}"),
            }
        }
    }

    // Reversed order breaks: the top block's slot is not built yet, so its
    // placement settles at the wrong height, and later picks hit buried
    // objects.
    let mut reversed = movements.clone();
    reversed.reverse();
    let mut deviated = 0;
    let mut rejected = 0;
    for call in &reversed {
        if !validate_call(call, &scene, &config).is_valid() {
            rejected += 1;
            continue;
        }
        if let ExecutionOutcome::Moved { intended: _, achieved, .. } =
            execute_call(call, &mut scene, &config)
        {
            let target = call.position("target").unwrap();
            if achieved.distance(&target) > 0.02 {
                deviated += 1;
            }
        }
    }
    assert!(
        deviated + rejected > 0,
        "a permuted stack order must break somewhere (deviated {deviated}, rejected {rejected})"
    );
    let report = tablebot_core::bench::evaluate(&scene, &task.goal, 0.02).unwrap();
    assert!(!report.pass, "the reversed order cannot satisfy the goal");
}

#[test]
fn parallel_suite_runs_match_serial_output() {
    use tablebot_core::bench::{run_suite, Suite, SuiteRunOptions};
    let config = AgentConfig::default();
    let mut serial_options = SuiteRunOptions::new(Suite::Robustness, 5);
    serial_options.parallelism = 1;
    let mut parallel_options = serial_options.clone();
    parallel_options.parallelism = 4;

    let serial = run_suite(&oracle(), &config, &prompts(), &serial_options);
    let parallel = run_suite(&oracle(), &config, &prompts(), &parallel_options);

    assert_eq!(serial.records.len(), parallel.records.len());
    let strip = |record: &tablebot_core::agent::TrialRecord| {
        let mut value = serde_json::to_value(record).unwrap();
        let obj = value.as_object_mut().unwrap();
        obj.remove("wall_time_s");
        obj.remove("wall_time_per_step_s");
        value
    };
    for (a, b) in serial.records.iter().zip(parallel.records.iter()) {
        assert_eq!(strip(a), strip(b));
    }
}

#[test]
fn all_feasible_catalog_goals_are_oracle_achievable() {
    // Goal-consistency sweep: the oracle must solve every feasible instance
    // it is handed (drop-free), across scenarios and goal draws.
    let scenarios = generate_scenarios(42, 10);
    let config = AgentConfig::default();
    for def in tablebot_core::bench::build_catalog() {
        if def.feasibility == tablebot_core::bench::Feasibility::Infeasible {
            continue;
        }
        for scenario in scenarios.iter().take(4) {
            for goal_seed in 0..2 {
                let task = instantiate_task(&def, scenario, goal_seed).unwrap();
                let record = run_trial(&task, scenario, goal_seed, &oracle(), &config, &prompts());
                assert!(
                    record.evaluation_pass,
                    "{} scenario {} goal {goal_seed}: {:?} status {:?} per_object {:?}",
                    def.id,
                    scenario.index,
                    record.diagnostic,
                    record.predicted_status,
                    record.per_object
                );
            }
        }
    }
}
