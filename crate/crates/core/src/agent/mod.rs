//! Dual-mode trial orchestration: the ModeSelector, the fast single-stage
//! loop, the slow two-stage loop with rationale-conditioned action
//! generation, budget enforcement, and trial lifecycle.
//!
//! Trials never panic and surface no errors; anything that goes wrong becomes
//! `predicted_status = failure` with a diagnostic on the record.

mod prompts;

pub use prompts::{fill, PromptSet};

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::bench::{
    evaluate, evaluate_feasibility, Feasibility, GoalSpec, ObjectEval, Scenario, TaskInstance,
    EVAL_DELTA,
};
use crate::monitor::{
    estimate_tokens, post_execution_check, pre_execution_check, record_rejection, render_context,
    synthesize_feedback, BasePrompt, DeviationCheck, FeedbackEvent, HistoryMessage, Message,
    PlanActionMemory, Role, ThinkingMode, DEFAULT_MONITOR_THRESHOLD,
};
use crate::primitives::{
    catalog_docs, execute_call, parse_call, ExecutionOutcome, PrimitiveCall, TaskStatus,
    ValidationVerdict,
};
use crate::reasoner::{
    BackendFactory, Rationale, Reasoner, ReasonerRequest, ReasonerResponse, TaskContext,
    ACTION_SENTINEL, REASONING_SENTINEL, SELECTOR_SENTINEL,
};
use crate::world::{spawn_scene, FailureProfile, SceneSnapshot, SceneState, WorldConfig};

pub const DEFAULT_INVOCATION_BUDGET: u32 = 20;
pub const DEFAULT_SLOW_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeOverride {
    Auto,
    Fast,
    Slow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Hard cap on reasoner invocations per trial, the mode-selection call
    /// included.
    pub invocation_budget: u32,
    /// Post-execution deviation threshold in meters.
    pub monitor_threshold: f64,
    /// Predicted difficulty at or above this runs the slow mode.
    pub slow_threshold: f64,
    pub mode_override: ModeOverride,
    /// Ablation: suppress post-execution feedback and recovery replanning.
    pub open_loop: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            invocation_budget: DEFAULT_INVOCATION_BUDGET,
            monitor_threshold: DEFAULT_MONITOR_THRESHOLD,
            slow_threshold: DEFAULT_SLOW_THRESHOLD,
            mode_override: ModeOverride::Auto,
            open_loop: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub mode: ThinkingMode,
    pub predicted_difficulty: f64,
    pub signals: String,
    /// True when the mode came from an override instead of the selector.
    pub overridden: bool,
}

/// Full per-trial log: enough to recompute metrics and replay the execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task_id: String,
    pub group: crate::bench::TaskGroup,
    pub n_pairs: usize,
    pub scenario_index: u32,
    pub scenario_seed: u64,
    pub goal_seed: u64,
    pub instruction: String,
    pub mode: ThinkingMode,
    pub predicted_difficulty: f64,
    pub mode_signals: String,
    pub mode_overridden: bool,
    pub invocation_count: u32,
    pub budget: u32,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub steps_completed: u32,
    pub wall_time_s: f64,
    pub wall_time_per_step_s: f64,
    pub predicted_status: TaskStatus,
    pub evaluation_pass: bool,
    pub per_object: Vec<ObjectEval>,
    pub redundant_actions: u32,
    pub rationale_count: u32,
    pub recovery_events: u32,
    pub parse_failures: u32,
    pub failure: FailureProfile,
    pub open_loop: bool,
    pub goal: GoalSpec,
    pub memory: PlanActionMemory,
    pub final_scene: SceneSnapshot,
    pub diagnostic: Option<String>,
}

struct TrialState<'a> {
    backend: &'a mut dyn Reasoner,
    budget: u32,
    invocations: u32,
    input_tokens: u64,
    output_tokens: u64,
    parse_failures: u32,
    steps_completed: u32,
    memory: PlanActionMemory,
    diagnostic: Option<String>,
}

enum InvokeResult {
    Response(ReasonerResponse),
    BudgetExhausted,
    BackendError(String),
}

impl TrialState<'_> {
    fn budget_left(&self) -> u32 {
        self.budget.saturating_sub(self.invocations)
    }

    fn invoke(&mut self, messages: Vec<Message>) -> InvokeResult {
        if self.invocations >= self.budget {
            return InvokeResult::BudgetExhausted;
        }
        let request = ReasonerRequest::new(messages, self.budget_left());
        match self.backend.complete(&request) {
            Ok(response) => {
                self.invocations += 1;
                self.input_tokens += response.input_tokens;
                self.output_tokens += response.output_tokens;
                InvokeResult::Response(response)
            }
            Err(e) => InvokeResult::BackendError(e.to_string()),
        }
    }
}

/// Parses "Difficulty: <n>" style selector output: the first number in
/// [1, 5]. The mode token is informational; the difficulty decides.
fn parse_selector_difficulty(text: &str) -> Option<f64> {
    let mut current = String::new();
    let mut candidates = Vec::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() || c == '.' {
            current.push(c);
        } else if !current.is_empty() {
            // A sentence period can ride along ("3.5."): trim trailing dots.
            if let Ok(v) = current.trim_end_matches('.').parse::<f64>() {
                candidates.push(v);
            }
            current.clear();
        }
    }
    candidates.into_iter().find(|v| (1.0..=5.0).contains(v))
}

/// One selector invocation. Unparseable or failing responses fall back to
/// slow thinking at the threshold difficulty (fail safe toward accuracy).
fn select_mode(
    state: &mut TrialState<'_>,
    prompts: &PromptSet,
    instruction: &str,
    observation_table: &str,
    slow_threshold: f64,
) -> ModeDecision {
    let system = fill(
        &prompts.mode_selector,
        &[("instruction", instruction), ("observation_table", observation_table)],
    );
    let user = format!(
        "{SELECTOR_SENTINEL} and choose the thinking mode. Answer in the form: Difficulty: <number>. Mode: <fast|slow>."
    );
    let messages = vec![
        Message { role: Role::System, content: system },
        Message { role: Role::User, content: user },
    ];

    let (difficulty, signals) = match state.invoke(messages) {
        InvokeResult::Response(response) => match parse_selector_difficulty(&response.text) {
            Some(d) => (d, response.text.trim().to_string()),
            None => {
                log::warn!("unparseable mode-selector response; defaulting to slow");
                (slow_threshold, format!("unparseable selector output: {}", response.text.trim()))
            }
        },
        InvokeResult::BudgetExhausted => {
            (slow_threshold, "budget exhausted before mode selection".to_string())
        }
        InvokeResult::BackendError(e) => {
            log::warn!("mode-selector invocation failed ({e}); defaulting to slow");
            (slow_threshold, format!("selector backend error: {e}"))
        }
    };

    let mode = if difficulty >= slow_threshold { ThinkingMode::Slow } else { ThinkingMode::Fast };
    ModeDecision { mode, predicted_difficulty: difficulty, signals, overridden: false }
}

enum LoopEnd {
    Finished(TaskStatus),
    BudgetExhausted,
    ParseLimit,
    RationaleFailed(String),
    BackendError(String),
}

/// The shared execution loop. Fast mode goes straight to action generation;
/// slow mode interposes a `get_reasoning` stage up front and again after
/// every recovery event.
fn run_loop(
    state: &mut TrialState<'_>,
    scene: &mut SceneState,
    world_config: &WorldConfig,
    agent_config: &AgentConfig,
    prompts: &PromptSet,
    base: &BasePrompt,
    mode: ThinkingMode,
) -> LoopEnd {
    let mut need_rationale = mode == ThinkingMode::Slow;

    loop {
        if need_rationale {
            match invoke_reasoning(state, prompts, base, mode) {
                ReasoningEnd::Ok(rationale) => {
                    if !rationale.feasible {
                        // Terminate without spending further invocations.
                        let call = PrimitiveCall::finish(
                            TaskStatus::Infeasible,
                            rationale.feasibility_justification.lines().next().unwrap_or(""),
                        );
                        let outcome = execute_call(&call, scene, world_config);
                        state.memory.push_step(None, call, Some(outcome), None, false, state.invocations);
                        return LoopEnd::Finished(TaskStatus::Infeasible);
                    }
                    need_rationale = false;
                }
                ReasoningEnd::Budget => return LoopEnd::BudgetExhausted,
                ReasoningEnd::ParseFailed(detail) => return LoopEnd::RationaleFailed(detail),
                ReasoningEnd::BackendError(e) => return LoopEnd::BackendError(e),
            }
        }

        let mut messages = render_context(&state.memory, base, mode);
        messages.push(Message {
            role: Role::User,
            content: format!("Respond with {ACTION_SENTINEL} as JSON."),
        });
        let response = match state.invoke(messages) {
            InvokeResult::Response(r) => r,
            InvokeResult::BudgetExhausted => return LoopEnd::BudgetExhausted,
            InvokeResult::BackendError(e) => return LoopEnd::BackendError(e),
        };

        let call = match parse_call(&response.text) {
            Ok(call) => call,
            Err(e) => {
                state.parse_failures += 1;
                if !response.text.trim().is_empty() {
                    state.memory.push_note(HistoryMessage {
                        role: Role::Assistant,
                        content: response.text.clone(),
                        invocation_index: state.invocations,
                        recovery: false,
                    });
                }
                state.memory.push_note(HistoryMessage {
                    role: Role::Feedback,
                    content: format!(
                        "Could not parse a primitive call ({e}). Respond with exactly one JSON object of the form {{\"primitive\": \"<name>\", \"args\": {{...}}}}."
                    ),
                    invocation_index: state.invocations,
                    recovery: false,
                });
                if state.parse_failures >= 2 * state.budget {
                    return LoopEnd::ParseLimit;
                }
                continue;
            }
        };

        match pre_execution_check(&call, scene, world_config) {
            ValidationVerdict::Rejected { reason } => {
                record_rejection(&mut state.memory, call, &reason, state.invocations);
                if mode == ThinkingMode::Slow && !agent_config.open_loop {
                    need_rationale = true;
                }
                continue;
            }
            ValidationVerdict::Valid => {}
        }

        let intent = plan_intent(&state.memory, mode, &call);
        let invocation_index = state.invocations;
        let outcome = execute_call(&call, scene, world_config);
        match outcome {
            ExecutionOutcome::Finished { status, .. } => {
                state.memory.push_step(intent, call, Some(outcome), None, false, invocation_index);
                return LoopEnd::Finished(status);
            }
            ExecutionOutcome::Observed { ref observation } => {
                let feedback =
                    synthesize_feedback(FeedbackEvent::Observed { observation }, invocation_index);
                state.memory.push_step(intent, call, Some(outcome.clone()), Some(feedback), false, invocation_index);
            }
            ExecutionOutcome::Moved { intended, achieved, .. } => {
                match post_execution_check(&achieved, &intended, agent_config.monitor_threshold) {
                    DeviationCheck::InPlace => {
                        state.steps_completed += 1;
                        let feedback = (!agent_config.open_loop).then(|| {
                            synthesize_feedback(
                                FeedbackEvent::Executed { call: &call, achieved },
                                invocation_index,
                            )
                        });
                        state.memory.push_step(intent, call, Some(outcome.clone()), feedback, false, invocation_index);
                    }
                    DeviationCheck::Deviated(deviation) => {
                        let feedback = (!agent_config.open_loop).then(|| {
                            synthesize_feedback(
                                FeedbackEvent::Deviated {
                                    call: &call,
                                    intended,
                                    achieved,
                                    deviation,
                                    threshold: agent_config.monitor_threshold,
                                },
                                invocation_index,
                            )
                        });
                        let superseded = !agent_config.open_loop;
                        state.memory.push_step(intent, call, Some(outcome.clone()), feedback, superseded, invocation_index);
                        if mode == ThinkingMode::Slow && !agent_config.open_loop {
                            need_rationale = true;
                        }
                    }
                }
            }
            ExecutionOutcome::Failed { ref reason } => {
                let feedback = synthesize_feedback(
                    FeedbackEvent::Failed { reason },
                    invocation_index,
                );
                state.memory.push_step(intent, call, Some(outcome.clone()), Some(feedback), true, invocation_index);
                if mode == ThinkingMode::Slow && !agent_config.open_loop {
                    need_rationale = true;
                }
            }
        }
    }
}

enum ReasoningEnd {
    Ok(Rationale),
    Budget,
    ParseFailed(String),
    BackendError(String),
}

/// One `get_reasoning` invocation, with a single retry on unparseable output.
fn invoke_reasoning(
    state: &mut TrialState<'_>,
    prompts: &PromptSet,
    base: &BasePrompt,
    mode: ThinkingMode,
) -> ReasoningEnd {
    let stage_prompt = fill(&prompts.cot_reasoning, &[("primitive_docs", &catalog_docs())]);
    let mut last_error = String::new();
    for _attempt in 0..2 {
        let mut messages = render_context(&state.memory, base, mode);
        messages.push(Message { role: Role::User, content: stage_prompt.clone() });
        debug_assert!(messages.last().unwrap().content.contains(REASONING_SENTINEL));

        let response = match state.invoke(messages) {
            InvokeResult::Response(r) => r,
            InvokeResult::BudgetExhausted => return ReasoningEnd::Budget,
            InvokeResult::BackendError(e) => return ReasoningEnd::BackendError(e),
        };
        match crate::reasoner::parse_rationale(&response.text) {
            Ok(rationale) => {
                state.memory.push_rationale(state.invocations, response.text, rationale.clone());
                return ReasoningEnd::Ok(rationale);
            }
            Err(e) => {
                last_error = e.to_string();
                if !response.text.trim().is_empty() {
                    state.memory.push_note(HistoryMessage {
                        role: Role::Assistant,
                        content: response.text,
                        invocation_index: state.invocations,
                        recovery: false,
                    });
                }
                state.memory.push_note(HistoryMessage {
                    role: Role::Feedback,
                    content: format!(
                        "The rationale could not be parsed ({last_error}). Rewrite it with all five numbered sections."
                    ),
                    invocation_index: state.invocations,
                    recovery: false,
                });
            }
        }
    }
    ReasoningEnd::ParseFailed(last_error)
}

/// In slow mode, annotate movement steps with the matching plan line.
fn plan_intent(memory: &PlanActionMemory, mode: ThinkingMode, call: &PrimitiveCall) -> Option<String> {
    if mode != ThinkingMode::Slow || !call.is_movement() {
        return None;
    }
    let index = memory.movement_steps_since_last_rationale();
    memory.latest_rationale().and_then(|r| r.parsed.plan.get(index).cloned())
}

/// Runs one full trial: spawn, observe, select mode, execute the loop, and
/// evaluate the final scene against the goal.
pub fn run_trial(
    task: &TaskInstance,
    scenario: &Scenario,
    goal_seed: u64,
    factory: &BackendFactory,
    agent_config: &AgentConfig,
    prompts: &PromptSet,
) -> TrialRecord {
    run_trial_inner(task, None, scenario, goal_seed, factory, agent_config, prompts)
}

/// Like [`run_trial`], but on a caller-provided scene (ad-hoc `solve` runs on
/// loaded scene files). The scenario fields are recorded as-is.
pub fn run_trial_with_scene(
    task: &TaskInstance,
    scene: SceneState,
    scenario: &Scenario,
    goal_seed: u64,
    factory: &BackendFactory,
    agent_config: &AgentConfig,
    prompts: &PromptSet,
) -> TrialRecord {
    run_trial_inner(task, Some(scene), scenario, goal_seed, factory, agent_config, prompts)
}

fn run_trial_inner(
    task: &TaskInstance,
    prepared_scene: Option<SceneState>,
    scenario: &Scenario,
    goal_seed: u64,
    factory: &BackendFactory,
    agent_config: &AgentConfig,
    prompts: &PromptSet,
) -> TrialRecord {
    let started = Instant::now();
    let world_config = WorldConfig { failure: task.failure, ..WorldConfig::default() };

    let ctx = TaskContext::new(task.goal.clone(), task.required.clone(), task.difficulty);
    let mut backend = factory.for_task(&ctx);

    let record_base = |memory: PlanActionMemory,
                           scene: Option<&SceneState>,
                           decision: &ModeDecision,
                           state_numbers: (u32, u64, u64, u32, u32),
                           predicted: TaskStatus,
                           diagnostic: Option<String>| {
        let (invocations, input_tokens, output_tokens, parse_failures, steps_completed) =
            state_numbers;
        let (evaluation_pass, per_object, eval_diag) = match scene {
            None => (false, Vec::new(), None),
            Some(scene) => match task.feasibility {
                Feasibility::Infeasible => {
                    (evaluate_feasibility(predicted, task.feasibility), Vec::new(), None)
                }
                Feasibility::Feasible => match evaluate(scene, &task.goal, EVAL_DELTA) {
                    Ok(report) => (report.pass, report.per_object, None),
                    Err(e) => (false, Vec::new(), Some(e.to_string())),
                },
            },
        };
        let redundant_actions = if task.feasibility == Feasibility::Infeasible {
            memory
                .steps()
                .iter()
                .filter(|s| matches!(s.outcome, Some(ExecutionOutcome::Moved { .. })))
                .count() as u32
        } else {
            0
        };
        let wall_time_s = started.elapsed().as_secs_f64();
        TrialRecord {
            task_id: task.task_id.clone(),
            group: task.group,
            n_pairs: scenario.n_pairs,
            scenario_index: scenario.index,
            scenario_seed: scenario.seed,
            goal_seed,
            instruction: task.instruction.clone(),
            mode: decision.mode,
            predicted_difficulty: decision.predicted_difficulty,
            mode_signals: decision.signals.clone(),
            mode_overridden: decision.overridden,
            invocation_count: invocations,
            budget: agent_config.invocation_budget,
            total_input_tokens: input_tokens,
            total_output_tokens: output_tokens,
            steps_completed,
            wall_time_s,
            wall_time_per_step_s: if steps_completed > 0 {
                wall_time_s / steps_completed as f64
            } else {
                0.0
            },
            predicted_status: predicted,
            evaluation_pass,
            per_object,
            redundant_actions,
            rationale_count: memory.rationales().len() as u32,
            recovery_events: memory.recovery_event_count() as u32,
            parse_failures,
            failure: task.failure,
            open_loop: agent_config.open_loop,
            goal: task.goal.clone(),
            memory,
            final_scene: scene.map(|s| s.snapshot()).unwrap_or(SceneSnapshot {
                objects: Vec::new(),
                held: None,
                seed: scenario.seed,
            }),
            diagnostic: diagnostic.or(eval_diag),
        }
    };

    let mut scene = match prepared_scene {
        Some(scene) => scene,
        None => match spawn_scene(&world_config, scenario.n_pairs, scenario.seed) {
            Ok(scene) => scene,
            Err(e) => {
                let decision = ModeDecision {
                    mode: ThinkingMode::Fast,
                    predicted_difficulty: 1.0,
                    signals: "scene spawn failed".to_string(),
                    overridden: true,
                };
                return record_base(
                    PlanActionMemory::new(),
                    None,
                    &decision,
                    (0, 0, 0, 0, 0),
                    TaskStatus::Failure,
                    Some(format!("spawn failed: {e}")),
                );
            }
        },
    };

    let observation = scene.observe(0.0);
    let table = crate::monitor::observation_table(&observation);

    let base = BasePrompt {
        system_template: fill(
            &prompts.action_generation,
            &[("primitive_docs", &catalog_docs())],
        ),
        user: format!("Task: {}\n\nInitial scene:\n{}", task.instruction, table),
    };

    let mut state = TrialState {
        backend: backend.as_mut(),
        budget: agent_config.invocation_budget,
        invocations: 0,
        input_tokens: 0,
        output_tokens: 0,
        parse_failures: 0,
        steps_completed: 0,
        memory: PlanActionMemory::new(),
        diagnostic: None,
    };

    let decision = match agent_config.mode_override {
        ModeOverride::Auto => {
            select_mode(&mut state, prompts, &task.instruction, &table, agent_config.slow_threshold)
        }
        ModeOverride::Fast => ModeDecision {
            mode: ThinkingMode::Fast,
            predicted_difficulty: 1.0,
            signals: "forced by mode override".to_string(),
            overridden: true,
        },
        ModeOverride::Slow => ModeDecision {
            mode: ThinkingMode::Slow,
            predicted_difficulty: 5.0,
            signals: "forced by mode override".to_string(),
            overridden: true,
        },
    };

    let end = run_loop(
        &mut state,
        &mut scene,
        &world_config,
        agent_config,
        prompts,
        &base,
        decision.mode,
    );
    let predicted = match end {
        LoopEnd::Finished(status) => status,
        LoopEnd::BudgetExhausted => {
            state.diagnostic.get_or_insert_with(|| "invocation budget exhausted".to_string());
            TaskStatus::Failure
        }
        LoopEnd::ParseLimit => {
            state.diagnostic.get_or_insert_with(|| "parse-failure limit reached".to_string());
            TaskStatus::Failure
        }
        LoopEnd::RationaleFailed(detail) => {
            state
                .diagnostic
                .get_or_insert_with(|| format!("rationale unparseable after retry: {detail}"));
            TaskStatus::Failure
        }
        LoopEnd::BackendError(e) => {
            state.diagnostic.get_or_insert_with(|| format!("backend error: {e}"));
            TaskStatus::Failure
        }
    };

    let numbers = (
        state.invocations,
        state.input_tokens,
        state.output_tokens,
        state.parse_failures,
        state.steps_completed,
    );
    let diagnostic = state.diagnostic.clone();
    record_base(state.memory, Some(&scene), &decision, numbers, predicted, diagnostic)
}

/// Runs a trial pinned to the fast single-stage loop (no selector call).
pub fn run_fast(
    task: &TaskInstance,
    scenario: &Scenario,
    goal_seed: u64,
    factory: &BackendFactory,
    agent_config: &AgentConfig,
    prompts: &PromptSet,
) -> TrialRecord {
    let config = AgentConfig { mode_override: ModeOverride::Fast, ..agent_config.clone() };
    run_trial(task, scenario, goal_seed, factory, &config, prompts)
}

/// Runs a trial pinned to the slow two-stage loop (no selector call).
pub fn run_slow(
    task: &TaskInstance,
    scenario: &Scenario,
    goal_seed: u64,
    factory: &BackendFactory,
    agent_config: &AgentConfig,
    prompts: &PromptSet,
) -> TrialRecord {
    let config = AgentConfig { mode_override: ModeOverride::Slow, ..agent_config.clone() };
    run_trial(task, scenario, goal_seed, factory, &config, prompts)
}

/// Rendered-context size comparison used by tests and reports: the fast-mode
/// context for the same memory is strictly smaller once a rationale exists.
pub fn context_token_estimate(memory: &PlanActionMemory, base: &BasePrompt, mode: ThinkingMode) -> u64 {
    estimate_tokens(&render_context(memory, base, mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_difficulty_parsing() {
        assert_eq!(parse_selector_difficulty("Difficulty: 3.5. Mode: slow."), Some(3.5));
        assert_eq!(parse_selector_difficulty("difficulty 2, mode fast"), Some(2.0));
        assert_eq!(parse_selector_difficulty("I think 4.5 fits"), Some(4.5));
        assert_eq!(parse_selector_difficulty("no numbers here"), None);
        // Out-of-range numbers are skipped until a plausible one appears.
        assert_eq!(parse_selector_difficulty("score 250 then 0.5 then 3.0"), Some(3.0));
        assert_eq!(parse_selector_difficulty(""), None);
    }

    #[test]
    fn default_config_matches_protocol() {
        let config = AgentConfig::default();
        assert_eq!(config.invocation_budget, 20);
        assert_eq!(config.monitor_threshold, 0.02);
        assert_eq!(config.slow_threshold, 3.0);
        assert_eq!(config.mode_override, ModeOverride::Auto);
        assert!(!config.open_loop);
    }
}
