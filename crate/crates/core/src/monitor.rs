//! Execution monitor: pre-execution gating, post-execution deviation checks,
//! feedback synthesis, and the plan-action memory that replanning edits.
//!
//! The memory is append-only. Replanning never deletes a step; a step whose
//! effect did not hold (rejected, deviated, failed) is marked superseded and
//! stays visible in the serialized trace.

use serde::{Deserialize, Serialize};

use crate::primitives::{
    validate_call, ExecutionOutcome, PrimitiveCall, ValidationVerdict, PICK_PLACE_ON,
};
use crate::reasoner::Rationale;
use crate::world::{Observation, SceneState, Vec3, WorldConfig};

/// Default post-execution deviation threshold in meters, matching the
/// evaluation distance bound so a monitor-satisfied placement is also
/// goal-satisfiable.
pub const DEFAULT_MONITOR_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    /// Environment feedback; rendered as `System` in fast mode and
    /// `Assistant` in slow mode.
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryMessage {
    pub role: Role,
    pub content: String,
    pub invocation_index: u32,
    /// Set on feedback that demands replanning (rejections and deviations).
    #[serde(default)]
    pub recovery: bool,
}

/// One entry in the plan-action trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub index: usize,
    pub intent: Option<String>,
    pub call: PrimitiveCall,
    /// Present iff the call was executed (rejected calls never run).
    pub outcome: Option<ExecutionOutcome>,
    pub feedback: Option<HistoryMessage>,
    pub superseded: bool,
    pub invocation_index: u32,
    seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleEntry {
    pub invocation_index: u32,
    pub text: String,
    pub parsed: Rationale,
    seq: u64,
}

/// Ordered trace of rationales, calls, outcomes, and feedback for one trial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanActionMemory {
    steps: Vec<PlanStep>,
    rationales: Vec<RationaleEntry>,
    /// Loose conversation entries that are not plan steps (e.g. unparseable
    /// reasoner output and the corrective nudge that follows it).
    notes: Vec<NoteEntry>,
    next_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEntry {
    pub message: HistoryMessage,
    seq: u64,
}

impl PlanActionMemory {
    pub fn new() -> Self {
        Self::default()
    }

    fn bump(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn rationales(&self) -> &[RationaleEntry] {
        &self.rationales
    }

    pub fn notes(&self) -> &[NoteEntry] {
        &self.notes
    }

    pub fn latest_rationale(&self) -> Option<&RationaleEntry> {
        self.rationales.last()
    }

    /// Feedback entries that carry the recovery flag (rejections, deviations,
    /// execution failures).
    pub fn recovery_event_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.feedback.as_ref().map_or(false, |f| f.recovery))
            .count()
    }

    pub fn movement_steps_since_last_rationale(&self) -> usize {
        let cutoff = self.rationales.last().map(|r| r.seq).unwrap_or(0);
        self.steps
            .iter()
            .filter(|s| s.seq > cutoff && s.call.is_movement() && s.outcome.is_some())
            .count()
    }

    pub fn push_step(
        &mut self,
        intent: Option<String>,
        call: PrimitiveCall,
        outcome: Option<ExecutionOutcome>,
        feedback: Option<HistoryMessage>,
        superseded: bool,
        invocation_index: u32,
    ) -> &PlanStep {
        let seq = self.bump();
        let index = self.steps.len();
        self.steps.push(PlanStep {
            index,
            intent,
            call,
            outcome,
            feedback,
            superseded,
            invocation_index,
            seq,
        });
        self.steps.last().expect("just pushed")
    }

    pub fn push_rationale(&mut self, invocation_index: u32, text: String, parsed: Rationale) {
        let seq = self.bump();
        self.rationales.push(RationaleEntry { invocation_index, text, parsed, seq });
    }

    pub fn push_note(&mut self, message: HistoryMessage) {
        let seq = self.bump();
        self.notes.push(NoteEntry { message, seq });
    }

    #[cfg(test)]
    pub(crate) fn replace_call_for_test(&mut self, index: usize, call: PrimitiveCall) {
        self.steps[index].call = call;
    }

    /// Serializes the trace as JSON lines, one step per line with fields
    /// (index, intent, call, outcome, feedback, superseded).
    pub fn to_trace_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let line = serde_json::json!({
                "index": step.index,
                "intent": step.intent,
                "call": step.call,
                "outcome": step.outcome,
                "feedback": step.feedback,
                "superseded": step.superseded,
            });
            out.push_str(&serde_json::to_string(&line).expect("trace serialization"));
            out.push('\n');
        }
        out
    }
}

/// Outcome of the post-execution deviation check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeviationCheck {
    InPlace,
    Deviated(f64),
}

impl DeviationCheck {
    pub fn is_in_place(&self) -> bool {
        matches!(self, DeviationCheck::InPlace)
    }
}

/// Deviated iff `distance(achieved, intended) > threshold` (strictly).
pub fn post_execution_check(achieved: &Vec3, intended: &Vec3, threshold: f64) -> DeviationCheck {
    let d = achieved.distance(intended);
    if d > threshold {
        DeviationCheck::Deviated(d)
    } else {
        DeviationCheck::InPlace
    }
}

/// Pre-execution gate: delegates to `validate_call` without mutating the
/// scene. Recording the rejected step and its feedback is the caller's move
/// (see [`record_rejection`]).
pub fn pre_execution_check(
    call: &PrimitiveCall,
    scene: &SceneState,
    config: &WorldConfig,
) -> ValidationVerdict {
    validate_call(call, scene, config)
}

/// Events the monitor turns into deterministic feedback text.
#[derive(Debug, Clone)]
pub enum FeedbackEvent<'a> {
    Rejected { reason: &'a str },
    Deviated { call: &'a PrimitiveCall, intended: Vec3, achieved: Vec3, deviation: f64, threshold: f64 },
    Executed { call: &'a PrimitiveCall, achieved: Vec3 },
    Observed { observation: &'a Observation },
    Failed { reason: &'a str },
}

/// Renders one feedback message from a template; rejection text carries the
/// reason, deviation text carries both poses and an explicit replan marker.
pub fn synthesize_feedback(event: FeedbackEvent<'_>, invocation_index: u32) -> HistoryMessage {
    let (content, recovery) = match event {
        FeedbackEvent::Rejected { reason } => {
            (format!("Action rejected: {reason}. The scene is unchanged."), true)
        }
        FeedbackEvent::Deviated { call, intended, achieved, deviation, threshold } => {
            let object = call
                .object_ref("object")
                .map(|o| o.as_str().to_string())
                .unwrap_or_else(|| "object".to_string());
            (
                format!(
                    "Execution deviation for {object}: intended {intended} but achieved {achieved}; \
                     deviation {deviation:.3} m exceeds the {threshold:.3} m threshold. Replan required."
                ),
                true,
            )
        }
        FeedbackEvent::Executed { call, achieved } => {
            let object = call
                .object_ref("object")
                .map(|o| o.as_str().to_string())
                .unwrap_or_else(|| "object".to_string());
            let text = if call.primitive == PICK_PLACE_ON {
                let base = call
                    .object_ref("base")
                    .map(|o| o.as_str().to_string())
                    .unwrap_or_else(|| "base".to_string());
                format!("Moved {object} onto {base}. Achieved {achieved}.")
            } else {
                format!("Moved {object} to the requested target. Achieved {achieved}.")
            };
            (text, false)
        }
        FeedbackEvent::Observed { observation } => {
            (format!("Current scene:\n{}", observation_table(observation)), false)
        }
        FeedbackEvent::Failed { reason } => {
            (format!("Action failed: {reason}. Replan required."), true)
        }
    };
    HistoryMessage { role: Role::Feedback, content, invocation_index, recovery }
}

/// Records a rejected call: a step with no outcome plus rejection feedback.
pub fn record_rejection(
    memory: &mut PlanActionMemory,
    call: PrimitiveCall,
    reason: &str,
    invocation_index: u32,
) {
    let feedback = synthesize_feedback(FeedbackEvent::Rejected { reason }, invocation_index);
    memory.push_step(None, call, None, Some(feedback), true, invocation_index);
}

/// Fixed-width symbolic scene listing used in prompts and feedback.
pub fn observation_table(observation: &Observation) -> String {
    let mut out = String::new();
    for entry in &observation.entries {
        out.push_str(&format!(
            "- {}: {}, {}, at {}\n",
            entry.id,
            entry.kind.name(),
            entry.color.name(),
            entry.pose
        ));
    }
    out
}

/// The per-trial prompt scaffold. `system_template` keeps a `{rationale}`
/// placeholder that rendering fills per mode.
#[derive(Debug, Clone)]
pub struct BasePrompt {
    pub system_template: String,
    pub user: String,
}

/// A concrete message ready for a reasoner backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThinkingMode {
    Fast,
    Slow,
}

impl ThinkingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThinkingMode::Fast => "fast",
            ThinkingMode::Slow => "slow",
        }
    }
}

/// Renders the full conversation for the next invocation: system prompt,
/// user instruction, then the interleaved assistant calls, rationales, and
/// feedback in chronological order. Deterministic for a given memory.
pub fn render_context(memory: &PlanActionMemory, base: &BasePrompt, mode: ThinkingMode) -> Vec<Message> {
    let rationale_block = match (mode, memory.latest_rationale()) {
        (ThinkingMode::Slow, Some(entry)) => format!(
            "Current plan from the task planner:\n{}\n",
            entry.text.trim_end()
        ),
        _ => String::new(),
    };
    let system = base.system_template.replace("{rationale}", &rationale_block);

    let mut messages = vec![
        Message { role: Role::System, content: system },
        Message { role: Role::User, content: base.user.clone() },
    ];

    let resolve = |role: Role| match role {
        Role::Feedback => match mode {
            ThinkingMode::Fast => Role::System,
            ThinkingMode::Slow => Role::Assistant,
        },
        other => other,
    };

    // Merge steps, rationales, and notes back into chronological order.
    enum Event<'a> {
        Step(&'a PlanStep),
        Rationale(&'a RationaleEntry),
        Note(&'a HistoryMessage),
    }
    let mut events: Vec<(u64, Event)> = Vec::new();
    for step in memory.steps() {
        events.push((step.seq, Event::Step(step)));
    }
    for rationale in memory.rationales() {
        events.push((rationale.seq, Event::Rationale(rationale)));
    }
    for note in memory.notes() {
        events.push((note.seq, Event::Note(&note.message)));
    }
    events.sort_by_key(|(seq, _)| *seq);

    for (_, event) in events {
        match event {
            Event::Step(step) => {
                messages.push(Message { role: Role::Assistant, content: step.call.raw_text.clone() });
                if let Some(feedback) = &step.feedback {
                    messages.push(Message { role: resolve(feedback.role), content: feedback.content.clone() });
                }
            }
            Event::Rationale(rationale) => {
                messages.push(Message { role: Role::Assistant, content: rationale.text.clone() });
            }
            Event::Note(note) => {
                messages.push(Message { role: resolve(note.role), content: note.content.clone() });
            }
        }
    }
    messages
}

/// Deterministic prompt-size estimate: ceil(total content chars / 4).
pub fn estimate_tokens(messages: &[Message]) -> u64 {
    let chars: u64 = messages.iter().map(|m| m.content.chars().count() as u64).sum();
    chars.div_ceil(4)
}
