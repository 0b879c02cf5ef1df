//! Pluggable reasoning backends: a live chat-completions HTTP client, a
//! deterministic scripted oracle for reproducible runs, and fault-injection
//! backends for exercising the agent's failure handling. Also owns rationale
//! parsing and the offline token estimator.

mod fault;
mod http;
mod oracle;

pub use fault::{FaultBackend, FaultMode};
pub use http::{HttpBackend, RetryPolicy};
pub use oracle::{oracle_plan, OracleBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::GoalSpec;
use crate::monitor::Message;
use crate::world::ObjectId;

/// Sentinel lines baked into the stage prompts; scripted backends use them to
/// tell which module is asking.
pub const SELECTOR_SENTINEL: &str = "Rate the task difficulty from 1 to 5";
pub const REASONING_SENTINEL: &str = "five numbered sections";
pub const ACTION_SENTINEL: &str = "exactly one primitive call";

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerRequest {
    pub messages: Vec<Message>,
    /// Fixed at zero for reproducible outputs.
    pub temperature: f64,
    /// Invocations left in the trial budget; informational for backends.
    pub budget_remaining: u32,
}

impl ReasonerRequest {
    pub fn new(messages: Vec<Message>, budget_remaining: u32) -> Self {
        Self { messages, temperature: 0.0, budget_remaining }
    }

    pub fn prompt_chars(&self) -> u64 {
        self.messages.iter().map(|m| m.content.chars().count() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_s: f64,
}

/// Offline token estimate: ceiling(chars / 4). Non-HTTP backends report this
/// for both prompt and completion so metrics stay deterministic.
pub fn estimate_tokens_for_chars(chars: u64) -> u64 {
    chars.div_ceil(4)
}

#[derive(Debug, Clone, Error)]
pub enum ReasonerError {
    #[error("network error after {attempts} attempts: {detail}")]
    Network { attempts: u32, detail: String },
    #[error("malformed provider response: {detail}")]
    Protocol { detail: String },
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

impl ReasonerError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ReasonerError::Network { .. })
    }
}

/// A reasoning backend. One instance serves one trial's conversation.
pub trait Reasoner: Send {
    fn complete(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError>;
}

/// Which reasoning stage a request belongs to, detected from the trailing
/// stage instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Selector,
    Reasoning,
    Action,
}

pub fn detect_stage(request: &ReasonerRequest) -> Stage {
    let last = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
    if last.contains(SELECTOR_SENTINEL) {
        Stage::Selector
    } else if last.contains(REASONING_SENTINEL) {
        Stage::Reasoning
    } else {
        Stage::Action
    }
}

/// The five-part rationale produced by the slow-thinking planning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub env_status: String,
    pub instruction_restatement: String,
    pub feasible: bool,
    pub feasibility_justification: String,
    pub calculations: String,
    pub plan: Vec<String>,
}

/// Required section headers, in order, at line starts.
pub const RATIONALE_HEADERS: [&str; 5] = [
    "1. ENVIRONMENT",
    "2. INSTRUCTION",
    "3. FEASIBILITY",
    "4. CALCULATION",
    "5. PLAN",
];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RationaleError {
    #[error("missing section {0}")]
    MissingSection(usize),
    #[error("unparseable feasibility: {0}")]
    UnparseableFeasibility(String),
}

/// Splits `text` on the five numbered headers and normalizes the feasibility
/// label. Plan items are the numbered or bulleted lines under section 5.
pub fn parse_rationale(text: &str) -> Result<Rationale, RationaleError> {
    // Byte offsets of each header occurrence at a line start, in order.
    let mut positions = [0usize; 5];
    let mut search_from = 0usize;
    for (i, header) in RATIONALE_HEADERS.iter().enumerate() {
        let mut found = None;
        let mut offset = search_from;
        while let Some(rel) = text[offset..].find(header) {
            let pos = offset + rel;
            let at_line_start = pos == 0 || text.as_bytes()[pos - 1] == b'\n';
            if at_line_start {
                found = Some(pos);
                break;
            }
            offset = pos + header.len();
        }
        match found {
            Some(pos) => {
                positions[i] = pos;
                search_from = pos + header.len();
            }
            None => return Err(RationaleError::MissingSection(i + 1)),
        }
    }

    let section = |i: usize| -> &str {
        let start = positions[i] + RATIONALE_HEADERS[i].len();
        let end = if i + 1 < 5 { positions[i + 1] } else { text.len() };
        text[start..end].trim()
    };

    let feasibility_text = section(2);
    let lowered = feasibility_text.to_lowercase();
    let feasible = if lowered.contains("infeasible") {
        false
    } else if lowered.contains("feasible") {
        true
    } else {
        return Err(RationaleError::UnparseableFeasibility(feasibility_text.to_string()));
    };

    let plan = section(4)
        .lines()
        .filter_map(|line| {
            let trimmed = line.trim();
            let rest = trimmed
                .strip_prefix('-')
                .or_else(|| trimmed.strip_prefix('*'))
                .or_else(|| {
                    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
                    if digits > 0 && trimmed[digits..].starts_with('.') {
                        Some(&trimmed[digits + 1..])
                    } else {
                        None
                    }
                })?;
            let item = rest.trim();
            (!item.is_empty()).then(|| item.to_string())
        })
        .collect();

    Ok(Rationale {
        env_status: section(0).to_string(),
        instruction_restatement: section(1).to_string(),
        feasible,
        feasibility_justification: feasibility_text.to_string(),
        calculations: section(3).to_string(),
        plan,
    })
}

/// Task-side context handed to scripted backends at construction: the goal
/// mapping, the objects the instruction references, and the (scaled) labeled
/// difficulty the scripted selector answers with.
#[derive(Debug, Clone, Default)]
pub struct TaskContext {
    pub goal: GoalSpec,
    pub required: Vec<ObjectId>,
    pub difficulty: f64,
}

impl TaskContext {
    pub fn new(goal: GoalSpec, required: Vec<ObjectId>, difficulty: f64) -> Self {
        Self { goal, required, difficulty }
    }
}

/// Which backend family a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    /// Deterministic scripted solver; needs no network.
    Oracle,
    /// OpenAI-compatible chat-completions endpoint. Credentials come from
    /// `REASONER_API_KEY` (and optionally `REASONER_BASE_URL`), never from
    /// config files.
    Http { base_url: Option<String>, model: String },
    /// Deliberately broken backends for failure-path testing.
    Fault { mode: FaultMode },
}

/// Builds per-trial backends. HTTP credentials and the shared client are
/// resolved once, up front, so configuration errors surface before any trial
/// starts.
pub struct BackendFactory {
    kind: BackendKind,
    http_template: Option<HttpBackend>,
}

impl BackendFactory {
    pub fn new(kind: BackendKind) -> Result<Self, ReasonerError> {
        let http_template = match &kind {
            BackendKind::Http { base_url, model } => {
                Some(HttpBackend::from_env(base_url.clone(), model.clone())?)
            }
            _ => None,
        };
        Ok(Self { kind, http_template })
    }

    pub fn kind(&self) -> &BackendKind {
        &self.kind
    }

    pub fn for_task(&self, ctx: &TaskContext) -> Box<dyn Reasoner> {
        match &self.kind {
            BackendKind::Oracle => Box::new(OracleBackend::new(ctx.clone())),
            BackendKind::Http { .. } => {
                Box::new(self.http_template.as_ref().expect("validated at construction").clone())
            }
            BackendKind::Fault { mode } => Box::new(FaultBackend::new(*mode)),
        }
    }
}

// ---------------------------------------------------------------------------
// Shared text-mining helpers for scripted backends.
// ---------------------------------------------------------------------------

use crate::world::{Color, ObjectKind, Vec3};
use regexes::*;

mod regexes {
    use regex::Regex;
    use std::sync::OnceLock;

    pub fn observation_line_re() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| {
            Regex::new(
                r"(?m)^- (\S+): (block|bowl), (\w+), at \((-?[0-9.]+), (-?[0-9.]+), (-?[0-9.]+)\)$",
            )
            .expect("static regex")
        })
    }

    pub fn moved_re() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| {
            Regex::new(r"^Moved (\S+) .*Achieved \((-?[0-9.]+), (-?[0-9.]+), (-?[0-9.]+)\)\.")
                .expect("static regex")
        })
    }

    pub fn deviated_re() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| {
            Regex::new(
                r"^Execution deviation for (\S+): intended \([^)]*\) but achieved \((-?[0-9.]+), (-?[0-9.]+), (-?[0-9.]+)\)",
            )
            .expect("static regex")
        })
    }
}

/// One object row recovered from a rendered observation table.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParsedObject {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub color: Option<Color>,
    pub pose: Vec3,
}

pub(crate) fn parse_observation_table(text: &str) -> Vec<ParsedObject> {
    observation_line_re()
        .captures_iter(text)
        .map(|cap| ParsedObject {
            id: ObjectId::new(&cap[1]),
            kind: if &cap[2] == "block" { ObjectKind::Block } else { ObjectKind::Bowl },
            color: Color::parse(&cap[3]),
            pose: Vec3::new(
                cap[4].parse().unwrap_or(0.0),
                cap[5].parse().unwrap_or(0.0),
                cap[6].parse().unwrap_or(0.0),
            ),
        })
        .collect()
}

/// Movement updates mined from feedback text: `(object, achieved pose, was_deviation)`.
pub(crate) fn parse_movement_feedback(text: &str) -> Option<(ObjectId, Vec3, bool)> {
    if let Some(cap) = moved_re().captures(text) {
        return Some((
            ObjectId::new(&cap[1]),
            Vec3::new(
                cap[2].parse().unwrap_or(0.0),
                cap[3].parse().unwrap_or(0.0),
                cap[4].parse().unwrap_or(0.0),
            ),
            false,
        ));
    }
    if let Some(cap) = deviated_re().captures(text) {
        return Some((
            ObjectId::new(&cap[1]),
            Vec3::new(
                cap[2].parse().unwrap_or(0.0),
                cap[3].parse().unwrap_or(0.0),
                cap[4].parse().unwrap_or(0.0),
            ),
            true,
        ));
    }
    None
}

pub(crate) fn extract_instruction(messages: &[Message]) -> String {
    for message in messages {
        for line in message.content.lines() {
            if let Some(rest) = line.strip_prefix("Task: ") {
                return rest.trim().to_string();
            }
        }
    }
    String::new()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::Role;

    fn request_with(last: &str) -> ReasonerRequest {
        ReasonerRequest::new(
            vec![Message { role: Role::User, content: last.to_string() }],
            20,
        )
    }

    #[test]
    fn token_estimator_ceiling() {
        assert_eq!(estimate_tokens_for_chars(4000), 1000);
        assert_eq!(estimate_tokens_for_chars(1), 1);
        assert_eq!(estimate_tokens_for_chars(0), 0);
        assert_eq!(estimate_tokens_for_chars(5), 2);
    }

    #[test]
    fn stage_detection() {
        assert_eq!(
            detect_stage(&request_with("Rate the task difficulty from 1 to 5 and choose the thinking mode.")),
            Stage::Selector
        );
        assert_eq!(
            detect_stage(&request_with("Produce your reasoning in the five numbered sections.")),
            Stage::Reasoning
        );
        assert_eq!(
            detect_stage(&request_with("Respond with exactly one primitive call as JSON.")),
            Stage::Action
        );
    }

    const FULL_RATIONALE: &str = "1. ENVIRONMENT\n3 blocks and 3 bowls on the table.\n\
2. INSTRUCTION\nPut each block into the bowl of the same color.\n\
3. FEASIBILITY\nfeasible: every referenced object is present.\n\
4. CALCULATION\n- distance(blk_red, bowl_red) = 0.210\n\
5. PLAN\n1. move blk_red into bowl_red\n2. move blk_blue into bowl_blue\n";

    #[test]
    fn rationale_parses_all_five_sections() {
        let rationale = parse_rationale(FULL_RATIONALE).unwrap();
        assert!(rationale.env_status.contains("3 blocks"));
        assert!(rationale.instruction_restatement.contains("same color"));
        assert!(rationale.feasible);
        assert!(rationale.calculations.contains("distance"));
        assert_eq!(rationale.plan.len(), 2);
        assert_eq!(rationale.plan[0], "move blk_red into bowl_red");
    }

    #[test]
    fn rationale_missing_section_error() {
        let text = FULL_RATIONALE.replace("4. CALCULATION\n- distance(blk_red, bowl_red) = 0.210\n", "");
        let err = parse_rationale(&text).unwrap_err();
        assert_eq!(err.to_string(), "missing section 4");
    }

    #[test]
    fn rationale_feasibility_normalization() {
        let infeasible = FULL_RATIONALE.replace(
            "feasible: every referenced object is present.",
            "infeasible: no pink block",
        );
        assert!(!parse_rationale(&infeasible).unwrap().feasible);

        let neither = FULL_RATIONALE.replace(
            "feasible: every referenced object is present.",
            "unclear at this time",
        );
        let err = parse_rationale(&neither).unwrap_err();
        assert!(err.to_string().starts_with("unparseable feasibility"));
    }

    #[test]
    fn rationale_headers_must_sit_at_line_starts() {
        let tricky = FULL_RATIONALE.replace(
            "4. CALCULATION\n",
            "note: see 4. CALCULATION below\n4. CALCULATION\n",
        );
        let rationale = parse_rationale(&tricky).unwrap();
        assert!(rationale.calculations.contains("distance"));
    }

    #[test]
    fn observation_table_round_trip() {
        use crate::monitor::observation_table;
        use crate::world::{spawn_scene, WorldConfig};
        let mut scene = spawn_scene(&WorldConfig::default(), 3, 4).unwrap();
        let table = observation_table(&scene.observe(0.0));
        let parsed = parse_observation_table(&table);
        assert_eq!(parsed.len(), 6);
        for (row, obj) in parsed.iter().zip(scene.objects()) {
            assert_eq!(row.id, obj.id);
            assert_eq!(row.kind, obj.kind);
            assert!(row.pose.distance(&obj.pose) < 1e-3, "3-decimal rendering bound");
        }
    }

    #[test]
    fn movement_feedback_parsing() {
        let (id, pose, dev) =
            parse_movement_feedback("Moved blk_red onto blk_blue. Achieved (0.100, -0.200, 0.075).")
                .unwrap();
        assert_eq!(id.as_str(), "blk_red");
        assert!(pose.distance(&Vec3::new(0.1, -0.2, 0.075)) < 1e-9);
        assert!(!dev);

        let (id, pose, dev) = parse_movement_feedback(
            "Execution deviation for blk_red: intended (0.100, 0.200, 0.075) but achieved (0.180, 0.200, 0.025); deviation 0.094 m exceeds the 0.020 m threshold. Replan required.",
        )
        .unwrap();
        assert_eq!(id.as_str(), "blk_red");
        assert_eq!(pose.z, 0.025);
        assert!(dev);
    }
}
