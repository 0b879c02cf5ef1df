//! Deliberately misbehaving backends for exercising the agent's guard rails:
//! budget exhaustion, validation rejects, wrong-but-valid plans, and empty
//! replies.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::monitor::Role;
use crate::primitives::{parse_call, PrimitiveCall, TaskStatus};
use crate::world::{ObjectId, ObjectKind, Vec3};

use super::oracle::offline_response;
use super::{
    detect_stage, parse_observation_table, Reasoner, ReasonerError, ReasonerRequest,
    ReasonerResponse, Stage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// Always answers with a valid non-finish call; the trial can only end by
    /// budget exhaustion.
    LoopForever,
    /// Always references an object that does not exist, so every call is
    /// rejected pre-execution.
    InvalidCall,
    /// Makes one valid but wrong movement, then declares success.
    WrongObject,
    /// Returns empty text. Not an error; the agent must cope.
    Silent,
}

impl FaultMode {
    pub fn parse(name: &str) -> Option<FaultMode> {
        match name {
            "loop_forever" | "loop" => Some(FaultMode::LoopForever),
            "invalid_call" | "invalid" => Some(FaultMode::InvalidCall),
            "wrong_object" | "wrong" => Some(FaultMode::WrongObject),
            "silent" => Some(FaultMode::Silent),
            _ => None,
        }
    }
}

pub struct FaultBackend {
    mode: FaultMode,
}

impl FaultBackend {
    pub fn new(mode: FaultMode) -> Self {
        Self { mode }
    }

    fn action_text(&self, request: &ReasonerRequest) -> String {
        match self.mode {
            FaultMode::LoopForever => PrimitiveCall::get_observation().wire_json(),
            FaultMode::InvalidCall => PrimitiveCall::pick_place_at(
                ObjectId::new("blk_void"),
                Vec3::new(0.0, 0.0, 0.025),
            )
            .wire_json(),
            FaultMode::WrongObject => {
                let already_moved = request.messages.iter().any(|m| {
                    m.role == Role::Assistant
                        && parse_call(&m.content).map_or(false, |c| c.is_movement())
                });
                if already_moved {
                    return PrimitiveCall::finish(TaskStatus::Success, "done").wire_json();
                }
                let mut block = None;
                for message in &request.messages {
                    let rows = parse_observation_table(&message.content);
                    if let Some(first) = rows.iter().find(|r| r.kind == ObjectKind::Block) {
                        block = Some(first.id.clone());
                    }
                }
                match block {
                    Some(id) => {
                        PrimitiveCall::pick_place_at(id, Vec3::new(0.0, 0.0, 0.025)).wire_json()
                    }
                    None => PrimitiveCall::finish(TaskStatus::Failure, "no block visible").wire_json(),
                }
            }
            FaultMode::Silent => String::new(),
        }
    }
}

impl Reasoner for FaultBackend {
    fn complete(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let start = Instant::now();
        let text = match detect_stage(request) {
            Stage::Selector => match self.mode {
                FaultMode::Silent => String::new(),
                // Fault backends steer trials into fast mode so their action
                // behavior is what gets tested.
                _ => "Difficulty: 1.0. Mode: fast.".to_string(),
            },
            Stage::Reasoning | Stage::Action => self.action_text(request),
        };
        Ok(offline_response(request, text, start))
    }
}
