//! Trial replay: re-simulates a recorded call sequence on the recorded seed
//! and checks that every outcome and the final scene match the log.

use thiserror::Error;

use crate::agent::TrialRecord;
use crate::primitives::{execute_call, ExecutionOutcome};
use crate::world::{spawn_scene, WorldConfig, WorldError};

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayOutcome {
    Match,
    Divergence {
        /// Step index in the recorded trace, or `None` when the final scene
        /// comparison is what diverged.
        step_index: Option<usize>,
        detail: String,
    },
}

impl ReplayOutcome {
    pub fn is_match(&self) -> bool {
        matches!(self, ReplayOutcome::Match)
    }
}

#[derive(Debug, Clone, Error)]
pub enum ReplayError {
    #[error("could not respawn the recorded scene: {0}")]
    Spawn(#[from] WorldError),
}

/// Re-executes the record's executed calls in order on a fresh scene spawned
/// from the recorded seed and failure profile. Returns the first divergence,
/// if any.
pub fn replay_record(record: &TrialRecord) -> Result<ReplayOutcome, ReplayError> {
    let config = WorldConfig { failure: record.failure, ..WorldConfig::default() };
    let mut scene = spawn_scene(&config, record.n_pairs, record.scenario_seed)?;

    for step in record.memory.steps() {
        let Some(recorded) = &step.outcome else {
            continue; // rejected calls never ran
        };
        let replayed = execute_call(&step.call, &mut scene, &config);
        if &replayed != recorded {
            return Ok(ReplayOutcome::Divergence {
                step_index: Some(step.index),
                detail: format!(
                    "step {} ({}): recorded {} but replay produced {}",
                    step.index,
                    step.call.primitive,
                    outcome_brief(recorded),
                    outcome_brief(&replayed)
                ),
            });
        }
    }

    let final_scene = scene.snapshot();
    if final_scene != record.final_scene {
        return Ok(ReplayOutcome::Divergence {
            step_index: None,
            detail: "final scene does not match the recorded snapshot".to_string(),
        });
    }
    Ok(ReplayOutcome::Match)
}

fn outcome_brief(outcome: &ExecutionOutcome) -> String {
    match outcome {
        ExecutionOutcome::Observed { observation } => {
            format!("observation of {} objects", observation.entries.len())
        }
        ExecutionOutcome::Moved { object, achieved, .. } => {
            format!("{object} at {achieved}")
        }
        ExecutionOutcome::Finished { status, .. } => format!("finish({status})"),
        ExecutionOutcome::Failed { reason } => format!("failure: {reason}"),
    }
}
