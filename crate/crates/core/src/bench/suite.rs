//! Suite execution and aggregation: 10 scenarios x 5 goal seeds per task,
//! JSON-lines trial logs, and a CSV summary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crate::agent::{run_trial, AgentConfig, PromptSet, TrialRecord};
use crate::monitor::ThinkingMode;
use crate::reasoner::BackendFactory;

use super::{build_catalog, generate_scenarios, goal_seed_for, instantiate_task, Scenario, Suite, TaskGroup};

pub const DEFAULT_SCENARIO_COUNT: u32 = 10;
pub const DEFAULT_GOALS_PER_SCENARIO: u32 = 5;

#[derive(Debug, Clone)]
pub struct SuiteRunOptions {
    pub suite: Suite,
    pub master_seed: u64,
    pub scenario_count: u32,
    pub goals_per_scenario: u32,
    /// Worker threads for trial execution; 1 runs serially. Output order is
    /// deterministic either way.
    pub parallelism: usize,
}

impl SuiteRunOptions {
    pub fn new(suite: Suite, master_seed: u64) -> Self {
        Self {
            suite,
            master_seed,
            scenario_count: DEFAULT_SCENARIO_COUNT,
            goals_per_scenario: DEFAULT_GOALS_PER_SCENARIO,
            parallelism: 1,
        }
    }
}

/// One skipped (task, scenario) combination, kept for the record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedTrial {
    pub task_id: String,
    pub scenario_index: u32,
    pub goal_seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub group: TaskGroup,
    pub trials: u32,
    pub successes: u32,
    pub success_rate: f64,
    pub avg_time_per_step_s: f64,
    pub avg_input_tokens: f64,
    pub slow_mode_fraction: f64,
    pub redundant_actions: u64,
    pub skipped: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: TaskGroup,
    pub tasks: u32,
    pub trials: u32,
    pub success_rate: f64,
    pub avg_time_per_step_s: f64,
    pub avg_input_tokens: f64,
    pub slow_mode_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub master_seed: u64,
    pub tasks: Vec<TaskSummary>,
    pub groups: Vec<GroupSummary>,
    pub overall_success_rate: f64,
    pub skipped: Vec<SkippedTrial>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

/// Runs every catalog task in the suite over `scenario_count x
/// goals_per_scenario` trials. Per-trial failures (including panics) become
/// failure records; the suite itself never aborts.
pub fn run_suite(
    factory: &BackendFactory,
    agent_config: &AgentConfig,
    prompts: &PromptSet,
    options: &SuiteRunOptions,
) -> SuiteReport {
    let catalog: Vec<_> = build_catalog()
        .into_iter()
        .filter(|t| options.suite.includes(t.group))
        .collect();
    let scenarios = generate_scenarios(options.master_seed, options.scenario_count);

    let mut jobs: Vec<(usize, Scenario, u64)> = Vec::new();
    for (task_index, def) in catalog.iter().enumerate() {
        for scenario in &scenarios {
            for rep in 0..options.goals_per_scenario {
                let goal_seed = goal_seed_for(options.master_seed, def.id, scenario.index, rep);
                jobs.push((task_index, *scenario, goal_seed));
            }
        }
    }

    let run_one = |(task_index, scenario, goal_seed): &(usize, Scenario, u64)| {
        let def = &catalog[*task_index];
        match instantiate_task(def, scenario, *goal_seed) {
            Err(e) => Err(SkippedTrial {
                task_id: def.id.to_string(),
                scenario_index: scenario.index,
                goal_seed: *goal_seed,
                reason: e.to_string(),
            }),
            Ok(instance) => {
                let result = catch_unwind(AssertUnwindSafe(|| {
                    run_trial(&instance, scenario, *goal_seed, factory, agent_config, prompts)
                }));
                match result {
                    Ok(record) => Ok(record),
                    Err(panic) => {
                        let detail = panic_message(panic);
                        Err(SkippedTrial {
                            task_id: def.id.to_string(),
                            scenario_index: scenario.index,
                            goal_seed: *goal_seed,
                            reason: format!("trial panicked: {detail}"),
                        })
                    }
                }
            }
        }
    };

    let outcomes: Vec<Result<TrialRecord, SkippedTrial>> = if options.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .expect("thread pool construction");
        pool.install(|| jobs.par_iter().map(run_one).collect())
    } else {
        jobs.iter().map(run_one).collect()
    };

    let mut records = Vec::with_capacity(outcomes.len());
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(skip) => skipped.push(skip),
        }
    }

    let task_order: Vec<&str> = catalog.iter().map(|t| t.id).collect();
    let (tasks, groups, overall) = aggregate(&records, &task_order, &skipped);
    SuiteReport {
        suite: options.suite,
        master_seed: options.master_seed,
        tasks,
        groups,
        overall_success_rate: overall,
        skipped,
        records,
    }
}

fn panic_message(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}

/// Rebuilds task and group summaries from trial records (also used by
/// `bench-report` on a trials.jsonl file).
pub fn aggregate(
    records: &[TrialRecord],
    task_order: &[&str],
    skipped: &[SkippedTrial],
) -> (Vec<TaskSummary>, Vec<GroupSummary>, f64) {
    let mut order: Vec<String> = task_order.iter().map(|s| s.to_string()).collect();
    for record in records {
        if !order.iter().any(|id| id == &record.task_id) {
            order.push(record.task_id.clone());
        }
    }

    let mut tasks = Vec::new();
    for task_id in &order {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| &r.task_id == task_id).collect();
        if rows.is_empty() {
            continue;
        }
        let trials = rows.len() as u32;
        let successes = rows.iter().filter(|r| r.evaluation_pass).count() as u32;
        let total_steps: u64 = rows.iter().map(|r| r.steps_completed as u64).sum();
        let total_wall: f64 = rows.iter().map(|r| r.wall_time_s).sum();
        let total_input: u64 = rows.iter().map(|r| r.total_input_tokens).sum();
        let slow = rows.iter().filter(|r| r.mode == ThinkingMode::Slow).count();
        tasks.push(TaskSummary {
            task_id: task_id.clone(),
            group: rows[0].group,
            trials,
            successes,
            success_rate: 100.0 * successes as f64 / trials as f64,
            avg_time_per_step_s: if total_steps > 0 { total_wall / total_steps as f64 } else { 0.0 },
            avg_input_tokens: total_input as f64 / trials as f64,
            slow_mode_fraction: slow as f64 / trials as f64,
            redundant_actions: rows.iter().map(|r| r.redundant_actions as u64).sum(),
            skipped: skipped.iter().filter(|s| &s.task_id == task_id).count() as u32,
        });
    }

    let mut groups = Vec::new();
    for group in TaskGroup::ALL {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.group == group).collect();
        if rows.is_empty() {
            continue;
        }
        let trials = rows.len() as u32;
        let successes = rows.iter().filter(|r| r.evaluation_pass).count() as u32;
        let total_steps: u64 = rows.iter().map(|r| r.steps_completed as u64).sum();
        let total_wall: f64 = rows.iter().map(|r| r.wall_time_s).sum();
        let total_input: u64 = rows.iter().map(|r| r.total_input_tokens).sum();
        let slow = rows.iter().filter(|r| r.mode == ThinkingMode::Slow).count();
        groups.push(GroupSummary {
            group,
            tasks: tasks.iter().filter(|t| t.group == group).count() as u32,
            trials,
            success_rate: 100.0 * successes as f64 / trials as f64,
            avg_time_per_step_s: if total_steps > 0 { total_wall / total_steps as f64 } else { 0.0 },
            avg_input_tokens: total_input as f64 / trials as f64,
            slow_mode_fraction: slow as f64 / trials as f64,
        });
    }

    let overall = if groups.is_empty() {
        0.0
    } else {
        groups.iter().map(|g| g.success_rate).sum::<f64>() / groups.len() as f64
    };
    (tasks, groups, overall)
}

impl SuiteReport {
    /// One `TrialRecord` per line.
    pub fn write_trials_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in &self.records {
            serde_json::to_writer(&mut file, record)?;
            file.write_all(b"\n")?;
        }
        file.flush()
    }

    /// Task rows with the metric columns. The wall-clock column
    /// (`avg_time_per_step_s`) is the only non-deterministic field.
    pub fn write_summary_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.summary_csv())
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "task_id,group,trials,success_rate,avg_time_per_step_s,avg_input_tokens,slow_mode_fraction\n",
        );
        for task in &self.tasks {
            out.push_str(&format!(
                "{},{},{},{:.1},{:.3},{:.1},{:.3}\n",
                task.task_id,
                task.group,
                task.trials,
                task.success_rate,
                task.avg_time_per_step_s,
                task.avg_input_tokens,
                task.slow_mode_fraction
            ));
        }
        out
    }

    /// Group-level table in the ten-group layout.
    pub fn group_table(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.groups.iter().map(|g| g.group.name().to_string()).collect();
        out.push_str(&format!("{:<24} {}\n", "group", header.join("  ")));
        let rates: Vec<String> = self.groups.iter().map(|g| format!("{:>4.0}", g.success_rate)).collect();
        out.push_str(&format!("{:<24} {}  | avg {:.1}\n", "success_rate(%)", rates.join("  "), self.overall_success_rate));
        out
    }
}

/// Suite configuration file (`--config`): JSON with optional fields that
/// override the CLI defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub suite: Option<String>,
    pub master_seed: Option<u64>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub budget: Option<u32>,
    pub mode: Option<String>,
    pub parallel: Option<usize>,
    pub open_loop: Option<bool>,
    pub out_dir: Option<String>,
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("parse {}: {e}", path.display()))
    }
}

pub fn read_trials_jsonl(path: &Path) -> Result<Vec<TrialRecord>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("read {}: {e}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(line)
            .map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        records.push(record);
    }
    Ok(records)
}
