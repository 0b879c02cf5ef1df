//! `tablebot`: run benchmark suites, solve ad-hoc instructions, and replay
//! trial logs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 backend initialization
//! failure, 4 replay divergence.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use tablebot_core::agent::{
    run_trial_with_scene, AgentConfig, ModeOverride, PromptSet, TrialRecord,
};
use tablebot_core::bench::{
    aggregate, ground_instruction, read_trials_jsonl, run_suite, Scenario, Suite, SuiteConfig,
    SuiteRunOptions, TaskInstance,
};
use tablebot_core::primitives::ExecutionOutcome;
use tablebot_core::reasoner::{BackendKind, BackendFactory, FaultMode};
use tablebot_core::replay::{replay_record, ReplayOutcome};
use tablebot_core::world::{spawn_scene, ObjectKind, SceneSnapshot, SceneState, WorldConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "tablebot",
    version,
    about = "Closed-loop tabletop manipulation agent and benchmark suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark suite and write trials.jsonl + summary.csv.
    BenchRun(BenchRunArgs),
    /// Recompute and print the summary tables from a trials.jsonl file.
    BenchReport(BenchReportArgs),
    /// Run a single instruction against a scene and print the trace.
    Solve(SolveArgs),
    /// Re-simulate recorded trials and verify they match their logs.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Reasoner backend: oracle, http, fault-loop, fault-invalid,
    /// fault-wrong, fault-silent.
    #[arg(long)]
    backend: Option<String>,
    /// Model name for the http backend.
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions base URL (defaults to REASONER_BASE_URL).
    #[arg(long)]
    base_url: Option<String>,
}

impl BackendArgs {
    fn kind(&self, fallback_backend: Option<&str>, fallback_model: Option<&str>) -> Result<BackendKind, String> {
        let name = self
            .backend
            .as_deref()
            .or(fallback_backend)
            .unwrap_or("oracle");
        match name {
            "oracle" => Ok(BackendKind::Oracle),
            "http" => Ok(BackendKind::Http {
                base_url: self.base_url.clone(),
                model: self
                    .model
                    .as_deref()
                    .or(fallback_model)
                    .unwrap_or("gpt-4o")
                    .to_string(),
            }),
            other => match other.strip_prefix("fault-").and_then(FaultMode::parse) {
                Some(mode) => Ok(BackendKind::Fault { mode }),
                None => Err(format!("unknown backend '{other}'")),
            },
        }
    }
}

#[derive(Args)]
struct BenchRunArgs {
    /// Suite to run: canonical, robustness, or all.
    #[arg(long)]
    suite: Option<String>,
    /// Master seed for scenario and goal generation.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Invocation budget per trial.
    #[arg(long)]
    budget: Option<u32>,
    /// Thinking mode: auto, fast, or slow.
    #[arg(long)]
    mode: Option<String>,
    /// Disable execution feedback and replanning (ablation).
    #[arg(long)]
    open_loop: bool,
    /// Worker threads for trial execution.
    #[arg(long)]
    parallel: Option<usize>,
    /// Output directory for trials.jsonl and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchReportArgs {
    /// Path to a trials.jsonl file.
    #[arg(long)]
    trials: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// The task instruction.
    #[arg(long)]
    instruction: String,
    /// Scene snapshot JSON file to run against.
    #[arg(long, conflicts_with_all = ["pairs", "seed"])]
    scene: Option<PathBuf>,
    /// Number of block-bowl pairs to spawn.
    #[arg(long)]
    pairs: Option<usize>,
    /// Spawn seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Thinking mode: auto, fast, or slow.
    #[arg(long, default_value = "auto")]
    mode: String,
    /// Invocation budget for the trial.
    #[arg(long, default_value_t = 20)]
    budget: u32,
    /// Write the plan-action trace as JSON lines.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Path to a trials.jsonl file (or a single-record file).
    #[arg(long)]
    trial: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::BenchRun(args) => bench_run(args),
        Command::BenchReport(args) => bench_report(args),
        Command::Solve(args) => solve(args),
        Command::Replay(args) => replay(args),
    }
}

fn parse_mode(name: &str) -> Result<ModeOverride, String> {
    match name {
        "auto" => Ok(ModeOverride::Auto),
        "fast" => Ok(ModeOverride::Fast),
        "slow" => Ok(ModeOverride::Slow),
        other => Err(format!("unknown mode '{other}' (expected auto, fast, or slow)")),
    }
}

fn config_error(message: String) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_CONFIG)
}

fn bench_run(args: BenchRunArgs) -> ExitCode {
    let file_config = match &args.config {
        None => SuiteConfig::default(),
        Some(path) => match SuiteConfig::load(path) {
            Ok(config) => config,
            Err(e) => return config_error(e),
        },
    };

    let suite_name = args.suite.as_deref().or(file_config.suite.as_deref()).unwrap_or("all");
    let Some(suite) = Suite::parse(suite_name) else {
        return config_error(format!("unknown suite '{suite_name}'"));
    };
    let master_seed = args.seed.or(file_config.master_seed).unwrap_or(42);
    let budget = args.budget.or(file_config.budget).unwrap_or(20);
    if budget == 0 {
        return config_error("budget must be at least 1".to_string());
    }
    let mode_name = args.mode.as_deref().or(file_config.mode.as_deref()).unwrap_or("auto");
    let mode_override = match parse_mode(mode_name) {
        Ok(mode) => mode,
        Err(e) => return config_error(e),
    };
    let parallel = args.parallel.or(file_config.parallel).unwrap_or(1).max(1);
    let open_loop = args.open_loop || file_config.open_loop.unwrap_or(false);
    let out_dir = args
        .out
        .clone()
        .or_else(|| file_config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let kind = match args.backend.kind(file_config.backend.as_deref(), file_config.model.as_deref()) {
        Ok(kind) => kind,
        Err(e) => return config_error(e),
    };
    let factory = match BackendFactory::new(kind) {
        Ok(factory) => factory,
        Err(e) => {
            eprintln!("error: backend initialization failed: {e}");
            return ExitCode::from(EXIT_BACKEND);
        }
    };

    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return config_error(format!("cannot create output directory {}: {e}", out_dir.display()));
    }

    let agent_config = AgentConfig {
        invocation_budget: budget,
        mode_override,
        open_loop,
        ..AgentConfig::default()
    };
    let mut options = SuiteRunOptions::new(suite, master_seed);
    options.parallelism = parallel;
    let prompts = prompt_set();

    let report = run_suite(&factory, &agent_config, &prompts, &options);

    let trials_path = out_dir.join("trials.jsonl");
    let summary_path = out_dir.join("summary.csv");
    if let Err(e) = report.write_trials_jsonl(&trials_path) {
        return config_error(format!("cannot write {}: {e}", trials_path.display()));
    }
    if let Err(e) = report.write_summary_csv(&summary_path) {
        return config_error(format!("cannot write {}: {e}", summary_path.display()));
    }

    println!(
        "suite={suite_name} seed={master_seed} trials={} skipped={}",
        report.records.len(),
        report.skipped.len()
    );
    print!("{}", report.group_table());
    println!("wrote {} and {}", trials_path.display(), summary_path.display());
    ExitCode::SUCCESS
}

fn bench_report(args: BenchReportArgs) -> ExitCode {
    let records = match read_trials_jsonl(&args.trials) {
        Ok(records) => records,
        Err(e) => return config_error(e),
    };
    if records.is_empty() {
        return config_error("no trial records found".to_string());
    }
    let (tasks, groups, overall) = aggregate(&records, &[], &[]);
    println!(
        "{:<24} {:>6} {:>9} {:>14} {:>12} {:>10}",
        "task_id", "trials", "success%", "time_per_step", "input_toks", "slow_frac"
    );
    for task in &tasks {
        println!(
            "{:<24} {:>6} {:>9.1} {:>14.3} {:>12.1} {:>10.3}",
            task.task_id,
            task.trials,
            task.success_rate,
            task.avg_time_per_step_s,
            task.avg_input_tokens,
            task.slow_mode_fraction
        );
    }
    println!();
    println!(
        "{:<6} {:>6} {:>9} {:>14} {:>12} {:>10}",
        "group", "trials", "success%", "time_per_step", "input_toks", "slow_frac"
    );
    for group in &groups {
        println!(
            "{:<6} {:>6} {:>9.1} {:>14.3} {:>12.1} {:>10.3}",
            group.group.name(),
            group.trials,
            group.success_rate,
            group.avg_time_per_step_s,
            group.avg_input_tokens,
            group.slow_mode_fraction
        );
    }
    println!("\noverall success rate (mean over groups): {overall:.1}%");
    ExitCode::SUCCESS
}

fn prompt_set() -> PromptSet {
    let dir = Path::new("prompts");
    if dir.is_dir() {
        match PromptSet::load_dir(dir) {
            Ok(set) => return set,
            Err(e) => eprintln!("warning: cannot load prompts/ ({e}); using built-in templates"),
        }
    }
    PromptSet::builtin()
}

fn solve(args: SolveArgs) -> ExitCode {
    let mode_override = match parse_mode(&args.mode) {
        Ok(mode) => mode,
        Err(e) => return config_error(e),
    };
    if args.budget == 0 {
        return config_error("budget must be at least 1".to_string());
    }

    let (scene, scenario) = match &args.scene {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(text) => text,
                Err(e) => return config_error(format!("cannot read {}: {e}", path.display())),
            };
            let snapshot: SceneSnapshot = match serde_json::from_str(&text) {
                Ok(snapshot) => snapshot,
                Err(e) => return config_error(format!("malformed scene file {}: {e}", path.display())),
            };
            let scene = match SceneState::from_snapshot(&snapshot) {
                Ok(scene) => scene,
                Err(e) => return config_error(format!("invalid scene: {e}")),
            };
            let n_pairs = scene.objects().iter().filter(|o| o.kind == ObjectKind::Block).count();
            let scenario = Scenario { index: 0, n_pairs, seed: snapshot.seed };
            (scene, scenario)
        }
        None => {
            let pairs = args.pairs.unwrap_or(3);
            let seed = args.seed.unwrap_or(0);
            let scenario = Scenario { index: 0, n_pairs: pairs, seed };
            match spawn_scene(&WorldConfig::default(), pairs, seed) {
                Ok(scene) => (scene, scenario),
                Err(e) => return config_error(format!("cannot spawn scene: {e}")),
            }
        }
    };

    let grounded = ground_instruction(&args.instruction, &scene);
    let kind = match args.backend.kind(None, None) {
        Ok(kind) => kind,
        Err(e) => return config_error(e),
    };
    if grounded.is_none() && kind == BackendKind::Oracle {
        return config_error(
            "the oracle backend needs a recognizable instruction; try an http backend".to_string(),
        );
    }
    let ungraded = grounded.is_none();
    let task = grounded.unwrap_or_else(|| TaskInstance {
        task_id: "adhoc_ungraded".to_string(),
        group: tablebot_core::bench::TaskGroup::SM,
        instruction: args.instruction.clone(),
        goal: Default::default(),
        required: Vec::new(),
        feasibility: tablebot_core::bench::Feasibility::Feasible,
        failure: Default::default(),
        difficulty: 3.0,
    });

    let factory = match BackendFactory::new(kind) {
        Ok(factory) => factory,
        Err(e) => {
            eprintln!("error: backend initialization failed: {e}");
            return ExitCode::from(EXIT_BACKEND);
        }
    };
    let agent_config = AgentConfig {
        invocation_budget: args.budget,
        mode_override,
        ..AgentConfig::default()
    };
    let record = run_trial_with_scene(
        &task,
        scene,
        &scenario,
        0,
        &factory,
        &agent_config,
        &prompt_set(),
    );

    print_trial(&record, ungraded);
    if let Some(path) = &args.trace_out {
        if let Err(e) = std::fs::write(path, record.memory.to_trace_jsonl()) {
            return config_error(format!("cannot write {}: {e}", path.display()));
        }
        println!("trace written to {}", path.display());
    }
    ExitCode::SUCCESS
}

fn print_trial(record: &TrialRecord, ungraded: bool) {
    println!("instruction: {}", record.instruction);
    println!(
        "mode: {} (difficulty {:.1}{})",
        record.mode.as_str(),
        record.predicted_difficulty,
        if record.mode_overridden { ", overridden" } else { "" }
    );
    println!("trace:");
    for step in record.memory.steps() {
        let outcome = match &step.outcome {
            None => "rejected before execution".to_string(),
            Some(ExecutionOutcome::Observed { observation }) => {
                format!("observed {} objects", observation.entries.len())
            }
            Some(ExecutionOutcome::Moved { object, achieved, dropped, .. }) => format!(
                "moved {object} to {achieved}{}",
                if *dropped { " (dropped)" } else { "" }
            ),
            Some(ExecutionOutcome::Finished { status, message }) => {
                format!("finish {status}: {message}")
            }
            Some(ExecutionOutcome::Failed { reason }) => format!("failed: {reason}"),
        };
        println!(
            "  [{}] {} -> {}{}",
            step.index,
            step.call.wire_json(),
            outcome,
            if step.superseded { "  [superseded]" } else { "" }
        );
        if let Some(feedback) = &step.feedback {
            for line in feedback.content.lines().take(2) {
                println!("        feedback: {line}");
            }
        }
    }
    for rationale in record.memory.rationales() {
        println!("  rationale at invocation {}:", rationale.invocation_index);
        for line in rationale.text.lines().take(3) {
            println!("        {line}");
        }
        println!("        ...");
    }
    println!("predicted status: {}", record.predicted_status);
    if ungraded {
        println!("verdict: n/a (instruction not grounded; no goal model)");
    } else {
        println!("verdict: {}", if record.evaluation_pass { "pass" } else { "fail" });
        for eval in &record.per_object {
            println!("  {}: {:.4} m from goal", eval.id, eval.distance);
        }
    }
    println!(
        "invocations: {} / {}   input tokens: {}   steps completed: {}",
        record.invocation_count, record.budget, record.total_input_tokens, record.steps_completed
    );
}

fn replay(args: ReplayArgs) -> ExitCode {
    let records = match read_trials_jsonl(&args.trial) {
        Ok(records) => records,
        Err(e) => return config_error(e),
    };
    if records.is_empty() {
        return config_error("no trial records found".to_string());
    }
    for (line, record) in records.iter().enumerate() {
        match replay_record(record) {
            Ok(ReplayOutcome::Match) => {}
            Ok(ReplayOutcome::Divergence { step_index, detail }) => {
                let step = step_index
                    .map(|i| format!("step {i}"))
                    .unwrap_or_else(|| "final scene".to_string());
                eprintln!(
                    "divergence at line {} ({} {} seed {}): {step}: {detail}",
                    line + 1,
                    record.task_id,
                    record.scenario_index,
                    record.scenario_seed
                );
                return ExitCode::from(EXIT_DIVERGENCE);
            }
            Err(e) => {
                eprintln!("replay error at line {}: {e}", line + 1);
                return ExitCode::from(EXIT_DIVERGENCE);
            }
        }
    }
    println!("replayed {} trials: all match", records.len());
    ExitCode::SUCCESS
}
