//! `foresight`: single entry point for the guidance service, the edge
//! loop, data preprocessing, the evaluation suite, and the sampler
//! benchmark.
//!
//! Exit codes: 0 success, 1 task-level failure, 2 usage or
//! configuration error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use foresight_core::datapipe::{
    aggregate_scores, dataset_stats, load_manifests, read_score_records, sample_pairs,
    write_pairs, OffsetPolicy, TrainingPair,
};
use foresight_core::domain::{ForesightContract, PolicyContract, SubtaskPlanner};
use foresight_core::edgecloud::edge::{run_edge_loop, LoopConfig, Termination, Transport};
use foresight_core::edgecloud::server::{serve, ServiceCore};
use foresight_core::evalharness::{
    default_configs, run_suite, shipped_suite, EvalError, Suite,
};
use foresight_core::flow::{
    bench_steps, render_bench, FlowForesight, OracleForesight, PointMassField, QuadraticField,
    VelocityField,
};
use foresight_core::gridworld::{
    generate_episode, perturb_scene, render, ScenarioSpec, HEAD_CAMERA_ID,
};
use foresight_core::planner::RulePlanner;
use foresight_core::policies::{GoalImagePolicy, TextPolicy};

#[derive(Parser)]
#[command(name = "foresight", version, about = "Closed-loop visual foresight planning tools")]
struct Cli {
    /// Seed for every randomized choice the subcommand makes.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// quiet | info | debug
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    /// Directory for generated files (also via FORESIGHT_OUTPUT_DIR).
    #[arg(long, global = true, env = "FORESIGHT_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ForesightKind {
    Oracle,
    Flow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PolicyChoice {
    Goal,
    Text,
    Expert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    Full,
    TextOnly,
    TaskOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FieldChoice {
    Pointmass,
    Quadratic,
}

#[derive(Args)]
struct ServeArgs {
    /// Address to listen on (also via FORESIGHT_BIND).
    #[arg(long, env = "FORESIGHT_BIND", default_value = "127.0.0.1:7447")]
    bind: String,
    #[arg(long, value_enum, default_value_t = ForesightKind::Oracle)]
    foresight: ForesightKind,
    /// Planner implementation; only "rules" is available.
    #[arg(long, default_value = "rules")]
    planner: String,
}

#[derive(Args)]
struct EdgeArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Address of a running service.
    #[arg(long, conflicts_with = "inprocess")]
    connect: Option<String>,
    /// Run the service inside this process.
    #[arg(long)]
    inprocess: bool,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Goal)]
    policy: PolicyChoice,
    #[arg(long, value_enum, default_value_t = Ablation::Full)]
    ablation: Ablation,
    /// Foresight generator for the in-process service.
    #[arg(long, value_enum, default_value_t = ForesightKind::Oracle)]
    foresight: ForesightKind,
}

#[derive(Args)]
struct DatapipeArgs {
    /// Directory scanned recursively for episode manifests.
    #[arg(long)]
    manifests: PathBuf,
    #[arg(long, value_enum, default_value_t = OffsetChoice::Half)]
    offset: OffsetChoice,
    /// Print the dataset statistics report.
    #[arg(long)]
    stats: bool,
    /// Write sampled pairs to this file (JSON lines).
    #[arg(long)]
    pairs_out: Option<PathBuf>,
    /// Aggregate a foresight score CSV (image_id,split,fidelity,quality).
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OffsetChoice {
    Half,
    Final,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of scenario JSON files; defaults to the shipped suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    settings: u32,
    /// Comma-separated configuration names (full,text-only,task-only).
    #[arg(long, default_value = "full,text-only,task-only")]
    configs: String,
    /// Write per-trial replay records under the output directory.
    #[arg(long)]
    records: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = FieldChoice::Pointmass)]
    field: FieldChoice,
    /// Comma-separated Euler step counts.
    #[arg(long, default_value = "1,2,4,8,16")]
    steps: String,
    /// Sampler runs per step count (medians reported).
    #[arg(long, default_value_t = 21)]
    runs: u32,
}

#[derive(Args)]
struct GenEpisodesArgs {
    /// Output directory; falls back to --output-dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    count: u32,
    /// Head-camera frames per second; must divide the 10 Hz control rate.
    #[arg(long, default_value_t = 10)]
    fps: u32,
    /// Generate from a single scenario file instead of the shipped suite.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct GenSuiteArgs {
    /// Output directory; falls back to --output-dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the planner+foresight guidance service.
    Serve(ServeArgs),
    /// Run one episode of the edge control loop.
    Edge(EdgeArgs),
    /// Episode ingestion, pair sampling, statistics, score aggregation.
    Datapipe(DatapipeArgs),
    /// Run the evaluation suite across configurations.
    Eval(EvalArgs),
    /// Sampler latency and error benchmark over step counts.
    BenchSteps(BenchArgs),
    /// Generate gridworld episodes with manifests.
    GenEpisodes(GenEpisodesArgs),
    /// Write the shipped scenario suite as JSON files.
    GenSuite(GenSuiteArgs),
}

const EXIT_TASK_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn make_foresight(kind: ForesightKind) -> Arc<dyn ForesightContract> {
    match kind {
        ForesightKind::Oracle => Arc::new(OracleForesight::default()),
        ForesightKind::Flow => Arc::new(FlowForesight::default()),
    }
}

fn cmd_serve(args: &ServeArgs, log_level: &str) -> ExitCode {
    if args.planner != "rules" {
        return usage_error(&format!("unknown planner {:?}; available: rules", args.planner));
    }
    let planner: Arc<dyn SubtaskPlanner> = Arc::new(RulePlanner::default());
    let handle = match serve(args.bind.as_str(), planner, Some(make_foresight(args.foresight))) {
        Ok(h) => h,
        Err(e) => return usage_error(&format!("cannot bind {}: {e}", args.bind)),
    };
    if log_level != "quiet" {
        println!("listening on {}", handle.local_addr());
    }
    handle.wait();
    ExitCode::SUCCESS
}

fn cmd_edge(args: &EdgeArgs, seed: u64, log_level: &str) -> ExitCode {
    let spec = match ScenarioSpec::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => return usage_error(&format!("scenario {}: {e}", args.scenario.display())),
    };
    let transport = match (&args.connect, args.inprocess) {
        (Some(addr), false) => Transport::Socket(addr.clone()),
        (None, _) => {
            let core = Arc::new(ServiceCore::new(
                Arc::new(RulePlanner::default()) as Arc<dyn SubtaskPlanner>,
                Some(make_foresight(args.foresight)),
            ));
            Transport::InProcess(core)
        }
        (Some(_), true) => return usage_error("--connect conflicts with --inprocess"),
    };
    let suite = shipped_suite();
    let policy: Box<dyn PolicyContract> = match args.policy {
        PolicyChoice::Goal => Box::new(GoalImagePolicy::default()),
        PolicyChoice::Text => Box::new(TextPolicy::with_grounding(suite.grounding)),
        PolicyChoice::Expert => Box::new(TextPolicy::unrestricted()),
    };
    let mut config = LoopConfig::new(transport);
    config.session_id = seed;
    match args.ablation {
        Ablation::Full => {}
        Ablation::TextOnly => config.foresight_enabled = false,
        Ablation::TaskOnly => {
            config.foresight_enabled = false;
            config.planner_text_enabled = false;
        }
    }
    let result = run_edge_loop(&spec.initial, &spec.task_text, policy.as_ref(), &config);
    if log_level != "quiet" {
        println!(
            "scenario: {}\ntermination: {:?}\nchunks: {}\nguidance packets: {}\nwall ms: {:.1}",
            spec.name,
            result.termination,
            result.chunks.len(),
            result.guidance.len(),
            result.wall_ms
        );
    }
    match result.termination {
        Termination::Done => ExitCode::SUCCESS,
        _ => ExitCode::from(EXIT_TASK_FAILURE),
    }
}

fn cmd_datapipe(args: &DatapipeArgs, output_dir: Option<&Path>) -> ExitCode {
    let manifests = match load_manifests(&args.manifests) {
        Ok(m) => m,
        Err(e) => {
            return usage_error(&format!("loading manifests in {}: {e}", args.manifests.display()))
        }
    };
    for m in &manifests {
        if let Err(e) = m.validate() {
            return usage_error(&format!("manifest {}: {e}", m.episode_id));
        }
    }
    let policy = match args.offset {
        OffsetChoice::Half => OffsetPolicy::HalfLength,
        OffsetChoice::Final => OffsetPolicy::FinalState,
    };
    if args.stats {
        match dataset_stats(&manifests) {
            Ok(report) => print!("{}", report.render()),
            Err(e) => return usage_error(&e.to_string()),
        }
    }
    let pairs_out = args.pairs_out.clone().or_else(|| output_dir.map(|d| d.join("pairs.jsonl")));
    if let Some(path) = pairs_out {
        let mut pairs: Vec<TrainingPair> = Vec::new();
        for m in &manifests {
            match sample_pairs(m, policy) {
                Ok(p) => pairs.extend(p),
                Err(e) => return usage_error(&e.to_string()),
            }
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                if let Err(e) = std::fs::create_dir_all(parent) {
                    return usage_error(&format!("creating {}: {e}", parent.display()));
                }
            }
        }
        if let Err(e) = write_pairs(&path, &pairs) {
            return usage_error(&format!("writing {}: {e}", path.display()));
        }
        println!("wrote {} pairs to {}", pairs.len(), path.display());
    }
    if let Some(csv) = &args.scores {
        let text = match std::fs::read_to_string(csv) {
            Ok(t) => t,
            Err(e) => return usage_error(&format!("reading {}: {e}", csv.display())),
        };
        match read_score_records(&text) {
            Ok(records) => print!("{}", aggregate_scores(&records).render()),
            Err(e) => return usage_error(&e.to_string()),
        }
    }
    ExitCode::SUCCESS
}

fn load_suite_dir(dir: &Path) -> Result<Suite, String> {
    let mut scenarios = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("reading {}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    for path in entries {
        let spec = ScenarioSpec::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        scenarios.push(spec);
    }
    if scenarios.is_empty() {
        return Err(format!("no scenario files in {}", dir.display()));
    }
    // the grounding table is the set of subtask texts appearing in
    // in-distribution (untagged) scenarios
    let grounding: BTreeSet<String> = scenarios
        .iter()
        .filter(|s| s.ood_tags.is_empty())
        .flat_map(|s| s.subtask_plan.iter().map(|st| st.instruction.clone()))
        .collect();
    Ok(Suite { scenarios, grounding })
}

fn cmd_eval(args: &EvalArgs, seed: u64, output_dir: Option<&Path>) -> ExitCode {
    let suite = match &args.suite {
        Some(dir) => match load_suite_dir(dir) {
            Ok(s) => s,
            Err(e) => return usage_error(&e),
        },
        None => shipped_suite(),
    };
    let all = default_configs();
    let mut configs = Vec::new();
    for name in args.configs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match all.iter().find(|c| c.name == name) {
            Some(c) => configs.push(c.clone()),
            None => return usage_error(&format!("unknown configuration {name:?}")),
        }
    }
    if configs.is_empty() {
        return usage_error("no configurations selected");
    }
    let record_dir = if args.records {
        Some(output_dir.map_or_else(|| PathBuf::from("eval_records"), |d| d.join("eval_records")))
    } else {
        None
    };
    match run_suite(&suite, &configs, args.settings, seed, record_dir.as_deref()) {
        Ok((_, report)) => {
            print!("{report}");
            if let Some(dir) = record_dir {
                println!("\ntrial records in {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(EvalError::InputError(msg)) => usage_error(&msg),
        Err(EvalError::Io(e)) => usage_error(&e.to_string()),
    }
}

fn cmd_bench(args: &BenchArgs, seed: u64) -> ExitCode {
    let mut steps = Vec::new();
    for part in args.steps.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.parse::<u32>() {
            Ok(n) if n >= 1 => steps.push(n),
            _ => return usage_error(&format!("bad step count {part:?}")),
        }
    }
    if steps.is_empty() {
        return usage_error("empty step list");
    }
    if args.runs == 0 {
        return usage_error("--runs must be >= 1");
    }
    let field: Box<dyn VelocityField> = match args.field {
        FieldChoice::Pointmass => Box::new(PointMassField),
        FieldChoice::Quadratic => Box::new(QuadraticField),
    };
    let suite = shipped_suite();
    let condition =
        render(&suite.scenarios[0].initial, HEAD_CAMERA_ID).expect("head camera renders");
    match bench_steps(&condition, seed, field.as_ref(), &steps, args.runs) {
        Ok(rows) => {
            print!("{}", render_bench(&rows));
            ExitCode::SUCCESS
        }
        Err(e) => usage_error(&e.to_string()),
    }
}

fn cmd_gen_episodes(
    args: &GenEpisodesArgs,
    seed: u64,
    output_dir: Option<&Path>,
) -> ExitCode {
    let Some(out) = args.out.clone().or_else(|| output_dir.map(Path::to_path_buf)) else {
        return usage_error("--out or --output-dir required");
    };
    let base_specs: Vec<ScenarioSpec> = match &args.scenario {
        Some(path) => match ScenarioSpec::load(path) {
            Ok(s) => vec![s],
            Err(e) => return usage_error(&format!("{}: {e}", path.display())),
        },
        None => shipped_suite().scenarios,
    };
    for i in 0..args.count {
        let base = &base_specs[i as usize % base_specs.len()];
        let episode_seed = seed.wrapping_add(u64::from(i));
        let mut spec = base.clone();
        if i as usize >= base_specs.len() {
            spec.initial = perturb_scene(&base.initial, episode_seed);
        }
        let record = match generate_episode(&spec, args.fps, episode_seed) {
            Ok(r) => r,
            Err(e) => return usage_error(&format!("episode {i} ({}): {e}", spec.name)),
        };
        let dir = out.join(format!("episode_{i:03}"));
        if let Err(e) = record.write_to_dir(&dir) {
            return usage_error(&format!("writing {}: {e}", dir.display()));
        }
    }
    println!("wrote {} episodes to {}", args.count, out.display());
    ExitCode::SUCCESS
}

fn cmd_gen_suite(args: &GenSuiteArgs, output_dir: Option<&Path>) -> ExitCode {
    let Some(out) = args.out.clone().or_else(|| output_dir.map(Path::to_path_buf)) else {
        return usage_error("--out or --output-dir required");
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        return usage_error(&format!("creating {}: {e}", out.display()));
    }
    let suite = shipped_suite();
    for spec in &suite.scenarios {
        let path = out.join(format!("{}.json", spec.name));
        if let Err(e) = spec.save(&path) {
            return usage_error(&format!("writing {}: {e}", path.display()));
        }
    }
    let grounding: Vec<&str> = suite.grounding.iter().map(String::as_str).collect();
    if let Err(e) = std::fs::write(out.join("grounding.txt"), grounding.join("\n") + "\n") {
        return usage_error(&format!("writing grounding table: {e}"));
    }
    println!("wrote {} scenarios to {}", suite.scenarios.len(), out.display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Serve(args) => cmd_serve(args, &cli.log_level),
        Command::Edge(args) => cmd_edge(args, cli.seed, &cli.log_level),
        Command::Datapipe(args) => cmd_datapipe(args, cli.output_dir.as_deref()),
        Command::Eval(args) => cmd_eval(args, cli.seed, cli.output_dir.as_deref()),
        Command::BenchSteps(args) => cmd_bench(args, cli.seed),
        Command::GenEpisodes(args) => cmd_gen_episodes(args, cli.seed, cli.output_dir.as_deref()),
        Command::GenSuite(args) => cmd_gen_suite(args, cli.output_dir.as_deref()),
    }
}
