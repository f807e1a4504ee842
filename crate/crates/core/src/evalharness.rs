//! Atomic-action scoring rubric and multi-configuration suite runner.
//!
//! A trial is one episode of the edge loop on one initial setting under
//! one configuration. Scoring counts successful atomic actions (grasp
//! and place at the scoring granularity), deducts one unit per
//! undesired grasp, and floors at zero. The shipped suite pairs
//! in-distribution scenarios with spatially permuted, compositionally
//! novel, and jointly shifted ones.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, ForesightContract, PolicyContract, SubtaskPlanner};
use crate::edgecloud::edge::{run_edge_loop, EpisodeResult, LoopConfig, Termination, Transport};
use crate::edgecloud::server::ServiceCore;
use crate::flow::OracleForesight;
use crate::gridworld::{
    perturb_scene, simulate_subtask, step, AtomicActionSpec, Cell, Color, ObjectId, ObjectPlace,
    OodTag, Region, RegionKind, ScenarioSpec, Scene, SceneObject, Shape, SubtaskStep,
};
use crate::planner::RulePlanner;
use crate::policies::{GoalImagePolicy, TextPolicy};

/// Trials a single atomic action may consume before it counts as failed.
pub const MAX_TRIALS_PER_ATOMIC: u32 = 5;
/// Rubric floor on initial settings per scenario.
pub const MIN_SETTINGS: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomicOutcome {
    Success,
    FailedAfterTrials(u32),
    VoidedByRuin,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialLog {
    pub scenario: String,
    pub configuration: String,
    pub outcomes: Vec<AtomicOutcome>,
    pub undesired_count: u32,
    pub ruined: bool,
}

/// max(0, (#Success − undesired) / total); voided and failed atomics
/// count as plain failures.
pub fn score_trial(log: &TrialLog) -> f64 {
    let total = log.outcomes.len();
    if total == 0 {
        return 0.0;
    }
    let successes =
        log.outcomes.iter().filter(|o| matches!(o, AtomicOutcome::Success)).count() as f64;
    let raw = (successes - f64::from(log.undesired_count)) / total as f64;
    raw.max(0.0)
}

/// True iff the transition grasped an object outside the targeted set.
/// Release events are never undesired.
pub fn detect_undesired(before: &Scene, after: &Scene, targets: &BTreeSet<ObjectId>) -> bool {
    match (before.gripper.holding, after.gripper.holding) {
        (None, Some(grabbed)) => !targets.contains(&grabbed),
        _ => false,
    }
}

fn atomic_target(atomic: &AtomicActionSpec) -> ObjectId {
    match atomic {
        AtomicActionSpec::ApproachGrasp(id) => *id,
        AtomicActionSpec::MovePlace(id, _) => *id,
    }
}

fn atomic_satisfied(scene: &Scene, atomic: &AtomicActionSpec) -> bool {
    match atomic {
        AtomicActionSpec::ApproachGrasp(id) => scene.gripper.holding == Some(*id),
        AtomicActionSpec::MovePlace(id, region) => match scene.objects.get(id) {
            Some(o) => match o.place {
                ObjectPlace::Cell(c) => {
                    scene.regions.get(region).is_some_and(|r| r.cells.contains(&c))
                }
                ObjectPlace::Held => false,
            },
            None => false,
        },
    }
}

/// Replays the episode's action stream against the initial scene and
/// tracks each atomic action. Success is sticky and order-independent
/// (the planner may legitimately reorder subtasks after a spatial
/// perturbation); an attempt is one chunk whose grasp or release events
/// touch a still-pending atomic's target, and attempts are capped at
/// the rubric maximum.
pub fn derive_trial_log(
    spec: &ScenarioSpec,
    initial: &Scene,
    result: &EpisodeResult,
    configuration: &str,
) -> TrialLog {
    let atomics = &spec.atomic_actions;
    let mut satisfied = vec![false; atomics.len()];
    let mut attempts = vec![0u32; atomics.len()];
    let mut undesired_count = 0u32;
    let mut scene = initial.clone();

    for chunk in &result.chunks {
        // objects touched by this chunk's grasp/release events
        let mut touched: BTreeSet<ObjectId> = BTreeSet::new();
        for action in &chunk.actions {
            let next = step(&scene, *action);
            if matches!(action, Action::Grasp | Action::Release)
                && (next.gripper.holding != scene.gripper.holding)
            {
                let pending: BTreeSet<ObjectId> = atomics
                    .iter()
                    .zip(&satisfied)
                    .filter(|(_, done)| !**done)
                    .map(|(a, _)| atomic_target(a))
                    .collect();
                if detect_undesired(&scene, &next, &pending) {
                    undesired_count += 1;
                }
                if let Some(obj) = next.gripper.holding.or(scene.gripper.holding) {
                    touched.insert(obj);
                }
            }
            scene = next;
            for (i, atomic) in atomics.iter().enumerate() {
                if !satisfied[i] && atomic_satisfied(&scene, atomic) {
                    satisfied[i] = true;
                }
            }
        }
        // one consumed trial per chunk, attributed to the first pending
        // atomic whose target the chunk manipulated
        if let Some(i) = atomics.iter().enumerate().position(|(i, a)| {
            !satisfied[i] && touched.contains(&atomic_target(a))
        }) {
            if attempts[i] < MAX_TRIALS_PER_ATOMIC {
                attempts[i] += 1;
            }
        }
    }

    let outcomes = satisfied
        .iter()
        .zip(&attempts)
        .map(|(done, tries)| {
            if *done {
                AtomicOutcome::Success
            } else {
                AtomicOutcome::FailedAfterTrials(*tries)
            }
        })
        .collect();
    TrialLog {
        scenario: spec.name.clone(),
        configuration: configuration.to_string(),
        outcomes,
        undesired_count,
        ruined: false,
    }
}

/// Which local policy a configuration runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    /// Goal-image visual servoing (ignores text).
    GoalImage,
    /// Text-conditioned policy restricted to the suite grounding table.
    GroundedText,
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub name: String,
    pub policy: PolicyKind,
    pub planner_text_enabled: bool,
    pub foresight_enabled: bool,
}

/// The three-row comparison mirrored by the report: full guidance,
/// subtask text only, raw task text only.
pub fn default_configs() -> Vec<EvalConfig> {
    vec![
        EvalConfig {
            name: "full".into(),
            policy: PolicyKind::GoalImage,
            planner_text_enabled: true,
            foresight_enabled: true,
        },
        EvalConfig {
            name: "text-only".into(),
            policy: PolicyKind::GroundedText,
            planner_text_enabled: true,
            foresight_enabled: false,
        },
        EvalConfig {
            name: "task-only".into(),
            policy: PolicyKind::GroundedText,
            planner_text_enabled: false,
            foresight_enabled: false,
        },
    ]
}

#[derive(Clone, Debug)]
pub struct Suite {
    pub scenarios: Vec<ScenarioSpec>,
    /// Canonical instruction texts present in the training
    /// configurations; the grounded text policy refuses anything else.
    pub grounding: BTreeSet<String>,
}

fn obj(color: Color, shape: Shape, x: u8, y: u8) -> SceneObject {
    SceneObject { color, shape, place: ObjectPlace::Cell(Cell::new(x, y)) }
}

fn region(kind: RegionKind, color: Color, cells: &[(u8, u8)]) -> Region {
    Region {
        kind,
        color,
        cells: cells.iter().map(|(x, y)| Cell::new(*x, *y)).collect(),
        closed: false,
    }
}

fn scenario(
    name: &str,
    initial: Scene,
    task_text: &str,
    subtasks: &[&str],
    atomic_actions: Vec<AtomicActionSpec>,
    ood_tags: &[OodTag],
) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        initial,
        task_text: task_text.into(),
        subtask_plan: subtasks
            .iter()
            .map(|s| SubtaskStep { instruction: (*s).to_string() })
            .collect(),
        atomic_actions,
        ood_tags: ood_tags.iter().copied().collect(),
    }
}

/// The five-scenario regression suite: two in-distribution scenarios
/// (whose subtask texts form the grounding table), one spatial
/// permutation, one novel composition, and one joint shift.
pub fn shipped_suite() -> Suite {
    use AtomicActionSpec::{ApproachGrasp, MovePlace};

    let mut pick = Scene::empty(12, 9);
    pick.objects.insert(1, obj(Color::Red, Shape::Block, 2, 3));
    pick.objects.insert(2, obj(Color::Green, Shape::Ball, 6, 2));
    pick.regions.insert(1, region(RegionKind::Box, Color::Blue, &[(9, 6), (10, 6), (9, 7)]));
    let pick_place = scenario(
        "pick_place",
        pick,
        "put the red block in the blue box",
        &["put the red block in the blue box"],
        vec![ApproachGrasp(1), MovePlace(1, 1)],
        &[],
    );

    let mut clean = Scene::empty(12, 9);
    clean.objects.insert(1, obj(Color::Yellow, Shape::Cup, 3, 5));
    clean.objects.insert(2, obj(Color::Orange, Shape::Can, 8, 1));
    clean.regions.insert(1, region(RegionKind::Bin, Color::White, &[(11, 0), (11, 1)]));
    // row-major over object cells: the can at (8,1) precedes the cup at (3,5)
    let clean_table = scenario(
        "clean_table",
        clean,
        "clean the table",
        &["put the orange can in the white bin", "put the yellow cup in the white bin"],
        vec![ApproachGrasp(2), MovePlace(2, 1), ApproachGrasp(1), MovePlace(1, 1)],
        &[],
    );

    let mut spatial = Scene::empty(12, 9);
    spatial.objects.insert(1, obj(Color::Red, Shape::Block, 10, 8));
    spatial.objects.insert(2, obj(Color::Green, Shape::Ball, 1, 1));
    spatial.regions.insert(1, region(RegionKind::Box, Color::Blue, &[(0, 4), (0, 5)]));
    let spatial = scenario(
        "spatial",
        spatial,
        "put the red block in the blue box",
        &["put the red block in the blue box"],
        vec![ApproachGrasp(1), MovePlace(1, 1)],
        &[OodTag::Spatial],
    );

    let mut comp = Scene::empty(12, 9);
    comp.objects.insert(1, obj(Color::Red, Shape::Block, 4, 4));
    comp.objects.insert(2, obj(Color::Orange, Shape::Can, 7, 3));
    comp.regions.insert(1, region(RegionKind::Box, Color::Blue, &[(9, 6), (10, 6)]));
    // "orange can into the blue box" never appears in training subtasks
    let comp = scenario(
        "comp",
        comp,
        "put the red block in the blue box then put the orange can in the blue box",
        &["put the red block in the blue box", "put the orange can in the blue box"],
        vec![ApproachGrasp(1), MovePlace(1, 1), ApproachGrasp(2), MovePlace(2, 1)],
        &[OodTag::Comp],
    );

    let mut joint = Scene::empty(12, 9);
    joint.objects.insert(1, obj(Color::Yellow, Shape::Cup, 1, 0));
    joint.objects.insert(2, obj(Color::Green, Shape::Ball, 11, 8));
    joint.regions.insert(1, region(RegionKind::Bin, Color::White, &[(5, 8), (6, 8)]));
    let joint = scenario(
        "joint",
        joint,
        "put the yellow cup in the white bin then put the green ball in the white bin",
        &["put the yellow cup in the white bin", "put the green ball in the white bin"],
        vec![ApproachGrasp(1), MovePlace(1, 1), ApproachGrasp(2), MovePlace(2, 1)],
        &[OodTag::Joint],
    );

    let grounding: BTreeSet<String> = [&pick_place, &clean_table]
        .iter()
        .flat_map(|s| s.subtask_plan.iter().map(|st| st.instruction.clone()))
        .collect();

    Suite { scenarios: vec![pick_place, clean_table, spatial, comp, joint], grounding }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialScore {
    pub scenario: String,
    pub configuration: String,
    pub setting_index: u32,
    pub score: f64,
    pub termination: String,
}

#[derive(Clone, Debug, Default)]
pub struct ScoreCard {
    pub trials: Vec<TrialScore>,
    pub excluded_scenarios: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl ScoreCard {
    pub fn scenario_mean(&self, configuration: &str, scenario: &str) -> Option<f64> {
        mean(
            self.trials
                .iter()
                .filter(|t| t.configuration == configuration && t.scenario == scenario)
                .map(|t| t.score),
        )
    }

    /// Mean of per-scenario means, so scenarios weigh equally.
    pub fn configuration_mean(&self, configuration: &str, scenarios: &[String]) -> Option<f64> {
        mean(scenarios.iter().filter_map(|s| self.scenario_mean(configuration, s)))
    }

    pub fn tag_mean(
        &self,
        configuration: &str,
        tag: OodTag,
        suite: &[ScenarioSpec],
    ) -> Option<f64> {
        let tagged: Vec<String> = suite
            .iter()
            .filter(|s| s.ood_tags.contains(&tag))
            .map(|s| s.name.clone())
            .collect();
        self.configuration_mean(configuration, &tagged)
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InputError(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Full machine-readable record of one trial, sufficient to replay it:
/// the exact initial scene plus every applied action chunk.
#[derive(Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: String,
    pub configuration: String,
    pub setting_index: u32,
    pub seed: u64,
    pub initial_scene: Scene,
    pub action_chunks: Vec<Vec<Action>>,
    pub termination: String,
    pub log: TrialLog,
    pub score: f64,
}

fn expert_feasible(spec: &ScenarioSpec, initial: &Scene) -> bool {
    let mut scene = initial.clone();
    for st in &spec.subtask_plan {
        match simulate_subtask(&scene, &st.instruction) {
            Ok(next) => scene = next,
            Err(_) => return false,
        }
    }
    true
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Done => "Done",
        Termination::Unrecoverable => "Unrecoverable",
        Termination::ChunkBudgetExhausted => "ChunkBudgetExhausted",
        Termination::TransportFailure => "TransportFailure",
    }
}

fn fresh_core() -> Arc<ServiceCore> {
    Arc::new(ServiceCore::new(
        Arc::new(RulePlanner::default()) as Arc<dyn SubtaskPlanner>,
        Some(Arc::new(OracleForesight::default()) as Arc<dyn ForesightContract>),
    ))
}

/// Runs every (scenario, initial setting, configuration) combination
/// through the edge loop and aggregates scores. Infeasible scenarios
/// are skipped with a warning in the report; trial records are written
/// to `record_dir` when given.
pub fn run_suite(
    suite: &Suite,
    configs: &[EvalConfig],
    settings_per_scenario: u32,
    seed: u64,
    record_dir: Option<&Path>,
) -> Result<(ScoreCard, String), EvalError> {
    if settings_per_scenario < MIN_SETTINGS {
        return Err(EvalError::InputError(format!(
            "settings_per_scenario must be at least {MIN_SETTINGS}, got {settings_per_scenario}"
        )));
    }
    if let Some(dir) = record_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut card = ScoreCard::default();
    let mut warnings: Vec<String> = Vec::new();

    for spec in &suite.scenarios {
        if !expert_feasible(spec, &spec.initial) {
            warnings.push(format!("warning: scenario {} infeasible, excluded", spec.name));
            card.excluded_scenarios.push(spec.name.clone());
            continue;
        }
        for setting in 0..settings_per_scenario {
            let setting_seed = seed
                .wrapping_mul(1_000_003)
                .wrapping_add(u64::from(setting));
            let initial = if setting == 0 {
                spec.initial.clone()
            } else {
                perturb_scene(&spec.initial, setting_seed)
            };
            if !expert_feasible(spec, &initial) {
                warnings.push(format!(
                    "warning: scenario {} setting {setting} infeasible, skipped",
                    spec.name
                ));
                continue;
            }
            for config in configs {
                let policy: Box<dyn PolicyContract> = match config.policy {
                    PolicyKind::GoalImage => Box::new(GoalImagePolicy::default()),
                    PolicyKind::GroundedText => {
                        Box::new(TextPolicy::with_grounding(suite.grounding.clone()))
                    }
                };
                let mut loop_config = LoopConfig::new(Transport::InProcess(fresh_core()));
                loop_config.foresight_enabled = config.foresight_enabled;
                loop_config.planner_text_enabled = config.planner_text_enabled;
                loop_config.session_id = setting_seed ^ 0x5eed;
                let result =
                    run_edge_loop(&initial, &spec.task_text, policy.as_ref(), &loop_config);
                let log = derive_trial_log(spec, &initial, &result, &config.name);
                let score = score_trial(&log);
                card.trials.push(TrialScore {
                    scenario: spec.name.clone(),
                    configuration: config.name.clone(),
                    setting_index: setting,
                    score,
                    termination: termination_name(result.termination).to_string(),
                });
                if let Some(dir) = record_dir {
                    let record = TrialRecord {
                        scenario: spec.name.clone(),
                        configuration: config.name.clone(),
                        setting_index: setting,
                        seed: setting_seed,
                        initial_scene: initial.clone(),
                        action_chunks: result.chunks.iter().map(|c| c.actions.clone()).collect(),
                        termination: termination_name(result.termination).to_string(),
                        log: log.clone(),
                        score,
                    };
                    let path = dir.join(format!(
                        "trial_{}_{}_{}.json",
                        spec.name, config.name, setting
                    ));
                    let body = serde_json::to_vec_pretty(&record)
                        .map_err(|e| EvalError::InputError(e.to_string()))?;
                    std::fs::write(&path, body)?;
                }
            }
        }
    }

    let report = render_report(&card, suite, configs, settings_per_scenario, &warnings);
    Ok((card, report))
}

fn fmt_mean(m: Option<f64>) -> String {
    match m {
        Some(v) => format!("{v:.2}"),
        None => "-".into(),
    }
}

/// Comparison table plus OOD breakdown, plain text.
pub fn render_report(
    card: &ScoreCard,
    suite: &Suite,
    configs: &[EvalConfig],
    settings_per_scenario: u32,
    warnings: &[String],
) -> String {
    let mut out = String::new();
    let scenario_names: Vec<String> = suite
        .scenarios
        .iter()
        .filter(|s| !card.excluded_scenarios.contains(&s.name))
        .map(|s| s.name.clone())
        .collect();

    out.push_str(&format!(
        "configuration comparison (mean score over {settings_per_scenario} initial settings)\n"
    ));
    out.push_str(&format!("{:<14}", "scenario"));
    for c in configs {
        out.push_str(&format!("{:>12}", c.name));
    }
    out.push('\n');
    for name in &scenario_names {
        out.push_str(&format!("{name:<14}"));
        for c in configs {
            out.push_str(&format!("{:>12}", fmt_mean(card.scenario_mean(&c.name, name))));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<14}", "overall"));
    for c in configs {
        out.push_str(&format!(
            "{:>12}",
            fmt_mean(card.configuration_mean(&c.name, &scenario_names))
        ));
    }
    out.push('\n');

    out.push_str("\nood breakdown\n");
    out.push_str(&format!("{:<14}", "tag"));
    for c in configs {
        out.push_str(&format!("{:>12}", c.name));
    }
    out.push('\n');
    for tag in [OodTag::Spatial, OodTag::Comp, OodTag::Joint] {
        out.push_str(&format!("{:<14}", format!("{tag:?}")));
        for c in configs {
            out.push_str(&format!(
                "{:>12}",
                fmt_mean(card.tag_mean(&c.name, tag, &suite.scenarios))
            ));
        }
        out.push('\n');
    }
    for w in warnings {
        out.push('\n');
        out.push_str(w);
    }
    out
}
