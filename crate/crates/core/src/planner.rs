//! Reason-execute-monitor planning: a rule-based reference planner that
//! decomposes task text into grammar subtasks, monitors completion, and
//! retries a stuck subtask up to a cap before giving up.
//!
//! The planner is the stand-in for the deployed VLM. It reads symbolic
//! scene state from the digest the simulation ships alongside each
//! observation, or, absent a digest, by decoding the head-camera pixels.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::domain::{
    Decision, GuidancePacket, Observation, PlanError, SessionState, SubtaskPlanner,
};
use crate::gridworld::{
    decode_scene, instruction_complete, parse_instruction, GrammarError, Instruction, RegionKind,
    Scene,
};

/// Continue responses per subtask before the planner declares the
/// session unrecoverable.
pub const DEFAULT_RETRY_CAP: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Init,
    Executing,
    Finished,
    Failed,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Init => "Init",
            Phase::Executing => "Executing",
            Phase::Finished => "Finished",
            Phase::Failed => "Failed",
        }
    }
}

/// Per-session planner state. Opaque to callers; exposed read-only for
/// inspection and property tests.
#[derive(Debug)]
pub struct PlannerSession {
    pub task: String,
    pub phase: Phase,
    plan: Vec<Instruction>,
    next_index: usize,
    pub current_subtask: Option<String>,
    pub plan_step: u32,
    pub repeats_of_current: u32,
    /// (observation digest hash, decision) per planner call.
    pub history: Vec<(u64, Decision)>,
}

impl PlannerSession {
    pub fn new(task: &str) -> Self {
        Self {
            task: task.to_string(),
            phase: Phase::Init,
            plan: Vec::new(),
            next_index: 0,
            current_subtask: None,
            plan_step: 0,
            repeats_of_current: 0,
            history: Vec::new(),
        }
    }
}

/// Request/response pair carried by the guidance wire protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub session_id: u64,
    /// Present on the first request of a session only.
    pub task: Option<String>,
    pub observation: Observation,
    pub scene_digest: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub decision: Decision,
    pub subtask_text: String,
    pub plan_step: u32,
}

impl PlanResponse {
    pub fn into_packet(self) -> GuidancePacket {
        GuidancePacket {
            decision: self.decision,
            subtask_text: self.subtask_text,
            goal_image: None,
            plan_step: self.plan_step,
        }
    }
}

/// Parses task text into an ordered subtask plan against a scene.
///
/// Accepted forms: a single grammar instruction, instructions joined by
/// " then ", or the macro "clean the table" (every loose object goes to
/// the first bin).
pub fn parse_task(task: &str, scene: &Scene) -> Result<Vec<Instruction>, GrammarError> {
    let task = task.trim();
    if task == "clean the table" {
        let bin = scene
            .regions
            .values()
            .find(|r| r.kind == RegionKind::Bin)
            .ok_or_else(|| GrammarError {
                text: task.to_string(),
                reason: "no bin on the table".into(),
            })?;
        let mut loose: Vec<(crate::gridworld::Cell, Instruction)> = scene
            .objects
            .values()
            .filter_map(|o| match o.place {
                crate::gridworld::ObjectPlace::Cell(c) if scene.region_at(c).is_none() => Some((
                    c,
                    Instruction::PutIn {
                        color: o.color,
                        shape: o.shape,
                        region_color: bin.color,
                        region_kind: RegionKind::Bin,
                    },
                )),
                _ => None,
            })
            .collect();
        loose.sort_by_key(|(c, _)| *c);
        return Ok(loose.into_iter().map(|(_, i)| i).collect());
    }
    task.split(" then ").map(parse_instruction).collect()
}

/// Grammar completion predicate over a symbolic scene.
pub fn completion_predicate(subtask_text: &str, scene: &Scene) -> Result<bool, GrammarError> {
    let instr = parse_instruction(subtask_text)?;
    Ok(instruction_complete(scene, &instr))
}

/// Rule-based reference planner.
pub struct RulePlanner {
    pub retry_cap: u32,
}

impl Default for RulePlanner {
    fn default() -> Self {
        Self { retry_cap: DEFAULT_RETRY_CAP }
    }
}

fn obs_hash(obs: &Observation) -> u64 {
    let mut h = DefaultHasher::new();
    obs.step_index.hash(&mut h);
    for (id, img) in &obs.cameras {
        id.hash(&mut h);
        img.data().hash(&mut h);
    }
    h.finish()
}

fn scene_from(obs: &Observation, digest: Option<&[u8]>) -> Option<Scene> {
    if let Some(bytes) = digest {
        if let Ok(scene) = serde_json::from_slice::<Scene>(bytes) {
            return Some(scene);
        }
    }
    decode_scene(obs.head()).ok()
}

/// Static feasibility check: every entity an instruction names exists.
fn instruction_entities_exist(scene: &Scene, instr: &Instruction) -> bool {
    match instr {
        Instruction::PickUp { color, shape } => {
            scene.find_object_row_major(*color, *shape).is_some()
                || scene
                    .gripper
                    .holding
                    .is_some_and(|id| scene.objects[&id].matches(*color, *shape))
        }
        Instruction::PutIn { color, shape, region_color, region_kind } => {
            scene.find_region(*region_color, *region_kind).is_some()
                && (scene.find_object_row_major(*color, *shape).is_some()
                    || scene
                        .gripper
                        .holding
                        .is_some_and(|id| scene.objects[&id].matches(*color, *shape))
                    || instruction_complete(scene, instr))
        }
        Instruction::CloseDrawer => {
            scene.regions.values().any(|r| r.kind == RegionKind::Drawer)
        }
    }
}

impl RulePlanner {
    fn respond(
        session: &mut PlannerSession,
        obs: &Observation,
        decision: Decision,
        text: String,
    ) -> GuidancePacket {
        session.history.push((obs_hash(obs), decision));
        GuidancePacket {
            decision,
            subtask_text: text,
            goal_image: None,
            plan_step: session.plan_step,
        }
    }

    fn fail(session: &mut PlannerSession, obs: &Observation) -> GuidancePacket {
        session.phase = Phase::Failed;
        session.current_subtask = None;
        Self::respond(session, obs, Decision::Unrecoverable, String::new())
    }

    /// Advance past already-satisfied plan entries and emit the next
    /// subtask (or Done).
    fn advance(
        &self,
        session: &mut PlannerSession,
        obs: &Observation,
        scene: &Scene,
        first: bool,
    ) -> GuidancePacket {
        while session.next_index < session.plan.len()
            && instruction_complete(scene, &session.plan[session.next_index])
        {
            session.next_index += 1;
        }
        if session.next_index >= session.plan.len() {
            session.phase = Phase::Finished;
            session.current_subtask = None;
            if !first {
                session.plan_step += 1;
            }
            return Self::respond(session, obs, Decision::Done, String::new());
        }
        let instr = session.plan[session.next_index];
        if !instruction_entities_exist(scene, &instr) {
            return Self::fail(session, obs);
        }
        session.next_index += 1;
        session.phase = Phase::Executing;
        session.repeats_of_current = 0;
        if !first {
            session.plan_step += 1;
        }
        let text = instr.to_string();
        session.current_subtask = Some(text.clone());
        Self::respond(session, obs, Decision::Advance, text)
    }

    fn plan_first(
        &self,
        session: &mut PlannerSession,
        obs: &Observation,
        scene: Option<Scene>,
    ) -> GuidancePacket {
        let Some(scene) = scene else {
            return Self::fail(session, obs);
        };
        let plan = match parse_task(&session.task, &scene) {
            Ok(p) => p,
            Err(_) => return Self::fail(session, obs),
        };
        if plan.iter().any(|i| !instruction_entities_exist(&scene, i)) {
            return Self::fail(session, obs);
        }
        session.plan = plan;
        session.next_index = 0;
        session.plan_step = 0;
        self.advance(session, obs, &scene, true)
    }

    fn monitor(
        &self,
        session: &mut PlannerSession,
        obs: &Observation,
        scene: Option<Scene>,
    ) -> GuidancePacket {
        let Some(scene) = scene else {
            return Self::fail(session, obs);
        };
        let current = session.current_subtask.clone().expect("Executing implies a subtask");
        let instr = parse_instruction(&current).expect("current subtask is grammar text");
        if instruction_complete(&scene, &instr) {
            return self.advance(session, obs, &scene, false);
        }
        if session.repeats_of_current >= self.retry_cap {
            return Self::fail(session, obs);
        }
        session.repeats_of_current += 1;
        Self::respond(session, obs, Decision::Continue, current)
    }

    /// Full planner step against an explicit scene digest.
    pub fn plan_with_digest(
        &self,
        session: &mut PlannerSession,
        obs: &Observation,
        digest: Option<&[u8]>,
    ) -> Result<GuidancePacket, PlanError> {
        let scene = scene_from(obs, digest);
        match session.phase {
            Phase::Init => Ok(self.plan_first(session, obs, scene)),
            Phase::Executing => Ok(self.monitor(session, obs, scene)),
            phase @ (Phase::Finished | Phase::Failed) => {
                Err(PlanError::SessionFinished { phase: phase.name() })
            }
        }
    }
}

impl SubtaskPlanner for RulePlanner {
    fn open_session(&self, task: &str) -> SessionState {
        SessionState(Box::new(PlannerSession::new(task)))
    }

    fn plan(
        &self,
        session: &mut SessionState,
        obs: &Observation,
        digest: Option<&[u8]>,
    ) -> Result<GuidancePacket, PlanError> {
        let session =
            session.0.downcast_mut::<PlannerSession>().ok_or(PlanError::ForeignSession)?;
        self.plan_with_digest(session, obs, digest)
    }
}
