//! Edge-side control loop: capture an observation, request guidance,
//! augment with the goal image, run the local policy, apply the chunk.
//!
//! The loop is strictly sequential with at most one outstanding
//! guidance request; a staleness guard drops any chunk computed against
//! a plan step older than the latest guidance received.

use std::collections::BTreeMap;
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Instant;

use crate::domain::{
    augment_observation, Action, Decision, GuidancePacket, Image, Observation, PolicyContract,
    HEAD_CAMERA,
};
use crate::edgecloud::server::ServiceCore;
use crate::edgecloud::wire::{self, GuidePayload, HelloPayload, Message, ObsPayload};
use crate::gridworld::{render, step, Scene, WRIST_CAMERA_ID};
use crate::planner::completion_predicate;

#[derive(Clone)]
pub enum Transport {
    /// Loopback through the service core; frames still pass through the
    /// wire codec so both transports exercise identical bytes.
    InProcess(Arc<ServiceCore>),
    /// TCP address of a running service.
    Socket(String),
}

#[derive(Clone)]
pub struct LoopConfig {
    pub transport: Transport,
    pub max_chunks_per_subtask: u32,
    pub guidance_every_chunk: bool,
    pub foresight_enabled: bool,
    pub planner_text_enabled: bool,
    pub session_id: u64,
}

pub const DEFAULT_MAX_CHUNKS_PER_SUBTASK: u32 = 40;

impl LoopConfig {
    pub fn new(transport: Transport) -> Self {
        Self {
            transport,
            max_chunks_per_subtask: DEFAULT_MAX_CHUNKS_PER_SUBTASK,
            guidance_every_chunk: true,
            foresight_enabled: true,
            planner_text_enabled: true,
            session_id: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Done,
    Unrecoverable,
    ChunkBudgetExhausted,
    TransportFailure,
}

/// One policy invocation and the actions actually applied.
#[derive(Clone, Debug)]
pub struct ChunkRecord {
    pub chunk_index: u32,
    pub plan_step: u32,
    pub decision: Decision,
    /// Text handed to the policy (subtask text, or the raw task when
    /// planner text is ablated away).
    pub policy_text: String,
    pub actions: Vec<Action>,
}

#[derive(Debug)]
pub struct EpisodeResult {
    pub initial_scene: Scene,
    pub final_scene: Scene,
    pub chunks: Vec<ChunkRecord>,
    pub guidance: Vec<GuidancePacket>,
    pub termination: Termination,
    pub wall_ms: f64,
}

#[derive(Debug)]
enum LinkError {
    // payload kept for Debug output when link trouble is investigated
    Wire(#[allow(dead_code)] wire::WireError),
    ServerError { code: u8, detail: String },
    UnexpectedReply,
    NoReply,
}

impl From<wire::WireError> for LinkError {
    fn from(e: wire::WireError) -> Self {
        LinkError::Wire(e)
    }
}

enum Link {
    InProcess(Arc<ServiceCore>),
    Socket(TcpStream),
}

impl Link {
    fn connect(transport: &Transport) -> Result<Link, LinkError> {
        match transport {
            Transport::InProcess(core) => Ok(Link::InProcess(Arc::clone(core))),
            Transport::Socket(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| LinkError::Wire(wire::WireError::Io(e.to_string())))?;
                Ok(Link::Socket(stream))
            }
        }
    }

    fn send(&mut self, msg: &Message, expect_reply: bool) -> Result<Option<Message>, LinkError> {
        match self {
            Link::InProcess(core) => {
                let reply = core.handle_frame(&wire::encode(msg))?;
                match reply {
                    Some(bytes) => Ok(Some(wire::decode(&bytes)?)),
                    None if expect_reply => Err(LinkError::NoReply),
                    None => Ok(None),
                }
            }
            Link::Socket(stream) => {
                wire::write_message(stream, msg)?;
                if expect_reply {
                    Ok(Some(wire::read_message(stream)?))
                } else {
                    Ok(None)
                }
            }
        }
    }
}

struct GuidanceClient {
    transport: Transport,
    link: Link,
    session_id: u64,
    task: String,
}

impl GuidanceClient {
    fn open(transport: Transport, session_id: u64, task: &str) -> Result<Self, LinkError> {
        let mut link = Link::connect(&transport)?;
        link.send(
            &Message::Hello(HelloPayload { session_id, task: task.to_string() }),
            false,
        )?;
        Ok(Self { transport, link, session_id, task: task.to_string() })
    }

    fn request_once(&mut self, obs: &ObsPayload) -> Result<GuidePayload, LinkError> {
        let reply = self.link.send(&Message::Obs(obs.clone()), true)?.ok_or(LinkError::NoReply)?;
        match reply {
            Message::Guide(g) => Ok(g),
            Message::Err(e) => Err(LinkError::ServerError { code: e.code, detail: e.detail }),
            _ => Err(LinkError::UnexpectedReply),
        }
    }

    /// One transparent retry: reconnect, re-HELLO (idempotent for a
    /// fresh server, no-op effect for one that kept the session), and
    /// resend the observation.
    fn request(&mut self, obs: &ObsPayload) -> Result<GuidePayload, LinkError> {
        match self.request_once(obs) {
            Ok(g) => Ok(g),
            Err(LinkError::ServerError { code, detail })
                if code != wire::ERR_UNKNOWN_SESSION =>
            {
                Err(LinkError::ServerError { code, detail })
            }
            Err(_) => {
                self.link = Link::connect(&self.transport)?;
                self.link.send(
                    &Message::Hello(HelloPayload {
                        session_id: self.session_id,
                        task: self.task.clone(),
                    }),
                    false,
                )?;
                self.request_once(obs)
            }
        }
    }

    fn bye(&mut self) {
        let _ = self.link.send(&Message::Bye { session_id: self.session_id }, false);
    }
}

/// Head and wrist renders plus a minimal proprio vector.
pub fn observe(scene: &Scene, step_index: u32) -> Observation {
    let mut cameras: BTreeMap<u8, Image> = BTreeMap::new();
    cameras.insert(HEAD_CAMERA, render(scene, HEAD_CAMERA).expect("head render"));
    cameras.insert(WRIST_CAMERA_ID, render(scene, WRIST_CAMERA_ID).expect("wrist render"));
    let holding = if scene.gripper.holding.is_some() { 1.0 } else { 0.0 };
    Observation {
        step_index,
        timestamp_ms: u64::from(step_index) * 100,
        cameras,
        proprio: vec![f64::from(scene.gripper.cell.x), f64::from(scene.gripper.cell.y), holding],
    }
}

fn guide_to_packet(g: &GuidePayload) -> GuidancePacket {
    GuidancePacket {
        decision: g.decision,
        subtask_text: g.subtask_text.clone(),
        goal_image: g.goal_image.clone(),
        plan_step: g.plan_step,
    }
}

/// Runs one episode of the closed loop and never panics on transport
/// trouble: failures surface as `Termination::TransportFailure`.
pub fn run_edge_loop(
    initial: &Scene,
    task: &str,
    policy: &dyn PolicyContract,
    config: &LoopConfig,
) -> EpisodeResult {
    let started = Instant::now();
    let mut scene = initial.clone();
    let mut chunks: Vec<ChunkRecord> = Vec::new();
    let mut guidance: Vec<GuidancePacket> = Vec::new();

    let finish = |scene: Scene,
                  chunks: Vec<ChunkRecord>,
                  guidance: Vec<GuidancePacket>,
                  termination: Termination| EpisodeResult {
        initial_scene: initial.clone(),
        final_scene: scene,
        chunks,
        guidance,
        termination,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };

    let mut client = match GuidanceClient::open(config.transport.clone(), config.session_id, task)
    {
        Ok(c) => c,
        Err(_) => return finish(scene, chunks, guidance, Termination::TransportFailure),
    };

    let mut chunk_index: u32 = 0;
    let mut chunks_this_subtask: u32 = 0;
    let mut latest_plan_step: Option<u32> = None;

    loop {
        let obs = observe(&scene, chunk_index);
        let digest = serde_json::to_vec(&scene).expect("scene serializes");
        let payload = ObsPayload::from_observation(config.session_id, &obs, Some(digest));
        let guide = match client.request(&payload) {
            Ok(g) => g,
            Err(_) => return finish(scene, chunks, guidance, Termination::TransportFailure),
        };
        guidance.push(guide_to_packet(&guide));

        // staleness guard: ignore guidance for an older plan step
        if latest_plan_step.is_some_and(|latest| guide.plan_step < latest) {
            continue;
        }
        latest_plan_step = Some(guide.plan_step);

        match guide.decision {
            Decision::Done => {
                client.bye();
                return finish(scene, chunks, guidance, Termination::Done);
            }
            Decision::Unrecoverable => {
                client.bye();
                return finish(scene, chunks, guidance, Termination::Unrecoverable);
            }
            Decision::Advance => chunks_this_subtask = 0,
            Decision::Continue => {}
        }

        let goal_image = if config.foresight_enabled { guide.goal_image.clone() } else { None };
        let policy_text: String = if config.planner_text_enabled {
            guide.subtask_text.clone()
        } else {
            task.to_string()
        };

        // inner loop: one iteration per chunk; with boundary-cadence
        // guidance we keep stepping until the subtask completes locally
        loop {
            if chunks_this_subtask >= config.max_chunks_per_subtask {
                client.bye();
                return finish(scene, chunks, guidance, Termination::ChunkBudgetExhausted);
            }
            let obs = observe(&scene, chunk_index);
            let augmented = match augment_observation(&obs, goal_image.as_ref()) {
                Ok(a) => a,
                Err(_) => return finish(scene, chunks, guidance, Termination::TransportFailure),
            };
            let chunk = policy.act(&augmented, &policy_text);
            for action in chunk.actions() {
                scene = step(&scene, *action);
            }
            chunks.push(ChunkRecord {
                chunk_index,
                plan_step: guide.plan_step,
                decision: guide.decision,
                policy_text: policy_text.clone(),
                actions: chunk.actions().to_vec(),
            });
            chunk_index += 1;
            chunks_this_subtask += 1;

            if config.guidance_every_chunk {
                break;
            }
            // boundary cadence: re-request guidance only once the
            // subtask the planner sent looks complete (or the policy
            // has stalled on an all-noop chunk)
            let complete = completion_predicate(&guide.subtask_text, &scene).unwrap_or(false);
            if complete || chunk.is_all_noop() {
                break;
            }
        }
    }
}
