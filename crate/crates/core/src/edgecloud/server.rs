//! Planner-plus-foresight service. `ServiceCore` holds the shared
//! components and the session table; the TCP front end and the
//! in-process transport both funnel every message through
//! `ServiceCore::handle`, so the two paths produce identical frames.

use std::collections::HashMap;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use crate::domain::{
    Decision, ForesightContract, PlanError, SessionState, SubtaskPlanner, HEAD_CAMERA,
};
use crate::edgecloud::wire::{
    self, ErrPayload, GuidePayload, Message, ObsPayload, WireError, ERR_INTERNAL, ERR_PROTOCOL,
    ERR_SESSION_STATE, ERR_UNKNOWN_SESSION,
};

/// Per-request stage timings, milliseconds. `decode` covers payload
/// parsing, `encode` covers reply serialization; `total` is measured
/// around the whole request and bounds the sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RequestLatency {
    pub session_id: u64,
    pub decode_ms: f64,
    pub plan_ms: f64,
    pub foresee_ms: f64,
    pub encode_ms: f64,
    pub total_ms: f64,
}

struct Session {
    task: String,
    state: SessionState,
}

pub struct ServiceCore {
    planner: Arc<dyn SubtaskPlanner>,
    foresight: Option<Arc<dyn ForesightContract>>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    latencies: Mutex<Vec<RequestLatency>>,
}

impl ServiceCore {
    pub fn new(
        planner: Arc<dyn SubtaskPlanner>,
        foresight: Option<Arc<dyn ForesightContract>>,
    ) -> Self {
        Self {
            planner,
            foresight,
            sessions: Mutex::new(HashMap::new()),
            latencies: Mutex::new(Vec::new()),
        }
    }

    pub fn latencies(&self) -> Vec<RequestLatency> {
        self.latencies.lock().expect("latency lock").clone()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    fn session(&self, id: u64) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("session lock").get(&id).cloned()
    }

    fn close_session(&self, id: u64) {
        self.sessions.lock().expect("session lock").remove(&id);
    }

    /// Handles one decoded message; `decode_ms` is the time the caller
    /// spent parsing the request frame. Returns the reply, if any.
    pub fn handle(&self, msg: Message, decode_ms: f64, started: Instant) -> Option<Message> {
        match msg {
            Message::Hello(h) => {
                let state = self.planner.open_session(&h.task);
                let entry = Arc::new(Mutex::new(Session { task: h.task, state }));
                self.sessions.lock().expect("session lock").insert(h.session_id, entry);
                None
            }
            Message::Obs(obs) => Some(self.handle_obs(obs, decode_ms, started)),
            Message::Bye { session_id } => {
                self.close_session(session_id);
                None
            }
            // GUIDE and ERR travel server-to-edge only; answer with a
            // protocol error and keep the session table untouched.
            Message::Guide(g) => Some(Message::Err(ErrPayload {
                session_id: g.session_id,
                code: ERR_PROTOCOL,
                detail: "unexpected GUIDE from client".into(),
            })),
            Message::Err(e) => Some(Message::Err(ErrPayload {
                session_id: e.session_id,
                code: ERR_PROTOCOL,
                detail: "unexpected ERR from client".into(),
            })),
        }
    }

    fn handle_obs(&self, obs: ObsPayload, decode_ms: f64, started: Instant) -> Message {
        let session_id = obs.session_id;
        let Some(entry) = self.session(session_id) else {
            return Message::Err(ErrPayload {
                session_id,
                code: ERR_UNKNOWN_SESSION,
                detail: format!("unknown session {session_id}"),
            });
        };
        let mut session = entry.lock().expect("per-session lock");
        let _ = &session.task;
        let observation = obs.to_observation();

        let plan_start = Instant::now();
        let packet = match self.planner.plan(
            &mut session.state,
            &observation,
            obs.scene_digest.as_deref(),
        ) {
            Ok(p) => p,
            Err(err) => {
                drop(session);
                self.close_session(session_id);
                let code = match err {
                    PlanError::SessionFinished { .. } => ERR_SESSION_STATE,
                    PlanError::ForeignSession => ERR_INTERNAL,
                };
                return Message::Err(ErrPayload { session_id, code, detail: err.to_string() });
            }
        };
        let plan_ms = plan_start.elapsed().as_secs_f64() * 1e3;

        let foresee_start = Instant::now();
        let goal_image = if matches!(packet.decision, Decision::Continue | Decision::Advance) {
            self.foresight.as_ref().and_then(|f| {
                let head = observation.cameras.get(&HEAD_CAMERA)?;
                // deterministic per (session, plan step) so retries of a
                // subtask regenerate the same goal image
                let seed = session_id ^ u64::from(packet.plan_step).wrapping_mul(0x9e37_79b9);
                f.foresee(head, &packet.subtask_text, seed).ok()
            })
        } else {
            None
        };
        let foresee_ms = foresee_start.elapsed().as_secs_f64() * 1e3;

        let reply = Message::Guide(GuidePayload {
            session_id,
            plan_step: packet.plan_step,
            decision: packet.decision,
            subtask_text: packet.subtask_text,
            goal_image,
        });
        let encode_start = Instant::now();
        let _ = wire::encode(&reply);
        let encode_ms = encode_start.elapsed().as_secs_f64() * 1e3;
        let total_ms = started.elapsed().as_secs_f64() * 1e3;
        self.latencies.lock().expect("latency lock").push(RequestLatency {
            session_id,
            decode_ms,
            plan_ms,
            foresee_ms,
            encode_ms,
            total_ms,
        });
        reply
    }

    /// In-process transport: one request frame in, optional reply frame
    /// out, through the exact wire codec the TCP path uses.
    pub fn handle_frame(&self, frame: &[u8]) -> Result<Option<Vec<u8>>, WireError> {
        let started = Instant::now();
        let msg = wire::decode(frame)?;
        let decode_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(self.handle(msg, decode_ms, started).map(|m| wire::encode(&m)))
    }
}

pub struct ServerHandle {
    core: Arc<ServiceCore>,
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn core(&self) -> &Arc<ServiceCore> {
        &self.core
    }

    /// Blocks until the accept thread exits (effectively forever unless
    /// another thread calls shutdown or the process is interrupted).
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // poke the listener so accept() returns
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn handle_connection(core: Arc<ServiceCore>, mut stream: TcpStream) {
    loop {
        let started = Instant::now();
        let msg = match wire::read_message(&mut stream) {
            Ok(m) => m,
            Err(WireError::Truncated) | Err(WireError::Io(_)) => return,
            Err(protocol_err) => {
                // malformed frame: answer ERR and drop the connection
                // (the stream may be desynchronized), sessions kept
                let reply = Message::Err(ErrPayload {
                    session_id: 0,
                    code: ERR_PROTOCOL,
                    detail: protocol_err.to_string(),
                });
                let _ = wire::write_message(&mut stream, &reply);
                return;
            }
        };
        let decode_ms = started.elapsed().as_secs_f64() * 1e3;
        if let Some(reply) = core.handle(msg, decode_ms, started) {
            if wire::write_message(&mut stream, &reply).is_err() {
                return;
            }
        }
    }
}

/// Binds the listener and serves connections on background threads
/// until the handle is shut down.
pub fn serve<A: ToSocketAddrs>(
    bind_address: A,
    planner: Arc<dyn SubtaskPlanner>,
    foresight: Option<Arc<dyn ForesightContract>>,
) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(bind_address)?;
    let addr = listener.local_addr()?;
    let core = Arc::new(ServiceCore::new(planner, foresight));
    let stop = Arc::new(AtomicBool::new(false));
    let accept_core = Arc::clone(&core);
    let accept_stop = Arc::clone(&stop);
    let accept_thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                return;
            }
            let Ok(stream) = conn else { continue };
            let core = Arc::clone(&accept_core);
            std::thread::spawn(move || handle_connection(core, stream));
        }
    });
    Ok(ServerHandle { core, addr, stop, accept_thread: Some(accept_thread) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Image, Observation};
    use crate::flow::OracleForesight;
    use crate::gridworld::render;
    use crate::planner::RulePlanner;
    use std::collections::BTreeMap;

    fn demo_setup() -> (crate::gridworld::Scene, String) {
        let spec = crate::gridworld::demo_spec();
        (spec.initial.clone(), spec.task_text.clone())
    }

    fn obs_payload(session_id: u64, scene: &crate::gridworld::Scene, step: u32) -> ObsPayload {
        let mut cameras: BTreeMap<u8, Image> = BTreeMap::new();
        cameras.insert(HEAD_CAMERA, render(scene, 0).unwrap());
        let obs = Observation { step_index: step, timestamp_ms: 0, cameras, proprio: vec![] };
        ObsPayload::from_observation(session_id, &obs, Some(serde_json::to_vec(scene).unwrap()))
    }

    fn new_core() -> ServiceCore {
        ServiceCore::new(
            Arc::new(RulePlanner::default()),
            Some(Arc::new(OracleForesight::default())),
        )
    }

    #[test]
    fn hello_then_obs_yields_advance_guide() {
        let core = new_core();
        let (scene, task) = demo_setup();
        assert!(core
            .handle_frame(&wire::encode(&Message::Hello(wire::HelloPayload {
                session_id: 11,
                task,
            })))
            .unwrap()
            .is_none());
        let reply = core
            .handle_frame(&wire::encode(&Message::Obs(obs_payload(11, &scene, 0))))
            .unwrap()
            .expect("OBS gets a reply");
        match wire::decode(&reply).unwrap() {
            Message::Guide(g) => {
                assert_eq!(g.session_id, 11);
                assert_eq!(g.decision, Decision::Advance);
                assert!(!g.subtask_text.is_empty());
                assert!(g.goal_image.is_some(), "foresight enabled");
            }
            other => panic!("expected GUIDE, got {other:?}"),
        }
        let lat = core.latencies();
        assert_eq!(lat.len(), 1);
        let l = &lat[0];
        assert!(l.decode_ms + l.plan_ms + l.foresee_ms + l.encode_ms <= l.total_ms + 1e-6);
    }

    #[test]
    fn obs_for_unknown_session_is_err() {
        let core = new_core();
        let (scene, _) = demo_setup();
        let reply = core
            .handle_frame(&wire::encode(&Message::Obs(obs_payload(99, &scene, 0))))
            .unwrap()
            .unwrap();
        match wire::decode(&reply).unwrap() {
            Message::Err(e) => {
                assert_eq!(e.code, ERR_UNKNOWN_SESSION);
                assert_eq!(e.session_id, 99);
            }
            other => panic!("expected ERR, got {other:?}"),
        }
    }

    #[test]
    fn interleaved_sessions_do_not_cross_talk() {
        let core = new_core();
        let (scene, task) = demo_setup();
        for id in [1u64, 2u64] {
            core.handle_frame(&wire::encode(&Message::Hello(wire::HelloPayload {
                session_id: id,
                task: task.clone(),
            })))
            .unwrap();
        }
        for round in 0..3u32 {
            for id in [1u64, 2u64] {
                let reply = core
                    .handle_frame(&wire::encode(&Message::Obs(obs_payload(id, &scene, round))))
                    .unwrap()
                    .unwrap();
                match wire::decode(&reply).unwrap() {
                    Message::Guide(g) => assert_eq!(g.session_id, id),
                    other => panic!("expected GUIDE, got {other:?}"),
                }
            }
        }
        assert_eq!(core.session_count(), 2);
    }

    #[test]
    fn bye_closes_and_session_state_error_closes() {
        let core = new_core();
        let (mut scene, _) = demo_setup();
        // already-satisfied task finishes on the first OBS
        scene.gripper.holding = None;
        core.handle_frame(&wire::encode(&Message::Hello(wire::HelloPayload {
            session_id: 5,
            task: "close the drawer".into(),
        })))
        .unwrap();
        let first = core
            .handle_frame(&wire::encode(&Message::Obs(obs_payload(5, &scene, 0))))
            .unwrap()
            .unwrap();
        let done = matches!(wire::decode(&first).unwrap(), Message::Guide(g) if g.decision.is_terminal());
        assert!(done, "drawerless scene resolves the task terminally");
        // next OBS hits a finished session: ERR + closed
        let second = core
            .handle_frame(&wire::encode(&Message::Obs(obs_payload(5, &scene, 1))))
            .unwrap()
            .unwrap();
        match wire::decode(&second).unwrap() {
            Message::Err(e) => assert_eq!(e.code, ERR_SESSION_STATE),
            other => panic!("expected ERR, got {other:?}"),
        }
        assert_eq!(core.session_count(), 0);

        core.handle_frame(&wire::encode(&Message::Hello(wire::HelloPayload {
            session_id: 6,
            task: "close the drawer".into(),
        })))
        .unwrap();
        assert_eq!(core.session_count(), 1);
        core.handle_frame(&wire::encode(&Message::Bye { session_id: 6 })).unwrap();
        assert_eq!(core.session_count(), 0);
    }
}
