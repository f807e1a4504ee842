//! Shared value types and the three pluggable component contracts.
//!
//! Everything here is an immutable value that can be freely copied between
//! threads. The contracts (`SubtaskPlanner`, `ForesightContract`,
//! `PolicyContract`) are the seams where the rule planner, the foresight
//! generators, and the reference policies plug into the guidance loop.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera id of the head camera (full-scene view). Always present.
pub const HEAD_CAMERA: u8 = 0;

/// Reserved camera id holding the goal image after augmentation.
///
/// A sentinel rather than `max_id + 1` so serialized observations are
/// self-describing about which slot carries guidance.
pub const GOAL_SLOT: u8 = 255;

/// Default action-chunk horizon H.
pub const DEFAULT_HORIZON: usize = 8;

/// An 8-bit RGB raster, row-major, 3 channels.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Image {
    width: u16,
    height: u16,
    data: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u16, height: u16 },
    #[error("pixel buffer length {got} does not match {width}x{height}x3 = {want}")]
    BadLength { width: u16, height: u16, got: usize, want: usize },
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u16, height: u16, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let want = width as usize * height as usize * Self::CHANNELS;
        if data.len() != want {
            return Err(ImageError::BadLength { width, height, got: data.len(), want });
        }
        Ok(Self { width, height, data })
    }

    /// Solid-color image.
    pub fn filled(width: u16, height: u16, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * Self::CHANNELS);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data).expect("filled image dimensions checked by caller")
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn same_dimensions(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn pixel(&self, x: u16, y: u16) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u16, y: u16, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * Self::CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{}, {} bytes)", self.width, self.height, self.data.len())
    }
}

/// One tick of sensor data: multi-camera images plus proprioception.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step_index: u32,
    pub timestamp_ms: u64,
    /// Ordered camera map; id 0 is the head camera.
    pub cameras: BTreeMap<u8, Image>,
    pub proprio: Vec<f64>,
}

impl Observation {
    pub fn head(&self) -> &Image {
        self.cameras.get(&HEAD_CAMERA).expect("observation invariant: head camera present")
    }

    pub fn has_goal_slot(&self) -> bool {
        self.cameras.contains_key(&GOAL_SLOT)
    }
}

/// Discrete gripper action alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    Grasp,
    Release,
    NoOp,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::MoveUp,
        Action::MoveDown,
        Action::MoveLeft,
        Action::MoveRight,
        Action::Grasp,
        Action::Release,
        Action::NoOp,
    ];
}

/// A fixed-length sequence of actions (the policy output A_t).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionChunk {
    actions: Vec<Action>,
}

impl ActionChunk {
    /// Builds a chunk, padding with `NoOp` or truncating to exactly `horizon`.
    pub fn fitted(mut actions: Vec<Action>, horizon: usize) -> Self {
        assert!(horizon >= 1, "chunk horizon must be >= 1");
        actions.truncate(horizon);
        while actions.len() < horizon {
            actions.push(Action::NoOp);
        }
        Self { actions }
    }

    pub fn noop(horizon: usize) -> Self {
        Self::fitted(Vec::new(), horizon)
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_all_noop(&self) -> bool {
        self.actions.iter().all(|a| *a == Action::NoOp)
    }
}

/// Planner verdict carried in every guidance packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Continue,
    Advance,
    Done,
    Unrecoverable,
}

impl Decision {
    pub fn code(self) -> u8 {
        match self {
            Decision::Continue => 0,
            Decision::Advance => 1,
            Decision::Done => 2,
            Decision::Unrecoverable => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Decision::Continue),
            1 => Some(Decision::Advance),
            2 => Some(Decision::Done),
            3 => Some(Decision::Unrecoverable),
            _ => None,
        }
    }

    /// Terminal decisions end the episode.
    pub fn is_terminal(self) -> bool {
        matches!(self, Decision::Done | Decision::Unrecoverable)
    }
}

/// The dual-guidance payload: subtask text plus optional foresight image.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidancePacket {
    pub decision: Decision,
    pub subtask_text: String,
    pub goal_image: Option<Image>,
    pub plan_step: u32,
}

impl GuidancePacket {
    /// Checks the cross-field invariants: text nonempty iff the decision
    /// asks for execution, goal image only on executing decisions.
    pub fn is_well_formed(&self) -> bool {
        let executing = matches!(self.decision, Decision::Continue | Decision::Advance);
        if executing != !self.subtask_text.is_empty() {
            return false;
        }
        if self.goal_image.is_some() && !executing {
            return false;
        }
        true
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("goal image is {goal_w}x{goal_h} but head camera is {head_w}x{head_h}")]
    DimensionMismatch { goal_w: u16, goal_h: u16, head_w: u16, head_h: u16 },
    #[error("observation already carries a goal slot (camera id {GOAL_SLOT})")]
    SlotOccupied,
    #[error("observation has no head camera (id {HEAD_CAMERA})")]
    MissingHead,
}

/// Appends the goal image into the reserved slot, duplicating the head
/// image when no goal is available so policy input arity stays constant.
pub fn augment_observation(
    obs: &Observation,
    goal: Option<&Image>,
) -> Result<Observation, AugmentError> {
    if obs.has_goal_slot() {
        return Err(AugmentError::SlotOccupied);
    }
    let head = obs.cameras.get(&HEAD_CAMERA).ok_or(AugmentError::MissingHead)?;
    let slot_image = match goal {
        Some(g) => {
            if !g.same_dimensions(head) {
                return Err(AugmentError::DimensionMismatch {
                    goal_w: g.width(),
                    goal_h: g.height(),
                    head_w: head.width(),
                    head_h: head.height(),
                });
            }
            g.clone()
        }
        None => head.clone(),
    };
    let mut out = obs.clone();
    out.cameras.insert(GOAL_SLOT, slot_image);
    Ok(out)
}

/// Errors surfaced by foresight generators.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForesightError {
    #[error("instruction not in grammar: {0}")]
    Grammar(String),
    #[error("instruction infeasible: {0}")]
    Infeasible(String),
    #[error("velocity field produced a non-finite value at step {step}")]
    NonFinite { step: usize },
}

/// Errors surfaced by planner implementations.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("session is already {phase} and accepts no further observations")]
    SessionFinished { phase: &'static str },
    #[error("session handle does not belong to this planner")]
    ForeignSession,
}

/// Opaque per-session planner state, owned by the caller and threaded
/// through successive `plan` calls.
pub struct SessionState(pub Box<dyn Any + Send>);

/// The subtask reasoner contract (the role the VLM plays in deployment).
///
/// Implementations must be deterministic given (task, observation,
/// session state). The returned packet never carries a goal image; the
/// guidance service attaches one separately. `scene_digest`, when the
/// transport ships one, is a serialized symbolic scene; pixel-only
/// planners simply ignore it.
pub trait SubtaskPlanner: Send + Sync {
    fn open_session(&self, task: &str) -> SessionState;
    fn plan(
        &self,
        session: &mut SessionState,
        obs: &Observation,
        scene_digest: Option<&[u8]>,
    ) -> Result<GuidancePacket, PlanError>;
}

/// The foresight generator contract: predict the head-camera image after
/// the subtask completes. Output dimensions must equal input dimensions.
pub trait ForesightContract: Send + Sync {
    fn foresee(&self, head: &Image, subtask_text: &str, seed: u64) -> Result<Image, ForesightError>;
}

/// The low-level policy contract: map the augmented observation plus
/// subtask text to exactly `horizon()` actions.
pub trait PolicyContract: Send + Sync {
    fn act(&self, augmented: &Observation, subtask_text: &str) -> ActionChunk;
    fn horizon(&self) -> usize {
        DEFAULT_HORIZON
    }
}
