//! Closed-loop visual foresight planning over a deterministic tabletop.
//!
//! The crate is organized around the guidance loop: a cloud-side planner
//! decomposes a task into subtask instructions, a foresight generator
//! predicts the head-camera image after the subtask, and an edge-side
//! policy consumes both to drive the simulated gripper. Everything is
//! deterministic under a fixed seed so behavior is testable end to end.
//!
//! Modules:
//! - [`domain`]: shared value types and the three pluggable contracts.
//! - [`gridworld`]: the simulated tabletop, instruction grammar, scripted
//!   expert, renderer, and episode generator.
//! - [`planner`]: the reason-execute-monitor session state machine.
//! - [`flow`]: foresight generators (gridworld oracle + flow-matching
//!   Euler sampler).
//! - [`edgecloud`]: wire protocol, guidance service, and the edge loop.
//! - [`policies`]: pixel-space reference policies (goal-image servoing,
//!   text-grounded baseline).
//! - [`datapipe`]: episode manifests and training-pair construction.
//! - [`evalharness`]: the atomic-action scoring rubric and suite runner.

pub mod datapipe;
pub mod domain;
pub mod edgecloud;
pub mod evalharness;
pub mod flow;
pub mod gridworld;
pub mod planner;
pub mod policies;

pub use domain::{
    Action, ActionChunk, AugmentError, Decision, GuidancePacket, Image, Observation, GOAL_SLOT,
    HEAD_CAMERA,
};
