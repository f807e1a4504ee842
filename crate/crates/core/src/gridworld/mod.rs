//! Deterministic simulated tabletop: scene model, instruction grammar,
//! scripted expert, renderer, and episode generator.
//!
//! The gridworld doubles as the oracle world model: the expert can roll
//! any grammar instruction forward to completion, which is what the
//! oracle foresight generator and the episode generator build on.

mod episode;
mod expert;
mod grammar;
mod render;
mod scene;

#[cfg(test)]
pub(crate) use episode::demo_spec;
pub use episode::{
    generate_episode, perturb_scene, EpisodeError, EpisodeRecord, OodTag, ScenarioSpec,
    SubtaskStep, SIM_STEPS_PER_SEC,
};
pub use expert::{expert_actions, expert_rollout, simulate_subtask, InfeasibleError, SubtaskError};
pub use grammar::{instruction_complete, parse_instruction, GrammarError, Instruction};
pub use render::{decode_scene, render, DecodeError, RenderError, CELL_PX, HEAD_CAMERA_ID,
    WRIST_CAMERA_ID, WRIST_SPAN};
pub use scene::{
    step, AtomicActionSpec, Cell, Color, Gripper, ObjectId, ObjectPlace, Region, RegionId,
    RegionKind, Scene, SceneObject, Shape, DEFAULT_GRID_H, DEFAULT_GRID_W,
};
