//! Scenario files and the episode generator.
//!
//! An episode is the scripted expert driven through a scenario's subtask
//! plan, with a head-camera frame recorded every 1/fps seconds and exact
//! subtask frame boundaries kept in the manifest.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::{EpisodeManifest, SubtaskSegment};
use crate::domain::Image;

use super::expert::{expert_rollout, InfeasibleError};
use super::grammar::{parse_instruction, GrammarError};
use super::render::{render, HEAD_CAMERA_ID};
use super::scene::{AtomicActionSpec, ObjectPlace, Scene};

/// Simulation rate: gripper actions per second.
pub const SIM_STEPS_PER_SEC: u32 = 10;

/// Distribution-shift category tags, used for suite breakdowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OodTag {
    Spatial,
    Comp,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskStep {
    pub instruction: String,
}

/// A complete benchmark scenario: initial scene, task text, ground-truth
/// subtask plan, and the atomic actions the scoring rubric tracks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub initial: Scene,
    pub task_text: String,
    pub subtask_plan: Vec<SubtaskStep>,
    pub atomic_actions: Vec<AtomicActionSpec>,
    #[serde(default)]
    pub ood_tags: BTreeSet<OodTag>,
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("fps must divide {SIM_STEPS_PER_SEC} and be >= 1, got {0}")]
    BadFps(u32),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Infeasible(#[from] InfeasibleError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        self.initial.validate().map_err(EpisodeError::InvalidScenario)?;
        if self.subtask_plan.is_empty() {
            return Err(EpisodeError::InvalidScenario("subtask plan is empty".into()));
        }
        for s in &self.subtask_plan {
            parse_instruction(&s.instruction)?;
        }
        for a in &self.atomic_actions {
            let (oid, rid) = match a {
                AtomicActionSpec::ApproachGrasp(oid) => (*oid, None),
                AtomicActionSpec::MovePlace(oid, rid) => (*oid, Some(*rid)),
            };
            if !self.initial.objects.contains_key(&oid) {
                return Err(EpisodeError::InvalidScenario(format!(
                    "atomic action references missing object {oid}"
                )));
            }
            if let Some(rid) = rid {
                if !self.initial.regions.contains_key(&rid) {
                    return Err(EpisodeError::InvalidScenario(format!(
                        "atomic action references missing region {rid}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EpisodeError> {
        let text = fs::read_to_string(path)?;
        let spec: ScenarioSpec = serde_json::from_str(&text)
            .map_err(|e| EpisodeError::InvalidScenario(format!("parse {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<(), EpisodeError> {
        let text = serde_json::to_string_pretty(self).expect("scenario always serializes");
        fs::write(path, text)?;
        Ok(())
    }
}

/// Rendered frames plus their segmentation manifest.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub frames: Vec<Image>,
    pub manifest: EpisodeManifest,
}

impl EpisodeRecord {
    /// Writes frames as binary PPM files plus a `manifest.json`.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (i, frame) in self.frames.iter().enumerate() {
            let path = dir.join(format!("frame_{i:06}.ppm"));
            let mut f = fs::File::create(path)?;
            write!(f, "P6\n{} {}\n255\n", frame.width(), frame.height())?;
            f.write_all(frame.data())?;
        }
        let mut manifest = self.manifest.clone();
        manifest.frames_dir = dir.display().to_string();
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
    }
}

/// Runs the scripted expert through the subtask plan, recording head
/// frames at `fps`. Nontrivial subtasks contribute at least `fps` frames
/// (padded with the final state); already-complete subtasks contribute a
/// single frame.
pub fn generate_episode(
    spec: &ScenarioSpec,
    fps: u32,
    seed: u64,
) -> Result<EpisodeRecord, EpisodeError> {
    if fps == 0 || SIM_STEPS_PER_SEC % fps != 0 {
        return Err(EpisodeError::BadFps(fps));
    }
    spec.validate()?;
    let stride = (SIM_STEPS_PER_SEC / fps) as usize;

    let mut scene = spec.initial.clone();
    let mut frames: Vec<Image> = Vec::new();
    let mut segments: Vec<SubtaskSegment> = Vec::new();

    for step_spec in &spec.subtask_plan {
        let instr = parse_instruction(&step_spec.instruction)?;
        let (actions, scenes) = expert_rollout(&scene, &instr)?;
        let start = frames.len() as u32;
        if actions.is_empty() {
            frames.push(render(&scene, HEAD_CAMERA_ID).expect("head camera exists"));
        } else {
            for (i, s) in scenes.iter().enumerate() {
                if (i + 1) % stride == 0 {
                    frames.push(render(s, HEAD_CAMERA_ID).expect("head camera exists"));
                }
            }
            scene = scenes.last().cloned().expect("nonempty rollout");
            while (frames.len() as u32) < start + fps {
                frames.push(render(&scene, HEAD_CAMERA_ID).expect("head camera exists"));
            }
        }
        segments.push(SubtaskSegment {
            start_frame: start,
            end_frame: frames.len() as u32 - 1,
            instruction: step_spec.instruction.clone(),
        });
    }

    let manifest = EpisodeManifest {
        episode_id: format!("{}-{seed:08x}", spec.name),
        fps,
        frames_dir: String::new(),
        frame_count: frames.len() as u32,
        source: "gridworld".into(),
        subtasks: segments,
    };
    Ok(EpisodeRecord { frames, manifest })
}

/// Deterministically reshuffles the loose (on-table, outside-region)
/// objects onto fresh cells, producing a new initial setting of the same
/// scenario. Object and region ids are preserved.
pub fn perturb_scene(scene: &Scene, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    let loose: Vec<u32> = out
        .objects
        .iter()
        .filter_map(|(id, o)| match o.place {
            ObjectPlace::Cell(c) if out.region_at(c).is_none() => Some(*id),
            _ => None,
        })
        .collect();
    let mut candidates: Vec<super::scene::Cell> = out.free_plain_cells();
    for id in &loose {
        if let ObjectPlace::Cell(c) = out.objects[id].place {
            candidates.push(c);
        }
    }
    candidates.sort();
    candidates.dedup();
    // keep the gripper's start cell object-free so perturbation never
    // changes which object a first Grasp would touch
    candidates.retain(|c| *c != out.gripper.cell);
    candidates.shuffle(&mut rng);
    for (id, cell) in loose.iter().zip(candidates) {
        out.objects.get_mut(id).expect("loose id exists").place = ObjectPlace::Cell(cell);
    }
    out
}

/// Two-object scenario shared by tests across the crate.
#[cfg(test)]
pub(crate) fn demo_spec() -> ScenarioSpec {
    use crate::gridworld::scene::{Cell, Color, Region, RegionKind, SceneObject, Shape};
    use std::collections::BTreeSet;
    {
        let mut s = Scene::empty(12, 9);
        s.objects.insert(
            1,
            SceneObject {
                color: Color::Red,
                shape: Shape::Block,
                place: ObjectPlace::Cell(Cell::new(2, 3)),
            },
        );
        s.objects.insert(
            2,
            SceneObject {
                color: Color::Green,
                shape: Shape::Ball,
                place: ObjectPlace::Cell(Cell::new(6, 2)),
            },
        );
        let cells: BTreeSet<Cell> =
            [Cell::new(9, 6), Cell::new(10, 6), Cell::new(9, 7)].into_iter().collect();
        s.regions
            .insert(1, Region { kind: RegionKind::Box, color: Color::Blue, cells, closed: false });
        ScenarioSpec {
            name: "demo".into(),
            initial: s,
            task_text: "put the red block in the blue box".into(),
            subtask_plan: vec![
                SubtaskStep { instruction: "put the red block in the blue box".into() },
                SubtaskStep { instruction: "put the green ball in the blue box".into() },
            ],
            atomic_actions: vec![
                AtomicActionSpec::ApproachGrasp(1),
                AtomicActionSpec::MovePlace(1, 1),
                AtomicActionSpec::ApproachGrasp(2),
                AtomicActionSpec::MovePlace(2, 1),
            ],
            ood_tags: BTreeSet::new(),
        }
    }
}
