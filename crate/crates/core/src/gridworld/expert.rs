//! Scripted expert: optimal deterministic execution of any grammar
//! instruction. Serves as the oracle world model and episode generator.

use thiserror::Error;

use crate::domain::Action;

use super::grammar::{instruction_complete, parse_instruction, GrammarError, Instruction};
use super::scene::{step, Cell, RegionKind, Scene};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("instruction infeasible: {0}")]
pub struct InfeasibleError(pub String);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubtaskError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Infeasible(#[from] InfeasibleError),
}

// Gripper travel is x-first, then y, for a deterministic path.
fn move_toward(from: Cell, to: Cell) -> Option<Action> {
    if from.x < to.x {
        Some(Action::MoveRight)
    } else if from.x > to.x {
        Some(Action::MoveLeft)
    } else if from.y < to.y {
        Some(Action::MoveDown)
    } else if from.y > to.y {
        Some(Action::MoveUp)
    } else {
        None
    }
}

fn goto_or(scene: &Scene, target: Cell, at_target: Action) -> Action {
    move_toward(scene.gripper.cell, target).unwrap_or(at_target)
}

/// Offload whatever the gripper holds onto the first free plain cell.
fn offload_action(scene: &Scene) -> Result<Action, InfeasibleError> {
    let here = scene.gripper.cell;
    if scene.object_at(here).is_none() && scene.region_at(here).is_none() {
        return Ok(Action::Release);
    }
    let target = scene
        .free_plain_cells()
        .first()
        .copied()
        .ok_or_else(|| InfeasibleError("no free cell to offload the held object".into()))?;
    Ok(goto_or(scene, target, Action::Release))
}

/// Next expert action toward completing `instr`, or `None` when the
/// completion predicate already holds.
fn next_action(scene: &Scene, instr: &Instruction) -> Result<Option<Action>, InfeasibleError> {
    if instruction_complete(scene, instr) {
        return Ok(None);
    }
    let action = match instr {
        Instruction::PickUp { color, shape } => {
            if scene.gripper.holding.is_some() {
                // Holding the wrong object (the right one would be complete).
                offload_action(scene)?
            } else {
                let id = scene.find_object_row_major(*color, *shape).ok_or_else(|| {
                    InfeasibleError(format!("no {} {} on the table", color.name(), shape.name()))
                })?;
                let super::scene::ObjectPlace::Cell(cell) = scene.objects[&id].place else {
                    unreachable!("row-major lookup returns on-table objects only");
                };
                goto_or(scene, cell, Action::Grasp)
            }
        }
        Instruction::PutIn { color, shape, region_color, region_kind } => {
            let region_id = scene.find_region(*region_color, *region_kind).ok_or_else(|| {
                InfeasibleError(format!(
                    "no {} {} on the table",
                    region_color.name(),
                    region_kind.name()
                ))
            })?;
            let holding_match = scene
                .gripper
                .holding
                .map(|id| scene.objects[&id].matches(*color, *shape))
                .unwrap_or(false);
            if holding_match {
                let region = &scene.regions[&region_id];
                let slot = region
                    .cells
                    .iter()
                    .find(|c| scene.object_at(**c).is_none())
                    .copied()
                    .ok_or_else(|| InfeasibleError("target region is full".into()))?;
                goto_or(scene, slot, Action::Release)
            } else if scene.gripper.holding.is_some() {
                offload_action(scene)?
            } else {
                let id = scene.find_object_row_major(*color, *shape).ok_or_else(|| {
                    InfeasibleError(format!("no {} {} on the table", color.name(), shape.name()))
                })?;
                let super::scene::ObjectPlace::Cell(cell) = scene.objects[&id].place else {
                    unreachable!("row-major lookup returns on-table objects only");
                };
                goto_or(scene, cell, Action::Grasp)
            }
        }
        Instruction::CloseDrawer => {
            let drawer = scene
                .regions
                .values()
                .find(|r| r.kind == RegionKind::Drawer)
                .ok_or_else(|| InfeasibleError("no drawer in the scene".into()))?;
            if scene.gripper.holding.is_some() {
                offload_action(scene)?
            } else {
                let handle = drawer.handle_cell().expect("regions are nonempty");
                goto_or(scene, handle, Action::Grasp)
            }
        }
    };
    Ok(Some(action))
}

const EXPERT_STEP_CAP: usize = 10_000;

/// Full expert rollout: the action sequence and the scene after each
/// action. Empty when the instruction is already complete.
pub fn expert_rollout(
    scene: &Scene,
    instr: &Instruction,
) -> Result<(Vec<Action>, Vec<Scene>), InfeasibleError> {
    let mut current = scene.clone();
    let mut actions = Vec::new();
    let mut scenes = Vec::new();
    while let Some(a) = next_action(&current, instr)? {
        current = step(&current, a);
        actions.push(a);
        scenes.push(current.clone());
        if actions.len() > EXPERT_STEP_CAP {
            return Err(InfeasibleError(format!(
                "expert made no progress on {instr} within {EXPERT_STEP_CAP} steps"
            )));
        }
    }
    Ok((actions, scenes))
}

pub fn expert_actions(scene: &Scene, instr: &Instruction) -> Result<Vec<Action>, InfeasibleError> {
    expert_rollout(scene, instr).map(|(actions, _)| actions)
}

/// Oracle world model: the scene after optimal scripted execution of the
/// instruction. The input scene is untouched.
pub fn simulate_subtask(scene: &Scene, instruction: &str) -> Result<Scene, SubtaskError> {
    let instr = parse_instruction(instruction)?;
    let (_, scenes) = expert_rollout(scene, &instr)?;
    Ok(scenes.last().cloned().unwrap_or_else(|| scene.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::grammar::instruction_complete;
    use crate::gridworld::scene::{
        Cell, Color, ObjectPlace, Region, SceneObject, Shape,
    };
    use std::collections::BTreeSet;

    fn pick_place_scene() -> Scene {
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
                place: ObjectPlace::Cell(Cell::new(5, 1)),
            },
        );
        let cells: BTreeSet<Cell> =
            [Cell::new(9, 6), Cell::new(10, 6), Cell::new(9, 7), Cell::new(10, 7)]
                .into_iter()
                .collect();
        s.regions.insert(
            1,
            Region { kind: RegionKind::Box, color: Color::Blue, cells, closed: false },
        );
        s
    }

    #[test]
    fn expert_completes_put_in() {
        let s = pick_place_scene();
        let done = simulate_subtask(&s, "put the red block in the blue box").unwrap();
        let instr = parse_instruction("put the red block in the blue box").unwrap();
        assert!(instruction_complete(&done, &instr));
        assert_eq!(done.gripper.holding, None);
        // input unmodified
        assert_eq!(s.objects[&1].place, ObjectPlace::Cell(Cell::new(2, 3)));
    }

    #[test]
    fn already_complete_instruction_is_identity() {
        let s = pick_place_scene();
        let done = simulate_subtask(&s, "put the red block in the blue box").unwrap();
        let again = simulate_subtask(&done, "put the red block in the blue box").unwrap();
        assert_eq!(again, done);
    }

    #[test]
    fn absent_object_is_infeasible() {
        let s = pick_place_scene();
        assert!(matches!(
            simulate_subtask(&s, "put the purple cup in the blue box"),
            Err(SubtaskError::Infeasible(_))
        ));
    }

    #[test]
    fn off_grammar_text_is_a_grammar_error() {
        let s = pick_place_scene();
        assert!(matches!(
            simulate_subtask(&s, "tidy everything up"),
            Err(SubtaskError::Grammar(_))
        ));
    }

    #[test]
    fn expert_pick_up_ends_holding_target() {
        let s = pick_place_scene();
        let done = simulate_subtask(&s, "pick up the green ball").unwrap();
        assert_eq!(done.gripper.holding, Some(2));
    }

    #[test]
    fn expert_closes_drawer_via_handle() {
        let mut s = pick_place_scene();
        let cells: BTreeSet<Cell> = [Cell::new(0, 8), Cell::new(1, 8)].into_iter().collect();
        s.regions.insert(
            2,
            Region { kind: RegionKind::Drawer, color: Color::Yellow, cells, closed: false },
        );
        let done = simulate_subtask(&s, "close the drawer").unwrap();
        assert!(done.regions[&2].closed);
    }

    #[test]
    fn expert_offloads_wrong_held_object_first() {
        let mut s = pick_place_scene();
        s.objects.get_mut(&2).unwrap().place = ObjectPlace::Held;
        s.gripper.holding = Some(2);
        let done = simulate_subtask(&s, "pick up the red block").unwrap();
        assert_eq!(done.gripper.holding, Some(1));
        assert!(matches!(done.objects[&2].place, ObjectPlace::Cell(_)));
    }

    #[test]
    fn rollout_scenes_match_step_replay() {
        let s = pick_place_scene();
        let instr = parse_instruction("put the red block in the blue box").unwrap();
        let (actions, scenes) = expert_rollout(&s, &instr).unwrap();
        assert_eq!(actions.len(), scenes.len());
        let mut replay = s.clone();
        for (a, expected) in actions.iter().zip(&scenes) {
            replay = step(&replay, *a);
            assert_eq!(&replay, expected);
        }
    }
}
