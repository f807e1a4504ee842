//! Pixel-space reference policies.
//!
//! Both policies are total: anything they cannot decode, parse, or
//! ground degrades to a NoOp chunk rather than an error, matching the
//! no-op semantics of the environment itself.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{Action, ActionChunk, Observation, PolicyContract, DEFAULT_HORIZON, GOAL_SLOT};
use crate::gridworld::{
    decode_scene, expert_rollout, parse_instruction, step, Cell, Color, ObjectPlace, RegionKind,
    Scene, Shape,
};

fn chunk_from(actions: Vec<Action>, horizon: usize) -> ActionChunk {
    ActionChunk::fitted(actions, horizon)
}

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

type Descriptor = (Color, Shape);

fn on_table_cells(scene: &Scene) -> BTreeMap<Descriptor, BTreeSet<Cell>> {
    let mut map: BTreeMap<Descriptor, BTreeSet<Cell>> = BTreeMap::new();
    for o in scene.objects.values() {
        if let ObjectPlace::Cell(c) = o.place {
            map.entry((o.color, o.shape)).or_default().insert(c);
        }
    }
    map
}

fn held_descriptor(scene: &Scene) -> Option<Descriptor> {
    scene.gripper.holding.map(|id| {
        let o = &scene.objects[&id];
        (o.color, o.shape)
    })
}

/// Next action reducing the difference between `cur` and `goal`, or
/// `None` when every goal placement, held object, and drawer state is
/// already satisfied.
fn next_goal_action(cur: &Scene, goal: &Scene) -> Option<Action> {
    let cur_cells = on_table_cells(cur);
    let goal_cells = on_table_cells(goal);

    // (descriptor, cell) placements required by the goal but absent now,
    // in row-major order of the goal cell.
    let mut needed: Vec<(Cell, Descriptor)> = Vec::new();
    for (desc, cells) in &goal_cells {
        let have = cur_cells.get(desc).cloned().unwrap_or_default();
        for c in cells.difference(&have) {
            needed.push((*c, *desc));
        }
    }
    needed.sort();

    let surplus_source = |desc: &Descriptor| -> Option<Cell> {
        let have = cur_cells.get(desc).cloned().unwrap_or_default();
        let want = goal_cells.get(desc).cloned().unwrap_or_default();
        have.difference(&want).next().copied()
    };

    if let Some((target, desc)) = needed.first().copied() {
        let holding = held_descriptor(cur);
        if holding == Some(desc) {
            if cur.gripper.cell == target {
                return Some(Action::Release);
            }
            return move_toward(cur.gripper.cell, target);
        }
        if holding.is_some() {
            // holding something the goal wants elsewhere: park it on the
            // first free plain cell
            let spot = cur.free_plain_cells().first().copied()?;
            if cur.gripper.cell == spot {
                return Some(Action::Release);
            }
            return move_toward(cur.gripper.cell, spot);
        }
        let source = surplus_source(&desc)?;
        if cur.gripper.cell == source {
            return Some(Action::Grasp);
        }
        return move_toward(cur.gripper.cell, source);
    }

    // goal wants an object in the gripper
    if let Some(desc) = held_descriptor(goal) {
        if held_descriptor(cur) != Some(desc) {
            let source = surplus_source(&desc).or_else(|| {
                cur_cells.get(&desc).and_then(|cells| cells.iter().next().copied())
            })?;
            if cur.gripper.cell == source {
                return Some(Action::Grasp);
            }
            return move_toward(cur.gripper.cell, source);
        }
    } else if held_descriptor(cur).is_some() && !needed.is_empty() {
        // unreachable: needed handled above; kept for clarity
    }

    // drawer states: close any drawer the goal shows closed
    for goal_region in goal.regions.values() {
        if goal_region.kind != RegionKind::Drawer || !goal_region.closed {
            continue;
        }
        let open_here = cur
            .regions
            .values()
            .find(|r| r.kind == RegionKind::Drawer && r.color == goal_region.color && !r.closed);
        if let Some(drawer) = open_here {
            if held_descriptor(cur).is_some() {
                let spot = cur.free_plain_cells().first().copied()?;
                if cur.gripper.cell == spot {
                    return Some(Action::Release);
                }
                return move_toward(cur.gripper.cell, spot);
            }
            let handle = drawer.handle_cell()?;
            if cur.gripper.cell == handle {
                return Some(Action::Grasp);
            }
            return move_toward(cur.gripper.cell, handle);
        }
    }

    None
}

/// Visual servoing against the foresight image: decodes both the head
/// view and the goal slot, then moves objects until the scene matches
/// the goal. Ignores the subtask text entirely.
pub struct GoalImagePolicy {
    pub horizon: usize,
}

impl Default for GoalImagePolicy {
    fn default() -> Self {
        Self { horizon: DEFAULT_HORIZON }
    }
}

impl PolicyContract for GoalImagePolicy {
    fn act(&self, augmented: &Observation, _subtask_text: &str) -> ActionChunk {
        let Some(goal_img) = augmented.cameras.get(&GOAL_SLOT) else {
            return ActionChunk::noop(self.horizon);
        };
        let (Ok(mut cur), Ok(goal)) = (decode_scene(augmented.head()), decode_scene(goal_img))
        else {
            return ActionChunk::noop(self.horizon);
        };
        let mut actions = Vec::with_capacity(self.horizon);
        while actions.len() < self.horizon {
            match next_goal_action(&cur, &goal) {
                Some(a) => {
                    cur = step(&cur, a);
                    actions.push(a);
                }
                None => break,
            }
        }
        chunk_from(actions, self.horizon)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Language-conditioned policy: parses the instruction and executes it
/// with the scripted expert, but only for instructions it can ground.
///
/// The grounding table is the set of canonical instruction texts present
/// in the policy's training configurations; `None` means unrestricted
/// (the scripted expert itself).
pub struct TextPolicy {
    pub horizon: usize,
    grounding: Option<BTreeSet<String>>,
}

impl TextPolicy {
    pub fn unrestricted() -> Self {
        Self { horizon: DEFAULT_HORIZON, grounding: None }
    }

    pub fn with_grounding(grounding: BTreeSet<String>) -> Self {
        Self { horizon: DEFAULT_HORIZON, grounding: Some(grounding) }
    }

    pub fn can_ground(&self, canonical_instruction: &str) -> bool {
        match &self.grounding {
            None => true,
            Some(set) => set.contains(canonical_instruction),
        }
    }
}

impl PolicyContract for TextPolicy {
    fn act(&self, augmented: &Observation, subtask_text: &str) -> ActionChunk {
        let Ok(instr) = parse_instruction(subtask_text) else {
            return ActionChunk::noop(self.horizon);
        };
        if !self.can_ground(&instr.to_string()) {
            return ActionChunk::noop(self.horizon);
        }
        let Ok(scene) = decode_scene(augmented.head()) else {
            return ActionChunk::noop(self.horizon);
        };
        match expert_rollout(&scene, &instr) {
            Ok((actions, _)) => chunk_from(actions, self.horizon),
            Err(_) => ActionChunk::noop(self.horizon),
        }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Policy that never acts; useful as a failure baseline.
pub struct NoopPolicy {
    pub horizon: usize,
}

impl PolicyContract for NoopPolicy {
    fn act(&self, _augmented: &Observation, _subtask_text: &str) -> ActionChunk {
        ActionChunk::noop(self.horizon)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}
