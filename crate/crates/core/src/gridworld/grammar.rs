//! Closed instruction grammar shared by the planner, the oracle world
//! model, and the reference policies.
//!
//! Templates:
//!   pick up the <color> <shape>
//!   put the <color> <shape> in|on the <color> <kind>
//!   close the drawer

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::{Color, ObjectPlace, RegionKind, Scene, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    PickUp { color: Color, shape: Shape },
    PutIn { color: Color, shape: Shape, region_color: Color, region_kind: RegionKind },
    CloseDrawer,
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::PickUp { color, shape } => {
                write!(f, "pick up the {} {}", color.name(), shape.name())
            }
            Instruction::PutIn { color, shape, region_color, region_kind } => {
                let prep = if *region_kind == RegionKind::Plate { "on" } else { "in" };
                write!(
                    f,
                    "put the {} {} {} the {} {}",
                    color.name(),
                    shape.name(),
                    prep,
                    region_color.name(),
                    region_kind.name()
                )
            }
            Instruction::CloseDrawer => write!(f, "close the drawer"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("instruction not in grammar: {text:?} ({reason})")]
pub struct GrammarError {
    pub text: String,
    pub reason: String,
}

fn err(text: &str, reason: impl Into<String>) -> GrammarError {
    GrammarError { text: text.to_string(), reason: reason.into() }
}

pub fn parse_instruction(text: &str) -> Result<Instruction, GrammarError> {
    let words: Vec<&str> = text.split_whitespace().collect();
    match words.as_slice() {
        ["close", "the", "drawer"] => Ok(Instruction::CloseDrawer),
        ["pick", "up", "the", color, shape] => {
            let color = Color::from_name(color).ok_or_else(|| err(text, "unknown color"))?;
            let shape = Shape::from_name(shape).ok_or_else(|| err(text, "unknown shape"))?;
            Ok(Instruction::PickUp { color, shape })
        }
        ["put", "the", color, shape, prep @ ("in" | "on"), "the", rcolor, rkind] => {
            let _ = prep;
            let color = Color::from_name(color).ok_or_else(|| err(text, "unknown color"))?;
            let shape = Shape::from_name(shape).ok_or_else(|| err(text, "unknown shape"))?;
            let region_color =
                Color::from_name(rcolor).ok_or_else(|| err(text, "unknown region color"))?;
            let region_kind =
                RegionKind::from_name(rkind).ok_or_else(|| err(text, "unknown region kind"))?;
            Ok(Instruction::PutIn { color, shape, region_color, region_kind })
        }
        _ => Err(err(text, "no matching template")),
    }
}

/// Decidable completion predicate for every grammar template.
pub fn instruction_complete(scene: &Scene, instr: &Instruction) -> bool {
    match instr {
        Instruction::PickUp { color, shape } => match scene.gripper.holding {
            Some(id) => scene.objects[&id].matches(*color, *shape),
            None => false,
        },
        Instruction::PutIn { color, shape, region_color, region_kind } => {
            let Some(region_id) = scene.find_region(*region_color, *region_kind) else {
                return false;
            };
            let region = &scene.regions[&region_id];
            scene.objects.values().any(|o| match o.place {
                ObjectPlace::Cell(c) => o.matches(*color, *shape) && region.cells.contains(&c),
                ObjectPlace::Held => false,
            })
        }
        Instruction::CloseDrawer => {
            let mut drawers = scene.regions.values().filter(|r| r.kind == RegionKind::Drawer);
            let mut any = false;
            for d in drawers.by_ref() {
                any = true;
                if !d.closed {
                    return false;
                }
            }
            any
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::scene::{Cell, Gripper, Region, SceneObject};
    use std::collections::BTreeSet;

    #[test]
    fn parse_round_trips_canonical_text() {
        for text in [
            "pick up the red block",
            "put the green ball in the blue box",
            "put the red cup on the yellow plate",
            "close the drawer",
        ] {
            let instr = parse_instruction(text).unwrap();
            assert_eq!(instr.to_string(), text);
        }
    }

    #[test]
    fn parse_rejects_off_grammar_text() {
        for text in ["", "pick the red block", "put the red block in blue box", "dance"] {
            assert!(parse_instruction(text).is_err(), "{text:?} should not parse");
        }
        assert!(parse_instruction("pick up the crimson block").is_err());
    }

    #[test]
    fn put_in_complete_only_when_object_rests_in_region() {
        let mut s = Scene::empty(6, 6);
        let cells: BTreeSet<Cell> = [Cell::new(4, 4), Cell::new(5, 4)].into_iter().collect();
        s.regions.insert(
            1,
            Region { kind: RegionKind::Box, color: Color::Blue, cells, closed: false },
        );
        s.objects.insert(
            1,
            SceneObject {
                color: Color::Red,
                shape: Shape::Block,
                place: ObjectPlace::Cell(Cell::new(0, 0)),
            },
        );
        let instr = parse_instruction("put the red block in the blue box").unwrap();
        assert!(!instruction_complete(&s, &instr));

        // held does not count
        s.objects.get_mut(&1).unwrap().place = ObjectPlace::Held;
        s.gripper = Gripper { cell: Cell::new(4, 4), holding: Some(1) };
        assert!(!instruction_complete(&s, &instr));

        s.objects.get_mut(&1).unwrap().place = ObjectPlace::Cell(Cell::new(4, 4));
        s.gripper.holding = None;
        assert!(instruction_complete(&s, &instr));
    }

    #[test]
    fn close_drawer_tracks_region_flag() {
        let mut s = Scene::empty(6, 6);
        let instr = Instruction::CloseDrawer;
        // no drawer at all: never complete
        assert!(!instruction_complete(&s, &instr));
        let cells: BTreeSet<Cell> = [Cell::new(1, 1)].into_iter().collect();
        s.regions.insert(
            1,
            Region { kind: RegionKind::Drawer, color: Color::Yellow, cells, closed: false },
        );
        assert!(!instruction_complete(&s, &instr));
        s.regions.get_mut(&1).unwrap().closed = true;
        assert!(instruction_complete(&s, &instr));
    }
}
