//! Scene state and the deterministic transition function.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::Action;

pub type ObjectId = u32;
pub type RegionId = u32;

/// Grid cell, x growing right and y growing down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: u8,
    pub y: u8,
}

impl Cell {
    pub fn new(x: u8, y: u8) -> Self {
        Self { x, y }
    }
}

// Row-major ordering (scan rows top to bottom, left to right) is the
// tie-break rule everywhere ambiguity can arise.
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Purple,
    Cyan,
    White,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Orange,
        Color::Purple,
        Color::Cyan,
        Color::White,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::Cyan => "cyan",
            Color::White => "white",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Shape {
    Block,
    Ball,
    Cup,
    Can,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Block, Shape::Ball, Shape::Cup, Shape::Can];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Block => "block",
            Shape::Ball => "ball",
            Shape::Cup => "cup",
            Shape::Can => "can",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionKind {
    Plate,
    Bin,
    Box,
    Drawer,
}

impl RegionKind {
    pub const ALL: [RegionKind; 4] =
        [RegionKind::Plate, RegionKind::Bin, RegionKind::Box, RegionKind::Drawer];

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Plate => "plate",
            RegionKind::Bin => "bin",
            RegionKind::Box => "box",
            RegionKind::Drawer => "drawer",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectPlace {
    Cell(Cell),
    Held,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub color: Color,
    pub shape: Shape,
    pub place: ObjectPlace,
}

impl SceneObject {
    pub fn matches(&self, color: Color, shape: Shape) -> bool {
        self.color == color && self.shape == shape
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub color: Color,
    pub cells: BTreeSet<Cell>,
    /// Only meaningful for drawers; non-drawers keep it false.
    #[serde(default)]
    pub closed: bool,
}

impl Region {
    /// The cell the gripper must push to close a drawer (its first cell
    /// in row-major order).
    pub fn handle_cell(&self) -> Option<Cell> {
        self.cells.iter().next().copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gripper {
    pub cell: Cell,
    pub holding: Option<ObjectId>,
}

/// Full symbolic tabletop state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub grid_w: u8,
    pub grid_h: u8,
    pub objects: BTreeMap<ObjectId, SceneObject>,
    pub regions: BTreeMap<RegionId, Region>,
    pub gripper: Gripper,
}

pub const DEFAULT_GRID_W: u8 = 12;
pub const DEFAULT_GRID_H: u8 = 9;

impl Scene {
    pub fn empty(grid_w: u8, grid_h: u8) -> Self {
        Self {
            grid_w,
            grid_h,
            objects: BTreeMap::new(),
            regions: BTreeMap::new(),
            gripper: Gripper { cell: Cell::new(0, 0), holding: None },
        }
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.grid_w && cell.y < self.grid_h
    }

    pub fn object_at(&self, cell: Cell) -> Option<ObjectId> {
        self.objects
            .iter()
            .find(|(_, o)| o.place == ObjectPlace::Cell(cell))
            .map(|(id, _)| *id)
    }

    pub fn region_at(&self, cell: Cell) -> Option<RegionId> {
        self.regions.iter().find(|(_, r)| r.cells.contains(&cell)).map(|(id, _)| *id)
    }

    /// First region matching (color, kind), in id order.
    pub fn find_region(&self, color: Color, kind: RegionKind) -> Option<RegionId> {
        self.regions
            .iter()
            .find(|(_, r)| r.color == color && r.kind == kind)
            .map(|(id, _)| *id)
    }

    /// First on-table object matching the descriptor, in row-major cell order.
    pub fn find_object_row_major(&self, color: Color, shape: Shape) -> Option<ObjectId> {
        self.objects
            .iter()
            .filter_map(|(id, o)| match o.place {
                ObjectPlace::Cell(c) if o.matches(color, shape) => Some((c, *id)),
                _ => None,
            })
            .min()
            .map(|(_, id)| id)
    }

    pub fn held_object(&self) -> Option<ObjectId> {
        self.gripper.holding
    }

    /// Cells with no object, no region, inside bounds (row-major order).
    pub fn free_plain_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.grid_h {
            for x in 0..self.grid_w {
                let c = Cell::new(x, y);
                if self.object_at(c).is_none() && self.region_at(c).is_none() {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Checks structural invariants: bounds, one object per cell, held
    /// object consistency.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        let mut held = 0usize;
        for (id, o) in &self.objects {
            match o.place {
                ObjectPlace::Cell(c) => {
                    if !self.in_bounds(c) {
                        return Err(format!("object {id} out of bounds at {c:?}"));
                    }
                    if !seen.insert(c) {
                        return Err(format!("two objects share cell {c:?}"));
                    }
                }
                ObjectPlace::Held => held += 1,
            }
        }
        if held > 1 {
            return Err("more than one held object".into());
        }
        match self.gripper.holding {
            Some(id) => match self.objects.get(&id) {
                Some(o) if o.place == ObjectPlace::Held => {}
                _ => return Err(format!("gripper claims to hold {id} but it is not Held")),
            },
            None => {
                if held != 0 {
                    return Err("held object without a holding gripper".into());
                }
            }
        }
        for (id, r) in &self.regions {
            if r.cells.is_empty() {
                return Err(format!("region {id} has no cells"));
            }
            for c in &r.cells {
                if !self.in_bounds(*c) {
                    return Err(format!("region {id} cell {c:?} out of bounds"));
                }
            }
        }
        if !self.in_bounds(self.gripper.cell) {
            return Err("gripper out of bounds".into());
        }
        Ok(())
    }
}

/// Atomic-action granularity for the scoring rubric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomicActionSpec {
    ApproachGrasp(ObjectId),
    MovePlace(ObjectId, RegionId),
}

/// Deterministic one-step transition. Total: illegal actions are no-ops,
/// like a physical gripper that simply fails to grasp air.
pub fn step(scene: &Scene, action: Action) -> Scene {
    let mut next = scene.clone();
    match action {
        Action::MoveUp => {
            next.gripper.cell.y = next.gripper.cell.y.saturating_sub(1);
        }
        Action::MoveDown => {
            if next.gripper.cell.y + 1 < next.grid_h {
                next.gripper.cell.y += 1;
            }
        }
        Action::MoveLeft => {
            next.gripper.cell.x = next.gripper.cell.x.saturating_sub(1);
        }
        Action::MoveRight => {
            if next.gripper.cell.x + 1 < next.grid_w {
                next.gripper.cell.x += 1;
            }
        }
        Action::Grasp => {
            if next.gripper.holding.is_none() {
                let at = next.gripper.cell;
                if let Some(id) = next.object_at(at) {
                    next.objects.get_mut(&id).expect("object id just found").place =
                        ObjectPlace::Held;
                    next.gripper.holding = Some(id);
                } else {
                    // Empty grasp on an open drawer's handle pushes it shut.
                    for r in next.regions.values_mut() {
                        if r.kind == RegionKind::Drawer
                            && !r.closed
                            && r.handle_cell() == Some(at)
                        {
                            r.closed = true;
                            break;
                        }
                    }
                }
            }
        }
        Action::Release => {
            if let Some(id) = next.gripper.holding {
                let at = next.gripper.cell;
                if next.object_at(at).is_none() {
                    next.objects.get_mut(&id).expect("held object exists").place =
                        ObjectPlace::Cell(at);
                    next.gripper.holding = None;
                }
            }
        }
        Action::NoOp => {}
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene() -> Scene {
        let mut s = Scene::empty(4, 3);
        s.objects.insert(
            1,
            SceneObject {
                color: Color::Red,
                shape: Shape::Block,
                place: ObjectPlace::Cell(Cell::new(2, 1)),
            },
        );
        s
    }

    #[test]
    fn move_clamps_at_borders() {
        let s = small_scene();
        assert_eq!(step(&s, Action::MoveLeft).gripper.cell, Cell::new(0, 0));
        assert_eq!(step(&s, Action::MoveUp).gripper.cell, Cell::new(0, 0));
        let mut far = s.clone();
        far.gripper.cell = Cell::new(3, 2);
        assert_eq!(step(&far, Action::MoveRight).gripper.cell, Cell::new(3, 2));
        assert_eq!(step(&far, Action::MoveDown).gripper.cell, Cell::new(3, 2));
    }

    #[test]
    fn grasp_picks_object_under_gripper() {
        let mut s = small_scene();
        s.gripper.cell = Cell::new(2, 1);
        let next = step(&s, Action::Grasp);
        assert_eq!(next.gripper.holding, Some(1));
        assert_eq!(next.objects[&1].place, ObjectPlace::Held);
        next.validate().unwrap();
    }

    #[test]
    fn grasp_on_empty_cell_is_noop() {
        let s = small_scene();
        assert_eq!(step(&s, Action::Grasp), s);
    }

    #[test]
    fn grasp_while_holding_has_no_effect() {
        let mut s = small_scene();
        s.gripper.cell = Cell::new(2, 1);
        let holding = step(&s, Action::Grasp);
        assert_eq!(step(&holding, Action::Grasp), holding);
    }

    #[test]
    fn release_places_into_empty_cell_only() {
        let mut s = small_scene();
        s.gripper.cell = Cell::new(2, 1);
        let mut holding = step(&s, Action::Grasp);
        // occupied cell blocks release
        holding.objects.insert(
            2,
            SceneObject {
                color: Color::Blue,
                shape: Shape::Ball,
                place: ObjectPlace::Cell(Cell::new(2, 1)),
            },
        );
        assert_eq!(step(&holding, Action::Release), holding);
        holding.objects.remove(&2);
        let released = step(&holding, Action::Release);
        assert_eq!(released.gripper.holding, None);
        assert_eq!(released.objects[&1].place, ObjectPlace::Cell(Cell::new(2, 1)));
    }

    #[test]
    fn noop_is_identity() {
        let s = small_scene();
        assert_eq!(step(&s, Action::NoOp), s);
    }

    #[test]
    fn empty_grasp_on_drawer_handle_closes_it() {
        let mut s = Scene::empty(6, 4);
        let cells: BTreeSet<Cell> = [Cell::new(4, 1), Cell::new(5, 1)].into_iter().collect();
        s.regions.insert(
            7,
            Region { kind: RegionKind::Drawer, color: Color::Yellow, cells, closed: false },
        );
        s.gripper.cell = Cell::new(4, 1);
        let next = step(&s, Action::Grasp);
        assert!(next.regions[&7].closed);
        // closing twice changes nothing
        assert_eq!(step(&next, Action::Grasp), next);
    }

    #[test]
    fn object_conservation_under_random_walk() {
        let mut s = small_scene();
        let ids: Vec<_> = s.objects.keys().copied().collect();
        let script = [
            Action::MoveRight,
            Action::MoveRight,
            Action::MoveDown,
            Action::Grasp,
            Action::MoveLeft,
            Action::Release,
            Action::Grasp,
            Action::MoveUp,
            Action::Release,
        ];
        for a in script {
            s = step(&s, a);
            s.validate().unwrap();
            assert_eq!(s.objects.keys().copied().collect::<Vec<_>>(), ids);
        }
    }

    #[test]
    fn row_major_object_lookup_breaks_ties() {
        let mut s = Scene::empty(5, 5);
        for (id, cell) in [(1, Cell::new(3, 2)), (2, Cell::new(1, 2)), (3, Cell::new(4, 0))] {
            s.objects.insert(
                id,
                SceneObject { color: Color::Red, shape: Shape::Block, place: ObjectPlace::Cell(cell) },
            );
        }
        // (4,0) is earliest in row-major order
        assert_eq!(s.find_object_row_major(Color::Red, Shape::Block), Some(3));
    }
}
