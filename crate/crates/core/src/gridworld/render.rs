//! Deterministic rasterizer and its pixel-space inverse.
//!
//! Every cell becomes a 4x4 block with fixed marker positions, so a
//! head-camera image can be decoded back into the exact symbolic scene.
//! That inverse is what lets the oracle foresight generator and the
//! goal-image policy stay pixel-only.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::Image;

use super::scene::{
    Cell, Color, Gripper, ObjectPlace, Region, RegionKind, Scene, SceneObject, Shape,
};

/// Pixels per cell side.
pub const CELL_PX: u16 = 4;
pub const HEAD_CAMERA_ID: u8 = 0;
pub const WRIST_CAMERA_ID: u8 = 1;
/// Wrist camera covers a 5x5 cell window centered on the gripper.
pub const WRIST_SPAN: u16 = 5;

const BG: [u8; 3] = [16, 16, 16];
const PAD: [u8; 3] = [0, 0, 0];
const GRIPPER_MARK: [u8; 3] = [255, 255, 255];
const DRAWER_CLOSED_MARK: [u8; 3] = [255, 255, 255];
const DRAWER_OPEN_MARK: [u8; 3] = [90, 90, 90];

fn color_rgb(c: Color) -> [u8; 3] {
    match c {
        Color::Red => [220, 40, 40],
        Color::Green => [40, 200, 40],
        Color::Blue => [60, 60, 230],
        Color::Yellow => [230, 220, 40],
        Color::Orange => [240, 140, 30],
        Color::Purple => [160, 50, 200],
        Color::Cyan => [40, 210, 210],
        Color::White => [235, 235, 235],
    }
}

fn dim(rgb: [u8; 3]) -> [u8; 3] {
    [rgb[0] / 3, rgb[1] / 3, rgb[2] / 3]
}

fn shape_mark(s: Shape) -> [u8; 3] {
    let v = match s {
        Shape::Block => 50,
        Shape::Ball => 100,
        Shape::Cup => 150,
        Shape::Can => 200,
    };
    [v, v, v]
}

fn kind_mark(k: RegionKind) -> [u8; 3] {
    let v = match k {
        RegionKind::Plate => 60,
        RegionKind::Bin => 100,
        RegionKind::Box => 140,
        RegionKind::Drawer => 180,
    };
    [v, v, v]
}

fn shape_from_mark(px: [u8; 3]) -> Option<Shape> {
    Shape::ALL.into_iter().find(|s| shape_mark(*s) == px)
}

fn kind_from_mark(px: [u8; 3]) -> Option<RegionKind> {
    RegionKind::ALL.into_iter().find(|k| kind_mark(*k) == px)
}

fn color_from_bright(px: [u8; 3]) -> Option<Color> {
    Color::ALL.into_iter().find(|c| color_rgb(*c) == px)
}

fn color_from_dim(px: [u8; 3]) -> Option<Color> {
    Color::ALL.into_iter().find(|c| dim(color_rgb(*c)) == px)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("unknown camera id {0}")]
    UnknownCamera(u8),
}

// Marker layout inside a cell block (bx, by in 0..4):
//   (0,0) and (3,3)  gripper corners (white)
//   (1,0), (2,0)     held-object color / shape (gripper cell only)
//   (1,1), (2,2), (1,2)  object bright fill
//   (2,1)            object shape code
//   (0,3)            drawer state (drawer cells only)
//   (1,3), (2,3)     region dim color / kind code
fn paint_cell(img: &mut Image, px0: u16, py0: u16, scene: &Scene, cell: Cell) {
    let base = match scene.region_at(cell) {
        Some(rid) => dim(color_rgb(scene.regions[&rid].color)),
        None => BG,
    };
    for by in 0..CELL_PX {
        for bx in 0..CELL_PX {
            img.set_pixel(px0 + bx, py0 + by, base);
        }
    }
    if let Some(rid) = scene.region_at(cell) {
        let r = &scene.regions[&rid];
        img.set_pixel(px0 + 1, py0 + 3, dim(color_rgb(r.color)));
        img.set_pixel(px0 + 2, py0 + 3, kind_mark(r.kind));
        if r.kind == RegionKind::Drawer {
            let mark = if r.closed { DRAWER_CLOSED_MARK } else { DRAWER_OPEN_MARK };
            img.set_pixel(px0, py0 + 3, mark);
        }
    }
    if let Some(oid) = scene.object_at(cell) {
        let o = &scene.objects[&oid];
        let bright = color_rgb(o.color);
        img.set_pixel(px0 + 1, py0 + 1, bright);
        img.set_pixel(px0 + 2, py0 + 2, bright);
        img.set_pixel(px0 + 1, py0 + 2, bright);
        img.set_pixel(px0 + 2, py0 + 1, shape_mark(o.shape));
    }
    if scene.gripper.cell == cell {
        img.set_pixel(px0, py0, GRIPPER_MARK);
        img.set_pixel(px0 + 3, py0 + 3, GRIPPER_MARK);
        if let Some(held) = scene.gripper.holding {
            let o = &scene.objects[&held];
            img.set_pixel(px0 + 1, py0, color_rgb(o.color));
            img.set_pixel(px0 + 2, py0, shape_mark(o.shape));
        }
    }
}

fn render_head(scene: &Scene) -> Image {
    let w = scene.grid_w as u16 * CELL_PX;
    let h = scene.grid_h as u16 * CELL_PX;
    let mut img = Image::filled(w, h, BG);
    for y in 0..scene.grid_h {
        for x in 0..scene.grid_w {
            paint_cell(&mut img, x as u16 * CELL_PX, y as u16 * CELL_PX, scene, Cell::new(x, y));
        }
    }
    img
}

fn render_wrist(scene: &Scene) -> Image {
    let side = WRIST_SPAN * CELL_PX;
    let mut img = Image::filled(side, side, PAD);
    let half = (WRIST_SPAN / 2) as i32;
    for wy in 0..WRIST_SPAN as i32 {
        for wx in 0..WRIST_SPAN as i32 {
            let gx = scene.gripper.cell.x as i32 + wx - half;
            let gy = scene.gripper.cell.y as i32 + wy - half;
            if gx < 0 || gy < 0 || gx >= scene.grid_w as i32 || gy >= scene.grid_h as i32 {
                continue;
            }
            paint_cell(
                &mut img,
                wx as u16 * CELL_PX,
                wy as u16 * CELL_PX,
                scene,
                Cell::new(gx as u8, gy as u8),
            );
        }
    }
    img
}

/// Rasterize a camera view. Camera 0 is the full-grid head view, camera 1
/// the 5x5 wrist crop.
pub fn render(scene: &Scene, camera_id: u8) -> Result<Image, RenderError> {
    match camera_id {
        HEAD_CAMERA_ID => Ok(render_head(scene)),
        WRIST_CAMERA_ID => Ok(render_wrist(scene)),
        other => Err(RenderError::UnknownCamera(other)),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("image {w}x{h} is not a whole number of {CELL_PX}px cells")]
    BadDimensions { w: u16, h: u16 },
    #[error("unrecognized pixel pattern at cell ({x},{y}): {what}")]
    BadCell { x: u8, y: u8, what: String },
    #[error("no gripper marker found")]
    NoGripper,
}

/// Inverse of the head-camera render: reconstruct the symbolic scene
/// from pixels. Object and region ids are reassigned in row-major order.
pub fn decode_scene(img: &Image) -> Result<Scene, DecodeError> {
    if img.width() % CELL_PX != 0 || img.height() % CELL_PX != 0 {
        return Err(DecodeError::BadDimensions { w: img.width(), h: img.height() });
    }
    let grid_w = (img.width() / CELL_PX) as u8;
    let grid_h = (img.height() / CELL_PX) as u8;
    let mut scene = Scene::empty(grid_w, grid_h);
    let mut next_object: u32 = 1;
    let mut region_groups: BTreeMap<(RegionKind, Color), (Vec<Cell>, bool)> = BTreeMap::new();
    let mut gripper: Option<Gripper> = None;

    for y in 0..grid_h {
        for x in 0..grid_w {
            let px0 = x as u16 * CELL_PX;
            let py0 = y as u16 * CELL_PX;
            let cell = Cell::new(x, y);
            let at = |bx: u16, by: u16| img.pixel(px0 + bx, py0 + by);

            if let Some(kind) = kind_from_mark(at(2, 3)) {
                let color = color_from_dim(at(1, 3)).ok_or_else(|| DecodeError::BadCell {
                    x,
                    y,
                    what: "region color marker".into(),
                })?;
                let closed = kind == RegionKind::Drawer && at(0, 3) == DRAWER_CLOSED_MARK;
                let entry = region_groups.entry((kind, color)).or_insert_with(|| (Vec::new(), true));
                entry.0.push(cell);
                entry.1 &= closed;
            }

            if let Some(shape) = shape_from_mark(at(2, 1)) {
                let color = color_from_bright(at(1, 1)).ok_or_else(|| DecodeError::BadCell {
                    x,
                    y,
                    what: "object color marker".into(),
                })?;
                scene
                    .objects
                    .insert(next_object, SceneObject { color, shape, place: ObjectPlace::Cell(cell) });
                next_object += 1;
            }

            if at(0, 0) == GRIPPER_MARK && at(3, 3) == GRIPPER_MARK {
                let mut g = Gripper { cell, holding: None };
                if let Some(shape) = shape_from_mark(at(2, 0)) {
                    let color = color_from_bright(at(1, 0)).ok_or_else(|| DecodeError::BadCell {
                        x,
                        y,
                        what: "held object color marker".into(),
                    })?;
                    scene
                        .objects
                        .insert(next_object, SceneObject { color, shape, place: ObjectPlace::Held });
                    g.holding = Some(next_object);
                    next_object += 1;
                }
                gripper = Some(g);
            }
        }
    }

    // Region ids in order of first appearance (row-major).
    let mut groups: Vec<((RegionKind, Color), (Vec<Cell>, bool))> =
        region_groups.into_iter().collect();
    groups.sort_by_key(|(_, (cells, _))| cells[0]);
    for (rid, ((kind, color), (cells, closed))) in groups.into_iter().enumerate() {
        scene.regions.insert(
            rid as u32 + 1,
            Region {
                kind,
                color,
                cells: cells.into_iter().collect(),
                closed: kind == RegionKind::Drawer && closed,
            },
        );
    }

    scene.gripper = gripper.ok_or(DecodeError::NoGripper)?;
    Ok(scene)
}
