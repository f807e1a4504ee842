//! Helpers shared by the property and acceptance test targets.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use foresight_core::datapipe::{EpisodeManifest, OffsetPolicy, TrainingPair};
use foresight_core::domain::{Decision, Image, Observation};
use foresight_core::gridworld::{simulate_subtask, Scene};
use foresight_core::planner::{completion_predicate, PlannerSession, RulePlanner};

pub fn random_scene(rng: &mut StdRng) -> Scene {
    use foresight_core::gridworld::{
        Cell, Color, ObjectPlace, Region, RegionKind, SceneObject, Shape,
    };
    use std::collections::BTreeSet;

    let colors = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Orange];
    let shapes = [Shape::Block, Shape::Ball, Shape::Cup, Shape::Can];
    let mut scene = Scene::empty(12, 9);
    let mut used: BTreeSet<Cell> = BTreeSet::new();
    used.insert(Cell::new(0, 0)); // gripper start
    let object_count = rng.random_range(1..=4usize);
    let mut descriptors: BTreeSet<(Color, Shape)> = BTreeSet::new();
    let mut id = 1u32;
    while (id as usize) <= object_count {
        let color = colors[rng.random_range(0..colors.len())];
        let shape = shapes[rng.random_range(0..shapes.len())];
        if !descriptors.insert((color, shape)) {
            continue;
        }
        loop {
            let cell = Cell::new(rng.random_range(0..12), rng.random_range(0..9));
            if used.insert(cell) {
                scene
                    .objects
                    .insert(id, SceneObject { color, shape, place: ObjectPlace::Cell(cell) });
                break;
            }
        }
        id += 1;
    }
    let kinds = [RegionKind::Bin, RegionKind::Box, RegionKind::Plate];
    let region_count = rng.random_range(1..=2usize);
    for rid in 1..=region_count as u32 {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let color = colors[rng.random_range(0..colors.len())];
        let mut cells: BTreeSet<Cell> = BTreeSet::new();
        while cells.len() < 2 {
            let cell = Cell::new(rng.random_range(0..12), rng.random_range(0..9));
            if used.insert(cell) {
                cells.insert(cell);
            }
        }
        scene.regions.insert(rid, Region { kind, color, cells, closed: false });
    }
    scene.validate().expect("generated scene is valid");
    scene
}

pub fn random_task(rng: &mut StdRng, scene: &Scene) -> String {
    use foresight_core::gridworld::RegionKind;
    let objects: Vec<_> = scene.objects.values().collect();
    let steps = rng.random_range(1..=3usize.min(objects.len()));
    let mut parts = Vec::new();
    for o in objects.iter().take(steps) {
        if rng.random_bool(0.5) {
            parts.push(format!("pick up the {} {}", o.color.name(), o.shape.name()));
            break; // a pickup occupies the gripper; keep it last
        }
        let (_, region) = scene
            .regions
            .iter()
            .nth(rng.random_range(0..scene.regions.len()))
            .expect("regions exist");
        let connective = if region.kind == RegionKind::Plate { "on" } else { "in" };
        parts.push(format!(
            "put the {} {} {connective} the {} {}",
            o.color.name(),
            o.shape.name(),
            region.color.name(),
            region.kind.name(),
        ));
    }
    parts.join(" then ")
}

pub fn tiny_obs(step_index: u32) -> Observation {
    let mut cameras = BTreeMap::new();
    cameras.insert(0u8, Image::filled(1, 1, [0, 0, 0]));
    Observation { step_index, timestamp_ms: 0, cameras, proprio: vec![] }
}

/// Drives one randomized session to termination, checking every response
/// against the state-machine contract. Returns the number of planner
/// calls made, or a description of the violated property.
pub fn check_session(seed: u64, retry_cap: u32) -> Result<u32, String> {
    fn ensure(cond: bool, msg: impl Fn() -> String) -> Result<(), String> {
        if cond {
            Ok(())
        } else {
            Err(msg())
        }
    }

    let mut rng = StdRng::seed_from_u64(seed);
    let mut scene = random_scene(&mut rng);
    let task = random_task(&mut rng, &scene);
    let planner = RulePlanner { retry_cap };
    let mut session = PlannerSession::new(&task);

    let mut calls = 0u32;
    let mut last_plan_step: Option<u32> = None;
    let mut current: Option<String> = None;
    let mut continues_for_current = 0u32;

    loop {
        let obs = tiny_obs(calls);
        let digest = serde_json::to_vec(&scene).expect("scene digest");
        let packet = planner
            .plan_with_digest(&mut session, &obs, Some(&digest))
            .map_err(|e| format!("unexpected session error: {e}"))?;
        calls += 1;
        ensure(calls < 200, || "session failed to terminate".into())?;

        if let Some(last) = last_plan_step {
            ensure(packet.plan_step >= last, || "plan_step regressed".into())?;
            ensure(packet.plan_step <= last + 1, || "plan_step skipped".into())?;
        }
        match packet.decision {
            Decision::Advance => {
                if let Some(prev) = &current {
                    let done =
                        completion_predicate(prev, &scene).expect("planner texts parse");
                    ensure(done, || format!("advanced past incomplete subtask {prev:?}"))?;
                    ensure(packet.plan_step == last_plan_step.expect("had a step") + 1, || {
                        "each Advance bumps plan_step once".into()
                    })?;
                }
                ensure(!packet.subtask_text.is_empty(), || "Advance without text".into())?;
                current = Some(packet.subtask_text.clone());
                continues_for_current = 0;
            }
            Decision::Continue => {
                let cur = current.clone().ok_or("Continue without active subtask")?;
                ensure(packet.subtask_text == cur, || {
                    "Continue must repeat the subtask verbatim".into()
                })?;
                ensure(packet.plan_step == last_plan_step.expect("had a step"), || {
                    "Continue keeps plan_step".into()
                })?;
                continues_for_current += 1;
                ensure(continues_for_current <= retry_cap, || {
                    "more Continues than the retry cap".into()
                })?;
            }
            Decision::Done => {
                if let Some(prev) = &current {
                    let done =
                        completion_predicate(prev, &scene).expect("planner texts parse");
                    ensure(done, || format!("Done with incomplete subtask {prev:?}"))?;
                }
                return Ok(calls);
            }
            Decision::Unrecoverable => {
                if current.is_some() {
                    ensure(continues_for_current == retry_cap, || {
                        format!(
                            "Unrecoverable after {continues_for_current} Continues, cap {retry_cap}"
                        )
                    })?;
                }
                return Ok(calls);
            }
        }
        last_plan_step = Some(packet.plan_step);

        // random environment evolution: sometimes complete the current
        // subtask, sometimes stall
        if let Some(cur) = &current {
            if rng.random_bool(0.55) {
                if let Ok(next) = simulate_subtask(&scene, cur) {
                    scene = next;
                }
            }
        }
    }
}

/// Deliberately naive re-derivation of the pair-sampling rule, kept free
/// of the production code's iterator structure.
pub fn brute_force_pairs(manifest: &EpisodeManifest, policy: OffsetPolicy) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    for (subtask_index, seg) in manifest.subtasks.iter().enumerate() {
        let s = seg.start_frame;
        let e = seg.end_frame;
        let mut c = s;
        while c <= e {
            let future = match policy {
                OffsetPolicy::HalfLength => (c + (e - s) / 2).min(e),
                OffsetPolicy::FinalState => e,
            };
            if c < future {
                out.push(TrainingPair {
                    episode_id: manifest.episode_id.clone(),
                    subtask_index: subtask_index as u32,
                    cond_frame: c,
                    future_frame: future,
                    instruction: seg.instruction.clone(),
                    offset_policy: policy,
                });
            }
            match c.checked_add(manifest.fps) {
                Some(next) => c = next,
                None => break,
            }
        }
    }
    out
}
