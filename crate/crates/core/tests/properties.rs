//! Property tests: wire codec round-trips and fuzz safety, planner
//! session invariants, and training-pair sampling against a brute-force
//! enumerator.

mod common;

use proptest::prelude::*;

use foresight_core::datapipe::{sample_pairs, EpisodeManifest, OffsetPolicy, SubtaskSegment};
use foresight_core::domain::{Decision, Image};
use foresight_core::edgecloud::wire::{
    self, ErrPayload, GuidePayload, HelloPayload, Message, ObsPayload,
};

fn arb_image() -> impl Strategy<Value = Image> {
    (1u16..6, 1u16..6).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), (w as usize) * (h as usize) * 3)
            .prop_map(move |data| Image::new(w, h, data).expect("sized buffer"))
    })
}

fn arb_decision() -> impl Strategy<Value = Decision> {
    prop_oneof![
        Just(Decision::Continue),
        Just(Decision::Advance),
        Just(Decision::Done),
        Just(Decision::Unrecoverable),
    ]
}

fn arb_message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (any::<u64>(), ".{0,40}")
            .prop_map(|(session_id, task)| Message::Hello(HelloPayload { session_id, task })),
        (
            any::<u64>(),
            any::<u32>(),
            proptest::collection::btree_map(any::<u8>(), arb_image(), 0..3),
            proptest::collection::vec(-1e9f64..1e9, 0..5),
            proptest::option::of(proptest::collection::vec(any::<u8>(), 0..50)),
        )
            .prop_map(|(session_id, step_index, cameras, proprio, scene_digest)| {
                Message::Obs(ObsPayload { session_id, step_index, cameras, proprio, scene_digest })
            }),
        (
            any::<u64>(),
            any::<u32>(),
            arb_decision(),
            ".{0,40}",
            proptest::option::of(arb_image()),
        )
            .prop_map(|(session_id, plan_step, decision, subtask_text, goal_image)| {
                Message::Guide(GuidePayload {
                    session_id,
                    plan_step,
                    decision,
                    subtask_text,
                    goal_image,
                })
            }),
        any::<u64>().prop_map(|session_id| Message::Bye { session_id }),
        (any::<u64>(), any::<u8>(), ".{0,40}")
            .prop_map(|(session_id, code, detail)| Message::Err(ErrPayload {
                session_id,
                code,
                detail
            })),
    ]
}

proptest! {
    #[test]
    fn wire_round_trip_identity(msg in arb_message()) {
        let bytes = wire::encode(&msg);
        let decoded = wire::decode(&bytes).expect("generator output always decodes");
        prop_assert_eq!(decoded, msg);
    }

    #[test]
    fn wire_decode_never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        // both arms are acceptable; the property is absence of panics
        let _ = wire::decode(&bytes);
        let _ = wire::decode_frame(&bytes);
    }

    #[test]
    fn wire_decode_never_panics_on_mutated_frames(
        msg in arb_message(),
        index in any::<prop::sample::Index>(),
        byte in any::<u8>(),
        cut in any::<prop::sample::Index>(),
    ) {
        let mut bytes = wire::encode(&msg);
        let i = index.index(bytes.len());
        bytes[i] = byte;
        let _ = wire::decode(&bytes);
        let keep = cut.index(bytes.len() + 1);
        let _ = wire::decode(&bytes[..keep]);
    }

    #[test]
    fn randomized_sessions_respect_the_state_machine(seed in any::<u64>()) {
        common::check_session(seed, 5).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn sessions_respect_alternate_retry_caps(seed in any::<u64>(), cap in 1u32..4) {
        common::check_session(seed, cap).map_err(TestCaseError::fail)?;
    }
}

prop_compose! {
    fn arb_manifest()(
        fps in 1u32..30,
        lengths in proptest::collection::vec((0u32..80, 0u32..20), 1..6),
    ) -> EpisodeManifest {
        let mut subtasks = Vec::new();
        let mut cursor = 0u32;
        for (i, (len, jitter)) in lengths.iter().enumerate() {
            // segments tile the range; some are single-frame
            let start = cursor;
            let end = start + (*len).min(jitter * 4);
            subtasks.push(SubtaskSegment {
                start_frame: start,
                end_frame: end,
                instruction: format!("subtask {i}"),
            });
            cursor = end + 1;
        }
        EpisodeManifest {
            episode_id: "prop".into(),
            fps,
            frames_dir: String::new(),
            frame_count: cursor,
            source: "prop".into(),
            subtasks,
        }
    }
}

proptest! {
    #[test]
    fn pairs_match_brute_force_and_invariants(manifest in arb_manifest()) {
        manifest.validate().expect("generator emits valid manifests");
        for policy in [OffsetPolicy::HalfLength, OffsetPolicy::FinalState] {
            let pairs = sample_pairs(&manifest, policy).expect("valid manifest samples");
            let oracle = common::brute_force_pairs(&manifest, policy);
            prop_assert_eq!(&pairs, &oracle);
            for p in &pairs {
                let seg = &manifest.subtasks[p.subtask_index as usize];
                prop_assert!(seg.start_frame <= p.cond_frame);
                prop_assert!(p.cond_frame < p.future_frame);
                prop_assert!(p.future_frame <= seg.end_frame);
            }
        }
    }
}
