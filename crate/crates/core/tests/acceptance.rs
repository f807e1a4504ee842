//! Acceptance suite: one test per release criterion, each printing a
//! single pass line on success (run with `--nocapture` to see them).
//!
//! 1. wire protocol round-trip and fuzz safety
//! 2. planner state-machine properties over randomized sessions
//! 3. flow sampler exactness, convergence order, and sweep monotonicity
//! 4. training-pair sampling against the brute-force enumerator
//! 5. scoring rubric worked examples and score aggregation
//! 6. end-to-end closed loop on the shipped suite
//! 7. latency instrumentation monotonicity

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use foresight_core::datapipe::{
    aggregate_scores, sample_pairs, EpisodeManifest, OffsetPolicy, ScoreRecord, Split,
    SubtaskSegment,
};
use foresight_core::domain::{Decision, Image};
use foresight_core::edgecloud::wire::{
    self, ErrPayload, GuidePayload, HelloPayload, Message, ObsPayload,
};
use foresight_core::evalharness::{
    default_configs, run_suite, score_trial, shipped_suite, AtomicOutcome, TrialLog,
};
use foresight_core::flow::{
    bench_steps, euler_sample, euler_sample_raw, sweep_steps, FlowSampleRequest, PointMassField,
    QuadraticField, REFERENCE_STEPS,
};
use foresight_core::gridworld::{generate_episode, perturb_scene, render, OodTag, HEAD_CAMERA_ID};

fn pass(criterion: u32, label: &str) {
    println!("acceptance criterion {criterion} ({label}): pass");
}

fn random_string(rng: &mut StdRng, max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| rng.random_range('a'..='z')).collect()
}

fn random_image(rng: &mut StdRng) -> Image {
    let w = rng.random_range(1..6u16);
    let h = rng.random_range(1..6u16);
    let data = (0..(w as usize * h as usize * 3)).map(|_| rng.random()).collect();
    Image::new(w, h, data).expect("sized buffer")
}

fn random_message(rng: &mut StdRng) -> Message {
    match rng.random_range(0..5u8) {
        0 => Message::Hello(HelloPayload {
            session_id: rng.random(),
            task: random_string(rng, 40),
        }),
        1 => {
            let mut cameras = BTreeMap::new();
            for _ in 0..rng.random_range(0..3u8) {
                cameras.insert(rng.random(), random_image(rng));
            }
            let proprio = (0..rng.random_range(0..5usize))
                .map(|_| rng.random_range(-1e9..1e9))
                .collect();
            let scene_digest = if rng.random_bool(0.5) {
                Some((0..rng.random_range(0..50usize)).map(|_| rng.random()).collect())
            } else {
                None
            };
            Message::Obs(ObsPayload {
                session_id: rng.random(),
                step_index: rng.random(),
                cameras,
                proprio,
                scene_digest,
            })
        }
        2 => Message::Guide(GuidePayload {
            session_id: rng.random(),
            plan_step: rng.random(),
            decision: Decision::from_code(rng.random_range(0..4u8)).expect("codes 0..4"),
            subtask_text: random_string(rng, 40),
            goal_image: if rng.random_bool(0.5) { Some(random_image(rng)) } else { None },
        }),
        3 => Message::Bye { session_id: rng.random() },
        _ => Message::Err(ErrPayload {
            session_id: rng.random(),
            code: rng.random(),
            detail: random_string(rng, 40),
        }),
    }
}

#[test]
fn criterion_1_protocol_round_trip_and_fuzz() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x0001);
    for i in 0..10_000u32 {
        let msg = random_message(&mut rng);
        let bytes = wire::encode(&msg);
        let decoded = wire::decode(&bytes)
            .unwrap_or_else(|e| panic!("message {i} failed to decode: {e}"));
        assert_eq!(decoded, msg, "round-trip mismatch on message {i}");
    }

    let mut fuzz_rng = StdRng::seed_from_u64(0x0002);
    for i in 0..10_000u32 {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = fuzz_rng.random_range(0..300usize);
            (0..len).map(|_| fuzz_rng.random()).collect()
        } else {
            // mutate a valid frame: corrupt one byte, then maybe truncate
            let mut b = wire::encode(&random_message(&mut fuzz_rng));
            let idx = fuzz_rng.random_range(0..b.len());
            b[idx] = fuzz_rng.random();
            if fuzz_rng.random_bool(0.3) {
                let keep = fuzz_rng.random_range(0..=b.len());
                b.truncate(keep);
            }
            b
        };
        // the property is: no panic, and any failure is a typed error
        if let Err(e) = wire::decode(&bytes) {
            let _ = e.to_string();
        }
        let _ = wire::decode_frame(&bytes);
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 1 runtime {elapsed:.1}s exceeds 30s");
    pass(1, "wire protocol");
}

#[test]
fn criterion_2_planner_state_machine_properties() {
    for seed in 0..1_000u64 {
        if let Err(violation) = common::check_session(seed, 5) {
            panic!("session seed {seed}: {violation}");
        }
    }
    pass(2, "planner state machine");
}

fn gradient_image(w: u16, h: u16) -> Image {
    let mut data = Vec::new();
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&[
                (x * 7 % 256) as u8,
                (y * 13 % 256) as u8,
                ((x + y) * 29 % 256) as u8,
            ]);
        }
    }
    Image::new(w, h, data).expect("sized buffer")
}

#[test]
fn criterion_3_flow_sampler() {
    let started = Instant::now();
    let cond = gradient_image(16, 16);

    // point-mass field: Euler-exact at every step count
    for steps in [1u32, 8, 32] {
        let req = FlowSampleRequest { condition: &cond, steps, seed: 42 };
        let (img, _) = euler_sample(&req, &PointMassField).expect("sampler runs");
        let worst = img
            .data()
            .iter()
            .zip(cond.data())
            .map(|(&a, &b)| (i16::from(a) - i16::from(b)).abs())
            .max()
            .expect("nonempty image");
        assert!(worst <= 1, "point mass at {steps} steps: {worst} quantization levels off");
    }

    // quadratic field: first-order convergence against the dense
    // reference, measured in real space to avoid the quantization floor
    let reference = {
        let req = FlowSampleRequest { condition: &cond, steps: REFERENCE_STEPS, seed: 7 };
        euler_sample_raw(&req, &QuadraticField).expect("reference runs").0
    };
    let raw_error = |steps: u32| -> f64 {
        let req = FlowSampleRequest { condition: &cond, steps, seed: 7 };
        let (state, _) = euler_sample_raw(&req, &QuadraticField).expect("sampler runs");
        let total: f64 =
            state.iter().zip(&reference).map(|(a, b)| (a - b).abs()).sum();
        total / state.len() as f64
    };
    let errors: Vec<f64> = [8u32, 16, 32, 64].iter().map(|&n| raw_error(n)).collect();
    let orders: Vec<f64> =
        errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let mean_order = orders.iter().sum::<f64>() / orders.len() as f64;
    assert!(
        (0.8..=1.2).contains(&mean_order),
        "empirical order {mean_order:.3} outside [0.8, 1.2] (errors {errors:?})"
    );

    // sweep error column nonincreasing in step count
    let rows = sweep_steps(&cond, 7, &QuadraticField, &[1, 2, 4, 8, 16, 32, 64])
        .expect("sweep runs");
    for pair in rows.windows(2) {
        assert!(
            pair[1].mean_abs_error <= pair[0].mean_abs_error,
            "sweep error grew from {} steps to {} steps",
            pair[0].steps,
            pair[1].steps
        );
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 3 runtime {elapsed:.1}s exceeds 60s");
    pass(3, "flow sampler");
}

#[test]
fn criterion_4_datapipe_oracle_equivalence() {
    // 50 generator-produced episodes over the shipped scenarios with
    // perturbed initial settings and several frame rates
    let suite = shipped_suite();
    let fps_cycle = [1u32, 2, 5, 10];
    let mut episodes: Vec<EpisodeManifest> = Vec::new();
    for i in 0..50u64 {
        let base = &suite.scenarios[i as usize % suite.scenarios.len()];
        let mut spec = base.clone();
        if i as usize >= suite.scenarios.len() {
            spec.initial = perturb_scene(&base.initial, 1000 + i);
        }
        let fps = fps_cycle[i as usize % fps_cycle.len()];
        let record = generate_episode(&spec, fps, i).expect("shipped scenarios generate");
        episodes.push(record.manifest);
    }
    assert_eq!(episodes.len(), 50);
    for manifest in &episodes {
        manifest.validate().expect("generator manifests validate");
        for policy in [OffsetPolicy::HalfLength, OffsetPolicy::FinalState] {
            let pairs = sample_pairs(manifest, policy).expect("sampling succeeds");
            let oracle = common::brute_force_pairs(manifest, policy);
            assert_eq!(pairs, oracle, "{} under {policy:?}", manifest.episode_id);
        }
    }

    // worked example: frames 0..100, fps 10, half-length offset
    let manifest = EpisodeManifest {
        episode_id: "worked".into(),
        fps: 10,
        frames_dir: String::new(),
        frame_count: 101,
        source: "worked".into(),
        subtasks: vec![SubtaskSegment {
            start_frame: 0,
            end_frame: 100,
            instruction: "example".into(),
        }],
    };
    let pairs = sample_pairs(&manifest, OffsetPolicy::HalfLength).expect("valid manifest");
    let got: Vec<(u32, u32)> = pairs.iter().map(|p| (p.cond_frame, p.future_frame)).collect();
    let expected = vec![
        (0, 50),
        (10, 60),
        (20, 70),
        (30, 80),
        (40, 90),
        (50, 100),
        (60, 100),
        (70, 100),
        (80, 100),
        (90, 100),
    ];
    assert_eq!(got, expected);
    pass(4, "datapipe sampling");
}

#[test]
fn criterion_5_scoring_and_aggregation() {
    use AtomicOutcome::{FailedAfterTrials, Success, VoidedByRuin};
    let log = |outcomes: Vec<AtomicOutcome>, undesired: u32, ruined: bool| TrialLog {
        scenario: "worked".into(),
        configuration: "worked".into(),
        outcomes,
        undesired_count: undesired,
        ruined,
    };

    assert_eq!(score_trial(&log(vec![Success; 6], 0, false)), 1.0);

    let mut five = vec![Success; 5];
    five.push(FailedAfterTrials(5));
    let s = score_trial(&log(five, 1, false));
    assert!((s - 0.6667).abs() < 1e-4 && (s - 4.0 / 6.0).abs() < 1e-9);

    let mut ruined = vec![Success; 2];
    ruined.extend([VoidedByRuin; 4]);
    let s = score_trial(&log(ruined, 0, true));
    assert!((s - 0.3333).abs() < 1e-4 && (s - 2.0 / 6.0).abs() < 1e-9);

    // aggregation: 50 in-distribution records all (1,1); 50 shifted
    // records with 44 fidelity successes and 48 quality successes
    let mut records: Vec<ScoreRecord> = (0..50)
        .map(|i| ScoreRecord {
            image_id: format!("in_{i}"),
            split: Split::InDist,
            fidelity: 1,
            quality: 1,
        })
        .collect();
    for i in 0..50 {
        records.push(ScoreRecord {
            image_id: format!("ood_{i}"),
            split: Split::Ood,
            fidelity: u8::from(i < 44),
            quality: u8::from(i < 48),
        });
    }
    let table = aggregate_scores(&records);
    assert_eq!(table.rows.len(), 2);
    let indist = &table.rows[0];
    assert_eq!(indist.split, Split::InDist);
    assert_eq!(format!("{:.2}/{:.2}", indist.fidelity_mean, indist.quality_mean), "1.00/1.00");
    let ood = &table.rows[1];
    assert_eq!(ood.split, Split::Ood);
    assert_eq!(format!("{:.2}/{:.2}", ood.fidelity_mean, ood.quality_mean), "0.88/0.96");
    pass(5, "scoring rubric");
}

#[test]
fn criterion_6_end_to_end_closed_loop() {
    let started = Instant::now();
    let suite = shipped_suite();
    let configs = default_configs();
    let seed = 7u64;

    let (card, _report) =
        run_suite(&suite, &configs, 5, seed, None).expect("suite runs");
    assert!(card.excluded_scenarios.is_empty(), "no scenario may be excluded");
    let names: Vec<String> = suite.scenarios.iter().map(|s| s.name.clone()).collect();

    let full = card.configuration_mean("full", &names).expect("full ran");
    assert!(
        (full - 1.0).abs() < 1e-12,
        "full configuration must score 1.0, got {full}"
    );
    for trial in card.trials.iter().filter(|t| t.configuration == "full") {
        assert_eq!(trial.termination, "Done", "{}/{}", trial.scenario, trial.setting_index);
    }

    let text = card.configuration_mean("text-only", &names).expect("text-only ran");
    let task = card.configuration_mean("task-only", &names).expect("task-only ran");
    assert!(full >= text && text >= task, "ordering full={full} text={text} task={task}");
    for tag in [OodTag::Comp, OodTag::Joint] {
        let f = card.tag_mean("full", tag, &suite.scenarios).expect("tagged scenarios exist");
        let te = card.tag_mean("text-only", tag, &suite.scenarios).expect("tagged");
        let ta = card.tag_mean("task-only", tag, &suite.scenarios).expect("tagged");
        assert!(f > te, "{tag:?}: full {f} must beat text-only {te}");
        assert!(te > ta, "{tag:?}: text-only {te} must beat task-only {ta}");
    }

    // determinism under the fixed seed (scores carry no wall-clock data)
    let (card2, _) = run_suite(&suite, &configs, 5, seed, None).expect("suite reruns");
    let key = |c: &foresight_core::evalharness::ScoreCard| -> Vec<(String, String, u32, u64, String)> {
        c.trials
            .iter()
            .map(|t| {
                (
                    t.scenario.clone(),
                    t.configuration.clone(),
                    t.setting_index,
                    t.score.to_bits(),
                    t.termination.clone(),
                )
            })
            .collect()
    };
    assert_eq!(key(&card), key(&card2), "suite must be deterministic under a fixed seed");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 6 runtime {elapsed:.1}s exceeds 2 minutes");
    pass(6, "end-to-end closed loop");
}

#[test]
fn criterion_7_latency_instrumentation() {
    let suite = shipped_suite();
    let condition = render(&suite.scenarios[0].initial, HEAD_CAMERA_ID).expect("head renders");
    let rows = bench_steps(&condition, 11, &PointMassField, &[1, 2, 4, 8, 16], 21)
        .expect("bench runs");
    assert_eq!(rows.len(), 5);
    for row in &rows {
        assert_eq!(row.runs, 21);
        assert!(row.median_total_ms > 0.0, "per-stage timings must be recorded");
        assert!(row.median_step_ms >= 0.0);
    }
    for pair in rows.windows(2) {
        assert!(
            pair[1].median_total_ms >= pair[0].median_total_ms,
            "median total must be nondecreasing: {} steps {:.4}ms vs {} steps {:.4}ms",
            pair[0].steps,
            pair[0].median_total_ms,
            pair[1].steps,
            pair[1].median_total_ms
        );
    }
    pass(7, "latency instrumentation");
}
