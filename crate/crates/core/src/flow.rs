//! Foresight image generation.
//!
//! Two generators: an oracle backed by the gridworld world model, and a
//! conditional flow-matching sampler that integrates a velocity field
//! from seeded noise at t=0 to an image at t=1 with explicit Euler steps.
//! The "latent" space is raw pixels mapped to [-1,1]; the condition image
//! is flattened and held fixed across every field evaluation.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::datapipe::OffsetPolicy;
use crate::domain::{ForesightContract, ForesightError, Image};
use crate::gridworld::{decode_scene, expert_rollout, parse_instruction, render, HEAD_CAMERA_ID};

/// Default Euler step count.
pub const DEFAULT_STEPS: u32 = 8;

/// A conditional velocity field v(x, t, c) with t in [0, 1).
pub trait VelocityField: Send + Sync {
    fn eval(&self, state: &[f64], t: f64, condition: &[f64]) -> Vec<f64>;
    fn name(&self) -> &'static str;
}

/// v = (c - x) / (1 - t): drives any start state exactly onto the
/// condition at t=1, and Euler integrates it exactly for every N.
pub struct PointMassField;

impl VelocityField for PointMassField {
    fn eval(&self, state: &[f64], t: f64, condition: &[f64]) -> Vec<f64> {
        state.iter().zip(condition).map(|(x, c)| (c - x) / (1.0 - t)).collect()
    }

    fn name(&self) -> &'static str {
        "pointmass"
    }
}

/// v = 0: identity dynamics, output is the quantized initial noise.
pub struct ZeroField;

impl VelocityField for ZeroField {
    fn eval(&self, state: &[f64], _t: f64, _condition: &[f64]) -> Vec<f64> {
        vec![0.0; state.len()]
    }

    fn name(&self) -> &'static str {
        "zero"
    }
}

/// v = t * x: smooth nonlinear dynamics with first-order Euler error,
/// used for the convergence ladder.
pub struct QuadraticField;

impl VelocityField for QuadraticField {
    fn eval(&self, state: &[f64], t: f64, _condition: &[f64]) -> Vec<f64> {
        state.iter().map(|x| t * x).collect()
    }

    fn name(&self) -> &'static str {
        "quadratic"
    }
}

#[derive(Clone, Debug)]
pub struct FlowSampleRequest<'a> {
    pub condition: &'a Image,
    pub steps: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct LatencyReport {
    pub per_step_ms: Vec<f64>,
    pub total_ms: f64,
    pub steps: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("velocity field produced a non-finite value at step {0}")]
    NonFinite(usize),
    #[error("steps must be >= 1")]
    ZeroSteps,
    #[error("steps list is empty")]
    EmptySteps,
}

fn to_real(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&b| b as f64 / 255.0 * 2.0 - 1.0).collect()
}

fn round_half_away_from_zero(x: f64) -> f64 {
    if x >= 0.0 {
        (x + 0.5).floor()
    } else {
        (x - 0.5).ceil()
    }
}

/// Clamp to [-1,1] and quantize to 8 bits with a fixed rounding rule so
/// outputs are bit-exact across platforms.
fn quantize(state: &[f64], width: u16, height: u16) -> Image {
    let data: Vec<u8> = state
        .iter()
        .map(|&x| {
            let c = x.clamp(-1.0, 1.0);
            round_half_away_from_zero((c + 1.0) / 2.0 * 255.0).clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::new(width, height, data).expect("quantize preserves buffer length")
}

/// Seeded standard-normal draw, one scalar per pixel channel.
pub fn seeded_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Euler integration in real space, without quantization. Returns the
/// final state and the latency report.
pub fn euler_sample_raw(
    req: &FlowSampleRequest,
    field: &dyn VelocityField,
) -> Result<(Vec<f64>, LatencyReport), FlowError> {
    if req.steps == 0 {
        return Err(FlowError::ZeroSteps);
    }
    let start = Instant::now();
    let condition = to_real(req.condition);
    let mut state = seeded_noise(condition.len(), req.seed);
    let n = req.steps as usize;
    let dt = 1.0 / n as f64;
    let mut per_step_ms = Vec::with_capacity(n);
    for k in 0..n {
        let step_start = Instant::now();
        let t = k as f64 / n as f64;
        let v = field.eval(&state, t, &condition);
        debug_assert_eq!(v.len(), state.len());
        for (x, vi) in state.iter_mut().zip(&v) {
            *x += dt * vi;
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::NonFinite(k));
        }
        per_step_ms.push(step_start.elapsed().as_secs_f64() * 1e3);
    }
    let report = LatencyReport {
        per_step_ms,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        steps: req.steps,
    };
    Ok((state, report))
}

/// Full sampler: noise -> Euler integration -> clamp -> 8-bit image.
pub fn euler_sample(
    req: &FlowSampleRequest,
    field: &dyn VelocityField,
) -> Result<(Image, LatencyReport), FlowError> {
    let (state, report) = euler_sample_raw(req, field)?;
    Ok((quantize(&state, req.condition.width(), req.condition.height()), report))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub steps: u32,
    pub total_ms: f64,
    pub mean_abs_error: f64,
}

/// Mean absolute per-channel error between two images, in [0,1] units
/// (one quantization level = 1/255).
pub fn mean_abs_error(a: &Image, b: &Image) -> f64 {
    assert!(a.same_dimensions(b), "error is only defined for equal shapes");
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x as f64) - (y as f64)).abs() / 255.0)
        .sum();
    total / a.data().len() as f64
}

/// Reference step count for sweep distances.
pub const REFERENCE_STEPS: u32 = 1 << 14;

/// One sampler run per step count, each compared against the
/// `REFERENCE_STEPS` solution of the same seeded trajectory.
pub fn sweep_steps(
    condition: &Image,
    seed: u64,
    field: &dyn VelocityField,
    steps_list: &[u32],
) -> Result<Vec<SweepRow>, FlowError> {
    if steps_list.is_empty() {
        return Err(FlowError::EmptySteps);
    }
    let reference_req = FlowSampleRequest { condition, steps: REFERENCE_STEPS, seed };
    let (reference, _) = euler_sample(&reference_req, field)?;
    let mut rows = Vec::with_capacity(steps_list.len());
    for &steps in steps_list {
        let req = FlowSampleRequest { condition, steps, seed };
        let (img, report) = euler_sample(&req, field)?;
        rows.push(SweepRow {
            steps,
            total_ms: report.total_ms,
            mean_abs_error: mean_abs_error(&img, &reference),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub steps: u32,
    pub runs: u32,
    pub median_total_ms: f64,
    pub median_step_ms: f64,
    pub mean_abs_error: f64,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Repeated-run latency benchmark: for each step count, `runs` sampler
/// executions with distinct seeds, reporting median total and median
/// per-step wall time plus the error against the reference solution.
pub fn bench_steps(
    condition: &Image,
    seed: u64,
    field: &dyn VelocityField,
    steps_list: &[u32],
    runs: u32,
) -> Result<Vec<BenchRow>, FlowError> {
    if steps_list.is_empty() {
        return Err(FlowError::EmptySteps);
    }
    if runs == 0 {
        return Err(FlowError::ZeroSteps);
    }
    let reference_req = FlowSampleRequest { condition, steps: REFERENCE_STEPS, seed };
    let (reference, _) = euler_sample(&reference_req, field)?;
    let mut rows = Vec::with_capacity(steps_list.len());
    for &steps in steps_list {
        let mut totals = Vec::with_capacity(runs as usize);
        let mut step_medians = Vec::with_capacity(runs as usize);
        let mut error = 0.0;
        for run in 0..runs {
            let req = FlowSampleRequest {
                condition,
                steps,
                seed: seed.wrapping_add(u64::from(run)),
            };
            let (img, report) = euler_sample(&req, field)?;
            totals.push(report.total_ms);
            step_medians.push(median(report.per_step_ms.clone()));
            if run == 0 {
                // seed matches the reference trajectory; later runs only
                // contribute timings
                error = mean_abs_error(&img, &reference);
            }
        }
        rows.push(BenchRow {
            steps,
            runs,
            median_total_ms: median(totals),
            median_step_ms: median(step_medians),
            mean_abs_error: error,
        });
    }
    Ok(rows)
}

/// Renders bench rows as a tab-separated table. Timing columns are
/// wall-clock and excluded from determinism comparisons.
pub fn render_bench(rows: &[BenchRow]) -> String {
    let mut out =
        String::from("steps\truns\tmedian_total_ms\tmedian_step_ms\tmean_abs_error\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.3}\t{:.4}\t{:.6}\n",
            r.steps, r.runs, r.median_total_ms, r.median_step_ms, r.mean_abs_error
        ));
    }
    out
}

/// Renders sweep rows as the tab-separated table file.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("steps\ttotal_ms\tmean_abs_error\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.3}\t{:.6}\n", r.steps, r.total_ms, r.mean_abs_error));
    }
    out
}

/// Oracle foresight: decode the head image back to a symbolic scene, run
/// the scripted expert on the subtask, and re-render.
///
/// `HalfLength` renders the scene at half the scripted step count
/// (matching pretraining pair offsets); `FinalState` renders the
/// completed subtask (matching fine-tuning goal frames). Inference-time
/// default is `FinalState`.
pub struct OracleForesight {
    pub offset_policy: OffsetPolicy,
}

impl Default for OracleForesight {
    fn default() -> Self {
        Self { offset_policy: OffsetPolicy::FinalState }
    }
}

impl ForesightContract for OracleForesight {
    fn foresee(&self, head: &Image, subtask_text: &str, _seed: u64) -> Result<Image, ForesightError> {
        let scene = decode_scene(head)
            .map_err(|e| ForesightError::Infeasible(format!("undecodable head image: {e}")))?;
        let instr = parse_instruction(subtask_text)
            .map_err(|e| ForesightError::Grammar(e.to_string()))?;
        let (_, scenes) = expert_rollout(&scene, &instr)
            .map_err(|e| ForesightError::Infeasible(e.to_string()))?;
        let target = match (self.offset_policy, scenes.len()) {
            (_, 0) => scene,
            (OffsetPolicy::FinalState, _) => scenes.last().cloned().expect("nonempty"),
            (OffsetPolicy::HalfLength, n) => {
                let mid = n / 2;
                if mid == 0 {
                    scene
                } else {
                    scenes[mid - 1].clone()
                }
            }
        };
        Ok(render(&target, HEAD_CAMERA_ID).expect("head camera always renders"))
    }
}

/// Flow-matching foresight: Euler sampling with a fixed analytic field.
/// With the point-mass field this reproduces the condition image, which
/// is the non-neural stand-in for a trained generator.
pub struct FlowForesight {
    pub field: Arc<dyn VelocityField>,
    pub steps: u32,
}

impl Default for FlowForesight {
    fn default() -> Self {
        Self { field: Arc::new(PointMassField), steps: DEFAULT_STEPS }
    }
}

impl ForesightContract for FlowForesight {
    fn foresee(&self, head: &Image, _subtask_text: &str, seed: u64) -> Result<Image, ForesightError> {
        let req = FlowSampleRequest { condition: head, steps: self.steps, seed };
        match euler_sample(&req, self.field.as_ref()) {
            Ok((img, _)) => Ok(img),
            Err(FlowError::NonFinite(step)) => Err(ForesightError::NonFinite { step }),
            Err(other) => Err(ForesightError::Infeasible(other.to_string())),
        }
    }
}
