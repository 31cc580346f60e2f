//! End-to-end experiment pipelines behind the CLI.
//!
//! One `ExperimentSpec` describes one run; `run_experiment` dispatches on its
//! mode and leaves every artifact under the spec's output directory:
//!
//! - synthesize: render or load a latent stack, write the observation pair,
//!   the ground-truth stack under `gt/`, and scene metadata when procedural
//! - decompose: solve a pair directory into recovered frames plus the energy
//!   trace, base flow, and fusion mask
//! - evaluate: score a recovered stack against a reference stack
//! - degrade: emit the six robustness-protocol variants of a pair
//! - report: render a side-by-side panel image of GT / blur / RS / recovered
//!
//! Everything is deterministic under a fixed seed; `threads > 1` only
//! parallelizes independent degrade conditions, whose outputs are seeded per
//! condition and therefore identical to the single-threaded run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decompose::{decompose, disambiguation_report, DecomposeConfig, MotionSign};
use crate::error::{Error, Result};
use crate::formation::{
    degrade_lowlight, degrade_shift, synthesize_pair, ObservationPair, DEFAULT_GAMMA_RANGE,
};
use crate::image::Image;
use crate::io::{
    load_json, read_flow, read_pair, read_sequence, save_json, write_energy_csv, write_flow,
    write_metrics_csv, write_pair, write_png16, write_sequence, FrameMetrics,
};
use crate::metrics::{psnr, ssim, subsample_sequence};
use crate::scenes::{self, SceneSpec};
use crate::timing::TimingConfig;

/// File carrying ground-truth motion metadata alongside synthesized pairs.
pub const SCENE_META_FILE: &str = "scene.json";

/// Border width excluded when scoring suite reconstructions: the widest
/// suite motion reaches 32 px of displacement, so clamped border samples
/// never enter the score.
pub const SUITE_INTERIOR_MARGIN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Synthesize,
    Decompose,
    Evaluate,
    Degrade,
    Report,
}

/// Full description of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// Scene descriptor or input directory, depending on mode.
    pub input_path: String,
    pub output_path: String,
    /// Second input for evaluate (ground-truth stack) and report (recovered
    /// stack).
    #[serde(default)]
    pub reference_path: Option<String>,
    /// Governs procedural rendering; directories carry their own timing.
    #[serde(default = "scenes::suite_timing")]
    pub timing: TimingConfig,
    #[serde(default)]
    pub decompose_cfg: DecomposeConfig,
    #[serde(default = "default_eval_lengths")]
    pub eval_lengths: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_eval_lengths() -> Vec<usize> {
    vec![3, 5, 9]
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        self.decompose_cfg.validate()?;
        if self.input_path.is_empty() {
            return Err(Error::invalid("experiment spec", "input_path is empty"));
        }
        if self.output_path.is_empty() {
            return Err(Error::invalid("experiment spec", "output_path is empty"));
        }
        if matches!(self.mode, Mode::Evaluate | Mode::Report)
            && self.reference_path.as_deref().is_none_or(str::is_empty)
        {
            return Err(Error::invalid(
                "experiment spec",
                format!("{:?} mode needs a reference_path", self.mode),
            ));
        }
        if self.eval_lengths.is_empty() {
            return Err(Error::invalid("experiment spec", "eval_lengths is empty"));
        }
        if let Some(&bad) = self.eval_lengths.iter().find(|&&l| l < 2) {
            return Err(Error::invalid(
                "experiment spec",
                format!("eval_lengths entries must be >= 2, got {bad}"),
            ));
        }
        Ok(())
    }
}

/// Ground-truth motion metadata for procedurally synthesized pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub descriptor: String,
    /// Horizontal scene velocity in px per latent frame step.
    pub velocity: f64,
    /// Velocity accumulated over the whole latent span, in pixels.
    pub base_flow_u: f64,
}

/// Mean metrics at one sub-sampled sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

/// Aggregate result of a run; serialized as results.json by evaluate mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_length: BTreeMap<usize, LengthMetrics>,
    /// None when the inputs carry no directional ground truth.
    pub direction_accuracy: Option<f64>,
    pub runtime_s: f64,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<EvalResult> {
    run_experiment_with(spec, 1)
}

pub fn run_experiment_with(spec: &ExperimentSpec, threads: usize) -> Result<EvalResult> {
    spec.validate()?;
    if threads == 0 {
        return Err(Error::invalid("threads", "must be >= 1"));
    }
    let start = Instant::now();
    match spec.mode {
        Mode::Synthesize => run_synthesize(spec)?,
        Mode::Decompose => run_decompose(spec)?,
        Mode::Evaluate => return run_evaluate(spec, start),
        Mode::Degrade => run_degrade(spec, threads)?,
        Mode::Report => run_report(spec)?,
    }
    Ok(EvalResult {
        per_length: BTreeMap::new(),
        direction_accuracy: None,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

fn run_synthesize(spec: &ExperimentSpec) -> Result<()> {
    let out = Path::new(&spec.output_path);
    let (seq, meta) = if SceneSpec::is_descriptor(&spec.input_path) {
        let scene = SceneSpec::parse(&spec.input_path)?;
        let meta = SceneMeta {
            descriptor: scene.descriptor(),
            velocity: scene.velocity,
            base_flow_u: scene.base_flow_u(spec.timing.n_latent),
        };
        (scene.render_sequence(&spec.timing)?, Some(meta))
    } else {
        (read_sequence(&spec.input_path)?, None)
    };
    let pair = synthesize_pair(&seq)?;
    write_pair(out, &pair)?;
    write_sequence(out.join("gt"), &seq)?;
    if let Some(meta) = meta {
        save_json(out.join(SCENE_META_FILE), &meta)?;
    }
    Ok(())
}

fn run_decompose(spec: &ExperimentSpec) -> Result<()> {
    let input = Path::new(&spec.input_path);
    let out = Path::new(&spec.output_path);
    let pair = read_pair(input)?;
    let d = decompose(&pair, &spec.decompose_cfg)?;
    write_sequence(out, &d.sequence)?;
    write_energy_csv(out.join("energy.csv"), &d.state.energy_trace)?;
    write_flow(out.join("flow.bin"), &d.state.base_flow)?;
    let mask = d.state.mask();
    let weights = mask.weights();
    write_png16(
        out.join("mask.png"),
        &Image::from_fn(weights.height(), weights.width(), 1, |y, x, _| weights.at(y, x)),
    )?;
    if let Some(w) = &d.warning {
        let path = out.join("warnings.txt");
        fs::write(&path, format!("{w}\n")).map_err(|e| Error::io(&path, e))?;
    }
    let meta_src = input.join(SCENE_META_FILE);
    if meta_src.exists() {
        fs::copy(&meta_src, out.join(SCENE_META_FILE)).map_err(|e| Error::io(&meta_src, e))?;
    }
    Ok(())
}

fn run_evaluate(spec: &ExperimentSpec, start: Instant) -> Result<EvalResult> {
    let input = Path::new(&spec.input_path);
    let reference = spec.reference_path.as_deref().expect("validated");
    let recovered = read_sequence(input)?;
    let gt = read_sequence(reference)?;
    if recovered.timing() != gt.timing() {
        return Err(Error::invalid(
            "evaluate inputs",
            format!(
                "recovered timing ({}x{}, {} frames) does not match the reference",
                recovered.timing().image_height,
                recovered.timing().image_width,
                recovered.timing().n_latent
            ),
        ));
    }
    let out = Path::new(&spec.output_path);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut rows = Vec::with_capacity(recovered.len());
    for t in 0..recovered.len() {
        rows.push(FrameMetrics {
            frame: t,
            psnr: psnr(&recovered.frames()[t], &gt.frames()[t])?,
            ssim: ssim(&recovered.frames()[t], &gt.frames()[t])?,
        });
    }
    write_metrics_csv(out.join("metrics.csv"), &rows)?;

    let mut lengths = spec.eval_lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    let mut per_length = BTreeMap::new();
    for &len in &lengths {
        let sub_r = subsample_sequence(&recovered, len)?;
        let sub_g = subsample_sequence(&gt, len)?;
        let (mut p, mut s) = (0.0, 0.0);
        for t in 0..len {
            p += psnr(&sub_r.frames()[t], &sub_g.frames()[t])?;
            s += ssim(&sub_r.frames()[t], &sub_g.frames()[t])?;
        }
        per_length.insert(len, LengthMetrics { psnr: p / len as f64, ssim: s / len as f64 });
    }

    let result = EvalResult {
        per_length,
        direction_accuracy: direction_score(input)?,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    save_json(out.join("results.json"), &result)?;
    Ok(result)
}

/// 1.0 when the recovered flow's mean u matches the scene's known motion
/// sign, 0.0 when it contradicts it, None when the directory carries no
/// scene metadata, no recovered flow, or a zero-motion scene.
fn direction_score(dir: &Path) -> Result<Option<f64>> {
    let meta_path = dir.join(SCENE_META_FILE);
    let flow_path = dir.join("flow.bin");
    if !meta_path.exists() || !flow_path.exists() {
        return Ok(None);
    }
    let meta: SceneMeta = load_json(meta_path)?;
    if meta.velocity == 0.0 {
        return Ok(None);
    }
    let mean_u = read_flow(flow_path)?.u.mean();
    let hit = mean_u != 0.0 && mean_u.signum() == meta.velocity.signum();
    Ok(Some(if hit { 1.0 } else { 0.0 }))
}

/// One robustness degradation of the rolling-shutter view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degradation {
    /// Rigid misalignment drawn uniformly within +-max_px per axis.
    Shift { max_px: u32 },
    /// Random gamma followed by Poisson shot noise at the photon peak.
    Noise { peak: f64 },
}

/// The six protocol conditions: misalignment at 4, 6, 8 px and low-light
/// peaks 300, 500, 800.
pub fn degrade_conditions() -> [(&'static str, Degradation); 6] {
    [
        ("shift_4", Degradation::Shift { max_px: 4 }),
        ("shift_6", Degradation::Shift { max_px: 6 }),
        ("shift_8", Degradation::Shift { max_px: 8 }),
        ("noise_300", Degradation::Noise { peak: 300.0 }),
        ("noise_500", Degradation::Noise { peak: 500.0 }),
        ("noise_800", Degradation::Noise { peak: 800.0 }),
    ]
}

/// What a degrade run actually did, for the condition's provenance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeRecord {
    pub condition: String,
    pub seed: u64,
    /// Offset applied by a shift condition.
    pub shift: Option<(i64, i64)>,
    /// Photon peak of a noise condition.
    pub peak: Option<f64>,
}

/// Applies one degradation to the RS view; the blur view and timing pass
/// through untouched.
pub fn apply_degradation(
    pair: &ObservationPair,
    condition: &str,
    deg: Degradation,
    seed: u64,
) -> Result<(ObservationPair, DegradeRecord)> {
    let (rs, shift, peak) = match deg {
        Degradation::Shift { max_px } => {
            let (rs, offset) = degrade_shift(&pair.rs, max_px, seed);
            (rs, Some(offset), None)
        }
        Degradation::Noise { peak } => {
            let rs = degrade_lowlight(&pair.rs, peak, DEFAULT_GAMMA_RANGE, seed)?;
            (rs, None, Some(peak))
        }
    };
    let degraded = ObservationPair::new(pair.blur.clone(), rs, pair.timing.clone())?;
    let record = DegradeRecord { condition: condition.to_string(), seed, shift, peak };
    Ok((degraded, record))
}

fn run_degrade(spec: &ExperimentSpec, threads: usize) -> Result<()> {
    let input = Path::new(&spec.input_path);
    let out = Path::new(&spec.output_path);
    let pair = read_pair(input)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let meta_src = input.join(SCENE_META_FILE);

    let write_condition = |i: usize, name: &str, deg: Degradation| -> Result<()> {
        let seed = spec.seed.wrapping_add(i as u64);
        let (degraded, record) = apply_degradation(&pair, name, deg, seed)?;
        let dir = out.join(name);
        write_pair(&dir, &degraded)?;
        save_json(dir.join("degradation.json"), &record)?;
        if meta_src.exists() {
            fs::copy(&meta_src, dir.join(SCENE_META_FILE)).map_err(|e| Error::io(&meta_src, e))?;
        }
        Ok(())
    };

    let conditions = degrade_conditions();
    if threads <= 1 {
        for (i, (name, deg)) in conditions.into_iter().enumerate() {
            write_condition(i, name, deg)?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = conditions
            .into_iter()
            .enumerate()
            .map(|(i, (name, deg))| scope.spawn(move || write_condition(i, name, deg)))
            .collect();
        for h in handles {
            h.join().expect("degrade worker panicked")?;
        }
        Ok(())
    })
}

fn run_report(spec: &ExperimentSpec) -> Result<()> {
    let input = Path::new(&spec.input_path);
    let recovered_dir = spec.reference_path.as_deref().expect("validated");
    let out = Path::new(&spec.output_path);
    let pair = read_pair(input)?;
    let gt = read_sequence(input.join("gt"))?;
    let rec = read_sequence(recovered_dir)?;
    if gt.timing() != rec.timing() {
        return Err(Error::invalid(
            "report inputs",
            "recovered timing does not match the ground-truth stack",
        ));
    }
    let mid = gt.len() / 2;
    let grid = panel_strip(&[
        &gt.frames()[mid],
        &pair.blur,
        &pair.rs,
        &rec.frames()[mid],
    ])?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_png16(out.join("report.png"), &grid)
}

const PANEL_GUTTER: usize = 4;

/// Equally sized panels side by side, separated by white gutters.
fn panel_strip(panels: &[&Image]) -> Result<Image> {
    let (h, w, c) = panels[0].shape();
    for p in panels {
        panels[0].check_same_shape(p, "report panels")?;
    }
    let total_w = w * panels.len() + PANEL_GUTTER * (panels.len() - 1);
    let mut out = Image::from_fn(h, total_w, c, |_, _, _| 1.0);
    for (i, p) in panels.iter().enumerate() {
        let x0 = i * (w + PANEL_GUTTER);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    *out.at_mut(y, x0 + x, ch) = p.at(y, x, ch);
                }
            }
        }
    }
    Ok(out)
}

/// Outcome of one direction-suite case.
#[derive(Debug, Clone)]
pub struct SuiteCaseOutcome {
    pub scene: SceneSpec,
    pub winner: MotionSign,
    pub correct: bool,
    /// Mean recovered u of the winning run, in pixels over the latent span.
    pub mean_u: f64,
    /// Mean interior PSNR of the recovered stack against ground truth.
    pub recovered_psnr: f64,
    /// Same score for the blur-copy baseline (every frame := blur view).
    pub baseline_psnr: f64,
    /// Energy trace of the winning run.
    pub energy_trace: Vec<crate::error::TraceEntry>,
}

/// Aggregates over the 16-case suite.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub cases: Vec<SuiteCaseOutcome>,
    pub direction_accuracy: f64,
    pub mean_recovered_psnr: f64,
    pub mean_baseline_psnr: f64,
}

/// Runs the fixed 16-case direction suite, optionally degrading the RS view
/// first, and scores every recovery on the interior crop.
pub fn run_direction_suite(
    cfg: &DecomposeConfig,
    degradation: Option<Degradation>,
    seed: u64,
) -> Result<SuiteOutcome> {
    let timing = scenes::suite_timing();
    let mut cases = Vec::with_capacity(16);
    for (i, scene) in scenes::suite_cases().into_iter().enumerate() {
        let gt = scene.render_sequence(&timing)?;
        let mut pair = synthesize_pair(&gt)?;
        if let Some(deg) = degradation {
            pair = apply_degradation(&pair, "suite", deg, seed.wrapping_add(i as u64))?.0;
        }
        let report = disambiguation_report(&pair, cfg)?;
        let expected = if scene.velocity > 0.0 { MotionSign::Positive } else { MotionSign::Negative };
        let mean_u = match report.winner {
            MotionSign::Negative => report.mean_u_neg,
            _ => report.mean_u_pos,
        };
        let n = gt.len() as f64;
        let blur_crop = pair.blur.crop(SUITE_INTERIOR_MARGIN);
        let (mut rec_p, mut base_p) = (0.0, 0.0);
        for t in 0..gt.len() {
            let gt_crop = gt.frames()[t].crop(SUITE_INTERIOR_MARGIN);
            rec_p += psnr(
                &report.decomposition.sequence.frames()[t].crop(SUITE_INTERIOR_MARGIN),
                &gt_crop,
            )?;
            base_p += psnr(&blur_crop, &gt_crop)?;
        }
        cases.push(SuiteCaseOutcome {
            scene,
            winner: report.winner,
            correct: report.winner == expected,
            mean_u,
            recovered_psnr: rec_p / n,
            baseline_psnr: base_p / n,
            energy_trace: report.decomposition.state.energy_trace.clone(),
        });
    }
    let k = cases.len() as f64;
    Ok(SuiteOutcome {
        direction_accuracy: cases.iter().filter(|c| c.correct).count() as f64 / k,
        mean_recovered_psnr: cases.iter().map(|c| c.recovered_psnr).sum::<f64>() / k,
        mean_baseline_psnr: cases.iter().map(|c| c.baseline_psnr).sum::<f64>() / k,
        cases,
    })
}
