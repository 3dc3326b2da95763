//! Stage 2 and the two-stage pipeline.
//!
//! The learned one-step denoiser is replaced by a per-pixel temporal
//! spectral shrinkage. Each window is normalized to disparity in `[0, 1]`,
//! forward-noised at the pinned timestep, reconstructed with the exact
//! injected noise standing in for the network's ε-prediction, and then
//! low-passed: DFT bins above the cutoff are scaled by `alpha`. On the
//! synthetic benchmark GT trajectories are band-limited, so shrinking the
//! signal's high band shrinks the error's high band.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_global, AlignError, AlignOptions, GlobalAlignment, PairGraph};
use crate::numeric::percentile;
use crate::rng::{normals, stream, Domain};
use crate::schedule::{ScheduleError, ScheduleKind, ScheduleTable, SpacingMode, TimestepSpacing};
use crate::spectral::TransformPlan;
use crate::video::{DepthVideo, ValueKind, VideoError};

pub const MIN_WINDOW: usize = 4;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("overlap {overlap} must be below window length {window_length}")]
    Overlap { overlap: usize, window_length: usize },
    #[error("window length must be positive")]
    EmptyWindow,
    #[error("window of {0} frames is shorter than {MIN_WINDOW}")]
    WindowTooShort(usize),
    #[error("{slices} slices for a plan of {windows} windows")]
    SliceCount { slices: usize, windows: usize },
    #[error("slice {index} has {got} frames, plan expects {expected}")]
    SliceLength { index: usize, got: usize, expected: usize },
    #[error("slice {0} differs from slice 0 in size or value kind")]
    SliceShape(usize),
    #[error("denoiser config: {0}")]
    Config(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_length: usize,
    pub overlap: usize,
    pub frame_count: usize,
    /// Inclusive `(start, end)` frame ranges.
    pub windows: Vec<(usize, usize)>,
}

/// Windows of `window_length` frames at stride `window_length − overlap`;
/// the last one is right-aligned to end at frame `frames − 1`.
pub fn plan_windows(frames: usize, window_length: usize, overlap: usize) -> Result<WindowPlan, FusionError> {
    if window_length == 0 || frames == 0 {
        return Err(FusionError::EmptyWindow);
    }
    if overlap >= window_length {
        return Err(FusionError::Overlap { overlap, window_length });
    }
    let windows = if window_length >= frames {
        vec![(0, frames - 1)]
    } else {
        let stride = window_length - overlap;
        let mut windows: Vec<(usize, usize)> =
            (0..).map(|k| k * stride).take_while(|s| s + window_length <= frames).map(|s| (s, s + window_length - 1)).collect();
        if windows.last().is_some_and(|w| w.1 < frames - 1) {
            windows.push((frames - window_length, frames - 1));
        }
        windows
    };
    Ok(WindowPlan { window_length, overlap, frame_count: frames, windows })
}

/// Source of the injected forward noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    #[default]
    Seeded,
    /// ε ≡ 0; used to check the identity configuration.
    Null,
}

/// How a trajectory is extended before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// Transform the window as is; the DFT wraps the last frame onto the first.
    Periodic,
    /// Transform the window followed by its reversal.
    #[default]
    Mirror,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Cycles per frame; bins above `cutoff_hz · length` are shrunk.
    pub cutoff_hz: f64,
    pub alpha: f64,
    pub spacing: TimestepSpacing,
    pub inject_step_index: usize,
    pub schedule: ScheduleTable,
    pub injection: Injection,
    pub extension: Extension,
    /// Split trajectories where `|ln(d[t+1]/d[t])|` exceeds this and filter
    /// each piece on its own.
    pub edge_threshold: Option<f64>,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz <= 0.5) {
            return Err(FusionError::Config(format!("cutoff_hz {} must be in (0, 0.5]", self.cutoff_hz)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FusionError::Config(format!("alpha {} must be in (0, 1]", self.alpha)));
        }
        if self.inject_step_index >= self.spacing.len() {
            return Err(FusionError::Config(format!(
                "inject_step_index {} must be below the {} inference steps",
                self.inject_step_index,
                self.spacing.len()
            )));
        }
        if self.spacing.train_steps != self.schedule.train_steps() {
            return Err(FusionError::Config("spacing and schedule disagree on train steps".into()));
        }
        if self.edge_threshold.is_some_and(|e| !(e > 0.0)) {
            return Err(FusionError::Config("edge_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn inject_timestep(&self) -> usize {
        self.spacing.timesteps[self.inject_step_index]
    }
}

fn default_window_length() -> usize {
    110
}
fn default_overlap() -> usize {
    25
}
fn default_cutoff() -> f64 {
    0.2
}
fn default_alpha() -> f64 {
    0.03
}
fn default_edge_threshold() -> Option<f64> {
    Some(0.3)
}
fn default_steps() -> usize {
    4
}
fn default_inject_index() -> usize {
    2
}
fn default_beta_start() -> f64 {
    0.00085
}
fn default_beta_end() -> f64 {
    0.012
}
fn default_train_steps() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

/// Serializable fusion settings; builds the [`DenoiserConfig`] and window plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(default = "default_window_length")]
    pub window_length: usize,
    #[serde(default = "default_overlap")]
    pub overlap: usize,
    /// Cross-fade overlaps; `false` cuts hard at the overlap midpoint.
    #[serde(default = "default_true")]
    pub blend: bool,
    #[serde(default = "default_cutoff")]
    pub cutoff_hz: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_steps")]
    pub inference_steps: usize,
    #[serde(default)]
    pub spacing: SpacingMode,
    #[serde(default = "default_inject_index")]
    pub inject_step_index: usize,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_train_steps")]
    pub train_steps: usize,
    #[serde(default)]
    pub injection: Injection,
    #[serde(default)]
    pub extension: Extension,
    /// `null` disables segmentation.
    #[serde(default = "default_edge_threshold")]
    pub edge_threshold: Option<f64>,
    #[serde(default)]
    pub align: AlignOptions,
}

impl Default for FusionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl FusionConfig {
    pub fn denoiser(&self) -> Result<DenoiserConfig, FusionError> {
        let schedule = ScheduleTable::build(self.schedule, self.beta_start, self.beta_end, self.train_steps)?;
        let spacing = TimestepSpacing::new(self.train_steps, self.inference_steps, self.spacing)?;
        let cfg = DenoiserConfig {
            cutoff_hz: self.cutoff_hz,
            alpha: self.alpha,
            spacing,
            inject_step_index: self.inject_step_index,
            schedule,
            injection: self.injection,
            extension: self.extension,
            edge_threshold: self.edge_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identity stage 2: no shrinkage and no injected noise.
    pub fn identity() -> Self {
        Self { alpha: 1.0, injection: Injection::Null, ..Self::default() }
    }
}

/// Scales the high band of `traj` by `alpha`, keeping bins with folded index `≤ cutoff_bin`.
fn shrink(traj: &[f64], cfg: &DenoiserConfig) -> Vec<f64> {
    let len = traj.len();
    let signal: Vec<f64> = match cfg.extension {
        Extension::Periodic => traj.to_vec(),
        Extension::Mirror => traj.iter().chain(traj.iter().rev()).copied().collect(),
    };
    let m = signal.len();
    let plan = TransformPlan::new(m);
    let cutoff = cfg.cutoff_hz * m as f64;
    let mut coeffs = plan.forward(&signal);
    for (k, c) in coeffs.iter_mut().enumerate() {
        if k.min(m - k) as f64 > cutoff {
            *c *= Complex64::new(cfg.alpha, 0.0);
        }
    }
    plan.inverse_complex(&coeffs).iter().take(len).map(|c| c.re).collect()
}

/// Filters `traj`, piecewise when an edge threshold is set.
fn filter_trajectory(traj: &[f64], depth: &[f64], cfg: &DenoiserConfig) -> Vec<f64> {
    let Some(threshold) = cfg.edge_threshold else {
        return shrink(traj, cfg);
    };
    let mut out = traj.to_vec();
    let mut start = 0;
    for t in 1..=traj.len() {
        let cut = t == traj.len() || (depth[t] / depth[t - 1]).ln().abs() > threshold;
        if cut {
            if t - start >= MIN_WINDOW {
                out[start..t].copy_from_slice(&shrink(&traj[start..t], cfg));
            }
            start = t;
        }
    }
    out
}

/// Denoises one window; `window_id` keys the injected noise.
pub fn spectral_denoise_window(
    window: &DepthVideo,
    cfg: &DenoiserConfig,
    seed: u64,
    window_id: u64,
) -> Result<DepthVideo, FusionError> {
    cfg.validate()?;
    let frames = window.frame_count();
    if frames < MIN_WINDOW {
        return Err(FusionError::WindowTooShort(frames));
    }
    let n = window.pixel_count();
    let disparity = |v: f32| match window.kind() {
        ValueKind::Depth => 1.0 / v as f64,
        ValueKind::Disparity => v as f64,
    };

    let mut valid_disp: Vec<f64> =
        window.values().iter().zip(window.validity()).filter(|(_, ok)| **ok).map(|(v, _)| disparity(*v)).collect();
    if valid_disp.is_empty() {
        return Ok(window.clone());
    }
    let lo = percentile(&mut valid_disp, 0.01);
    let hi = percentile(&mut valid_disp, 0.99);
    let range = if hi > lo { hi - lo } else { 1.0 };

    let t_inject = cfg.inject_timestep();
    let (a, b) = cfg.schedule.coefficients(t_inject)?;
    let identity = cfg.alpha == 1.0 && cfg.injection == Injection::Null;

    let columns: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|px| {
            let mut disp = Vec::with_capacity(frames);
            for t in 0..frames {
                if !window.valid_frame(t)[px] {
                    return None;
                }
                disp.push(disparity(window.frame(t)[px]));
            }
            if identity {
                return Some(vec![0.0; frames]);
            }
            let x0: Vec<f64> = disp.iter().map(|d| ((d - lo) / range).clamp(0.0, 1.0)).collect();
            let eps = match cfg.injection {
                Injection::Seeded => normals(&mut stream(seed, Domain::Injection, (window_id << 32) | px as u64), frames),
                Injection::Null => vec![0.0; frames],
            };
            let x_t: Vec<f64> = x0.iter().zip(&eps).map(|(x, e)| a * x + b * e).collect();
            let x0_hat: Vec<f64> = x_t.iter().zip(&eps).map(|(x, e)| (x - b * e) / a).collect();
            let depth: Vec<f64> = disp.iter().map(|d| 1.0 / d).collect();
            let y = filter_trajectory(&x0_hat, &depth, cfg);
            Some(y.iter().zip(&x0).map(|(y, x)| (y - x) * range).collect())
        })
        .collect();

    let mut data = window.values().to_vec();
    for (px, delta) in columns.iter().enumerate() {
        let Some(delta) = delta else { continue };
        for (t, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let i = t * n + px;
            let disp = disparity(data[i]) + d;
            // keep the sample positive; a collapse this large means the window is degenerate
            let disp = disp.max(1e-6);
            data[i] = match window.kind() {
                ValueKind::Depth => (1.0 / disp) as f32,
                ValueKind::Disparity => disp as f32,
            };
        }
    }
    Ok(DepthVideo::new(window.width(), window.height(), frames, window.kind(), data, window.validity().to_vec())?)
}

/// Weight of the incoming window at overlap offset `k` of `m` frames.
pub fn crossfade_weight(k: usize, m: usize) -> f64 {
    (k + 1) as f64 / (m + 1) as f64
}

/// Sequentially merges window outputs into one video.
pub fn blend_windows(slices: &[DepthVideo], plan: &WindowPlan, blend: bool) -> Result<DepthVideo, FusionError> {
    if slices.len() != plan.windows.len() {
        return Err(FusionError::SliceCount { slices: slices.len(), windows: plan.windows.len() });
    }
    for (index, (s, &(a, b))) in slices.iter().zip(&plan.windows).enumerate() {
        if s.frame_count() != b - a + 1 {
            return Err(FusionError::SliceLength { index, got: s.frame_count(), expected: b - a + 1 });
        }
        if s.width() != slices[0].width() || s.height() != slices[0].height() || s.kind() != slices[0].kind() {
            return Err(FusionError::SliceShape(index));
        }
    }
    let n = slices[0].pixel_count();
    let total = plan.frame_count;
    let mut data = vec![0.0f32; total * n];
    let mut valid = vec![false; total * n];
    let mut covered_end = 0usize; // exclusive
    for (slice, &(start, end)) in slices.iter().zip(&plan.windows) {
        let m = covered_end.saturating_sub(start);
        for f in start..=end {
            let local = f - start;
            let src = &slice.frame(local);
            let src_valid = slice.valid_frame(local);
            let row = f * n..(f + 1) * n;
            if f >= covered_end {
                data[row.clone()].copy_from_slice(src);
                valid[row].copy_from_slice(src_valid);
                continue;
            }
            let k = f - start;
            let w = if blend {
                crossfade_weight(k, m)
            } else if 2 * k >= m {
                1.0
            } else {
                0.0
            };
            for px in 0..n {
                let i = f * n + px;
                match (valid[i], src_valid[px]) {
                    (true, true) => data[i] = ((1.0 - w) * data[i] as f64 + w * src[px] as f64) as f32,
                    (false, true) => {
                        data[i] = src[px];
                        valid[i] = true;
                    }
                    _ => {}
                }
            }
        }
        covered_end = covered_end.max(end + 1);
    }
    Ok(DepthVideo::new(slices[0].width(), slices[0].height(), total, slices[0].kind(), data, valid)?)
}

/// Stage 2 alone: window, denoise, blend.
pub fn fuse_video(video: &DepthVideo, cfg: &FusionConfig, seed: u64) -> Result<(DepthVideo, WindowPlan), FusionError> {
    let denoiser = cfg.denoiser()?;
    let plan = plan_windows(video.frame_count(), cfg.window_length, cfg.overlap)?;
    let slices: Vec<DepthVideo> = plan
        .windows
        .par_iter()
        .map(|&(a, b)| spectral_denoise_window(&video.slice_frames(a, b), &denoiser, seed, a as u64))
        .collect::<Result<_, _>>()?;
    let fused = blend_windows(&slices, &plan, cfg.blend)?;
    Ok((fused, plan))
}

#[derive(Debug, Clone)]
pub struct TwoStageOutput {
    pub stage1: GlobalAlignment,
    pub fused: DepthVideo,
    pub plan: WindowPlan,
}

/// Stage 1 (global alignment) followed by stage 2.
pub fn run_two_stage(pairs: &PairGraph, cfg: &FusionConfig, seed: u64) -> Result<TwoStageOutput, FusionError> {
    cfg.denoiser()?;
    let stage1 = align_global(pairs, &cfg.align)?;
    let (fused, plan) = fuse_video(&stage1.depth, cfg, seed)?;
    Ok(TwoStageOutput { stage1, fused, plan })
}
