//! Synthetic benchmark: analytic scenes, estimator surrogates and pairwise graphs.

pub mod pairwise;
pub mod scene;
pub mod surrogate;

pub use pairwise::{make_pairwise, view_scale, PairwiseError};
pub use scene::{render_gt, CameraPath, DynamicObject, Primitive, RenderedScene, SceneError, SceneSpec};
pub use surrogate::{corrupt, drift_levels, EstimatorSurrogateSpec, SurrogateError, SurrogateKind};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::PairGraph;
use crate::metrics::{align_shared, compute_metrics, MetricOptions, MetricsError};
use crate::video::{DepthVideo, RegionMasks};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Pairwise(#[from] PairwiseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("bench spec: {0}")]
    Invalid(String),
    #[error("drift calibration could not reach AbsRel {target}")]
    Calibration { target: f64 },
}

fn default_window() -> usize {
    2
}

fn default_true() -> bool {
    true
}

/// A scene plus the two surrogate estimators compared on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub scene: SceneSpec,
    /// Per-frame estimator feeding the pairwise graph.
    pub stereo: EstimatorSurrogateSpec,
    pub drift: EstimatorSurrogateSpec,
    /// Each frame is paired with this many successors.
    #[serde(default = "default_window")]
    pub pair_window: usize,
    /// Rescale the drift amplitude so both surrogates share overall AbsRel.
    #[serde(default = "default_true")]
    pub calibrate_drift: bool,
}

impl BenchSpec {
    /// Default surrogates around a bare scene. The drift window is capped at
    /// half the clip so at least two windows exist.
    pub fn from_scene(scene: SceneSpec) -> Self {
        let seed = scene.seed;
        let drift_window = (scene.frame_count / 2).clamp(1, 110);
        Self {
            scene,
            stereo: EstimatorSurrogateSpec {
                jitter_amplitude: 0.03,
                pair_scale_jitter: 0.05,
                seed,
                ..EstimatorSurrogateSpec::identity(SurrogateKind::StereoJitter)
            },
            drift: EstimatorSurrogateSpec {
                drift_amplitude: 0.05,
                drift_window,
                seed: seed.wrapping_add(1),
                ..EstimatorSurrogateSpec::identity(SurrogateKind::WindowDrift)
            },
            pair_window: default_window(),
            calibrate_drift: true,
        }
    }

    /// Replaces every seed; the surrogates get distinct derived seeds.
    pub fn reseed(&mut self, seed: u64) {
        self.scene.seed = seed;
        self.stereo.seed = seed;
        self.drift.seed = seed.wrapping_add(1);
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.scene.validate()?;
        self.stereo.validate()?;
        self.drift.validate()?;
        if self.stereo.kind != SurrogateKind::StereoJitter {
            return Err(BenchError::Invalid("stereo surrogate must have kind stereo_jitter".into()));
        }
        if self.drift.kind != SurrogateKind::WindowDrift {
            return Err(BenchError::Invalid("drift surrogate must have kind window_drift".into()));
        }
        if self.pair_window == 0 || self.pair_window >= self.scene.frame_count {
            return Err(BenchError::Invalid(format!(
                "pair_window must be in 1..{}",
                self.scene.frame_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Bench {
    pub scene: RenderedScene,
    pub stereo: DepthVideo,
    pub drift: DepthVideo,
    /// Drift spec after calibration.
    pub drift_spec: EstimatorSurrogateSpec,
    pub pairs: PairGraph,
}

/// Overall AbsRel after shared affine alignment.
pub fn aligned_absrel(pred: &DepthVideo, gt: &DepthVideo) -> Result<f64, MetricsError> {
    let aligned = align_shared(pred, gt)?;
    Ok(compute_metrics(&aligned.video, gt, None, MetricOptions::default())?.absrel)
}

/// Drift amplitude whose aligned AbsRel matches `target`, by bisection.
pub fn calibrate_drift(
    gt: &DepthVideo,
    masks: &RegionMasks,
    drift: &EstimatorSurrogateSpec,
    target: f64,
) -> Result<f64, BenchError> {
    let absrel = |a: f64| -> Result<f64, BenchError> {
        let spec = EstimatorSurrogateSpec { drift_amplitude: a, ..drift.clone() };
        Ok(aligned_absrel(&corrupt(gt, masks, &spec)?, gt)?)
    };
    let mut lo = 0.0;
    let mut hi = 0.01;
    while absrel(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 0.9 {
            return Err(BenchError::Calibration { target });
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if absrel(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn generate_bench(spec: &BenchSpec) -> Result<Bench, BenchError> {
    spec.validate()?;
    let scene = render_gt(&spec.scene)?;
    let stereo = corrupt(&scene.depth, &scene.masks, &spec.stereo)?;
    let mut drift_spec = spec.drift.clone();
    if spec.calibrate_drift {
        let target = aligned_absrel(&stereo, &scene.depth)?;
        drift_spec.drift_amplitude = calibrate_drift(&scene.depth, &scene.masks, &spec.drift, target)?;
    }
    let drift = corrupt(&scene.depth, &scene.masks, &drift_spec)?;
    let pairs = make_pairwise(&scene.depth, &scene.track, &scene.masks, spec.pair_window, &spec.stereo)?;
    Ok(Bench { scene, stereo, drift, drift_spec, pairs })
}
