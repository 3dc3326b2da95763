//! Estimator surrogates: GT depth with controlled multiplicative error.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{normals, stream, Domain};
use crate::spectral::TransformPlan;
use crate::video::{DepthVideo, RegionMasks, ValueKind, VideoError};

/// Lower clamp on the multiplicative factor so corrupted depth stays positive.
pub const MIN_FACTOR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("surrogate spec: {0}")]
    Invalid(String),
    #[error("jitter band [{lo}, {hi}] keeps no DFT bin of a {frames}-frame video")]
    EmptyBand { lo: f64, hi: f64, frames: usize },
    #[error("masks are {got:?}, video is {expected:?}")]
    MaskShape { got: (usize, usize, usize), expected: (usize, usize, usize) },
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    StereoJitter,
    WindowDrift,
    GaussianPixel,
}

fn default_band() -> [f64; 2] {
    [0.3, 0.5]
}

fn default_drift_window() -> usize {
    110
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSurrogateSpec {
    pub kind: SurrogateKind,
    /// Standard deviation of the relative jitter outside dynamic regions.
    #[serde(default)]
    pub jitter_amplitude: f64,
    /// Kept temporal frequencies in cycles per frame.
    #[serde(default = "default_band")]
    pub jitter_band: [f64; 2],
    #[serde(default)]
    pub drift_amplitude: f64,
    #[serde(default = "default_drift_window")]
    pub drift_window: usize,
    /// Standard deviation of i.i.d. relative pixel noise; applies to every kind.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Half-width of the uniform per-view scale drawn by `make_pairwise`.
    #[serde(default)]
    pub pair_scale_jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EstimatorSurrogateSpec {
    pub fn identity(kind: SurrogateKind) -> Self {
        Self {
            kind,
            jitter_amplitude: 0.0,
            jitter_band: default_band(),
            drift_amplitude: 0.0,
            drift_window: default_drift_window(),
            noise_sigma: 0.0,
            pair_scale_jitter: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::Invalid(m.to_string()));
        let amplitudes = [self.jitter_amplitude, self.drift_amplitude, self.noise_sigma, self.pair_scale_jitter];
        if amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("amplitudes must be finite and non-negative");
        }
        if self.pair_scale_jitter >= 1.0 {
            return bad("pair_scale_jitter must be below 1");
        }
        let [lo, hi] = self.jitter_band;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return bad("jitter_band must satisfy 0 < lo <= hi <= 0.5");
        }
        if self.drift_window == 0 {
            return bad("drift_window must be positive");
        }
        Ok(())
    }
}

/// Unit-variance trajectory whose spectrum is confined to `band`, for each pixel.
fn band_limited_trajectory(plan: &TransformPlan, keep: &[bool], seed: u64, pixel: usize) -> Vec<f64> {
    let frames = plan.len();
    let white = normals(&mut stream(seed, Domain::Jitter, pixel as u64), frames);
    let mut coeffs = plan.forward(&white);
    for (c, k) in coeffs.iter_mut().zip(keep) {
        if !k {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    let kept = keep.iter().filter(|k| **k).count();
    let gain = (frames as f64 / kept as f64).sqrt();
    plan.inverse_complex(&coeffs).iter().map(|c| c.re * gain).collect()
}

/// DFT bins whose folded frequency `min(k, T−k)/T` lies in `[lo, hi]`.
pub fn band_bins(frames: usize, band: [f64; 2]) -> Vec<bool> {
    (0..frames)
        .map(|k| {
            let f = k.min(frames - k) as f64 / frames as f64;
            f >= band[0] - 1e-12 && f <= band[1] + 1e-12
        })
        .collect()
}

/// Per-window relative offsets `±a·(1 + (−1)^w·u_w/2)` with `u_w ∈ [0.5, 1]`:
/// a common offset of magnitude `a` plus a swing that alternates between
/// adjacent windows, so every seam is a level change of at least `a/2`.
pub fn drift_levels(spec: &EstimatorSurrogateSpec, frames: usize) -> Vec<f64> {
    let windows = frames.div_ceil(spec.drift_window);
    let sign = if stream(spec.seed, Domain::Drift, 0).random::<bool>() { 1.0 } else { -1.0 };
    (0..windows)
        .map(|w| {
            let u = stream(spec.seed, Domain::Drift, w as u64 + 1).random_range(0.5..=1.0);
            let swing = if w % 2 == 0 { 0.5 * u } else { -0.5 * u };
            sign * spec.drift_amplitude * (1.0 + swing)
        })
        .collect()
}

/// Corrupts `gt` according to `spec`; invalid pixels stay invalid.
pub fn corrupt(gt: &DepthVideo, masks: &RegionMasks, spec: &EstimatorSurrogateSpec) -> Result<DepthVideo, SurrogateError> {
    spec.validate()?;
    if !masks.fits(gt) {
        return Err(SurrogateError::MaskShape {
            got: (masks.width(), masks.height(), masks.frame_count()),
            expected: (gt.width(), gt.height(), gt.frame_count()),
        });
    }
    let frames = gt.frame_count();
    let n = gt.pixel_count();

    let jitter: Option<Vec<Vec<f64>>> = match spec.kind {
        SurrogateKind::StereoJitter if spec.jitter_amplitude > 0.0 => {
            let keep = band_bins(frames, spec.jitter_band);
            if !keep.iter().any(|k| *k) {
                let [lo, hi] = spec.jitter_band;
                return Err(SurrogateError::EmptyBand { lo, hi, frames });
            }
            let plan = TransformPlan::new(frames);
            Some((0..n).into_par_iter().map(|px| band_limited_trajectory(&plan, &keep, spec.seed, px)).collect())
        }
        _ => None,
    };
    let drift = match spec.kind {
        SurrogateKind::WindowDrift => Some(drift_levels(spec, frames)),
        _ => None,
    };

    let frames_out: Vec<Vec<f32>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let noise =
                if spec.noise_sigma > 0.0 { normals(&mut stream(spec.seed, Domain::PixelNoise, t as u64), n) } else { Vec::new() };
            let values = gt.frame(t);
            let valid = gt.valid_frame(t);
            let dynamic = masks.dynamic_frame(t);
            (0..n)
                .map(|px| {
                    if !valid[px] {
                        return values[px];
                    }
                    let mut e = 0.0;
                    if let Some(j) = &jitter {
                        let gain = if dynamic[px] { 2.0 } else { 1.0 };
                        e += gain * spec.jitter_amplitude * j[px][t];
                    }
                    if let Some(levels) = &drift {
                        e += levels[t / spec.drift_window];
                    }
                    if !noise.is_empty() {
                        e += spec.noise_sigma * noise[px];
                    }
                    if e == 0.0 {
                        values[px]
                    } else {
                        (values[px] as f64 * (1.0 + e).max(MIN_FACTOR)) as f32
                    }
                })
                .collect()
        })
        .collect();
    let data: Vec<f32> = frames_out.into_iter().flatten().collect();
    let validity = gt.validity().to_vec();
    Ok(DepthVideo::new(gt.width(), gt.height(), frames, ValueKind::Depth, data, validity)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{error_band_energy, BandPartition, BandScheme};

    fn plane(frames: usize) -> (DepthVideo, RegionMasks) {
        let (w, h) = (6, 5);
        let data: Vec<f32> = (0..w * h * frames).map(|i| 2.0 + (i % 7) as f32 * 0.1).collect();
        (DepthVideo::from_values(w, h, frames, ValueKind::Depth, data).unwrap(), RegionMasks::all_static(w, h, frames))
    }

    #[test]
    fn zero_amplitudes_are_identity() {
        let (gt, masks) = plane(20);
        for kind in [SurrogateKind::StereoJitter, SurrogateKind::WindowDrift, SurrogateKind::GaussianPixel] {
            assert_eq!(corrupt(&gt, &masks, &EstimatorSurrogateSpec::identity(kind)).unwrap(), gt);
        }
    }

    #[test]
    fn drift_has_one_level_per_window() {
        let (gt, masks) = plane(220);
        let spec = EstimatorSurrogateSpec { drift_amplitude: 0.05, ..EstimatorSurrogateSpec::identity(SurrogateKind::WindowDrift) };
        let out = corrupt(&gt, &masks, &spec).unwrap();
        let levels: Vec<f64> = (0..220).map(|t| (out.frame(t)[0] / gt.frame(t)[0]) as f64 - 1.0).collect();
        let mut distinct: Vec<f64> = levels.iter().map(|l| (l * 1e5).round() / 1e5).collect();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
        assert!(levels.iter().all(|l| l.abs() >= 0.025 - 1e-6 && l.abs() <= 0.075 + 1e-6));
        assert!((levels[0] - levels[219]).abs() >= 0.025 - 1e-6);
        let partition = BandPartition::new(220, 11, BandScheme::Exponential).unwrap();
        let energy = error_band_energy(&out, &gt, &partition).unwrap();
        assert!(energy.fraction_lowest(3) >= 0.9, "{}", energy.fraction_lowest(3));
    }

    #[test]
    fn jitter_energy_sits_in_its_band() {
        let (gt, masks) = plane(220);
        let spec = EstimatorSurrogateSpec { jitter_amplitude: 0.03, ..EstimatorSurrogateSpec::identity(SurrogateKind::StereoJitter) };
        let out = corrupt(&gt, &masks, &spec).unwrap();
        let partition = BandPartition::new(220, 11, BandScheme::Exponential).unwrap();
        let energy = error_band_energy(&out, &gt, &partition).unwrap();
        // bands 6..=10 lie above the partition midpoint
        assert!(energy.fraction_highest(5) >= 0.8, "{}", energy.fraction_highest(5));
    }

    #[test]
    fn band_limited_trajectory_has_unit_variance_and_no_out_of_band_energy() {
        let frames = 128;
        let keep = band_bins(frames, [0.25, 0.5]);
        let plan = TransformPlan::new(frames);
        let mut var = 0.0;
        for px in 0..200 {
            let traj = band_limited_trajectory(&plan, &keep, 9, px);
            let spec = crate::spectral::naive::dft(&traj);
            for (k, c) in spec.iter().enumerate() {
                if !keep[k] {
                    assert!(c.norm() < 1e-9);
                }
            }
            var += traj.iter().map(|x| x * x).sum::<f64>() / frames as f64;
        }
        assert!((var / 200.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn jitter_doubles_inside_dynamic_regions() {
        let (gt, _) = plane(64);
        let mut dynamic = vec![false; gt.values().len()];
        for t in 0..64 {
            dynamic[t * 30] = true;
        }
        let masks = RegionMasks::new(6, 5, 64, dynamic).unwrap();
        let spec = EstimatorSurrogateSpec { jitter_amplitude: 0.01, ..EstimatorSurrogateSpec::identity(SurrogateKind::StereoJitter) };
        let with = corrupt(&gt, &masks, &spec).unwrap();
        let without = corrupt(&gt, &RegionMasks::all_static(6, 5, 64), &spec).unwrap();
        for t in 0..64 {
            let e_dyn = with.frame(t)[0] as f64 / gt.frame(t)[0] as f64 - 1.0;
            let e_static = without.frame(t)[0] as f64 / gt.frame(t)[0] as f64 - 1.0;
            assert!((e_dyn - 2.0 * e_static).abs() < 1e-6);
            assert_eq!(with.frame(t)[1], without.frame(t)[1]);
        }
    }

    #[test]
    fn positivity_and_validity_are_kept() {
        let (gt, masks) = plane(30);
        let mut validity = gt.validity().to_vec();
        validity[3] = false;
        let gt = DepthVideo::new(6, 5, 30, ValueKind::Depth, gt.values().to_vec(), validity).unwrap();
        let spec = EstimatorSurrogateSpec { noise_sigma: 3.0, ..EstimatorSurrogateSpec::identity(SurrogateKind::GaussianPixel) };
        let out = corrupt(&gt, &masks, &spec).unwrap();
        assert_eq!(out.validity(), gt.validity());
        assert!(out.values().iter().zip(out.validity()).all(|(v, ok)| !ok || *v > 0.0));
    }

    #[test]
    fn rejects_bad_specs() {
        let (gt, masks) = plane(8);
        let mut spec = EstimatorSurrogateSpec::identity(SurrogateKind::StereoJitter);
        spec.jitter_band = [0.0, 0.5];
        assert!(matches!(corrupt(&gt, &masks, &spec), Err(SurrogateError::Invalid(_))));
        spec.jitter_band = [0.3, 0.32];
        spec.jitter_amplitude = 0.1;
        assert!(matches!(corrupt(&gt, &masks, &spec), Err(SurrogateError::EmptyBand { .. })));
        let wrong = RegionMasks::all_static(6, 5, 9);
        assert!(matches!(
            corrupt(&gt, &wrong, &EstimatorSurrogateSpec::identity(SurrogateKind::GaussianPixel)),
            Err(SurrogateError::MaskShape { .. })
        ));
    }
}
