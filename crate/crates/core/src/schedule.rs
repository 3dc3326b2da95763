//! Discrete diffusion variance schedules and timestep spacing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::CompensatedSum;
use crate::video::{DepthVideo, VideoError};

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("beta range must satisfy 0 < start <= end < 1, got {start}..{end}")]
    BetaRange { start: f64, end: f64 },
    #[error("schedule needs at least one training step")]
    NoSteps,
    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("cannot space {steps} inference steps over {train} training steps")]
    Spacing { steps: usize, train: usize },
    #[error("signal has {signal} samples but noise has {noise}")]
    NoiseSize { signal: usize, noise: usize },
    #[error("video is constant over its valid pixels; min-max normalization is undefined")]
    Degenerate,
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    /// Interpolates `√β` linearly, then squares.
    ScaledLinear,
}

/// Per-timestep columns for `t = 1..=train_steps`, stored at index `t − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTable {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl ScheduleTable {
    pub fn build(kind: ScheduleKind, beta_start: f64, beta_end: f64, train_steps: usize) -> Result<Self, ScheduleError> {
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(ScheduleError::BetaRange { start: beta_start, end: beta_end });
        }
        if train_steps == 0 {
            return Err(ScheduleError::NoSteps);
        }
        let lerp = |a: f64, b: f64, i: usize| {
            if train_steps == 1 {
                a
            } else {
                a + (b - a) * i as f64 / (train_steps - 1) as f64
            }
        };
        let beta: Vec<f64> = (0..train_steps)
            .map(|i| match kind {
                ScheduleKind::Linear => lerp(beta_start, beta_end, i),
                ScheduleKind::ScaledLinear => lerp(beta_start.sqrt(), beta_end.sqrt(), i).powi(2),
            })
            .collect();
        let alpha_bar = beta
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { kind, beta, alpha_bar })
    }

    /// Linear 0.00085 → 0.012 over 1000 steps.
    pub fn default_linear() -> Self {
        Self::build(ScheduleKind::Linear, 0.00085, 0.012, 1000).expect("valid defaults")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn train_steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize, ScheduleError> {
        if t == 0 || t > self.train_steps() {
            return Err(ScheduleError::Timestep { t, max: self.train_steps() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64, ScheduleError> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64, ScheduleError> {
        Ok(1.0 - self.beta(t)?)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, ScheduleError> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    /// `ᾱ_t / (1 − ᾱ_t)`.
    pub fn snr(&self, t: usize) -> Result<f64, ScheduleError> {
        let a = self.alpha_bar(t)?;
        Ok(a / (1.0 - a))
    }

    /// `(√ᾱ_t, √(1 − ᾱ_t))`.
    pub fn coefficients(&self, t: usize) -> Result<(f64, f64), ScheduleError> {
        let a = self.alpha_bar(t)?;
        Ok((a.sqrt(), (1.0 - a).sqrt()))
    }

    /// `t,beta,alpha_bar,snr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha_bar,snr\n");
        for (i, (b, a)) in self.beta.iter().zip(&self.alpha_bar).enumerate() {
            out.push_str(&format!("{},{b},{a},{}\n", i + 1, a / (1.0 - a)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingMode {
    Leading,
    #[default]
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepSpacing {
    pub mode: SpacingMode,
    pub train_steps: usize,
    /// Strictly decreasing, within `1..=train_steps`.
    pub timesteps: Vec<usize>,
}

impl TimestepSpacing {
    /// trailing: `T − i·⌊T/N⌋`; leading: `⌊T/N⌋·(N − 1 − i) + 1`, for `i = 0..N`.
    ///
    /// The leading form is `T − ⌊T/N⌋·(i + 1) + 1` shifted down by `T mod N` so
    /// that it always ends at 1.
    pub fn new(train_steps: usize, steps: usize, mode: SpacingMode) -> Result<Self, ScheduleError> {
        if steps == 0 || steps > train_steps {
            return Err(ScheduleError::Spacing { steps, train: train_steps });
        }
        let stride = train_steps / steps;
        let timesteps = (0..steps)
            .map(|i| match mode {
                SpacingMode::Trailing => train_steps - i * stride,
                SpacingMode::Leading => stride * (steps - 1 - i) + 1,
            })
            .collect();
        Ok(Self { mode, train_steps, timesteps })
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · noise`, element-wise.
pub fn q_sample(x0: &[f64], table: &ScheduleTable, t: usize, noise: &[f64]) -> Result<Vec<f64>, ScheduleError> {
    if x0.len() != noise.len() {
        return Err(ScheduleError::NoiseSize { signal: x0.len(), noise: noise.len() });
    }
    let (a, b) = table.coefficients(t)?;
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPair {
    pub frame: usize,
    pub pred_mean: f64,
    pub gt_mean: f64,
}

fn normalized_frame_means(video: &DepthVideo) -> Result<Vec<Option<f64>>, ScheduleError> {
    let (lo, hi) = video
        .values()
        .iter()
        .zip(video.validity())
        .filter(|(_, ok)| **ok)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(*v as f64), hi.max(*v as f64)));
    if !(hi > lo) {
        return Err(ScheduleError::Degenerate);
    }
    let span = hi - lo;
    Ok((0..video.frame_count())
        .map(|t| {
            let mut sum = CompensatedSum::new();
            let mut n = 0usize;
            for (v, ok) in video.frame(t).iter().zip(video.valid_frame(t)) {
                if *ok {
                    sum.add((*v as f64 - lo) / span);
                    n += 1;
                }
            }
            (n > 0).then(|| sum.value() / n as f64)
        })
        .collect())
}

/// Per-frame means after min-max normalizing each video over all its valid pixels.
/// Frames where either video has no valid pixel are omitted.
pub fn mean_shift_diagnostic(pred: &DepthVideo, gt: &DepthVideo) -> Result<Vec<MeanPair>, ScheduleError> {
    pred.ensure_same_shape(gt)?;
    let p = normalized_frame_means(pred)?;
    let g = normalized_frame_means(gt)?;
    Ok(p
        .into_iter()
        .zip(g)
        .enumerate()
        .filter_map(|(frame, (p, g))| Some(MeanPair { frame, pred_mean: p?, gt_mean: g? }))
        .collect())
}

pub fn mean_shift_csv(rows: &[MeanPair]) -> String {
    let mut out = String::from("frame,pred_mean,gt_mean\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.frame, r.pred_mean, r.gt_mean));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normals, stream, Domain};
    use crate::video::ValueKind;
    use proptest::prelude::*;

    #[test]
    fn default_schedule_terminal_values() {
        let table = ScheduleTable::default_linear();
        // independent running product
        let mut prod = 1.0f64;
        for i in 0..1000 {
            prod *= 1.0 - (0.00085 + (0.012 - 0.00085) * i as f64 / 999.0);
        }
        let a = table.alpha_bar(1000).unwrap();
        assert!((a - prod).abs() <= 1e-12 * prod);
        assert!((0.00155..=0.00170).contains(&a));
        assert!((0.9991..=0.9993).contains(&(1.0 - a).sqrt()));
        let snr = table.snr(1000).unwrap();
        assert!((snr - a / (1.0 - a)).abs() < 1e-18);
        assert!((snr - 1.60e-3).abs() < 0.05e-3);
    }

    #[test]
    fn single_step_schedule() {
        let table = ScheduleTable::build(ScheduleKind::Linear, 0.5, 0.5, 1).unwrap();
        assert_eq!(table.alpha_bar(1).unwrap(), 0.5);
        assert_eq!(table.snr(1).unwrap(), 1.0);
        assert!(matches!(table.snr(0), Err(ScheduleError::Timestep { .. })));
        assert!(matches!(table.snr(2), Err(ScheduleError::Timestep { .. })));
    }

    #[test]
    fn invalid_ranges() {
        assert!(ScheduleTable::build(ScheduleKind::Linear, 0.0, 0.1, 10).is_err());
        assert!(ScheduleTable::build(ScheduleKind::Linear, 0.2, 0.1, 10).is_err());
        assert!(ScheduleTable::build(ScheduleKind::Linear, 0.1, 1.0, 10).is_err());
        assert!(ScheduleTable::build(ScheduleKind::Linear, 0.1, 0.2, 0).is_err());
    }

    #[test]
    fn scaled_linear_endpoints() {
        let table = ScheduleTable::build(ScheduleKind::ScaledLinear, 0.00085, 0.012, 1000).unwrap();
        assert!((table.beta(1).unwrap() - 0.00085).abs() < 1e-15);
        assert!((table.beta(1000).unwrap() - 0.012).abs() < 1e-15);
        assert!(table.alpha_bar(1000).unwrap() > ScheduleTable::default_linear().alpha_bar(1000).unwrap());
    }

    #[test]
    fn spacing_formulas() {
        let trailing = TimestepSpacing::new(1000, 4, SpacingMode::Trailing).unwrap();
        assert_eq!(trailing.timesteps, vec![1000, 750, 500, 250]);
        let leading = TimestepSpacing::new(1000, 4, SpacingMode::Leading).unwrap();
        assert_eq!(leading.timesteps, vec![751, 501, 251, 1]);
        let dense = TimestepSpacing::new(50, 50, SpacingMode::Trailing).unwrap();
        assert_eq!(dense.timesteps, (1..=50).rev().collect::<Vec<_>>());
        assert!(TimestepSpacing::new(10, 11, SpacingMode::Trailing).is_err());
    }

    #[test]
    fn q_sample_cases() {
        let table = ScheduleTable::default_linear();
        let noise = vec![0.3, -1.2];
        let out = q_sample(&[0.0, 0.0], &table, 400, &noise).unwrap();
        let b = (1.0 - table.alpha_bar(400).unwrap()).sqrt();
        assert_eq!(out, vec![b * 0.3, b * -1.2]);
        let first = q_sample(&[1.0], &table, 1, &[0.0]).unwrap();
        assert!((first[0] - (1.0f64 - 0.00085).sqrt()).abs() < 1e-15);
        assert!(q_sample(&[1.0], &table, 0, &[0.0]).is_err());
        assert!(q_sample(&[1.0], &table, 5, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn q_sample_variance_monte_carlo() {
        let table = ScheduleTable::default_linear();
        let t = 500;
        let n = 100_000;
        let x0: Vec<f64> = (0..n).map(|i| (i % 7) as f64 * 0.1).collect();
        let noise = normals(&mut stream(11, Domain::Injection, 0), n);
        let xt = q_sample(&x0, &table, t, &noise).unwrap();
        let (a, _) = table.coefficients(t).unwrap();
        let resid: Vec<f64> = xt.iter().zip(&x0).map(|(x, x0)| x - a * x0).collect();
        let mean = resid.iter().sum::<f64>() / n as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 1.0 - table.alpha_bar(t).unwrap();
        assert!((var - expected).abs() <= 0.02 * expected, "{var} vs {expected}");
    }

    #[test]
    fn mean_shift_cases() {
        let data: Vec<f32> = (0..24).map(|i| 0.5 + (i as f32 * 0.37).sin().abs()).collect();
        let gt = DepthVideo::from_values(3, 2, 4, ValueKind::Disparity, data.clone()).unwrap();
        let same = mean_shift_diagnostic(&gt, &gt).unwrap();
        assert!(same.iter().all(|r| r.pred_mean == r.gt_mean));
        let shifted = gt.map_valid(ValueKind::Disparity, |v| v + 3.0);
        let rows = mean_shift_diagnostic(&shifted, &gt).unwrap();
        for r in rows {
            assert!((r.pred_mean - r.gt_mean).abs() < 1e-6);
        }
        let flat = DepthVideo::constant(2, 2, 2, ValueKind::Disparity, 1.0);
        assert_eq!(mean_shift_diagnostic(&flat, &flat), Err(ScheduleError::Degenerate));
    }

    #[test]
    fn mean_shift_recovers_injected_drift() {
        // frame 0 pins the range to [0, 1]; later frames stay inside it
        let (w, h, frames) = (4, 1, 5);
        let drift = [0.0, 0.0625, -0.0625, 0.125, 0.03125];
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        for (t, d) in drift.iter().enumerate() {
            for x in 0..w {
                let base = if t == 0 { x as f64 / 3.0 } else { 0.25 + 0.125 * x as f64 };
                gt.push(base);
                pred.push(base + d);
            }
        }
        // shift everything positive so values are valid depths
        let gt = DepthVideo::from_values(w, h, frames, ValueKind::Disparity, gt.iter().map(|v| (v + 1.0) as f32).collect()).unwrap();
        let pred = DepthVideo::from_values(w, h, frames, ValueKind::Disparity, pred.iter().map(|v| (v + 1.0) as f32).collect()).unwrap();
        let rows = mean_shift_diagnostic(&pred, &gt).unwrap();
        for (r, d) in rows.iter().zip(drift) {
            assert!((r.pred_mean - r.gt_mean - d).abs() < 1e-9, "frame {}", r.frame);
        }
    }

    proptest! {
        #[test]
        fn schedules_are_monotone(start in 1e-5f64..0.05, span in 0.0f64..0.5, steps in 1usize..400, scaled in any::<bool>()) {
            let kind = if scaled { ScheduleKind::ScaledLinear } else { ScheduleKind::Linear };
            let table = ScheduleTable::build(kind, start, (start + span).min(0.9), steps).unwrap();
            for t in 1..steps {
                prop_assert!(table.alpha_bar(t + 1).unwrap() < table.alpha_bar(t).unwrap());
                prop_assert!(table.snr(t + 1).unwrap() < table.snr(t).unwrap());
            }
            for t in 1..=steps {
                let (a, b) = table.coefficients(t).unwrap();
                prop_assert!((a * a + b * b - 1.0).abs() < 1e-12);
                let beta = table.beta(t).unwrap();
                prop_assert!(beta > 0.0 && beta < 1.0);
            }
        }

        #[test]
        fn trailing_has_terminal_step(train in 2usize..2000, n in 1usize..100) {
            prop_assume!(n < train);
            let trailing = TimestepSpacing::new(train, n, SpacingMode::Trailing).unwrap();
            let leading = TimestepSpacing::new(train, n, SpacingMode::Leading).unwrap();
            prop_assert_eq!(trailing.timesteps[0], train);
            prop_assert!(!leading.timesteps.contains(&train));
            for s in [&trailing, &leading] {
                prop_assert_eq!(s.len(), n);
                prop_assert!(s.timesteps.windows(2).all(|w| w[0] > w[1]));
                prop_assert!(s.timesteps.iter().all(|t| (1..=train).contains(t)));
            }
        }
    }
}
