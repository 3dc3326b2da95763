//! Affine-invariant alignment and depth accuracy metrics.
//!
//! Predictions are aligned to ground truth with one least-squares scale and
//! shift shared by every frame of the video, then scored per frame with
//! AbsRel, RMSE and the δ-threshold accuracies. Aggregates are plain means of
//! the per-frame values. Only jointly valid pixels take part anywhere.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::CompensatedSum;
use crate::video::{DepthVideo, RegionMasks, VideoError};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Shape(#[from] VideoError),
    #[error("prediction and ground truth hold different value kinds")]
    KindMismatch,
    #[error("prediction is constant over the {count} overlapping pixels; scale is undetermined")]
    SingularFit { count: usize },
    #[error("prediction and ground truth share no valid pixels")]
    EmptyOverlap,
    #[error("selection mask has {got} entries, expected {expected}")]
    MaskSize { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub scale: f64,
    pub shift: f64,
    pub valid_pixel_count: usize,
}

impl AffineFit {
    pub fn identity() -> Self {
        Self { scale: 1.0, shift: 0.0, valid_pixel_count: 0 }
    }
}

fn check_pair(pred: &DepthVideo, gt: &DepthVideo) -> Result<(), MetricsError> {
    pred.ensure_same_shape(gt)?;
    if pred.kind() != gt.kind() {
        return Err(MetricsError::KindMismatch);
    }
    Ok(())
}

/// Least-squares `(s, t)` for `s·x + t ≈ y` over the given samples.
///
/// Sums are compensated and taken about the sample means, so the result
/// stays accurate for large pixel counts.
fn solve_affine(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Result<AffineFit, MetricsError> {
    let mut n = 0usize;
    let mut sx = CompensatedSum::new();
    let mut sy = CompensatedSum::new();
    for (x, y) in pairs.clone() {
        n += 1;
        sx.add(x);
        sy.add(y);
    }
    if n == 0 {
        return Err(MetricsError::EmptyOverlap);
    }
    let nf = n as f64;
    let cx = sx.value() / nf;
    let cy = sy.value() / nf;
    // second pass about the rounded means; the residual mean offsets are
    // folded back in exactly below
    let mut dx = CompensatedSum::new();
    let mut dy = CompensatedSum::new();
    let mut sxx = CompensatedSum::new();
    let mut sxy = CompensatedSum::new();
    for (x, y) in pairs {
        let a = x - cx;
        let b = y - cy;
        dx.add(a);
        dy.add(b);
        sxx.add(a * a);
        sxy.add(a * b);
    }
    let mx = dx.value() / nf;
    let my = dy.value() / nf;
    let vxx = sxx.value() - nf * mx * mx;
    let vxy = sxy.value() - nf * mx * my;
    if n < 2 || !(vxx > 0.0) || vxx <= f64::EPSILON * sxx.value().abs() * 4.0 {
        return Err(MetricsError::SingularFit { count: n });
    }
    let scale = vxy / vxx;
    let shift = (cy + my) - scale * (cx + mx);
    Ok(AffineFit { scale, shift, valid_pixel_count: n })
}

fn joint_samples<'a>(pred: &'a DepthVideo, gt: &'a DepthVideo, frames: std::ops::Range<usize>) -> impl Iterator<Item = (f64, f64)> + Clone + 'a {
    let n = pred.pixel_count();
    let range = frames.start * n..frames.end * n;
    pred.values()[range.clone()]
        .iter()
        .zip(&pred.validity()[range.clone()])
        .zip(gt.values()[range.clone()].iter().zip(&gt.validity()[range]))
        .filter(|((_, pv), (_, gv))| **pv && **gv)
        .map(|((p, _), (g, _))| (*p as f64, *g as f64))
}

/// One scale and shift for the whole video.
pub fn fit_affine_shared(pred: &DepthVideo, gt: &DepthVideo) -> Result<AffineFit, MetricsError> {
    check_pair(pred, gt)?;
    solve_affine(joint_samples(pred, gt, 0..pred.frame_count()))
}

/// Independent scale and shift per frame.
pub fn fit_affine_per_frame(pred: &DepthVideo, gt: &DepthVideo) -> Result<Vec<AffineFit>, MetricsError> {
    check_pair(pred, gt)?;
    (0..pred.frame_count())
        .into_par_iter()
        .map(|t| solve_affine(joint_samples(pred, gt, t..t + 1)))
        .collect()
}

/// Sum of squared residuals of `s·pred + t − gt` over jointly valid pixels.
pub fn affine_objective(pred: &DepthVideo, gt: &DepthVideo, scale: f64, shift: f64) -> f64 {
    joint_samples(pred, gt, 0..pred.frame_count())
        .map(|(x, y)| {
            let r = scale * x + shift - y;
            r * r
        })
        .collect::<CompensatedSum>()
        .value()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub video: DepthVideo,
    /// Pixels that were valid but mapped to a non-positive value.
    pub invalidated: usize,
}

/// Maps valid samples through `v ↦ s·v + t`; non-positive results become invalid.
pub fn apply_affine(video: &DepthVideo, fit: &AffineFit) -> Aligned {
    let out = video.map_valid(video.kind(), |v| (fit.scale * v as f64 + fit.shift) as f32);
    let invalidated = video.valid_count() - out.valid_count();
    Aligned { video: out, invalidated }
}

/// Shared least-squares fit of `pred` onto `gt`, applied to `pred`.
pub fn align_shared(pred: &DepthVideo, gt: &DepthVideo) -> Result<Aligned, MetricsError> {
    let fit = fit_affine_shared(pred, gt)?;
    Ok(apply_affine(pred, &fit))
}

/// Applies one fit per frame.
pub fn apply_affine_per_frame(video: &DepthVideo, fits: &[AffineFit]) -> Aligned {
    assert_eq!(fits.len(), video.frame_count());
    let n = video.pixel_count();
    let data: Vec<f32> = video
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = &fits[i / n];
            (f.scale * v as f64 + f.shift) as f32
        })
        .collect();
    let valid: Vec<bool> = data.iter().zip(video.validity()).map(|(v, ok)| *ok && v.is_finite() && *v > 0.0).collect();
    let invalidated = video.valid_count() - valid.iter().filter(|v| **v).count();
    let out = DepthVideo::new(video.width(), video.height(), video.frame_count(), video.kind(), data, valid)
        .expect("shape preserved");
    Aligned { video: out, invalidated }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsRelDenominator {
    /// `|gt − pred| / gt`.
    #[default]
    Gt,
    /// `|gt − pred| / pred`.
    Pred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseMode {
    /// `sqrt(mean(d²))`.
    #[default]
    Standard,
    /// `sqrt(sum(d²)) / N`.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    pub absrel_denominator: AbsRelDenominator,
    pub rmse: RmseMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub absrel: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub pixel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub absrel: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// `None` for frames with no selected pixel.
    pub per_frame: Vec<Option<FrameMetrics>>,
    pub skipped_frames: usize,
}

impl MetricReport {
    pub fn evaluated_frames(&self) -> usize {
        self.per_frame.len() - self.skipped_frames
    }

    /// Per-frame values of one metric; skipped frames are omitted.
    pub fn sequence(&self, pick: impl Fn(&FrameMetrics) -> f64) -> Vec<f64> {
        self.per_frame.iter().flatten().map(pick).collect()
    }

    /// One row per frame plus a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,absrel,rmse,delta1,delta2,pixel_count\n");
        for (t, f) in self.per_frame.iter().enumerate() {
            match f {
                Some(f) => out.push_str(&format!(
                    "{t},{},{},{},{},{}\n",
                    f.absrel, f.rmse, f.delta1, f.delta2, f.pixel_count
                )),
                None => out.push_str(&format!("{t},,,,,0\n")),
            }
        }
        let total: usize = self.per_frame.iter().flatten().map(|f| f.pixel_count).sum();
        out.push_str(&format!(
            "mean,{},{},{},{},{}\n",
            self.absrel, self.rmse, self.delta1, self.delta2, total
        ));
        out
    }
}

fn frame_metrics(
    pred: &[f32],
    pred_valid: &[bool],
    gt: &[f32],
    gt_valid: &[bool],
    mask: Option<&[bool]>,
    opts: MetricOptions,
) -> Option<FrameMetrics> {
    let mut count = 0usize;
    let mut rel = CompensatedSum::new();
    let mut sq = CompensatedSum::new();
    let mut d1 = 0usize;
    let mut d2 = 0usize;
    for j in 0..pred.len() {
        if !(pred_valid[j] && gt_valid[j]) || mask.is_some_and(|m| !m[j]) {
            continue;
        }
        let p = pred[j] as f64;
        let g = gt[j] as f64;
        let diff = (g - p).abs();
        count += 1;
        rel.add(match opts.absrel_denominator {
            AbsRelDenominator::Gt => diff / g,
            AbsRelDenominator::Pred => diff / p,
        });
        sq.add(diff * diff);
        let ratio = (g / p).max(p / g);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25 * 1.25 {
            d2 += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let nf = count as f64;
    let rmse = match opts.rmse {
        RmseMode::Standard => (sq.value() / nf).sqrt(),
        RmseMode::PaperLiteral => sq.value().sqrt() / nf,
    };
    Some(FrameMetrics {
        absrel: rel.value() / nf,
        rmse,
        delta1: d1 as f64 / nf,
        delta2: d2 as f64 / nf,
        pixel_count: count,
    })
}

/// Scores an already aligned prediction. `selection`, when given, is a
/// frame-major per-pixel mask of pixels to evaluate.
pub fn compute_metrics(
    pred_aligned: &DepthVideo,
    gt: &DepthVideo,
    selection: Option<&[bool]>,
    opts: MetricOptions,
) -> Result<MetricReport, MetricsError> {
    check_pair(pred_aligned, gt)?;
    if let Some(m) = selection {
        if m.len() != gt.values().len() {
            return Err(MetricsError::MaskSize { got: m.len(), expected: gt.values().len() });
        }
    }
    let n = gt.pixel_count();
    let per_frame: Vec<Option<FrameMetrics>> = (0..gt.frame_count())
        .into_par_iter()
        .map(|t| {
            frame_metrics(
                pred_aligned.frame(t),
                pred_aligned.valid_frame(t),
                gt.frame(t),
                gt.valid_frame(t),
                selection.map(|m| &m[t * n..(t + 1) * n]),
                opts,
            )
        })
        .collect();
    let evaluated: Vec<&FrameMetrics> = per_frame.iter().flatten().collect();
    let skipped_frames = per_frame.len() - evaluated.len();
    if skipped_frames > 0 {
        log::warn!("{skipped_frames} frame(s) had no selected pixels and were excluded");
    }
    let mean = |pick: fn(&FrameMetrics) -> f64| -> f64 {
        if evaluated.is_empty() {
            0.0
        } else {
            evaluated.iter().map(|f| pick(f)).collect::<CompensatedSum>().value() / evaluated.len() as f64
        }
    };
    Ok(MetricReport {
        absrel: mean(|f| f.absrel),
        rmse: mean(|f| f.rmse),
        delta1: mean(|f| f.delta1),
        delta2: mean(|f| f.delta2),
        per_frame,
        skipped_frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub dynamic: MetricReport,
    #[serde(rename = "static")]
    pub static_: MetricReport,
    pub overall: MetricReport,
}

/// Dynamic / static / overall reports from one already aligned prediction.
pub fn region_split_metrics(
    pred_aligned: &DepthVideo,
    gt: &DepthVideo,
    masks: &RegionMasks,
    opts: MetricOptions,
) -> Result<RegionReport, MetricsError> {
    if !masks.fits(gt) {
        return Err(MetricsError::MaskSize { got: masks.dynamic().len(), expected: gt.values().len() });
    }
    let static_sel = masks.static_selection(gt);
    Ok(RegionReport {
        dynamic: compute_metrics(pred_aligned, gt, Some(masks.dynamic()), opts)?,
        static_: compute_metrics(pred_aligned, gt, Some(&static_sel), opts)?,
        overall: compute_metrics(pred_aligned, gt, None, opts)?,
    })
}

/// Fitted alignment, shared or one fit per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Shared(AffineFit),
    PerFrame(Vec<AffineFit>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub alignment: Alignment,
    pub invalidated: usize,
    pub overall: MetricReport,
    /// Present when dynamic masks are supplied.
    pub regions: Option<RegionReport>,
}

/// Aligns `pred` to `gt` and scores it; returns the aligned video as well.
pub fn evaluate(
    pred: &DepthVideo,
    gt: &DepthVideo,
    masks: Option<&RegionMasks>,
    per_frame: bool,
    opts: MetricOptions,
) -> Result<(Evaluation, DepthVideo), MetricsError> {
    let (alignment, aligned) = if per_frame {
        let fits = fit_affine_per_frame(pred, gt)?;
        let aligned = apply_affine_per_frame(pred, &fits);
        (Alignment::PerFrame(fits), aligned)
    } else {
        let fit = fit_affine_shared(pred, gt)?;
        (Alignment::Shared(fit), apply_affine(pred, &fit))
    };
    let regions = masks.map(|m| region_split_metrics(&aligned.video, gt, m, opts)).transpose()?;
    let overall = match &regions {
        Some(r) => r.overall.clone(),
        None => compute_metrics(&aligned.video, gt, None, opts)?,
    };
    Ok((Evaluation { alignment, invalidated: aligned.invalidated, overall, regions }, aligned.video))
}
