//! Temporal consistency of predicted geometry across Δ-spaced frames.
//!
//! For each correspondence `(frame i, pixel) → (frame j, subpixel)` the
//! prediction is lifted to world space in both frames using the reference
//! cameras, and the Euclidean distance between the two lifted points is
//! averaged.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraTrack;
use crate::numeric::CompensatedSum;
use crate::video::{DepthVideo, RegionMasks};

const MAGIC: &[u8; 8] = b"VDCCORR1";
const RECORD_BYTES: usize = 28;

#[derive(Debug, Error)]
pub enum TempConsError {
    #[error("delta {delta} leaves no frame pairs in a {frames}-frame video")]
    NoPairs { delta: usize, frames: usize },
    #[error("none of the {pairs} frame pairs has correspondences")]
    NoCorrespondences { pairs: usize },
    #[error("camera track has {track} frames, video {video}")]
    TrackLength { track: usize, video: usize },
    #[error("correspondence table: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Static surface point seen at integer pixel `pixel` of `frame_i` and at
/// subpixel `(x_j, y_j)` of `frame_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub frame_i: u32,
    pub frame_j: u32,
    pub pixel: u32,
    pub x_j: f64,
    pub y_j: f64,
}

/// Binary layout: `VDCCORR1`, a little-endian `u64` record count, then per
/// record `frame_i: u32, frame_j: u32, pixel: u32, x_j: f64, y_j: f64`.
pub fn encode_correspondences(records: &[Correspondence]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + records.len() * RECORD_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.frame_i.to_le_bytes());
        out.extend_from_slice(&r.frame_j.to_le_bytes());
        out.extend_from_slice(&r.pixel.to_le_bytes());
        out.extend_from_slice(&r.x_j.to_le_bytes());
        out.extend_from_slice(&r.y_j.to_le_bytes());
    }
    out
}

pub fn decode_correspondences(bytes: &[u8]) -> Result<Vec<Correspondence>, TempConsError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(TempConsError::Format("missing VDCCORR1 header".into()));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != count * RECORD_BYTES {
        return Err(TempConsError::Format(format!("{} body bytes for {count} records", body.len())));
    }
    Ok(body
        .chunks_exact(RECORD_BYTES)
        .map(|c| Correspondence {
            frame_i: u32::from_le_bytes(c[0..4].try_into().unwrap()),
            frame_j: u32::from_le_bytes(c[4..8].try_into().unwrap()),
            pixel: u32::from_le_bytes(c[8..12].try_into().unwrap()),
            x_j: f64::from_le_bytes(c[12..20].try_into().unwrap()),
            y_j: f64::from_le_bytes(c[20..28].try_into().unwrap()),
        })
        .collect())
}

pub fn write_correspondences(path: &Path, records: &[Correspondence]) -> Result<(), TempConsError> {
    fs::write(path, encode_correspondences(records))
        .map_err(|source| TempConsError::Io { path: path.display().to_string(), source })
}

pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>, TempConsError> {
    let bytes = fs::read(path).map_err(|source| TempConsError::Io { path: path.display().to_string(), source })?;
    decode_correspondences(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempConsOptions {
    pub delta: usize,
    pub static_only: bool,
}

impl Default for TempConsOptions {
    fn default() -> Self {
        Self { delta: 10, static_only: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub frame_i: usize,
    pub frame_j: usize,
    pub distance: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempConsReport {
    pub delta: usize,
    pub mean_distance: f64,
    pub per_pair: Vec<PairDistance>,
    pub skipped_pairs: usize,
}

impl TempConsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_i,frame_j,distance,count\n");
        for p in &self.per_pair {
            out.push_str(&format!("{},{},{},{}\n", p.frame_i, p.frame_j, p.distance, p.count));
        }
        let total: usize = self.per_pair.iter().map(|p| p.count).sum();
        out.push_str(&format!("mean,,{},{}\n", self.mean_distance, total));
        out
    }
}

/// Inverse-depth bilinear sample; `None` unless all four neighbours are valid.
pub fn sample_depth_bilinear(video: &DepthVideo, t: usize, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (video.width(), video.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let inv = |xx: usize, yy: usize| video.get(t, xx, yy).map(|d| 1.0 / d as f64);
    let top = inv(x0, y0)? * (1.0 - fx) + inv(x1, y0)? * fx;
    let bottom = inv(x0, y1)? * (1.0 - fx) + inv(x1, y1)? * fx;
    let v = top * (1.0 - fy) + bottom * fy;
    (v > 0.0).then(|| 1.0 / v)
}

/// Frame pairs `(i, i + Δ)` for `i = 0, Δ, 2Δ, …`.
pub fn frame_pairs(frames: usize, delta: usize) -> Vec<(usize, usize)> {
    if delta == 0 {
        return Vec::new();
    }
    (0..frames).step_by(delta).filter(|i| i + delta < frames).map(|i| (i, i + delta)).collect()
}

/// `pred` must already be aligned to the reference depth scale.
pub fn temporal_consistency(
    pred: &DepthVideo,
    track: &CameraTrack,
    correspondences: &[Correspondence],
    masks: Option<&RegionMasks>,
    opts: TempConsOptions,
) -> Result<TempConsReport, TempConsError> {
    let frames = pred.frame_count();
    if track.frame_count() != frames {
        return Err(TempConsError::TrackLength { track: track.frame_count(), video: frames });
    }
    let pairs = frame_pairs(frames, opts.delta);
    if pairs.is_empty() {
        return Err(TempConsError::NoPairs { delta: opts.delta, frames });
    }
    let width = pred.width();
    let results: Vec<Option<PairDistance>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (ki, kj) = (track.intrinsics(i), track.intrinsics(j));
            let (pi, pj) = (track.pose(i), track.pose(j));
            let mut sum = CompensatedSum::new();
            let mut count = 0usize;
            let mut seen = false;
            for c in correspondences.iter().filter(|c| c.frame_i as usize == i && c.frame_j as usize == j) {
                seen = true;
                let px = c.pixel as usize;
                if opts.static_only && masks.is_some_and(|m| m.dynamic_frame(i)[px]) {
                    continue;
                }
                let (u, v) = ((px % width) as f64, (px / width) as f64);
                let Some(zi) = pred.get(i, px % width, px / width) else { continue };
                let Some(zj) = sample_depth_bilinear(pred, j, c.x_j, c.y_j) else { continue };
                let a: Vector3<f64> = pi.to_world(&ki.backproject(u, v, zi as f64));
                let b: Vector3<f64> = pj.to_world(&kj.backproject(c.x_j, c.y_j, zj));
                sum.add((a - b).norm());
                count += 1;
            }
            (seen && count > 0).then(|| PairDistance { frame_i: i, frame_j: j, distance: sum.value() / count as f64, count })
        })
        .collect();
    let per_pair: Vec<PairDistance> = results.iter().flatten().copied().collect();
    let skipped_pairs = results.len() - per_pair.len();
    if per_pair.is_empty() {
        return Err(TempConsError::NoCorrespondences { pairs: pairs.len() });
    }
    let total: usize = per_pair.iter().map(|p| p.count).sum();
    let weighted = per_pair.iter().map(|p| p.distance * p.count as f64).collect::<CompensatedSum>().value();
    Ok(TempConsReport { delta: opts.delta, mean_distance: weighted / total as f64, per_pair, skipped_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use crate::video::ValueKind;
    use nalgebra::Rotation3;

    #[test]
    fn binary_round_trip() {
        let recs = vec![
            Correspondence { frame_i: 0, frame_j: 10, pixel: 5, x_j: 1.25, y_j: 3.5 },
            Correspondence { frame_i: 10, frame_j: 20, pixel: 7, x_j: 0.0, y_j: 2.0 },
        ];
        let bytes = encode_correspondences(&recs);
        assert_eq!(bytes.len(), 16 + 2 * 28);
        assert_eq!(decode_correspondences(&bytes).unwrap(), recs);
        assert!(decode_correspondences(&bytes[..20]).is_err());
    }

    #[test]
    fn pair_schedule() {
        assert_eq!(frame_pairs(35, 10), vec![(0, 10), (10, 20), (20, 30)]);
        assert!(frame_pairs(10, 10).is_empty());
    }

    fn translated() -> Pose {
        Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.4, 0.0, 0.0))
    }

    fn rotated() -> Pose {
        Pose::from_rotation(&Rotation3::from_axis_angle(&Vector3::y_axis(), 0.1), Vector3::zeros())
    }

    /// Fronto-parallel plane at depth 4 seen from the identity camera and `second`.
    fn plane_setup(bias: f32, second: Pose) -> (DepthVideo, CameraTrack, Vec<Correspondence>) {
        let (w, h) = (16usize, 12usize);
        let k = Intrinsics::new(20.0, 20.0, 7.5, 5.5);
        let d = 4.0;
        let poses = vec![Pose::identity(), second];
        let mut data = vec![d as f32 + bias; w * h];
        for px in 0..w * h {
            let world = poses[1].to_world(&k.ray((px % w) as f64, (px / w) as f64));
            // intersect the frame-1 ray with the plane z = d
            let dir = world - poses[1].translation;
            let s = (d - poses[1].translation.z) / dir.z;
            data.push((poses[1].to_camera(&(poses[1].translation + s * dir)).z) as f32 + bias);
        }
        let mut recs = Vec::new();
        for px in 0..w * h {
            let world = k.backproject((px % w) as f64, (px / w) as f64, d);
            let (xj, yj) = k.project(&poses[1].to_camera(&world)).unwrap();
            if (0.0..=(w - 1) as f64).contains(&xj) && (0.0..=(h - 1) as f64).contains(&yj) {
                recs.push(Correspondence { frame_i: 0, frame_j: 1, pixel: px as u32, x_j: xj, y_j: yj });
            }
        }
        let video = DepthVideo::from_values(w, h, 2, ValueKind::Depth, data).unwrap();
        let track = CameraTrack::new(vec![k; 2], poses).unwrap();
        (video, track, recs)
    }

    #[test]
    fn perfect_geometry_has_zero_distance() {
        let (video, track, recs) = plane_setup(0.0, translated());
        let r = temporal_consistency(&video, &track, &recs, None, TempConsOptions { delta: 1, static_only: true }).unwrap();
        assert!(r.mean_distance < 1e-6, "{}", r.mean_distance);
    }

    #[test]
    fn constant_bias_under_translation_matches_closed_form() {
        // lifting along rays: a biased plane point in frame i sits at
        // (1 + b/d) times the true point; the two lifts differ by
        // b times the difference of the normalized ray coordinates
        let bias = 0.1f32;
        let (video, track, recs) = plane_setup(bias, translated());
        let r = temporal_consistency(&video, &track, &recs, None, TempConsOptions { delta: 1, static_only: true }).unwrap();
        let k = track.intrinsics(0);
        let mut expected = 0.0;
        for c in &recs {
            let u = (c.pixel % 16) as f64;
            let dx = (u - c.x_j) / k.fx;
            expected += bias as f64 * dx.abs();
        }
        expected /= recs.len() as f64;
        assert!((r.mean_distance - expected).abs() < 1e-5, "{} vs {expected}", r.mean_distance);
        assert!(r.mean_distance > 0.0);
    }

    #[test]
    fn rotation_gives_positive_distance() {
        let opts = TempConsOptions { delta: 1, static_only: true };
        let (video, track, recs) = plane_setup(0.0, rotated());
        assert!(temporal_consistency(&video, &track, &recs, None, opts).unwrap().mean_distance < 1e-5);
        let (video, track, recs) = plane_setup(0.1, rotated());
        assert!(temporal_consistency(&video, &track, &recs, None, opts).unwrap().mean_distance > 1e-3);
    }

    #[test]
    fn gauge_invariance() {
        let (video, track, recs) = plane_setup(0.05, rotated());
        let opts = TempConsOptions { delta: 1, static_only: true };
        let base = temporal_consistency(&video, &track, &recs, None, opts).unwrap();
        let g = Pose::from_rotation(&Rotation3::from_euler_angles(0.3, -1.0, 2.0), Vector3::new(5.0, -2.0, 1.0));
        let moved = temporal_consistency(&video, &track.regauge(&g), &recs, None, opts).unwrap();
        assert!((base.mean_distance - moved.mean_distance).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let (video, track, recs) = plane_setup(0.0, translated());
        let opts = TempConsOptions { delta: 2, static_only: true };
        assert!(matches!(temporal_consistency(&video, &track, &recs, None, opts), Err(TempConsError::NoPairs { .. })));
        let opts = TempConsOptions { delta: 1, static_only: true };
        assert!(matches!(
            temporal_consistency(&video, &track, &[], None, opts),
            Err(TempConsError::NoCorrespondences { .. })
        ));
    }

    #[test]
    fn bilinear_inverse_depth_is_exact_on_planes() {
        // tilted plane: inverse depth affine in pixel coordinates
        let (w, h) = (4, 3);
        let data: Vec<f32> = (0..w * h).map(|i| 1.0 / (0.25 + 0.0625 * (i % w) as f32 + 0.03125 * (i / w) as f32)).collect();
        let video = DepthVideo::from_values(w, h, 1, ValueKind::Depth, data).unwrap();
        let z = sample_depth_bilinear(&video, 0, 1.5, 0.25).unwrap();
        let expected = 1.0 / (0.25 + 0.0625 * 1.5 + 0.03125 * 0.25);
        assert!((z - expected).abs() < 1e-6);
        assert!(sample_depth_bilinear(&video, 0, 3.5, 0.0).is_none());
        assert!(sample_depth_bilinear(&video, 0, 3.0, 2.0).is_some());
    }
}
