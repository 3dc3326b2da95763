//! Pairwise pointmap graphs built from GT geometry.

use rand::Rng;
use rayon::prelude::*;

use super::surrogate::{corrupt, EstimatorSurrogateSpec, SurrogateError};
use crate::align::{enumerate_pairs, PairError, PairGraph, PairView, PairwisePrediction, PointView};
use crate::camera::CameraTrack;
use crate::rng::{stream, Domain};
use crate::video::{DepthVideo, RegionMasks};

#[derive(Debug, thiserror::Error)]
pub enum PairwiseError {
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("camera track has {track} frames, video {video}")]
    TrackLength { track: usize, video: usize },
}

/// Scale applied to one directed view (`direction` 0 is `in_i`).
pub fn view_scale(noise: &EstimatorSurrogateSpec, pair: usize, direction: usize) -> f64 {
    if noise.pair_scale_jitter == 0.0 {
        return 1.0;
    }
    let j = noise.pair_scale_jitter;
    1.0 + stream(noise.seed, Domain::PairScale, (pair * 2 + direction) as u64).random_range(-j..=j)
}

fn confidence(noise: &EstimatorSurrogateSpec, pair: usize, slot: usize, usable: &[bool]) -> Vec<f32> {
    let mut rng = stream(noise.seed, Domain::Confidence, (pair * 4 + slot) as u64);
    usable
        .iter()
        .map(|ok| {
            // one draw per pixel keeps the stream aligned regardless of the mask
            let c = 1.0 - rng.random::<f32>() * 0.5;
            if *ok {
                c
            } else {
                0.0
            }
        })
        .collect()
}

/// Corrupts `gt` with `noise`, then expresses both frames of every pair
/// within the window in each frame's camera.
pub fn make_pairwise(
    gt: &DepthVideo,
    track: &CameraTrack,
    masks: &RegionMasks,
    window: usize,
    noise: &EstimatorSurrogateSpec,
) -> Result<PairGraph, PairwiseError> {
    let frames = gt.frame_count();
    if track.frame_count() != frames {
        return Err(PairwiseError::TrackLength { track: track.frame_count(), video: frames });
    }
    let depth = corrupt(gt, masks, noise)?;
    let (w, n) = (gt.width(), gt.pixel_count());
    let pairs = enumerate_pairs(frames, window)?;

    // each frame's points in its own camera, and the usable-pixel mask
    let own: Vec<(Vec<[f64; 3]>, Vec<bool>)> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let k = track.intrinsics(t);
            let usable: Vec<bool> = (0..n).map(|px| depth.valid_frame(t)[px] && !masks.dynamic_frame(t)[px]).collect();
            let points = (0..n)
                .map(|px| {
                    if depth.valid_frame(t)[px] {
                        let p = k.backproject((px % w) as f64, (px / w) as f64, depth.frame(t)[px] as f64);
                        [p.x, p.y, p.z]
                    } else {
                        [0.0; 3]
                    }
                })
                .collect();
            (points, usable)
        })
        .collect();

    let view = |src: usize, reference: usize, scale: f64| -> Vec<[f32; 3]> {
        let relative = track.pose(reference).inverse().compose(track.pose(src));
        let valid = depth.valid_frame(src);
        own[src]
            .0
            .iter()
            .zip(valid)
            .map(|(p, ok)| {
                if !ok {
                    return [0.0; 3];
                }
                let q = relative.to_world(&nalgebra::Vector3::new(p[0], p[1], p[2])) * scale;
                [q.x as f32, q.y as f32, q.z as f32]
            })
            .collect()
    };

    let predictions: Vec<PairwisePrediction> = pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(i, j))| {
            let (si, sj) = (view_scale(noise, idx, 0), view_scale(noise, idx, 1));
            PairwisePrediction {
                frame_i: i,
                frame_j: j,
                in_i: PairView {
                    reference: PointView { points: view(i, i, si), confidence: confidence(noise, idx, 0, &own[i].1) },
                    partner: PointView { points: view(j, i, si), confidence: confidence(noise, idx, 1, &own[j].1) },
                },
                in_j: PairView {
                    reference: PointView { points: view(j, j, sj), confidence: confidence(noise, idx, 2, &own[j].1) },
                    partner: PointView { points: view(i, j, sj), confidence: confidence(noise, idx, 3, &own[i].1) },
                },
            }
        })
        .collect();
    Ok(PairGraph::new(gt.width(), gt.height(), frames, predictions)?)
}
