//! Chained registration of pairwise views along the spanning tree.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::focal::{weiszfeld_focal, FocalError};
use super::pairs::{PairGraph, WeightRule};
use super::procrustes::{procrustes_similarity, ProcrustesError, Similarity};
use super::tree::{edge_order, max_spanning_tree, TreeError, WeightedEdge};
use crate::camera::{CameraError, CameraTrack, Intrinsics, Pose};
use crate::video::{DepthVideo, ValueKind, VideoError};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("tree edge ({i}, {j}) has {usable} usable correspondences: {source}")]
    EdgeDegenerate { i: usize, j: usize, usable: usize, source: ProcrustesError },
    #[error("frame {frame}: {source}")]
    Focal { frame: usize, source: FocalError },
    #[error("pair graph has no frames")]
    Empty,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignOptions {
    /// Pixels take part in registration only when both confidences exceed this.
    pub confidence_threshold: f64,
    pub weight_rule: WeightRule,
    pub focal_iterations: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { confidence_threshold: 0.0, weight_rule: WeightRule::Mean, focal_iterations: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub root: usize,
    pub edges: Vec<WeightedEdge>,
    /// Tree edges as `(parent, child)` in placement order.
    pub tree: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct GlobalAlignment {
    pub depth: DepthVideo,
    pub track: CameraTrack,
    /// Per-frame similarity from the frame's predicted camera space into the world.
    pub transforms: Vec<Similarity>,
    pub tree: TreeDump,
}

/// Places every frame in the root frame's camera space.
pub fn align_global(graph: &PairGraph, opts: &AlignOptions) -> Result<GlobalAlignment, AlignError> {
    let frames = graph.frame_count;
    if frames == 0 {
        return Err(AlignError::Empty);
    }
    let n = graph.pixel_count();
    let edges = graph.edges(opts.weight_rule);
    let chosen = if frames == 1 { Vec::new() } else { max_spanning_tree(frames, &edges)? };

    // root: first endpoint of the best tree edge
    let root = match edge_order(&edges).into_iter().find(|k| chosen.contains(k)) {
        Some(k) => graph.pairs[k].frame_i,
        None => 0,
    };
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); frames];
    for &k in &chosen {
        let p = &graph.pairs[k];
        adjacency[p.frame_i].push((p.frame_j, k));
        adjacency[p.frame_j].push((p.frame_i, k));
    }
    adjacency.iter_mut().for_each(|a| a.sort());

    let mut world: Vec<Option<(Vec<Vector3<f64>>, Vec<f32>)>> = vec![None; frames];
    let mut transforms = vec![Similarity::identity(); frames];
    let mut own_z: Vec<Vec<f64>> = vec![Vec::new(); frames];
    let mut own_points: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); frames];
    let mut placement = Vec::new();

    if let Some(&(_, k)) = adjacency[root].first() {
        let best = edge_order(&edges).into_iter().find(|k| chosen.contains(k)).unwrap_or(k);
        let view = &graph.pairs[best].view_in(root).reference;
        let pts = view.points_f64();
        own_z[root] = pts.iter().map(|p| p.z).collect();
        own_points[root] = pts.clone();
        world[root] = Some((pts, view.confidence.clone()));
    }

    let mut queue = VecDeque::from([root]);
    while let Some(parent) = queue.pop_front() {
        for &(child, k) in &adjacency[parent] {
            if world[child].is_some() {
                continue;
            }
            let pair = &graph.pairs[k];
            let view = pair.view_in(child);
            let (parent_pts, parent_conf) = world[parent].as_ref().expect("parent placed first");
            let source = view.partner.points_f64();
            let tau = opts.confidence_threshold;
            let weights: Vec<f64> = (0..n)
                .map(|px| {
                    let a = view.partner.confidence[px] as f64;
                    let b = parent_conf[px] as f64;
                    let finite = source[px].iter().chain(parent_pts[px].iter()).all(|c| c.is_finite());
                    if a > tau && b > tau && finite {
                        a * b
                    } else {
                        0.0
                    }
                })
                .collect();
            let usable = weights.iter().filter(|w| **w > 0.0).count();
            let reg = procrustes_similarity(&source, parent_pts, &weights).map_err(|source| {
                AlignError::EdgeDegenerate { i: pair.frame_i, j: pair.frame_j, usable, source }
            })?;
            let s = reg.transform;
            let own = view.reference.points_f64();
            own_z[child] = own.iter().map(|p| s.scale * p.z).collect();
            world[child] = Some((own.iter().map(|p| s.apply(p)).collect(), view.reference.confidence.clone()));
            own_points[child] = own;
            transforms[child] = s;
            placement.push((parent, child));
            queue.push_back(child);
        }
    }

    let principal = ((graph.width as f64 - 1.0) / 2.0, (graph.height as f64 - 1.0) / 2.0);
    let mut data = Vec::with_capacity(frames * n);
    let mut intrinsics = Vec::with_capacity(frames);
    for t in 0..frames {
        data.extend(own_z[t].iter().map(|z| *z as f32));
        let f = weiszfeld_focal(&own_points[t], graph.width, graph.height, principal, opts.focal_iterations)
            .map_err(|source| AlignError::Focal { frame: t, source })?;
        intrinsics.push(Intrinsics::new(f, f, principal.0, principal.1));
    }
    let depth = DepthVideo::from_values(graph.width, graph.height, frames, ValueKind::Depth, data)?;
    let poses: Vec<Pose> = transforms.iter().map(|s| s.rigid()).collect();
    let track = CameraTrack::new(intrinsics, poses)?;
    Ok(GlobalAlignment { depth, track, transforms, tree: TreeDump { root, edges, tree: placement } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_pairwise, render_gt, CameraPath, DynamicObject, EstimatorSurrogateSpec, Primitive, SceneSpec, SurrogateKind};

    fn room_scene(frames: usize) -> SceneSpec {
        SceneSpec {
            width: 32,
            height: 24,
            frame_count: frames,
            fps: 30.0,
            intrinsics: Intrinsics::new(28.0, 28.0, 15.5, 11.5),
            camera: CameraPath {
                positions: vec![[-0.4, 0.0, -1.0], [0.0, -0.1, -0.8], [0.4, 0.0, -1.0]],
                targets: vec![[0.3, 0.2, 3.0], [0.0, 0.0, 3.0], [-0.3, 0.2, 3.0]],
            },
            static_primitives: vec![
                Primitive::Box { center: [0.0, 0.0, 0.5], half_extents: [3.0, 2.0, 3.0], rotation: [0.0; 3] },
                Primitive::Box { center: [0.8, 0.9, 1.5], half_extents: [0.3, 0.3, 0.3], rotation: [0.0, 0.5, 0.0] },
            ],
            dynamic_objects: vec![DynamicObject {
                primitive: Primitive::Sphere { center: [0.0; 3], radius: 0.35 },
                path: vec![[-1.0, 0.2, 1.8], [1.0, -0.2, 1.6]],
                angular_velocity: [0.0; 3],
            }],
            seed: 1,
            correspondence_deltas: vec![10],
        }
    }

    #[test]
    fn noise_free_graph_reproduces_gt() {
        let scene = render_gt(&room_scene(12)).unwrap();
        let noise = EstimatorSurrogateSpec::identity(SurrogateKind::GaussianPixel);
        let graph = make_pairwise(&scene.depth, &scene.track, &scene.masks, 2, &noise).unwrap();
        let out = align_global(&graph, &AlignOptions::default()).unwrap();
        let mut worst = 0.0f64;
        for (p, g) in out.depth.values().iter().zip(scene.depth.values()) {
            worst = worst.max(((*p as f64) - *g as f64).abs() / *g as f64);
        }
        assert!(worst < 1e-6, "{worst}");
        assert_eq!(out.tree.tree.len(), 11);
        for t in 0..12 {
            assert!((out.track.intrinsics(t).fx - 28.0).abs() / 28.0 < 1e-3);
        }
    }

    #[test]
    fn scale_jitter_is_removed() {
        let scene = render_gt(&room_scene(12)).unwrap();
        let noise = EstimatorSurrogateSpec { pair_scale_jitter: 0.05, seed: 3, ..EstimatorSurrogateSpec::identity(SurrogateKind::GaussianPixel) };
        let graph = make_pairwise(&scene.depth, &scene.track, &scene.masks, 2, &noise).unwrap();
        let out = align_global(&graph, &AlignOptions::default()).unwrap();
        // the root view's scale survives as a global factor
        let global = out.depth.values()[0] as f64 / scene.depth.values()[0] as f64;
        let n = scene.depth.pixel_count();
        for (i, (p, g)) in out.depth.values().iter().zip(scene.depth.values()).enumerate() {
            if !scene.masks.dynamic()[i] {
                let r = *p as f64 / (*g as f64 * global);
                assert!((r - 1.0).abs() < 1e-5, "frame {} pixel {}: {r}", i / n, i % n);
            }
        }
    }

    #[test]
    fn fully_dynamic_edge_is_degenerate() {
        let scene = render_gt(&room_scene(4)).unwrap();
        let noise = EstimatorSurrogateSpec::identity(SurrogateKind::GaussianPixel);
        let mut graph = make_pairwise(&scene.depth, &scene.track, &scene.masks, 1, &noise).unwrap();
        for pair in &mut graph.pairs {
            pair.in_i.partner.confidence.iter_mut().for_each(|c| *c = 0.0);
            pair.in_j.partner.confidence.iter_mut().for_each(|c| *c = 0.0);
        }
        assert!(matches!(align_global(&graph, &AlignOptions::default()), Err(AlignError::EdgeDegenerate { usable: 0, .. })));
    }
}
