//! Parametric scenes rendered by analytic ray casting.
//!
//! World and camera frames share the image convention: +y points down.
//! Paths are Catmull-Rom splines through control points spread evenly over
//! the video, with linearly extrapolated end tangents.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraTrack, Intrinsics, Pose};
use crate::tempcons::Correspondence;
use crate::video::{DepthVideo, RegionMasks, ValueKind, VideoError};

const HIT_EPS: f64 = 1e-9;
const MISS: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene spec: {0}")]
    Invalid(String),
    #[error("primitive {index} is behind the camera in {behind} of {frames} frames")]
    Visibility { index: usize, behind: usize, frames: usize },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Infinite plane through `point` with normal `normal`.
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Oriented box; `rotation` holds roll, pitch, yaw in radians.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        rotation: [f64; 3],
    },
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Primitive {
    /// Nearest hit `(distance, face)` along `origin + s·dir`, `s > 0`.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, u32)> {
        match self {
            Primitive::Plane { point, normal } => {
                let n = v3(*normal);
                let denom = n.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let s = n.dot(&(v3(*point) - origin)) / denom;
                (s > HIT_EPS).then_some((s, 0))
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - v3(*center);
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                let near = (-b - root) / a;
                let far = (-b + root) / a;
                if near > HIT_EPS {
                    Some((near, 0))
                } else if far > HIT_EPS {
                    Some((far, 1))
                } else {
                    None
                }
            }
            Primitive::Box { center, half_extents, rotation } => {
                let r = Rotation3::from_euler_angles(rotation[0], rotation[1], rotation[2]);
                let o = r.inverse() * (origin - v3(*center));
                let d = r.inverse() * dir;
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut near_face, mut far_face) = (0u32, 0u32);
                for axis in 0..3 {
                    let h = half_extents[axis];
                    if d[axis].abs() < 1e-15 {
                        if o[axis].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let a = (-h - o[axis]) / d[axis];
                    let b = (h - o[axis]) / d[axis];
                    let (lo, hi, lo_face, hi_face) = if a < b {
                        (a, b, axis as u32 * 2, axis as u32 * 2 + 1)
                    } else {
                        (b, a, axis as u32 * 2 + 1, axis as u32 * 2)
                    };
                    if lo > t_near {
                        t_near = lo;
                        near_face = lo_face;
                    }
                    if hi < t_far {
                        t_far = hi;
                        far_face = hi_face;
                    }
                }
                if t_near > t_far {
                    None
                } else if t_near > HIT_EPS {
                    Some((t_near, near_face))
                } else if t_far > HIT_EPS {
                    Some((t_far, far_face))
                } else {
                    None
                }
            }
        }
    }

    /// Representative point for the visibility check; `None` for unbounded
    /// primitives and boxes that contain the camera.
    fn anchor(&self, camera_center: &Vector3<f64>) -> Option<Vector3<f64>> {
        match self {
            Primitive::Plane { .. } => None,
            Primitive::Sphere { center, .. } => Some(v3(*center)),
            Primitive::Box { center, half_extents, rotation } => {
                let r = Rotation3::from_euler_angles(rotation[0], rotation[1], rotation[2]);
                let local = r.inverse() * (camera_center - v3(*center));
                let inside = (0..3).all(|k| local[k].abs() < half_extents[k]);
                (!inside).then(|| v3(*center))
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Primitive::Plane { normal, .. } if v3(*normal).norm() == 0.0 => Err("plane normal is zero".into()),
            Primitive::Sphere { radius, .. } if !(*radius > 0.0) => Err("sphere radius must be positive".into()),
            Primitive::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                Err("box half extents must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

/// A primitive defined about the origin, moved along `path` and spun at
/// `angular_velocity` (axis times radians per frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicObject {
    pub primitive: Primitive,
    pub path: Vec<[f64; 3]>,
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub positions: Vec<[f64; 3]>,
    /// Look-at points, splined like the positions.
    pub targets: Vec<[f64; 3]>,
}

fn default_deltas() -> Vec<usize> {
    vec![10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub fps: f64,
    pub intrinsics: Intrinsics,
    pub camera: CameraPath,
    #[serde(default)]
    pub static_primitives: Vec<Primitive>,
    #[serde(default)]
    pub dynamic_objects: Vec<DynamicObject>,
    #[serde(default)]
    pub seed: u64,
    /// Frame spacings for which correspondence tables are generated.
    #[serde(default = "default_deltas")]
    pub correspondence_deltas: Vec<usize>,
}

/// Uniform Catmull-Rom through `points`, evaluated at `u ∈ [0, 1]`.
pub fn catmull_rom(points: &[[f64; 3]], u: f64) -> Vector3<f64> {
    let m = points.len();
    if m == 1 {
        return v3(points[0]);
    }
    let p = |k: isize| -> Vector3<f64> {
        if k < 0 {
            2.0 * v3(points[0]) - v3(points[1])
        } else if k as usize >= m {
            2.0 * v3(points[m - 1]) - v3(points[m - 2])
        } else {
            v3(points[k as usize])
        }
    };
    let x = u.clamp(0.0, 1.0) * (m - 1) as f64;
    let seg = (x.floor() as usize).min(m - 2);
    let s = x - seg as f64;
    let k = seg as isize;
    let (p0, p1, p2, p3) = (p(k - 1), p(k), p(k + 1), p(k + 2));
    0.5 * ((2.0 * p1)
        + (p2 - p0) * s
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s * s
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * s * s * s)
}

/// Camera-to-world rotation looking from `eye` at `target` with world +y down.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<Matrix3<f64>, String> {
    let z = target - eye;
    if z.norm() < 1e-12 {
        return Err("camera target coincides with its position".into());
    }
    let z = z.normalize();
    let x = Vector3::new(0.0, 1.0, 0.0).cross(&z);
    if x.norm() < 1e-9 {
        return Err("camera looks straight along the vertical axis".into());
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Invalid(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive");
        }
        if self.frame_count == 0 {
            return bad("frame_count must be positive");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if self.camera.positions.is_empty() || self.camera.targets.is_empty() {
            return bad("camera needs at least one position and one target");
        }
        if self.static_primitives.is_empty() && self.dynamic_objects.is_empty() {
            return bad("scene has no primitives");
        }
        if self.dynamic_objects.iter().any(|o| o.path.is_empty()) {
            return bad("dynamic object path is empty");
        }
        for p in self.static_primitives.iter().chain(self.dynamic_objects.iter().map(|o| &o.primitive)) {
            p.validate().map_err(SceneError::Invalid)?;
        }
        if self.correspondence_deltas.contains(&0) {
            return bad("correspondence deltas must be positive");
        }
        Ok(())
    }

    fn phase(&self, t: usize) -> f64 {
        if self.frame_count == 1 {
            0.0
        } else {
            t as f64 / (self.frame_count - 1) as f64
        }
    }

    pub fn camera_pose(&self, t: usize) -> Result<Pose, SceneError> {
        let u = self.phase(t);
        let eye = catmull_rom(&self.camera.positions, u);
        let target = catmull_rom(&self.camera.targets, u);
        let rotation = look_at(&eye, &target).map_err(|m| SceneError::Invalid(format!("frame {t}: {m}")))?;
        Ok(Pose::new(rotation, eye))
    }

    /// World placement of dynamic object `k` at frame `t`.
    pub fn object_pose(&self, k: usize, t: usize) -> Pose {
        let obj = &self.dynamic_objects[k];
        let omega = v3(obj.angular_velocity) * t as f64;
        Pose::new(*Rotation3::new(omega).matrix(), catmull_rom(&obj.path, self.phase(t)))
    }
}

/// Nearest hit for one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance along the ray; with a unit-z camera ray this is the depth.
    pub distance: f64,
    /// `primitive index · 8 + face`; static primitives come first.
    pub surface: u32,
    pub dynamic: bool,
}

/// Scene geometry frozen at one frame.
pub struct FrameScene<'a> {
    spec: &'a SceneSpec,
    objects: Vec<Pose>,
    pub pose: Pose,
}

impl<'a> FrameScene<'a> {
    pub fn new(spec: &'a SceneSpec, t: usize) -> Result<Self, SceneError> {
        Ok(Self {
            spec,
            objects: (0..spec.dynamic_objects.len()).map(|k| spec.object_pose(k, t)).collect(),
            pose: spec.camera_pose(t)?,
        })
    }

    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |hit: Option<(f64, u32)>, index: usize, dynamic: bool| {
            if let Some((distance, face)) = hit {
                if best.is_none_or(|b| distance < b.distance) {
                    best = Some(Hit { distance, surface: index as u32 * 8 + face, dynamic });
                }
            }
        };
        for (k, p) in self.spec.static_primitives.iter().enumerate() {
            consider(p.intersect(origin, dir), k, false);
        }
        let offset = self.spec.static_primitives.len();
        for (k, (obj, pose)) in self.spec.dynamic_objects.iter().zip(&self.objects).enumerate() {
            let o = pose.to_camera(origin);
            let d = pose.rotation.transpose() * dir;
            consider(obj.primitive.intersect(&o, &d), offset + k, true);
        }
        best
    }

    /// Hit through image position `(u, v)` of this frame's camera.
    pub fn cast_pixel(&self, u: f64, v: f64) -> Option<Hit> {
        let ray = self.spec.intrinsics.ray(u, v);
        self.cast(&self.pose.translation, &(self.pose.rotation * ray))
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub depth: DepthVideo,
    pub track: CameraTrack,
    pub masks: RegionMasks,
    pub correspondences: Vec<Correspondence>,
    /// Frame-major surface id per pixel, `u32::MAX` where nothing was hit.
    pub surfaces: Vec<u32>,
}

/// Renders depth, cameras, dynamic masks and static correspondences.
pub fn render_gt(spec: &SceneSpec) -> Result<RenderedScene, SceneError> {
    spec.validate()?;
    let (w, h, frames) = (spec.width, spec.height, spec.frame_count);
    let n = w * h;
    let scenes: Vec<FrameScene> = (0..frames).map(|t| FrameScene::new(spec, t)).collect::<Result<_, _>>()?;

    let bounded: Vec<&Primitive> = spec.static_primitives.iter().chain(spec.dynamic_objects.iter().map(|o| &o.primitive)).collect();
    for (index, prim) in bounded.iter().enumerate() {
        let behind = (0..frames)
            .filter(|&t| {
                let pose = &scenes[t].pose;
                let anchor = if index < spec.static_primitives.len() {
                    prim.anchor(&pose.translation)
                } else {
                    let obj = &scenes[t].objects[index - spec.static_primitives.len()];
                    prim.anchor(&obj.to_camera(&pose.translation)).map(|a| obj.to_world(&a))
                };
                anchor.is_some_and(|a| pose.to_camera(&a).z <= 0.0)
            })
            .count();
        if behind * 20 > frames {
            return Err(SceneError::Visibility { index, behind, frames });
        }
    }

    let per_frame: Vec<Vec<Option<Hit>>> = scenes
        .par_iter()
        .map(|scene| (0..n).map(|px| scene.cast_pixel((px % w) as f64, (px / w) as f64)).collect())
        .collect();

    let mut depth = Vec::with_capacity(frames * n);
    let mut dynamic = Vec::with_capacity(frames * n);
    let mut surfaces = Vec::with_capacity(frames * n);
    for hits in &per_frame {
        for hit in hits {
            depth.push(hit.map_or(0.0, |x| x.distance as f32));
            dynamic.push(hit.is_some_and(|x| x.dynamic));
            surfaces.push(hit.map_or(MISS, |x| x.surface));
        }
    }
    let depth = DepthVideo::from_values(w, h, frames, ValueKind::Depth, depth)?;
    let masks = RegionMasks::new(w, h, frames, dynamic)?;
    let track = CameraTrack::new(vec![spec.intrinsics; frames], scenes.iter().map(|s| s.pose).collect())?;

    let mut pairs: Vec<(usize, usize)> = spec
        .correspondence_deltas
        .iter()
        .flat_map(|&d| crate::tempcons::frame_pairs(frames, d))
        .collect();
    pairs.sort();
    pairs.dedup();
    let correspondences: Vec<Correspondence> = pairs
        .par_iter()
        .flat_map_iter(|&(i, j)| pair_correspondences(spec, &scenes, &per_frame, i, j))
        .collect();
    Ok(RenderedScene { depth, track, masks, correspondences, surfaces })
}

fn pair_correspondences(
    spec: &SceneSpec,
    scenes: &[FrameScene],
    hits: &[Vec<Option<Hit>>],
    i: usize,
    j: usize,
) -> Vec<Correspondence> {
    let (w, h) = (spec.width, spec.height);
    let k = &spec.intrinsics;
    let mut out = Vec::new();
    for px in 0..w * h {
        let Some(hit) = hits[i][px] else { continue };
        if hit.dynamic {
            continue;
        }
        let world = scenes[i].pose.to_world(&k.backproject((px % w) as f64, (px / w) as f64, hit.distance));
        let cam_j = scenes[j].pose.to_camera(&world);
        let Some((x, y)) = k.project(&cam_j) else { continue };
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            continue;
        }
        let Some(seen) = scenes[j].cast_pixel(x, y) else { continue };
        if seen.surface != hit.surface || seen.dynamic || (seen.distance - cam_j.z).abs() > 1e-6 * cam_j.z {
            continue;
        }
        let x0 = (x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (y.floor() as usize).min(h.saturating_sub(2));
        let same_surface = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)]
            .iter()
            .all(|&(xx, yy)| hits[j][yy.min(h - 1) * w + xx.min(w - 1)].is_some_and(|n| n.surface == hit.surface && !n.dynamic));
        if same_surface {
            out.push(Correspondence { frame_i: i as u32, frame_j: j as u32, pixel: px as u32, x_j: x, y_j: y });
        }
    }
    out
}
