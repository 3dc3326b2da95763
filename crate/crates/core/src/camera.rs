//! Pinhole intrinsics and camera-to-world poses.
//!
//! Conventions: right-handed camera frame with +x right, +y down and +z
//! forward; pixel `(u, v)` has its center at image coordinate `(u, v)`.
//! Poses map camera coordinates to world coordinates.

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("frame {frame}: rotation is not orthonormal with det +1 (deviation {deviation:.3e})")]
    NotRotation { frame: usize, deviation: f64 },
    #[error("frame {frame}: last pose row must be [0, 0, 0, 1]")]
    NotRigid { frame: usize },
    #[error("frame {frame}: focal lengths must be positive")]
    BadFocal { frame: usize },
    #[error("frame {frame}: principal point ({cx}, {cy}) outside {width}x{height} image")]
    PrincipalPoint { frame: usize, cx: f64, cy: f64, width: usize, height: usize },
    #[error("track has {intrinsics} intrinsics and {poses} poses")]
    Length { intrinsics: usize, poses: usize },
    #[error("camera track is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Camera-frame point at depth `z` seen through image position `(u, v)`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Image position of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Unnormalized ray direction with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_rotation(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: *rotation.matrix(), translation }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_world_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.to_world(&p.coords))
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Sixteen row-major entries of the homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64; 16], frame: usize) -> Result<Pose, CameraError> {
        let m = Matrix4::from_row_slice(values);
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(CameraError::NotRigid { frame });
        }
        let pose = Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        };
        pose.validate(frame)?;
        Ok(pose)
    }

    /// Largest deviation from `RᵀR = I` and `det R = 1`.
    pub fn rotation_deviation(&self) -> f64 {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = (r.determinant() - 1.0).abs();
        ortho.max(det)
    }

    pub fn validate(&self, frame: usize) -> Result<(), CameraError> {
        let deviation = self.rotation_deviation();
        if deviation.is_finite() && deviation <= ORTHO_TOL && self.translation.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(CameraError::NotRotation { frame, deviation })
        }
    }
}

/// Per-frame intrinsics and camera-to-world poses.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrack {
    intrinsics: Vec<Intrinsics>,
    poses: Vec<Pose>,
}

impl CameraTrack {
    pub fn new(intrinsics: Vec<Intrinsics>, poses: Vec<Pose>) -> Result<Self, CameraError> {
        if intrinsics.len() != poses.len() {
            return Err(CameraError::Length { intrinsics: intrinsics.len(), poses: poses.len() });
        }
        if poses.is_empty() {
            return Err(CameraError::Empty);
        }
        for (t, (k, p)) in intrinsics.iter().zip(&poses).enumerate() {
            if !(k.fx > 0.0 && k.fy > 0.0 && k.fx.is_finite() && k.fy.is_finite()) {
                return Err(CameraError::BadFocal { frame: t });
            }
            p.validate(t)?;
        }
        Ok(Self { intrinsics, poses })
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn intrinsics(&self, t: usize) -> &Intrinsics {
        &self.intrinsics[t]
    }

    pub fn pose(&self, t: usize) -> &Pose {
        &self.poses[t]
    }

    pub fn all_intrinsics(&self) -> &[Intrinsics] {
        &self.intrinsics
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Checks principal points against an image size.
    pub fn check_image(&self, width: usize, height: usize) -> Result<(), CameraError> {
        for (t, k) in self.intrinsics.iter().enumerate() {
            let inside = k.cx >= 0.0 && k.cx < width as f64 && k.cy >= 0.0 && k.cy < height as f64;
            if !inside {
                return Err(CameraError::PrincipalPoint { frame: t, cx: k.cx, cy: k.cy, width, height });
            }
        }
        Ok(())
    }

    /// Same track with every pose left-multiplied by `g` (a change of world frame).
    pub fn regauge(&self, g: &Pose) -> CameraTrack {
        CameraTrack {
            intrinsics: self.intrinsics.clone(),
            poses: self.poses.iter().map(|p| g.compose(p)).collect(),
        }
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> CameraTrack {
        CameraTrack {
            intrinsics: self.intrinsics[start..=end].to_vec(),
            poses: self.poses[start..=end].to_vec(),
        }
    }
}

/// Projects `rotation` onto SO(3) via SVD.
pub fn orthonormalize(rotation: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = rotation.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}
