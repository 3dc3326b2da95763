//! On-disk depth-video container.
//!
//! A container is a directory holding `manifest.json` and one raw payload per
//! frame and kind:
//!
//! * `depth_%06d.f32`: `width*height` little-endian `f32`, row-major, top-left
//!   origin; invalid pixels are stored as `0.0`.
//! * `mask_%06d.u8`: dynamic-region mask, one byte per pixel (`0` or `255`).
//! * `conf_%06d.f32`: optional per-pixel confidence.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraTrack, Intrinsics, Pose};
use crate::video::{DepthVideo, RegionMasks, ValueKind, VideoError};

pub const FORMAT_VERSION: &str = "1.0";
const FORMAT_MAJOR: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("unsupported container format version {0}")]
    Version(String),
    #[error("container structure: {0}")]
    Structure(String),
    #[error("frame {frame}: {reason}")]
    Frame { frame: usize, reason: String },
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub value_kind: ValueKind,
    pub depth_unit: String,
    #[serde(default)]
    pub intrinsics: Option<Vec<Intrinsics>>,
    #[serde(default)]
    pub poses: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub has_masks: bool,
    #[serde(default)]
    pub has_confidence: bool,
}

/// Everything a container directory can hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub video: DepthVideo,
    pub track: Option<CameraTrack>,
    pub masks: Option<RegionMasks>,
    /// Frame-major per-pixel confidence, same layout as the video.
    pub confidence: Option<Vec<f32>>,
}

impl Container {
    pub fn new(video: DepthVideo) -> Self {
        Self { video, track: None, masks: None, confidence: None }
    }

    pub fn with_track(mut self, track: CameraTrack) -> Self {
        self.track = Some(track);
        self
    }

    pub fn with_masks(mut self, masks: RegionMasks) -> Self {
        self.masks = Some(masks);
        self
    }

    pub fn write(&self, dir: &Path) -> Result<(), ContainerError> {
        let v = &self.video;
        let n = v.pixel_count();
        if let Some(track) = &self.track {
            if track.frame_count() != v.frame_count() {
                return Err(ContainerError::Structure(format!(
                    "camera track has {} frames, video has {}",
                    track.frame_count(),
                    v.frame_count()
                )));
            }
        }
        if let Some(masks) = &self.masks {
            if !masks.fits(v) {
                return Err(ContainerError::Structure("mask dimensions differ from video".into()));
            }
        }
        if let Some(conf) = &self.confidence {
            if conf.len() != v.values().len() {
                return Err(ContainerError::Structure("confidence size differs from video".into()));
            }
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let manifest = Manifest {
            format_version: FORMAT_VERSION.to_string(),
            width: v.width(),
            height: v.height(),
            frame_count: v.frame_count(),
            value_kind: v.kind(),
            depth_unit: match v.kind() {
                ValueKind::Depth => "meters".into(),
                ValueKind::Disparity => "1/meters".into(),
            },
            intrinsics: self.track.as_ref().map(|t| t.all_intrinsics().to_vec()),
            poses: self
                .track
                .as_ref()
                .map(|t| t.poses().iter().map(|p| p.to_row_major().to_vec()).collect()),
            has_masks: self.masks.is_some(),
            has_confidence: self.confidence.is_some(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| ContainerError::Manifest(e.to_string()))?;
        let mpath = dir.join(MANIFEST);
        fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;

        for t in 0..v.frame_count() {
            let path = dir.join(depth_name(t));
            fs::write(&path, f32_bytes(v.frame(t))).map_err(io_err(&path))?;
            if let Some(masks) = &self.masks {
                let path = dir.join(mask_name(t));
                let bytes: Vec<u8> = masks.dynamic_frame(t).iter().map(|&d| if d { 255 } else { 0 }).collect();
                fs::write(&path, bytes).map_err(io_err(&path))?;
            }
            if let Some(conf) = &self.confidence {
                let path = dir.join(conf_name(t));
                fs::write(&path, f32_bytes(&conf[t * n..(t + 1) * n])).map_err(io_err(&path))?;
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Container, ContainerError> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| ContainerError::Manifest(e.to_string()))?;
        check_version(&manifest.format_version)?;
        let (w, h, frames) = (manifest.width, manifest.height, manifest.frame_count);
        if w == 0 || h == 0 || frames == 0 {
            return Err(ContainerError::Manifest(format!("non-positive dimensions {w}x{h}x{frames}")));
        }
        let n = w * h;

        check_payload_count(dir, "depth_", ".f32", frames)?;
        if manifest.has_masks {
            check_payload_count(dir, "mask_", ".u8", frames)?;
        }
        if manifest.has_confidence {
            check_payload_count(dir, "conf_", ".f32", frames)?;
        }

        let mut data = Vec::with_capacity(n * frames);
        let mut valid = Vec::with_capacity(n * frames);
        for t in 0..frames {
            let values = read_f32_payload(&dir.join(depth_name(t)), n, t)?;
            for (j, v) in values.into_iter().enumerate() {
                if v == 0.0 {
                    valid.push(false);
                } else if v.is_finite() && v > 0.0 {
                    valid.push(true);
                } else {
                    return Err(ContainerError::Frame {
                        frame: t,
                        reason: format!("pixel {j} holds invalid sample {v}"),
                    });
                }
                data.push(v);
            }
        }
        let video = DepthVideo::new(w, h, frames, manifest.value_kind, data, valid)?;

        let track = match (&manifest.intrinsics, &manifest.poses) {
            (Some(k), Some(p)) => {
                if k.len() != frames || p.len() != frames {
                    return Err(ContainerError::Structure(format!(
                        "manifest lists {} intrinsics and {} poses for {frames} frames",
                        k.len(),
                        p.len()
                    )));
                }
                let mut poses = Vec::with_capacity(frames);
                for (t, row) in p.iter().enumerate() {
                    let arr: [f64; 16] = row.as_slice().try_into().map_err(|_| ContainerError::Frame {
                        frame: t,
                        reason: format!("pose has {} entries, expected 16", row.len()),
                    })?;
                    poses.push(Pose::from_row_major(&arr, t)?);
                }
                let track = CameraTrack::new(k.clone(), poses)?;
                track.check_image(w, h)?;
                Some(track)
            }
            (None, None) => None,
            _ => return Err(ContainerError::Manifest("intrinsics and poses must appear together".into())),
        };

        let masks = if manifest.has_masks {
            let mut dynamic = Vec::with_capacity(n * frames);
            for t in 0..frames {
                let path = dir.join(mask_name(t));
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                if bytes.len() != n {
                    return Err(ContainerError::Frame {
                        frame: t,
                        reason: format!("mask payload has {} bytes, expected {n}", bytes.len()),
                    });
                }
                for b in bytes {
                    match b {
                        0 => dynamic.push(false),
                        255 => dynamic.push(true),
                        other => {
                            return Err(ContainerError::Frame { frame: t, reason: format!("mask byte {other}") })
                        }
                    }
                }
            }
            Some(RegionMasks::new(w, h, frames, dynamic)?)
        } else {
            None
        };

        let confidence = if manifest.has_confidence {
            let mut conf = Vec::with_capacity(n * frames);
            for t in 0..frames {
                let values = read_f32_payload(&dir.join(conf_name(t)), n, t)?;
                if let Some(bad) = values.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                    return Err(ContainerError::Frame { frame: t, reason: format!("confidence {bad}") });
                }
                conf.extend(values);
            }
            Some(conf)
        } else {
            None
        };

        Ok(Container { video, track, masks, confidence })
    }
}

/// Writes a video with optional camera track and masks.
pub fn write_container(
    video: &DepthVideo,
    track: Option<&CameraTrack>,
    masks: Option<&RegionMasks>,
    dir: &Path,
) -> Result<(), ContainerError> {
    Container {
        video: video.clone(),
        track: track.cloned(),
        masks: masks.cloned(),
        confidence: None,
    }
    .write(dir)
}

pub fn read_container(dir: &Path) -> Result<(DepthVideo, Option<CameraTrack>, Option<RegionMasks>), ContainerError> {
    let c = Container::read(dir)?;
    Ok((c.video, c.track, c.masks))
}

pub fn depth_name(t: usize) -> String {
    format!("depth_{t:06}.f32")
}

pub fn mask_name(t: usize) -> String {
    format!("mask_{t:06}.u8")
}

pub fn conf_name(t: usize) -> String {
    format!("conf_{t:06}.f32")
}

fn check_version(version: &str) -> Result<(), ContainerError> {
    let major = version.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match major {
        Some(FORMAT_MAJOR) => Ok(()),
        _ => Err(ContainerError::Version(version.to_string())),
    }
}

fn check_payload_count(dir: &Path, prefix: &str, suffix: &str, expected: usize) -> Result<(), ContainerError> {
    let mut count = 0;
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with(prefix) && name.ends_with(suffix) {
            count += 1;
        }
    }
    if count != expected {
        return Err(ContainerError::Structure(format!(
            "manifest declares {expected} frames but found {count} {prefix}*{suffix} payloads"
        )));
    }
    Ok(())
}

pub(crate) fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn f32_from_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn read_f32_payload(path: &Path, n: usize, frame: usize) -> Result<Vec<f32>, ContainerError> {
    let bytes = fs::read(path).map_err(|e| ContainerError::Frame { frame, reason: format!("{}: {e}", path.display()) })?;
    if bytes.len() != n * 4 {
        return Err(ContainerError::Frame {
            frame,
            reason: format!("{} has {} bytes, expected {}", path.display(), bytes.len(), n * 4),
        });
    }
    Ok(f32_from_bytes(&bytes))
}
