//! Pairwise pointmap predictions and the graph they form.
//!
//! Every frame pair `(i, j)` holds two directed views: both frames' points
//! expressed in camera `i`, and both expressed in camera `j`.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tree::WeightedEdge;
use crate::container::{f32_bytes, f32_from_bytes};
use crate::numeric::{median, CompensatedSum};

#[derive(Debug, Error)]
pub enum PairError {
    #[error("pair window {window} must satisfy 1 <= window < {frames} frames")]
    Window { window: usize, frames: usize },
    #[error("pair ({i}, {j}): {reason}")]
    Malformed { i: usize, j: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("graph manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// All `(i, j)` with `i < j <= min(i + window, frames − 1)`, lexicographic.
pub fn enumerate_pairs(frames: usize, window: usize) -> Result<Vec<(usize, usize)>, PairError> {
    if window == 0 || window >= frames {
        return Err(PairError::Window { window, frames });
    }
    Ok((0..frames).flat_map(|i| (i + 1..=(i + window).min(frames - 1)).map(move |j| (i, j))).collect())
}

/// `nT − n(n+1)/2`.
pub fn pair_count(frames: usize, window: usize) -> usize {
    window * frames - window * (window + 1) / 2
}

/// One frame's points and per-pixel confidence in some reference camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PointView {
    pub points: Vec<[f32; 3]>,
    pub confidence: Vec<f32>,
}

impl PointView {
    pub fn point(&self, idx: usize) -> Vector3<f64> {
        let p = self.points[idx];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn points_f64(&self) -> Vec<Vector3<f64>> {
        (0..self.points.len()).map(|k| self.point(k)).collect()
    }
}

/// Both frames of a pair seen from one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairView {
    /// The reference frame's own points.
    pub reference: PointView,
    /// The other frame's points in the reference camera.
    pub partner: PointView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwisePrediction {
    pub frame_i: usize,
    pub frame_j: usize,
    pub in_i: PairView,
    pub in_j: PairView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    Mean,
    Sum,
    Median,
}

impl PairwisePrediction {
    /// The view referenced in `frame`.
    pub fn view_in(&self, frame: usize) -> &PairView {
        if frame == self.frame_i {
            &self.in_i
        } else {
            assert_eq!(frame, self.frame_j);
            &self.in_j
        }
    }

    fn confidences(&self) -> impl Iterator<Item = f64> + '_ {
        [&self.in_i.reference, &self.in_i.partner, &self.in_j.reference, &self.in_j.partner]
            .into_iter()
            .flat_map(|v| v.confidence.iter().map(|c| *c as f64))
    }

    pub fn weight(&self, rule: WeightRule) -> f64 {
        match rule {
            WeightRule::Sum => self.confidences().collect::<CompensatedSum>().value(),
            WeightRule::Mean => {
                let n = self.in_i.reference.confidence.len() * 4;
                self.confidences().collect::<CompensatedSum>().value() / n as f64
            }
            WeightRule::Median => median(&mut self.confidences().collect::<Vec<_>>()),
        }
    }

    pub fn mean_confidence(&self) -> f64 {
        self.weight(WeightRule::Mean)
    }

    fn check(&self, pixels: usize) -> Result<(), PairError> {
        let malformed = |reason: String| PairError::Malformed { i: self.frame_i, j: self.frame_j, reason };
        if self.frame_i >= self.frame_j {
            return Err(malformed("frame_i must be below frame_j".into()));
        }
        for v in [&self.in_i.reference, &self.in_i.partner, &self.in_j.reference, &self.in_j.partner] {
            if v.points.len() != pixels || v.confidence.len() != pixels {
                return Err(malformed(format!("view has {} points, expected {pixels}", v.points.len())));
            }
            if v.confidence.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(malformed("confidence must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGraph {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub pairs: Vec<PairwisePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphManifest {
    width: usize,
    height: usize,
    frame_count: usize,
    edges: Vec<WeightedEdge>,
}

fn pair_file(i: usize, j: usize) -> String {
    format!("pair_{i:06}_{j:06}.f32")
}

impl PairGraph {
    pub fn new(width: usize, height: usize, frame_count: usize, pairs: Vec<PairwisePrediction>) -> Result<Self, PairError> {
        for p in &pairs {
            p.check(width * height)?;
            if p.frame_j >= frame_count {
                return Err(PairError::Malformed { i: p.frame_i, j: p.frame_j, reason: "frame out of range".into() });
            }
        }
        Ok(Self { width, height, frame_count, pairs })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn edges(&self, rule: WeightRule) -> Vec<WeightedEdge> {
        self.pairs.iter().map(|p| WeightedEdge { i: p.frame_i, j: p.frame_j, weight: p.weight(rule) }).collect()
    }

    /// Writes `graph.json` and one raw little-endian f32 file per pair holding
    /// points then confidences of `in_i.reference`, `in_i.partner`,
    /// `in_j.reference`, `in_j.partner`.
    pub fn write(&self, dir: &Path) -> Result<(), PairError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| PairError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let manifest = GraphManifest {
            width: self.width,
            height: self.height,
            frame_count: self.frame_count,
            edges: self.edges(WeightRule::Mean),
        };
        let path = dir.join("graph.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(io(&path))?;
        for p in &self.pairs {
            let views = [&p.in_i.reference, &p.in_i.partner, &p.in_j.reference, &p.in_j.partner];
            let mut flat: Vec<f32> = Vec::with_capacity(self.pixel_count() * 16);
            for v in views {
                flat.extend(v.points.iter().flatten());
            }
            for v in views {
                flat.extend(&v.confidence);
            }
            let path = dir.join(pair_file(p.frame_i, p.frame_j));
            fs::write(&path, f32_bytes(&flat)).map_err(io(&path))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, PairError> {
        let path = dir.join("graph.json");
        let text = fs::read_to_string(&path).map_err(|source| PairError::Io { path: path.display().to_string(), source })?;
        let manifest: GraphManifest = serde_json::from_str(&text)?;
        let n = manifest.width * manifest.height;
        let mut pairs = Vec::with_capacity(manifest.edges.len());
        for e in &manifest.edges {
            let path = dir.join(pair_file(e.i, e.j));
            let bytes = fs::read(&path).map_err(|source| PairError::Io { path: path.display().to_string(), source })?;
            if bytes.len() != n * 16 * 4 {
                return Err(PairError::Malformed {
                    i: e.i,
                    j: e.j,
                    reason: format!("payload has {} bytes, expected {}", bytes.len(), n * 64),
                });
            }
            let flat = f32_from_bytes(&bytes);
            let view = |k: usize| PointView {
                points: flat[k * 3 * n..(k + 1) * 3 * n].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                confidence: flat[12 * n + k * n..12 * n + (k + 1) * n].to_vec(),
            };
            pairs.push(PairwisePrediction {
                frame_i: e.i,
                frame_j: e.j,
                in_i: PairView { reference: view(0), partner: view(1) },
                in_j: PairView { reference: view(2), partner: view(3) },
            });
        }
        Self::new(manifest.width, manifest.height, manifest.frame_count, pairs)
    }
}
