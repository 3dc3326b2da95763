//! Depth videos and per-pixel region masks.
//!
//! A [`DepthVideo`] is a dense `T x H x W` stack of `f32` samples stored
//! frame-major, row-major, with the top-left pixel first. Every sample has a
//! validity bit; invalid samples are stored as `0.0` so that the on-disk
//! container can encode validity without a separate payload.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VideoError {
    #[error("video dimensions must be positive, got {width}x{height}x{frames}")]
    EmptyDimensions { width: usize, height: usize, frames: usize },
    #[error("frame {frame} has {got} samples, expected {expected}")]
    FrameSize { frame: usize, got: usize, expected: usize },
    #[error("validity grid of frame {frame} has {got} entries, expected {expected}")]
    ValiditySize { frame: usize, got: usize, expected: usize },
    #[error("frame {frame}, pixel {pixel}: valid sample {value} is not finite and positive")]
    BadValue { frame: usize, pixel: usize, value: f32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Whether samples are metric depth or its reciprocal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Depth,
    Disparity,
}

impl ValueKind {
    pub fn other(self) -> Self {
        match self {
            ValueKind::Depth => ValueKind::Disparity,
            ValueKind::Disparity => ValueKind::Depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthVideo {
    width: usize,
    height: usize,
    frames: usize,
    kind: ValueKind,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthVideo {
    /// Builds a video from a flat frame-major buffer. Samples that are not
    /// finite and strictly positive are marked invalid.
    pub fn from_values(
        width: usize,
        height: usize,
        frames: usize,
        kind: ValueKind,
        data: Vec<f32>,
    ) -> Result<Self, VideoError> {
        check_dims(width, height, frames)?;
        let n = width * height;
        if data.len() != n * frames {
            return Err(VideoError::FrameSize {
                frame: data.len() / n,
                got: data.len() % n,
                expected: n,
            });
        }
        let valid: Vec<bool> = data.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self::assemble(width, height, frames, kind, data, valid))
    }

    /// Builds a video from samples and an explicit validity grid. Every valid
    /// sample must be finite and strictly positive.
    pub fn new(
        width: usize,
        height: usize,
        frames: usize,
        kind: ValueKind,
        data: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self, VideoError> {
        check_dims(width, height, frames)?;
        let n = width * height;
        if data.len() != n * frames {
            return Err(VideoError::FrameSize {
                frame: data.len() / n,
                got: data.len() % n,
                expected: n,
            });
        }
        if valid.len() != data.len() {
            return Err(VideoError::ValiditySize {
                frame: valid.len() / n,
                got: valid.len() % n,
                expected: n,
            });
        }
        for (i, (&v, &ok)) in data.iter().zip(&valid).enumerate() {
            if ok && !(v.is_finite() && v > 0.0) {
                return Err(VideoError::BadValue { frame: i / n, pixel: i % n, value: v });
            }
        }
        Ok(Self::assemble(width, height, frames, kind, data, valid))
    }

    /// Builds a video from per-frame grids.
    pub fn from_frames(
        width: usize,
        height: usize,
        kind: ValueKind,
        frames: &[Vec<f32>],
    ) -> Result<Self, VideoError> {
        let n = width * height;
        for (t, f) in frames.iter().enumerate() {
            if f.len() != n {
                return Err(VideoError::FrameSize { frame: t, got: f.len(), expected: n });
            }
        }
        Self::from_values(width, height, frames.len(), kind, frames.concat())
    }

    /// A video filled with one value.
    pub fn constant(width: usize, height: usize, frames: usize, kind: ValueKind, value: f32) -> Self {
        Self::from_values(width, height, frames, kind, vec![value; width * height * frames])
            .expect("constant video with positive dimensions")
    }

    fn assemble(
        width: usize,
        height: usize,
        frames: usize,
        kind: ValueKind,
        mut data: Vec<f32>,
        valid: Vec<bool>,
    ) -> Self {
        for (v, &ok) in data.iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        Self { width, height, frames, kind, data, valid }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    /// Pixels per frame.
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn valid_frame(&self, t: usize) -> &[bool] {
        let n = self.pixel_count();
        &self.valid[t * n..(t + 1) * n]
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, t: usize, x: usize, y: usize) -> Option<f32> {
        let i = t * self.pixel_count() + y * self.width + x;
        self.valid[i].then_some(self.data[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_shape(&self, other: &DepthVideo) -> bool {
        self.width == other.width && self.height == other.height && self.frames == other.frames
    }

    pub fn ensure_same_shape(&self, other: &DepthVideo) -> Result<(), VideoError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(VideoError::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.frames, other.width, other.height, other.frames
            )))
        }
    }

    /// Maps every valid sample through `f`. Outputs that are not finite and
    /// positive become invalid.
    pub fn map_valid(&self, kind: ValueKind, f: impl Fn(f32) -> f32) -> DepthVideo {
        let data: Vec<f32> = self
            .data
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok { f(v) } else { 0.0 })
            .collect();
        let valid: Vec<bool> = data
            .iter()
            .zip(&self.valid)
            .map(|(v, &ok)| ok && v.is_finite() && *v > 0.0)
            .collect();
        Self::assemble(self.width, self.height, self.frames, kind, data, valid)
    }

    /// Depth to disparity or back, on valid pixels.
    pub fn reciprocal(&self) -> DepthVideo {
        self.map_valid(self.kind.other(), |v| 1.0 / v)
    }

    /// Frames `start..=end` as a new video.
    pub fn slice_frames(&self, start: usize, end: usize) -> DepthVideo {
        assert!(start <= end && end < self.frames, "frame range out of bounds");
        let n = self.pixel_count();
        Self::assemble(
            self.width,
            self.height,
            end - start + 1,
            self.kind,
            self.data[start * n..(end + 1) * n].to_vec(),
            self.valid[start * n..(end + 1) * n].to_vec(),
        )
    }

    /// Replaces validity with `valid && mask`.
    pub fn restrict(&self, mask: &[bool]) -> DepthVideo {
        assert_eq!(mask.len(), self.valid.len());
        let valid: Vec<bool> = self.valid.iter().zip(mask).map(|(a, b)| *a && *b).collect();
        Self::assemble(self.width, self.height, self.frames, self.kind, self.data.clone(), valid)
    }

    pub fn into_parts(self) -> (Vec<f32>, Vec<bool>) {
        (self.data, self.valid)
    }
}

fn check_dims(width: usize, height: usize, frames: usize) -> Result<(), VideoError> {
    if width == 0 || height == 0 || frames == 0 {
        Err(VideoError::EmptyDimensions { width, height, frames })
    } else {
        Ok(())
    }
}

/// Per-pixel dynamic-object masks. Static pixels are the complement,
/// restricted to pixels the bound video marks valid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    width: usize,
    height: usize,
    frames: usize,
    dynamic: Vec<bool>,
}

impl RegionMasks {
    pub fn new(width: usize, height: usize, frames: usize, dynamic: Vec<bool>) -> Result<Self, VideoError> {
        check_dims(width, height, frames)?;
        if dynamic.len() != width * height * frames {
            return Err(VideoError::Shape(format!(
                "mask has {} entries, expected {}",
                dynamic.len(),
                width * height * frames
            )));
        }
        Ok(Self { width, height, frames, dynamic })
    }

    pub fn all_static(width: usize, height: usize, frames: usize) -> Self {
        Self { width, height, frames, dynamic: vec![false; width * height * frames] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn dynamic(&self) -> &[bool] {
        &self.dynamic
    }

    pub fn dynamic_frame(&self, t: usize) -> &[bool] {
        let n = self.width * self.height;
        &self.dynamic[t * n..(t + 1) * n]
    }

    /// Static selection for `video`: not dynamic and valid.
    pub fn static_selection(&self, video: &DepthVideo) -> Vec<bool> {
        self.dynamic.iter().zip(video.validity()).map(|(d, v)| !d && *v).collect()
    }

    pub fn fits(&self, video: &DepthVideo) -> bool {
        self.width == video.width() && self.height == video.height() && self.frames == video.frame_count()
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> RegionMasks {
        let n = self.width * self.height;
        Self {
            width: self.width,
            height: self.height,
            frames: end - start + 1,
            dynamic: self.dynamic[start * n..(end + 1) * n].to_vec(),
        }
    }
}

/// Nearest-neighbour source index for output index `dst` under center-aligned
/// scaling: `floor((dst + 0.5) * src / dst_len)`, clamped to the source.
pub fn nearest_source_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let i = ((2 * dst + 1) * src_len) / (2 * dst_len);
    i.min(src_len - 1)
}

/// Nearest-neighbour resize of every frame; validity is resampled with the
/// same index map.
pub fn resize_nearest(video: &DepthVideo, new_width: usize, new_height: usize) -> Result<DepthVideo, VideoError> {
    check_dims(new_width, new_height, video.frame_count())?;
    let xs: Vec<usize> = (0..new_width)
        .map(|x| nearest_source_index(x, video.width(), new_width))
        .collect();
    let ys: Vec<usize> = (0..new_height)
        .map(|y| nearest_source_index(y, video.height(), new_height))
        .collect();
    let mut data = Vec::with_capacity(new_width * new_height * video.frame_count());
    let mut valid = Vec::with_capacity(data.capacity());
    for t in 0..video.frame_count() {
        let frame = video.frame(t);
        let vf = video.valid_frame(t);
        for &sy in &ys {
            for &sx in &xs {
                let i = sy * video.width() + sx;
                data.push(frame[i]);
                valid.push(vf[i]);
            }
        }
    }
    DepthVideo::new(new_width, new_height, video.frame_count(), video.kind(), data, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn invalid_samples_are_zeroed() {
        let v = DepthVideo::from_values(2, 1, 1, ValueKind::Depth, vec![f32::NAN, 3.0]).unwrap();
        assert_eq!(v.values(), &[0.0, 3.0]);
        assert_eq!(v.validity(), &[false, true]);
    }

    #[test]
    fn rejects_nonpositive_valid_sample() {
        let err = DepthVideo::new(1, 1, 2, ValueKind::Depth, vec![1.0, -1.0], vec![true, true]).unwrap_err();
        assert_eq!(err, VideoError::BadValue { frame: 1, pixel: 0, value: -1.0 });
    }

    #[test]
    fn resize_identity() {
        let v = DepthVideo::from_values(3, 2, 2, ValueKind::Depth, (1..=12).map(|x| x as f32).collect()).unwrap();
        assert_eq!(resize_nearest(&v, 3, 2).unwrap(), v);
    }

    #[test]
    fn resize_integer_upscale_replicates_blocks() {
        let v = DepthVideo::from_values(2, 2, 1, ValueKind::Depth, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = resize_nearest(&v, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(r.values(), &expected);
    }

    #[test]
    fn resize_downscale_matches_index_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..7 * 5 * 2).map(|_| rng.random_range(0.5f32..10.0)).collect();
        let v = DepthVideo::from_values(7, 5, 2, ValueKind::Depth, data.clone()).unwrap();
        let r = resize_nearest(&v, 3, 2).unwrap();
        for t in 0..2 {
            for y in 0..2 {
                for x in 0..3 {
                    // center of output pixel mapped back into source coordinates
                    let sx = (((x as f64) + 0.5) * 7.0 / 3.0).floor() as usize;
                    let sy = (((y as f64) + 0.5) * 5.0 / 2.0).floor() as usize;
                    assert_eq!(r.get(t, x, y), Some(data[t * 35 + sy * 7 + sx]));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn resize_commutes_with_masking(
            w in 1usize..9, h in 1usize..9, nw in 1usize..12, nh in 1usize..12,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..w * h).map(|_| rng.random_range(0.1f32..5.0)).collect();
            let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
            let v = DepthVideo::from_values(w, h, 1, ValueKind::Depth, data).unwrap();
            let masked_then_resized = resize_nearest(&v.restrict(&mask), nw, nh).unwrap();
            let m = DepthVideo::new(w, h, 1, ValueKind::Depth, vec![1.0; w * h], mask).unwrap();
            let rm = resize_nearest(&m, nw, nh).unwrap();
            let resized_then_masked = resize_nearest(&v, nw, nh).unwrap().restrict(rm.validity());
            prop_assert_eq!(&masked_then_resized, &resized_then_masked);
            let again = resize_nearest(&resized_then_masked, nw, nh).unwrap();
            prop_assert_eq!(again, resized_then_masked);
        }
    }
}
