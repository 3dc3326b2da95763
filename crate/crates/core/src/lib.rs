//! Video depth evaluation, frequency analysis and two-stage fusion.

pub mod align;
pub mod camera;
pub mod container;
pub mod fusion;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod schedule;
pub mod spectral;
pub mod synth;
pub mod tempcons;
pub mod video;
