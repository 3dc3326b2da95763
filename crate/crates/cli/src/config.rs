//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vdepth_core::fusion::FusionConfig;
use vdepth_core::metrics::{AbsRelDenominator, RmseMode};
use vdepth_core::spectral::{BandScheme, MetricName};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(default)]
    pub per_frame: bool,
    #[serde(default)]
    pub absrel_denominator: AbsRelDenominator,
    #[serde(default)]
    pub rmse: RmseMode,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { per_frame: false, absrel_denominator: AbsRelDenominator::Gt, rmse: RmseMode::Standard }
    }
}

fn default_metric() -> MetricName {
    MetricName::Absrel
}
fn default_bands() -> usize {
    11
}
fn default_scheme() -> BandScheme {
    BandScheme::Exponential
}
fn default_fps() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_metric")]
    pub metric: MetricName,
    #[serde(default = "default_bands")]
    pub bands: usize,
    #[serde(default = "default_scheme")]
    pub scheme: BandScheme,
    /// Frame rate used to label bins in hertz.
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn default_delta() -> usize {
    10
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TempConsConfig {
    #[serde(default = "default_delta")]
    pub delta: usize,
    #[serde(default = "default_true")]
    pub static_only: bool,
}

impl Default for TempConsConfig {
    fn default() -> Self {
        Self { delta: default_delta(), static_only: true }
    }
}

/// Contents of the `--config` file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub fuse: FusionConfig,
    #[serde(default)]
    pub tempcons: TempConsConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }
}
