//! On-disk JSON documents. Every document carries `schema_version`.

use peakforge::evaluation::{CalibrationBin, RetentionPoint};
use peakforge::{CcMode, DetectedLesion, DetectionMetrics, GridPoint, Scene, SceneLesion};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Ground truth for one synthetic volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    /// File name of the matching volume, relative to this file.
    pub volume: String,
    pub dims: Vec<usize>,
    pub sigma: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub lesions: Vec<SceneLesion>,
}

impl SceneFile {
    pub fn new(scene: &Scene, volume: String) -> Self {
        SceneFile {
            schema_version: SCHEMA_VERSION,
            volume,
            dims: scene.dims.clone(),
            sigma: scene.sigma,
            noise_std: scene.noise_std,
            seed: scene.seed,
            lesions: scene.lesions.clone(),
        }
    }

    pub fn centers(&self) -> Vec<GridPoint> {
        self.lesions.iter().map(|l| l.center.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Iterative Gaussian fit-and-subtract.
    Gaussian,
    /// Threshold and connected components.
    Cc,
}

/// The resolved detector settings, echoed into every detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectEcho {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub filter_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub continue_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_lesions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub window_radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cc_mode: Option<CcMode>,
}

/// One detection as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub center: GridPoint,
    pub alpha: f64,
    pub entropy_bits: f64,
    pub iteration: usize,
    pub fit_residual: f64,
}

impl From<&DetectedLesion> for DetectionRecord {
    fn from(d: &DetectedLesion) -> Self {
        DetectionRecord {
            center: d.center.clone(),
            alpha: d.alpha,
            entropy_bits: d.entropy_bits,
            iteration: d.iteration,
            fit_residual: d.fit_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsFile {
    pub schema_version: u32,
    pub method: Method,
    /// File name of the volume the detections came from.
    pub source: String,
    pub config: DetectEcho,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSummary {
    pub n_bins: usize,
    pub ece: f64,
    pub total: usize,
    pub bins: Vec<CalibrationBin>,
}

/// `metrics.json` written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub schema_version: u32,
    pub volumes: usize,
    pub max_distance: f64,
    pub metrics: DetectionMetrics,
    pub calibration: CalibrationSummary,
    pub retention: Vec<RetentionPoint>,
}

/// `report.json` written by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub schema_version: u32,
    pub inputs: Vec<String>,
    pub volumes: usize,
    pub metrics: DetectionMetrics,
    pub calibration: CalibrationSummary,
}
