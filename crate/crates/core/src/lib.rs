//! Probabilistic multi-lesion detection from continuous heatmaps.
//!
//! - [`volume`]: dense grids and the isotropic Gaussian density.
//! - [`synthesis`]: heatmap and distance-map targets, seeded synthetic scenes.
//! - [`detector`]: iterative Gaussian fit-and-subtract and the
//!   connected-components baseline.
//! - [`evaluation`]: optimal matching, detection metrics, calibration and
//!   uncertainty retention.

pub mod detector;
pub mod error;
pub mod evaluation;
pub mod synthesis;
pub mod volume;

pub use detector::{
    detect_connected_components, detect_iterative, detect_iterative_trace, lesion_entropy, CcMode,
    DetectedLesion, DetectionTrace, DetectorConfig, FitOptions, FitStatus,
};
pub use error::{Error, Result};
pub use evaluation::{
    calibration_curve, default_size_bins, detection_metrics, hungarian_match, retention_curve,
    spearman, CalibrationReport, DetectionMetrics, MatchReport, SizeBin,
};
pub use synthesis::{
    make_euclidean_map, make_geodesic_map, make_heatmap, sample_scene, PointAnnotation, Scene,
    SceneConfig, SceneLesion,
};
pub use volume::{gaussian_peak, global_argmax, sample_isotropic_gaussian, GridPoint, Volume};
