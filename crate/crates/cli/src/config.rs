//! Layered run configuration: command-line flags override the matching
//! section of an optional TOML file, which overrides built-in defaults.
//!
//! Every argument struct doubles as its TOML section; keys are the flag names
//! without the leading dashes. Paths in the file are taken relative to the
//! working directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::ValueEnum;
use peakforge::evaluation::SizeBin;
use peakforge::{default_size_bins, CcMode, DetectorConfig, SceneConfig};
use serde::Deserialize;

use crate::schema::Method;

/// Environment variable that overrides the worker count.
pub const THREADS_ENV: &str = "PEAKFORGE_THREADS";

macro_rules! layered {
    ($t:ident { $($f:ident),* $(,)? }) => {
        impl $t {
            /// Fills every unset field from `file`.
            pub fn layered(self, file: Option<$t>) -> $t {
                let file = file.unwrap_or_default();
                $t { $($f: self.$f.or(file.$f)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of scenes [default: 1].
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed; scene i uses a seed derived from it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian width in voxels [default: 1.0].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Extents, comma separated [default: 48,48,48].
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Noise standard deviation as a fraction of the unit-mass peak [default: 0].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Inclusive lesion count range `lo,hi` [default: 0,5].
    #[arg(long, value_delimiter = ',')]
    pub count: Option<Vec<usize>>,
    /// Inclusive amplitude range `lo,hi` [default: 0.05,1].
    #[arg(long, value_delimiter = ',')]
    pub amplitude: Option<Vec<f64>>,
    /// Minimum centre distance in voxels [default: 4 sigma].
    #[arg(long)]
    pub min_separation: Option<f64>,
    /// Inclusive lesion size range `lo,hi` [default: 3,100].
    #[arg(long, value_delimiter = ',')]
    pub size: Option<Vec<u32>>,
}
layered!(SynthArgs {
    out,
    n,
    seed,
    sigma,
    dims,
    noise,
    count,
    amplitude,
    min_separation,
    size
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CcModeArg {
    CenterOfMass,
    Maximum,
}

impl From<CcModeArg> for CcMode {
    fn from(m: CcModeArg) -> Self {
        match m {
            CcModeArg::CenterOfMass => CcMode::CenterOfMass,
            CcModeArg::Maximum => CcMode::Maximum,
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DetectArgs {
    /// MVOL files or directories holding them.
    pub inputs: Option<Vec<PathBuf>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Detector [default: gaussian].
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Gaussian width in voxels [default: 1.0].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Candidates with alpha below this are dropped [default: 0.1].
    #[arg(long)]
    pub filter_threshold: Option<f64>,
    /// Extraction stops once a fitted alpha falls below this [default: 0.01].
    #[arg(long)]
    pub continue_threshold: Option<f64>,
    /// Extraction budget per volume [default: 50].
    #[arg(long)]
    pub max_lesions: Option<usize>,
    /// Fit window radius in voxels [default: ceil(3 sigma)].
    #[arg(long)]
    pub window_radius: Option<usize>,
    /// Binarization threshold for `--method cc` [default: 0.01].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Component reduction for `--method cc` [default: center-of-mass].
    #[arg(long, value_enum)]
    pub cc_mode: Option<CcModeArg>,
}
layered!(DetectArgs {
    inputs,
    out,
    method,
    sigma,
    filter_threshold,
    continue_threshold,
    max_lesions,
    window_radius,
    tau,
    cc_mode,
});

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Directory of `*.det.json` files.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Directory of `*.scene.json` files.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Matches farther apart than this count as misses [default: 6].
    #[arg(long)]
    pub max_distance: Option<f64>,
    /// Calibration bins [default: 10].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Size strata `name:lo-hi`, comma separated, `hi` optional
    /// [default: small:3-10,medium:11-50,large:51-].
    #[arg(long)]
    pub size_bins: Option<String>,
}
layered!(EvalArgs {
    detections,
    scenes,
    out,
    max_distance,
    bins,
    size_bins
});

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CalibrateArgs {
    /// Directory of `*.det.json` files.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Directory of `*.scene.json` files.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 6]
    #[arg(long)]
    pub max_distance: Option<f64>,
    /// [default: 10]
    #[arg(long)]
    pub bins: Option<usize>,
}
layered!(CalibrateArgs {
    detections,
    scenes,
    out,
    max_distance,
    bins
});

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportArgs {
    /// `metrics.json` files written by `eval`.
    pub inputs: Option<Vec<PathBuf>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
layered!(ReportArgs { inputs, out });

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub workers: Option<usize>,
    pub synth: Option<SynthArgs>,
    pub detect: Option<DetectArgs>,
    pub eval: Option<EvalArgs>,
    pub calibrate: Option<CalibrateArgs>,
    pub report: Option<ReportArgs>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// `PEAKFORGE_THREADS`, then the flag, then the file, then the machine.
pub fn resolve_workers(flag: Option<usize>, file: Option<usize>) -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a worker count"))?,
        Err(_) => match flag.or(file) {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    ensure!(n > 0, "worker count must be positive");
    Ok(n)
}

fn required(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.with_context(|| format!("missing --{flag}"))
}

fn pair<T: Copy + std::fmt::Debug>(
    v: Option<Vec<T>>,
    default: (T, T),
    flag: &str,
) -> Result<(T, T)> {
    match v {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(v) => bail!("--{flag} takes two values lo,hi, got {v:?}"),
    }
}

fn finite_non_negative(x: f64, what: &str) -> Result<f64> {
    ensure!(
        x.is_finite() && x >= 0.0,
        "{what} must be finite and non-negative, got {x}"
    );
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub out: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

impl SynthArgs {
    pub fn resolve(self) -> Result<SynthParams> {
        let sigma = self.sigma.unwrap_or(1.0);
        let noise = finite_non_negative(self.noise.unwrap_or(0.0), "--noise")?;
        let mut scene = SceneConfig {
            dims: self.dims.unwrap_or_else(|| vec![48, 48, 48]),
            count: pair(self.count, (0, 5), "count")?,
            amplitude: pair(self.amplitude, (0.05, 1.0), "amplitude")?,
            size_voxels: pair(self.size, (3, 100), "size")?,
            ..SceneConfig::default()
        }
        .with_sigma(sigma);
        ensure!(
            (2..=3).contains(&scene.dims.len()),
            "--dims needs 2 or 3 extents, got {:?}",
            scene.dims
        );
        if let Some(s) = self.min_separation {
            scene.min_separation = s;
        }
        let scene = scene.with_noise_fraction(noise);
        scene.validate()?;
        let n = self.n.unwrap_or(1);
        ensure!(n > 0, "--n must be positive");
        Ok(SynthParams {
            out: required(self.out, "out")?,
            n,
            seed: self.seed.unwrap_or(0),
            scene,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DetectParams {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub method: Method,
    pub detector: DetectorConfig,
    pub tau: f64,
    pub cc_mode: CcMode,
}

impl DetectArgs {
    pub fn resolve(self) -> Result<DetectParams> {
        let inputs = self.inputs.unwrap_or_default();
        ensure!(!inputs.is_empty(), "no input volumes given");
        let mut detector = DetectorConfig::new(self.sigma.unwrap_or(1.0));
        if let Some(t) = self.filter_threshold {
            detector.filter_threshold = t;
        }
        if let Some(t) = self.continue_threshold {
            detector.continue_threshold = t;
        }
        if let Some(m) = self.max_lesions {
            detector.max_lesions = m;
        }
        if let Some(r) = self.window_radius {
            detector.window_radius = r;
        }
        detector.validate()?;
        let tau = self.tau.unwrap_or(0.01);
        ensure!(tau.is_finite(), "--tau must be finite, got {tau}");
        Ok(DetectParams {
            inputs,
            out: required(self.out, "out")?,
            method: self.method.unwrap_or(Method::Gaussian),
            detector,
            tau,
            cc_mode: self.cc_mode.unwrap_or(CcModeArg::CenterOfMass).into(),
        })
    }
}

/// Parses `name:lo-hi[,name:lo-]`.
pub fn parse_size_bins(spec: &str) -> Result<Vec<SizeBin>> {
    spec.split(',')
        .map(|part| {
            let (name, range) = part
                .split_once(':')
                .with_context(|| format!("size bin {part:?} is not name:lo-hi"))?;
            let (lo, hi) = range
                .split_once('-')
                .with_context(|| format!("size bin {part:?} is not name:lo-hi"))?;
            let lo: u32 = lo
                .trim()
                .parse()
                .with_context(|| format!("size bin {part:?}"))?;
            let hi = match hi.trim() {
                "" => None,
                h => Some(
                    h.parse::<u32>()
                        .with_context(|| format!("size bin {part:?}"))?,
                ),
            };
            Ok(SizeBin::new(name.trim(), lo, hi))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalParams {
    pub detections: PathBuf,
    pub scenes: PathBuf,
    pub out: PathBuf,
    pub max_distance: f64,
    pub bins: usize,
    pub size_bins: Vec<SizeBin>,
}

fn check_matching(max_distance: f64, bins: usize) -> Result<()> {
    ensure!(
        max_distance.is_finite() && max_distance > 0.0,
        "--max-distance must be positive, got {max_distance}"
    );
    ensure!(bins > 0, "--bins must be positive");
    Ok(())
}

impl EvalArgs {
    pub fn resolve(self) -> Result<EvalParams> {
        let max_distance = self.max_distance.unwrap_or(6.0);
        let bins = self.bins.unwrap_or(10);
        check_matching(max_distance, bins)?;
        let size_bins = match self.size_bins {
            Some(s) => parse_size_bins(&s)?,
            None => default_size_bins(),
        };
        // reject overlapping or malformed bins before anything is read
        peakforge::detection_metrics(&[], &[], &size_bins)?;
        Ok(EvalParams {
            detections: required(self.detections, "detections")?,
            scenes: required(self.scenes, "scenes")?,
            out: required(self.out, "out")?,
            max_distance,
            bins,
            size_bins,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CalibrateParams {
    pub detections: PathBuf,
    pub scenes: PathBuf,
    pub out: PathBuf,
    pub max_distance: f64,
    pub bins: usize,
}

impl CalibrateArgs {
    pub fn resolve(self) -> Result<CalibrateParams> {
        let max_distance = self.max_distance.unwrap_or(6.0);
        let bins = self.bins.unwrap_or(10);
        check_matching(max_distance, bins)?;
        Ok(CalibrateParams {
            detections: required(self.detections, "detections")?,
            scenes: required(self.scenes, "scenes")?,
            out: required(self.out, "out")?,
            max_distance,
            bins,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ReportParams {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
}

impl ReportArgs {
    pub fn resolve(self) -> Result<ReportParams> {
        let inputs = self.inputs.unwrap_or_default();
        ensure!(!inputs.is_empty(), "no eval outputs given");
        Ok(ReportParams {
            inputs,
            out: required(self.out, "out")?,
        })
    }
}
