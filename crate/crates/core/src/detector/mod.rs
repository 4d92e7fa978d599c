//! Lesion extraction from continuous heatmaps.
//!
//! [`detect_iterative`] decomposes a heatmap into Gaussian components one at a
//! time: take the global maximum of the working volume, fit
//! `alpha * N(mu, sigma^2 I)` in a window around it, subtract the fitted
//! component from the whole working volume and repeat. The fitted `alpha` is
//! the lesion existence probability. A backfitting pass then re-fits every
//! candidate that has close neighbours against the volume with all other
//! components removed, which resolves overlapping peaks.
//!
//! [`detect_connected_components`] is the threshold-and-cluster baseline.

mod components;
mod fit;

use serde::{Deserialize, Serialize};

pub use components::{detect_connected_components, label_components, CcMode};
pub use fit::{FitOptions, FitStatus};

use crate::error::{param, Result};
use crate::volume::{validate_sigma, GaussianProfile, GridPoint, Shape3, Volume};
use fit::{center_box, fit_gaussian, FitOutcome, Window};

/// Components are subtracted over `|x - mu| <= SUPPORT_SIGMAS * sigma` per
/// axis; the density beyond that is below 1e-31 of its peak.
const SUPPORT_SIGMAS: f64 = 12.0;

/// A fitted lesion candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedLesion {
    pub center: GridPoint,
    /// Existence probability, clamped to `[0, 1]`.
    pub alpha: f64,
    pub entropy_bits: f64,
    /// Extraction order index.
    pub iteration: usize,
    /// RMS residual in the fit window.
    pub fit_residual: f64,
    /// Window-sum estimate used to initialise the fit, clamped to `[0, 1]`.
    pub initial_alpha: f64,
    /// Normalizing constant actually subtracted from the working volume
    /// (before the `[0, 1]` output clamp).
    pub amplitude: f64,
    pub fit_status: FitStatus,
}

/// Settings for [`detect_iterative`].
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub sigma: f64,
    pub max_lesions: usize,
    /// Extraction stops once a fitted alpha falls below this.
    pub continue_threshold: f64,
    /// Candidates below this alpha are discarded from the output.
    pub filter_threshold: f64,
    pub window_radius: usize,
    /// Fitted centres are kept at least this many voxels from every face so
    /// each subtracted component lies inside the volume.
    pub boundary_margin: f64,
    pub fit: FitOptions,
    /// Maximum backfitting sweeps over the extracted candidates (0 disables).
    pub refine_sweeps: usize,
    /// Backfitting stops once no parameter moves by more than this in a sweep.
    pub refine_tolerance: f64,
    /// New centres closer than this to an accepted one end extraction.
    pub duplicate_distance: f64,
}

impl DetectorConfig {
    pub fn new(sigma: f64) -> Self {
        DetectorConfig {
            sigma,
            max_lesions: 50,
            continue_threshold: 0.01,
            filter_threshold: 0.1,
            window_radius: (3.0 * sigma).ceil().max(1.0) as usize,
            boundary_margin: 4.0 * sigma,
            fit: FitOptions::default(),
            refine_sweeps: 25,
            refine_tolerance: 1e-5,
            duplicate_distance: 1.0,
        }
    }

    pub fn with_filter_threshold(mut self, t: f64) -> Self {
        self.filter_threshold = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_sigma(self.sigma)?;
        if self.max_lesions == 0 {
            return param("max_lesions must be positive");
        }
        if self.window_radius == 0 {
            return param("window_radius must be positive");
        }
        let (c, f) = (self.continue_threshold, self.filter_threshold);
        // filter thresholds above 1 are allowed and simply reject everything
        if !(c.is_finite() && f.is_finite() && 0.0 <= c && c <= f) {
            return param(format!(
                "thresholds must satisfy 0 <= continue ({c}) <= filter ({f})"
            ));
        }
        if c > 1.0 {
            return param(format!("continue threshold {c} exceeds 1"));
        }
        let fo = &self.fit;
        if fo.max_iterations == 0 || !(fo.step_tolerance >= 0.0) || !(fo.alpha_max >= 1.0) {
            return param("invalid fit options");
        }
        if !(fo.initial_damping > 0.0) || !(self.refine_tolerance >= 0.0) {
            return param("invalid damping or refinement tolerance");
        }
        if !(self.boundary_margin >= 0.0 && self.boundary_margin.is_finite()) {
            return param("boundary margin must be finite and non-negative");
        }
        if !(self.duplicate_distance >= 0.0) {
            return param("duplicate distance must be non-negative");
        }
        Ok(())
    }
}

/// Binary entropy in bits; `alpha` must lie in `[0, 1]`.
pub fn lesion_entropy(alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return param(format!("alpha {alpha} outside [0, 1]"));
    }
    Ok(binary_entropy(alpha))
}

pub(crate) fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Everything [`detect_iterative`] computes before filtering.
#[derive(Debug, Clone)]
pub struct DetectionTrace {
    /// All extracted candidates in extraction order, unfiltered.
    pub candidates: Vec<DetectedLesion>,
    /// Working volume after all fitted components were subtracted.
    pub residual: Volume,
    pub input_mass: f64,
}

impl DetectionTrace {
    /// Applies the filtering step.
    pub fn filtered(&self, threshold: f64) -> Vec<DetectedLesion> {
        self.candidates
            .iter()
            .filter(|c| c.alpha >= threshold)
            .cloned()
            .collect()
    }
}

struct Candidate {
    mu: [f64; 3],
    amplitude: f64,
    initial_alpha: f64,
    rms: f64,
    status: FitStatus,
    iteration: usize,
}

struct Extractor<'a> {
    cfg: &'a DetectorConfig,
    shape: Shape3,
    work: Vec<f64>,
    bounds: [(f64, f64); 3],
}

impl Extractor<'_> {
    /// Largest working value over voxels inside the centre box; ties go to the
    /// lowest linear index.
    fn peak(&self) -> [usize; 3] {
        let r = self
            .bounds
            .map(|(lo, hi)| (lo.ceil() as usize, hi.floor() as usize));
        let mut best = ([r[0].0, r[1].0, r[2].0], f64::NEG_INFINITY);
        for i in r[0].0..=r[0].1 {
            for j in r[1].0..=r[1].1 {
                for k in r[2].0..=r[2].1 {
                    let v = self.work[self.shape.linear([i, j, k])];
                    if v > best.1 {
                        best = ([i, j, k], v);
                    }
                }
            }
        }
        best.0
    }

    fn apply(&mut self, mu: [f64; 3], amplitude: f64, sign: f64) {
        if amplitude != 0.0 {
            GaussianProfile::truncated(self.shape, mu, self.cfg.sigma, SUPPORT_SIGMAS)
                .add_scaled(&mut self.work, sign * amplitude);
        }
    }

    fn window_at(&self, mu: [f64; 3]) -> Window {
        let c = [0, 1, 2].map(|a| (mu[a].round().max(0.0) as usize).min(self.shape.ext[a] - 1));
        let mut w = Window::gather(&self.work, self.shape, c, self.cfg.window_radius);
        w.restrict_centers(&self.bounds);
        w
    }

    fn fit(&self, w: &Window, alpha0: f64, mu0: [f64; 3]) -> FitOutcome {
        fit_gaussian(w, alpha0, mu0, self.cfg.sigma, self.shape, &self.cfg.fit)
    }

    /// Steps (1)-(4): returns candidates in extraction order.
    fn extract(&mut self) -> Vec<Candidate> {
        let cfg = self.cfg;
        let mut out: Vec<Candidate> = Vec::new();
        for iteration in 0..cfg.max_lesions {
            let start = self.peak().map(|v| v as f64);
            let w = self.window_at(start);
            let window_sum = w.sum();
            let alpha0 = window_sum.clamp(0.0, cfg.fit.alpha_max);
            let mut fit = self.fit(&w, alpha0, start);
            if fit.status == FitStatus::Failed {
                fit = FitOutcome {
                    alpha: alpha0,
                    mu: [0, 1, 2].map(|a| start[a].clamp(w.lower[a], w.upper[a])),
                    rms: w.rms(),
                    status: FitStatus::Failed,
                };
            }
            if fit.alpha < cfg.continue_threshold {
                break;
            }
            if out
                .iter()
                .any(|c| dist(c.mu, fit.mu) < cfg.duplicate_distance)
            {
                break;
            }
            self.apply(fit.mu, fit.alpha, -1.0);
            out.push(Candidate {
                mu: fit.mu,
                amplitude: fit.alpha,
                initial_alpha: window_sum.clamp(0.0, 1.0),
                rms: fit.rms,
                status: fit.status,
                iteration,
            });
        }
        out
    }

    /// Re-fits candidate `k` against the working volume with its own
    /// contribution restored. Returns the largest parameter change.
    fn refit(&mut self, c: &mut Candidate) -> f64 {
        self.apply(c.mu, c.amplitude, 1.0);
        let w = self.window_at(c.mu);
        let fit = self.fit(&w, c.amplitude, c.mu);
        let mut change = 0.0;
        if fit.status != FitStatus::Failed {
            change = (fit.alpha - c.amplitude).abs();
            for a in 0..3 {
                change = f64::max(change, (fit.mu[a] - c.mu[a]).abs());
            }
            c.mu = fit.mu;
            c.amplitude = fit.alpha;
            c.rms = fit.rms;
            c.status = fit.status;
        }
        self.apply(c.mu, c.amplitude, -1.0);
        change
    }

    fn influence_radius(&self) -> f64 {
        self.cfg.window_radius as f64 * (self.shape.ndim as f64).sqrt() + 5.0 * self.cfg.sigma
    }

    /// Backfitting over candidates whose windows see other components.
    fn refine(&mut self, cands: &mut [Candidate]) {
        let reach = self.influence_radius();
        for _ in 0..self.cfg.refine_sweeps {
            let mut max_change: f64 = 0.0;
            for k in 0..cands.len() {
                let crowded =
                    (0..cands.len()).any(|j| j != k && dist(cands[j].mu, cands[k].mu) < reach);
                if !crowded {
                    continue;
                }
                let mut c = std::mem::replace(&mut cands[k], placeholder());
                max_change = max_change.max(self.refit(&mut c));
                cands[k] = c;
            }
            if max_change <= self.cfg.refine_tolerance {
                break;
            }
        }
    }

    /// Folds candidates that drifted onto an earlier one back into it.
    fn merge_duplicates(&mut self, cands: &mut Vec<Candidate>) {
        loop {
            let pair = (0..cands.len()).find_map(|i| {
                (i + 1..cands.len())
                    .find(|&j| dist(cands[i].mu, cands[j].mu) < self.cfg.duplicate_distance)
                    .map(|j| (i, j))
            });
            let Some((i, j)) = pair else { break };
            let dup = cands.remove(j);
            self.apply(dup.mu, dup.amplitude, 1.0);
            let mut c = std::mem::replace(&mut cands[i], placeholder());
            self.refit(&mut c);
            cands[i] = c;
        }
    }
}

fn placeholder() -> Candidate {
    Candidate {
        mu: [0.0; 3],
        amplitude: 0.0,
        initial_alpha: 0.0,
        rms: 0.0,
        status: FitStatus::Failed,
        iteration: 0,
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Runs extraction and refinement without the final filtering step.
pub fn detect_iterative_trace(heatmap: &Volume, cfg: &DetectorConfig) -> Result<DetectionTrace> {
    cfg.validate()?;
    if let Some(i) = heatmap.data().iter().position(|v| !v.is_finite()) {
        return param(format!(
            "heatmap has a non-finite value at linear index {i}"
        ));
    }
    let shape = heatmap.shape();
    let work = heatmap.to_f64();
    let input_mass = work.iter().sum();
    let bounds = center_box(shape, cfg.boundary_margin);
    let mut ex = Extractor {
        cfg,
        shape,
        work,
        bounds,
    };
    let mut cands = ex.extract();
    if cands.len() > 1 {
        ex.refine(&mut cands);
        ex.merge_duplicates(&mut cands);
    }
    let candidates = cands
        .into_iter()
        .map(|c| {
            let alpha = c.amplitude.clamp(0.0, 1.0);
            DetectedLesion {
                center: shape.unpad(c.mu),
                alpha,
                entropy_bits: binary_entropy(alpha),
                iteration: c.iteration,
                fit_residual: c.rms,
                initial_alpha: c.initial_alpha,
                amplitude: c.amplitude,
                fit_status: c.status,
            }
        })
        .collect();
    Ok(DetectionTrace {
        candidates,
        residual: Volume::from_f64(heatmap.dims(), &ex.work),
        input_mass,
    })
}

/// Iterative fit-and-subtract detection followed by filtering at
/// `cfg.filter_threshold`. The input is not modified.
pub fn detect_iterative(heatmap: &Volume, cfg: &DetectorConfig) -> Result<Vec<DetectedLesion>> {
    Ok(detect_iterative_trace(heatmap, cfg)?.filtered(cfg.filter_threshold))
}
