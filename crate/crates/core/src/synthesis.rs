//! Target construction from point annotations and seeded synthetic scenes.
//!
//! Targets come in three flavours: Gaussian heatmaps (a sum of unit-mass
//! isotropic densities), Euclidean distance maps and intensity-aware geodesic
//! distance maps. Both distance maps use the decay `exp(-d / p)`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::volume::{
    gaussian_peak, validate_dims, validate_sigma, GaussianProfile, GridPoint, Shape3, Volume,
};

/// A ground-truth lesion marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAnnotation {
    pub center: GridPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_voxels: Option<u32>,
}

impl PointAnnotation {
    pub fn new(center: impl Into<GridPoint>) -> Self {
        PointAnnotation {
            center: center.into(),
            size_voxels: None,
        }
    }

    pub fn with_size(mut self, size: u32) -> Self {
        self.size_voxels = Some(size);
        self
    }
}

fn check_points(points: &[PointAnnotation], dims: &[usize]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        let inside = p.center.ndim() == dims.len()
            && p.center
                .coords()
                .iter()
                .zip(dims)
                .all(|(&c, &n)| c.is_finite() && c >= 0.0 && c <= (n - 1) as f64);
        if !inside {
            return param(format!(
                "point {i} at {} lies outside extents {dims:?}",
                p.center
            ));
        }
        if p.size_voxels == Some(0) {
            return param(format!("point {i} has size 0"));
        }
    }
    Ok(())
}

fn validate_decay(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0) {
        return param(format!("decay parameter p must be positive, got {p}"));
    }
    Ok(())
}

/// Sum of one unit-mass Gaussian per annotation.
pub fn make_heatmap(points: &[PointAnnotation], sigma: f64, dims: &[usize]) -> Result<Volume> {
    validate_sigma(sigma)?;
    validate_dims(dims)?;
    check_points(points, dims)?;
    let shape = Shape3::new(dims);
    let mut buf = vec![0.0; shape.len()];
    for p in points {
        GaussianProfile::full(shape, shape.pad(&p.center), sigma).add_scaled(&mut buf, 1.0);
    }
    Ok(Volume::from_f64(dims, &buf))
}

/// `exp(-d(x) / p)` with `d` the Euclidean distance to the nearest annotation.
pub fn make_euclidean_map(points: &[PointAnnotation], p: f64, dims: &[usize]) -> Result<Volume> {
    validate_decay(p)?;
    validate_dims(dims)?;
    if points.is_empty() {
        return param("distance map needs at least one point");
    }
    check_points(points, dims)?;
    let shape = Shape3::new(dims);
    let centers: Vec<[f64; 3]> = points.iter().map(|a| shape.pad(&a.center)).collect();
    let buf: Vec<f64> = (0..shape.len())
        .map(|i| {
            let x = shape.unravel(i);
            let d2 = centers
                .iter()
                .map(|c| (0..3).map(|a| (x[a] as f64 - c[a]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            (-d2.sqrt() / p).exp()
        })
        .collect();
    Ok(Volume::from_f64(dims, &buf))
}

/// Shortest-path cost from the nearest annotation on the voxel adjacency graph.
///
/// Edges join each voxel to its full neighbourhood (8 in 2-D, 26 in 3-D) with
/// cost `step * (1 + lambda * |dI|)`, where `step` is the Euclidean length of
/// the offset. Annotations are snapped to their nearest voxel. Solved with a
/// FIFO label-correcting scheme.
pub fn geodesic_cost(
    points: &[PointAnnotation],
    intensity: &Volume,
    lambda_intensity: f64,
) -> Result<Vec<f64>> {
    if !(lambda_intensity.is_finite() && lambda_intensity >= 0.0) {
        return param(format!(
            "lambda must be non-negative, got {lambda_intensity}"
        ));
    }
    if points.is_empty() {
        return param("geodesic map needs at least one point");
    }
    check_points(points, intensity.dims())?;
    let shape = intensity.shape();
    let values = intensity.data();
    let offsets: Vec<([isize; 3], f64)> = shape
        .neighbour_offsets()
        .into_iter()
        .map(|d| {
            let step = d.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            (d, step)
        })
        .collect();

    let mut cost = vec![f64::INFINITY; shape.len()];
    let mut queued = vec![false; shape.len()];
    let mut queue = VecDeque::new();
    for p in points {
        let c = shape.pad(&p.center);
        let idx = shape.linear([
            c[0].round() as usize,
            c[1].round() as usize,
            c[2].round() as usize,
        ]);
        if cost[idx] != 0.0 {
            cost[idx] = 0.0;
            queued[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(u) = queue.pop_front() {
        queued[u] = false;
        let ui = shape.unravel(u);
        let cu = cost[u];
        let iu = values[u] as f64;
        for &(d, step) in &offsets {
            let Some(vi) = shape.offset(ui, d) else {
                continue;
            };
            let v = shape.linear(vi);
            let w = step * (1.0 + lambda_intensity * (values[v] as f64 - iu).abs());
            if cu + w < cost[v] {
                cost[v] = cu + w;
                if !queued[v] {
                    queued[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    Ok(cost)
}

/// `exp(-g(x) / p)` over the geodesic cost from [`geodesic_cost`].
pub fn make_geodesic_map(
    points: &[PointAnnotation],
    intensity: &Volume,
    p: f64,
    lambda_intensity: f64,
) -> Result<Volume> {
    validate_decay(p)?;
    let cost = geodesic_cost(points, intensity, lambda_intensity)?;
    let buf: Vec<f64> = cost.iter().map(|g| (-g / p).exp()).collect();
    Ok(Volume::from_f64(intensity.dims(), &buf))
}

/// One synthetic lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLesion {
    pub center: GridPoint,
    pub amplitude: f64,
    pub size_voxels: u32,
}

/// Synthetic ground truth for one volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub dims: Vec<usize>,
    pub lesions: Vec<SceneLesion>,
    pub sigma: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Scene {
    pub fn centers(&self) -> Vec<GridPoint> {
        self.lesions.iter().map(|l| l.center.clone()).collect()
    }

    pub fn annotations(&self) -> Vec<PointAnnotation> {
        self.lesions
            .iter()
            .map(|l| PointAnnotation::new(l.center.clone()).with_size(l.size_voxels))
            .collect()
    }

    /// Noiseless mixture `sum_k amplitude_k * N(center_k, sigma^2 I)`.
    pub fn render(&self) -> Result<Volume> {
        validate_dims(&self.dims)?;
        validate_sigma(self.sigma)?;
        let shape = Shape3::new(&self.dims);
        let mut buf = vec![0.0; shape.len()];
        for l in &self.lesions {
            GaussianProfile::full(shape, shape.pad(&l.center), self.sigma)
                .add_scaled(&mut buf, l.amplitude);
        }
        Ok(Volume::from_f64(&self.dims, &buf))
    }
}

/// Parameters of the random scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub dims: Vec<usize>,
    pub sigma: f64,
    /// Inclusive lesion count range.
    pub count: (usize, usize),
    /// Inclusive amplitude range, within (0, 1].
    pub amplitude: (f64, f64),
    /// Minimum pairwise centre distance in voxels.
    pub min_separation: f64,
    /// Standard deviation of the additive voxel noise (absolute units).
    pub noise_std: f64,
    /// Inclusive range of the size attribute.
    pub size_voxels: (u32, u32),
    /// Centre draws per lesion before a placement round is abandoned.
    pub max_attempts: usize,
    /// Placement rounds before generation fails.
    pub max_rounds: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            dims: vec![48, 48, 48],
            sigma: 1.0,
            count: (0, 5),
            amplitude: (0.05, 1.0),
            min_separation: 4.0,
            noise_std: 0.0,
            size_voxels: (3, 100),
            max_attempts: 1000,
            max_rounds: 50,
        }
    }
}

impl SceneConfig {
    /// Sets sigma and rescales the separation to the default `4 sigma`.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self.min_separation = 4.0 * sigma;
        self
    }

    /// Noise standard deviation as a fraction of the unit-mass peak value.
    pub fn with_noise_fraction(mut self, fraction: f64) -> Self {
        self.noise_std = fraction * gaussian_peak(self.sigma, self.dims.len());
        self
    }

    /// Distance kept between lesion centres and the grid faces.
    pub fn margin(&self) -> f64 {
        5.0 * self.sigma
    }

    pub fn validate(&self) -> Result<()> {
        validate_dims(&self.dims)?;
        validate_sigma(self.sigma)?;
        if self.count.0 > self.count.1 {
            return param(format!("count range {:?} is empty", self.count));
        }
        let (lo, hi) = self.amplitude;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return param(format!(
                "amplitude range {:?} must lie in (0, 1]",
                self.amplitude
            ));
        }
        if !(self.min_separation.is_finite() && self.min_separation >= 0.0) {
            return param(format!(
                "invalid minimum separation {}",
                self.min_separation
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return param(format!("invalid noise std {}", self.noise_std));
        }
        let (smin, smax) = self.size_voxels;
        if smin == 0 || smin > smax {
            return param(format!(
                "size range {:?} must be positive and ordered",
                self.size_voxels
            ));
        }
        if self.max_attempts == 0 || self.max_rounds == 0 {
            return param("max_attempts and max_rounds must be positive");
        }
        Ok(())
    }
}

/// Mixes a base seed with an index into a well-spread per-item seed (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn place_centers(cfg: &SceneConfig, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GridPoint>> {
    let margin = cfg.margin();
    let bounds: Vec<(f64, f64)> = cfg
        .dims
        .iter()
        .map(|&n| (margin, (n - 1) as f64 - margin))
        .collect();
    if count > 0 && bounds.iter().any(|(lo, hi)| lo > hi) {
        return Err(Error::Generation(format!(
            "extents {:?} leave no room for a {margin}-voxel boundary margin",
            cfg.dims
        )));
    }
    'round: for _ in 0..cfg.max_rounds {
        let mut centers: Vec<GridPoint> = Vec::with_capacity(count);
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..cfg.max_attempts {
                let c = GridPoint::new(
                    bounds
                        .iter()
                        .map(|&(lo, hi)| {
                            if lo == hi {
                                lo
                            } else {
                                rng.random_range(lo..=hi)
                            }
                        })
                        .collect(),
                );
                if centers.iter().all(|o| o.distance(&c) >= cfg.min_separation) {
                    centers.push(c);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'round;
            }
        }
        return Ok(centers);
    }
    Err(Error::Generation(format!(
        "could not place {count} lesions with separation {} in {:?} after {} rounds",
        cfg.min_separation, cfg.dims, cfg.max_rounds
    )))
}

/// Draws a random scene and its volume; fully determined by `seed`.
///
/// The volume is the noiseless mixture plus i.i.d. zero-mean Gaussian voxel
/// noise, clamped at zero.
pub fn sample_scene(cfg: &SceneConfig, seed: u64) -> Result<(Scene, Volume)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(cfg.count.0..=cfg.count.1);
    let centers = place_centers(cfg, count, &mut rng)?;
    let lesions: Vec<SceneLesion> = centers
        .into_iter()
        .map(|center| {
            let (lo, hi) = cfg.amplitude;
            let amplitude = if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            };
            let size_voxels = rng.random_range(cfg.size_voxels.0..=cfg.size_voxels.1);
            SceneLesion {
                center,
                amplitude,
                size_voxels,
            }
        })
        .collect();
    let scene = Scene {
        dims: cfg.dims.clone(),
        lesions,
        sigma: cfg.sigma,
        noise_std: cfg.noise_std,
        seed,
    };

    let shape = Shape3::new(&cfg.dims);
    let mut buf = vec![0.0; shape.len()];
    for l in &scene.lesions {
        GaussianProfile::full(shape, shape.pad(&l.center), cfg.sigma)
            .add_scaled(&mut buf, l.amplitude);
    }
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std)
            .map_err(|e| Error::Parameter(format!("noise distribution: {e}")))?;
        for v in buf.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).max(0.0);
        }
    }
    Ok((scene, Volume::from_f64(&cfg.dims, &buf)))
}
