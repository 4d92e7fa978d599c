//! Dense 2-D/3-D scalar grids and the isotropic Gaussian density sampled on them.
//!
//! Volumes are stored row-major (last axis fastest) as `f32`. Internally every
//! grid is treated as 3-D: a 2-D grid of extents `[h, w]` is addressed as
//! `[1, h, w]`, which lets neighbourhood and separable-sampling loops share a
//! single code path.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// A real-valued grid position in voxel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridPoint(Vec<f64>);

impl GridPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        GridPoint(coords)
    }

    pub fn from_index(index: &[usize]) -> Self {
        GridPoint(index.iter().map(|&i| i as f64).collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    /// Euclidean distance. Both points must have the same dimensionality.
    pub fn distance(&self, other: &GridPoint) -> f64 {
        assert_eq!(self.ndim(), other.ndim(), "dimensionality mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest per-axis absolute difference.
    pub fn chebyshev(&self, other: &GridPoint) -> f64 {
        assert_eq!(self.ndim(), other.ndim(), "dimensionality mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn translated(&self, offset: &[f64]) -> GridPoint {
        GridPoint(self.0.iter().zip(offset).map(|(a, b)| a + b).collect())
    }
}

impl<const N: usize> From<[f64; N]> for GridPoint {
    fn from(c: [f64; N]) -> Self {
        GridPoint(c.to_vec())
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Checks that `dims` describes a 2-D or 3-D grid with non-empty axes.
pub fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() != 2 && dims.len() != 3 {
        return param(format!("expected 2 or 3 axes, got {}", dims.len()));
    }
    if dims.contains(&0) {
        return param(format!("all extents must be >= 1, got {dims:?}"));
    }
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return param(format!("extent exceeds u32 range in {dims:?}"));
    }
    Ok(())
}

pub(crate) fn validate_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return param(format!("sigma must be positive and finite, got {sigma}"));
    }
    Ok(())
}

/// A dense scalar field over a 2-D or 3-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(Volume {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        })
    }

    /// Wraps row-major data. Fails on length mismatch or non-finite values.
    pub fn from_data(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        validate_dims(dims)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return param(format!(
                "data length {} does not match extents {dims:?} ({expected})",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return param(format!("non-finite value {} at linear index {i}", data[i]));
        }
        Ok(Volume {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Narrows an `f64` buffer; callers guarantee finiteness and length.
    pub(crate) fn from_f64(dims: &[usize], data: &[f64]) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Volume {
            dims: dims.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row-major linear index of an in-bounds voxel.
    pub fn linear_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dims.len() {
            return None;
        }
        let mut linear = 0;
        for (&i, &n) in index.iter().zip(&self.dims) {
            if i >= n {
                return None;
            }
            linear = linear * n + i;
        }
        Some(linear)
    }

    pub fn unravel(&self, mut linear: usize) -> Vec<usize> {
        let mut index = vec![0; self.dims.len()];
        for axis in (0..self.dims.len()).rev() {
            index[axis] = linear % self.dims[axis];
            linear /= self.dims[axis];
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> Option<f32> {
        self.linear_index(index).map(|i| self.data[i])
    }

    /// Sum of all voxel values, accumulated in `f64`.
    pub fn mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// True if `p` lies within `[0, n - 1]` along every axis.
    pub fn contains(&self, p: &GridPoint) -> bool {
        p.ndim() == self.ndim()
            && p.coords()
                .iter()
                .zip(&self.dims)
                .all(|(&c, &n)| c.is_finite() && c >= 0.0 && c <= (n - 1) as f64)
    }

    pub(crate) fn shape(&self) -> Shape3 {
        Shape3::new(&self.dims)
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Extents padded to three axes with leading singleton axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape3 {
    pub ext: [usize; 3],
    pub ndim: usize,
}

impl Shape3 {
    pub fn new(dims: &[usize]) -> Self {
        let ndim = dims.len();
        let mut ext = [1; 3];
        ext[3 - ndim..].copy_from_slice(dims);
        Shape3 { ext, ndim }
    }

    pub fn len(&self) -> usize {
        self.ext.iter().product()
    }

    /// First padded axis that corresponds to a real axis.
    pub fn first_axis(&self) -> usize {
        3 - self.ndim
    }

    #[inline]
    pub fn linear(&self, i: [usize; 3]) -> usize {
        (i[0] * self.ext[1] + i[1]) * self.ext[2] + i[2]
    }

    #[inline]
    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let k = linear % self.ext[2];
        let rest = linear / self.ext[2];
        [rest / self.ext[1], rest % self.ext[1], k]
    }

    pub fn pad(&self, p: &GridPoint) -> [f64; 3] {
        let mut out = [0.0; 3];
        out[self.first_axis()..].copy_from_slice(p.coords());
        out
    }

    pub fn unpad(&self, p: [f64; 3]) -> GridPoint {
        GridPoint::new(p[self.first_axis()..].to_vec())
    }

    pub fn unpad_index(&self, i: [usize; 3]) -> GridPoint {
        GridPoint::new(i[self.first_axis()..].iter().map(|&v| v as f64).collect())
    }

    /// Inclusive per-axis index box of radius `r` around `center`, clipped to the grid.
    pub fn window(&self, center: [usize; 3], r: usize) -> [(usize, usize); 3] {
        let mut b = [(0, 0); 3];
        for a in 0..3 {
            b[a] = (
                center[a].saturating_sub(r),
                (center[a] + r).min(self.ext[a] - 1),
            );
        }
        b
    }

    /// Offsets of the full (8- or 26-) neighbourhood, restricted to real axes.
    pub fn neighbour_offsets(&self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        let lo = |a: usize| if a < self.first_axis() { 0 } else { -1 };
        for d0 in lo(0)..=-lo(0) {
            for d1 in lo(1)..=-lo(1) {
                for d2 in -1..=1 {
                    if (d0, d1, d2) != (0, 0, 0) {
                        out.push([d0, d1, d2]);
                    }
                }
            }
        }
        out
    }

    #[inline]
    pub fn offset(&self, i: [usize; 3], d: [isize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let v = i[a] as isize + d[a];
            if v < 0 || v >= self.ext[a] as isize {
                return None;
            }
            out[a] = v as usize;
        }
        Some(out)
    }
}

/// Peak value `(2 pi sigma^2)^(-d/2)` of the unit-mass isotropic normal density.
pub fn gaussian_peak(sigma: f64, ndim: usize) -> f64 {
    (2.0 * PI * sigma * sigma).powf(-(ndim as f64) / 2.0)
}

/// Separable evaluation of `N(center, sigma^2 I)` on a grid.
///
/// Each axis stores its 1-D factor `exp(-(x - c)^2 / (2 sigma^2))` over an
/// index range; voxels outside the ranges are treated as zero.
pub(crate) struct GaussianProfile {
    factors: [Vec<f64>; 3],
    start: [usize; 3],
    norm: f64,
    shape: Shape3,
}

impl GaussianProfile {
    /// Profile covering the whole grid.
    pub fn full(shape: Shape3, center: [f64; 3], sigma: f64) -> Self {
        Self::build(shape, center, sigma, None)
    }

    /// Profile truncated to `|x - c| <= cutoff * sigma` per axis.
    pub fn truncated(shape: Shape3, center: [f64; 3], sigma: f64, cutoff: f64) -> Self {
        Self::build(shape, center, sigma, Some(cutoff * sigma))
    }

    fn build(shape: Shape3, center: [f64; 3], sigma: f64, reach: Option<f64>) -> Self {
        let inv = 1.0 / (2.0 * sigma * sigma);
        let mut factors: [Vec<f64>; 3] = Default::default();
        let mut start = [0; 3];
        for a in 0..3 {
            if a < shape.first_axis() {
                factors[a] = vec![1.0];
                continue;
            }
            let n = shape.ext[a];
            let (lo, hi) = match reach {
                None => (0, n - 1),
                Some(r) => {
                    let lo = (center[a] - r).ceil().max(0.0);
                    let hi = (center[a] + r).floor().min((n - 1) as f64);
                    if lo > hi {
                        (1, 0)
                    } else {
                        (lo as usize, hi as usize)
                    }
                }
            };
            start[a] = lo;
            factors[a] = (lo..=hi)
                .map(|i| {
                    let d = i as f64 - center[a];
                    (-d * d * inv).exp()
                })
                .collect();
        }
        GaussianProfile {
            factors,
            start,
            norm: gaussian_peak(sigma, shape.ndim),
            shape,
        }
    }

    /// Calls `f(linear_index, density)` for every covered voxel.
    pub fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        let [f0, f1, f2] = &self.factors;
        for (i0, &a) in f0.iter().enumerate() {
            let an = a * self.norm;
            for (i1, &b) in f1.iter().enumerate() {
                let ab = an * b;
                let row =
                    self.shape
                        .linear([self.start[0] + i0, self.start[1] + i1, self.start[2]]);
                for (i2, &c) in f2.iter().enumerate() {
                    f(row + i2, ab * c);
                }
            }
        }
    }

    /// `buf[x] += scale * density(x)` over the covered voxels.
    pub fn add_scaled(&self, buf: &mut [f64], scale: f64) {
        self.for_each(|i, v| buf[i] += scale * v);
    }

    /// Sum of the density over the covered voxels.
    #[cfg(test)]
    pub fn mass(&self) -> f64 {
        self.norm
            * self
                .factors
                .iter()
                .map(|f| f.iter().sum::<f64>())
                .product::<f64>()
    }
}

/// Samples the isotropic normal density `N(center, sigma^2 I)` at every voxel
/// centre. No discrete renormalization is applied, so the voxel sum equals 1
/// only up to boundary truncation.
pub fn sample_isotropic_gaussian(center: &GridPoint, sigma: f64, dims: &[usize]) -> Result<Volume> {
    validate_sigma(sigma)?;
    validate_dims(dims)?;
    if center.ndim() != dims.len() {
        return param(format!(
            "center has {} coordinates but grid has {} axes",
            center.ndim(),
            dims.len()
        ));
    }
    if center.coords().iter().any(|c| !c.is_finite()) {
        return param(format!("center {center} is not finite"));
    }
    let shape = Shape3::new(dims);
    let mut buf = vec![0.0; shape.len()];
    GaussianProfile::full(shape, shape.pad(center), sigma).add_scaled(&mut buf, 1.0);
    Ok(Volume::from_f64(dims, &buf))
}

/// Location and value of the largest voxel; ties go to the lowest linear index.
pub fn global_argmax(v: &Volume) -> (GridPoint, f32) {
    assert!(!v.is_empty(), "global_argmax of an empty volume");
    let (best, value) =
        v.data().iter().enumerate().fold(
            (0, v.data()[0]),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        );
    (GridPoint::from_index(&v.unravel(best)), value)
}
