//! Damped Gauss-Newton (Levenberg-Marquardt) fit of `alpha * N(mu, sigma^2 I)`
//! with `sigma` held fixed.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::volume::{gaussian_peak, Shape3};

/// Solver settings for the per-window fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Converged once an accepted step moves no parameter by more than this.
    pub step_tolerance: f64,
    /// Upper clamp on the amplitude while iterating.
    pub alpha_max: f64,
    pub initial_damping: f64,
    /// Fit a constant window background alongside the component. The
    /// background is never subtracted from the working volume.
    pub background: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100,
            step_tolerance: 1e-6,
            alpha_max: 1.5,
            initial_damping: 1e-3,
            background: true,
        }
    }
}

/// Voxels of a clipped cubic window, copied out of the working buffer.
pub(crate) struct Window {
    pub positions: Vec<[f64; 3]>,
    pub values: Vec<f64>,
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Window {
    pub fn gather(work: &[f64], shape: Shape3, center: [usize; 3], radius: usize) -> Self {
        let bounds = shape.window(center, radius);
        let mut positions = Vec::new();
        let mut values = Vec::new();
        for i in bounds[0].0..=bounds[0].1 {
            for j in bounds[1].0..=bounds[1].1 {
                for k in bounds[2].0..=bounds[2].1 {
                    positions.push([i as f64, j as f64, k as f64]);
                    values.push(work[shape.linear([i, j, k])]);
                }
            }
        }
        Window {
            positions,
            values,
            lower: bounds.map(|b| b.0 as f64),
            upper: bounds.map(|b| b.1 as f64),
        }
    }

    /// Intersects the admissible centre box with `bounds`.
    pub fn restrict_centers(&mut self, bounds: &[(f64, f64); 3]) {
        for a in 0..3 {
            let (lo, hi) = bounds[a];
            self.lower[a] = self.lower[a].clamp(lo, hi);
            self.upper[a] = self.upper[a].clamp(lo, hi);
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

/// Per-axis centre bounds at least `margin` voxels from every face (the axis
/// midpoint when the axis is too short).
pub(crate) fn center_box(shape: Shape3, margin: f64) -> [(f64, f64); 3] {
    [0, 1, 2].map(|a| {
        let hi_edge = (shape.ext[a] - 1) as f64;
        if 2.0 * margin <= hi_edge {
            (margin, hi_edge - margin)
        } else {
            (hi_edge / 2.0, hi_edge / 2.0)
        }
    })
}

/// How a window fit terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    /// An accepted step fell below the step tolerance, or no descent step
    /// exists at working precision.
    Converged,
    /// The iteration budget ran out; the last iterate is kept.
    IterationLimit,
    /// The fit produced non-finite values; the initialization is kept.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FitOutcome {
    pub alpha: f64,
    pub mu: [f64; 3],
    /// Root-mean-square residual over the window.
    pub rms: f64,
    pub status: FitStatus,
}

type Params = SVector<f64, 5>;
type Normal = SMatrix<f64, 5, 5>;

/// Parameter vector layout: `[alpha, mu_0, mu_1, mu_2, background]`.
const BG: usize = 4;

struct Model {
    sigma: f64,
    norm: f64,
    first_axis: usize,
}

impl Model {
    #[inline]
    fn shape_at(&self, x: &[f64; 3], mu: &[f64; 3]) -> f64 {
        let mut d2 = 0.0;
        for a in self.first_axis..3 {
            let d = x[a] - mu[a];
            d2 += d * d;
        }
        self.norm * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    fn sse(&self, w: &Window, p: &Params) -> f64 {
        let mu = [p[1], p[2], p[3]];
        w.positions
            .iter()
            .zip(&w.values)
            .map(|(x, &y)| {
                let r = y - p[0] * self.shape_at(x, &mu) - p[BG];
                r * r
            })
            .sum()
    }

    /// Normal equations `(J^T J, J^T r)` at `p`.
    fn normal_equations(&self, w: &Window, p: &Params) -> (Normal, Params) {
        let mu = [p[1], p[2], p[3]];
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        let mut jtj = Normal::zeros();
        let mut jtr = Params::zeros();
        for (x, &y) in w.positions.iter().zip(&w.values) {
            let g = self.shape_at(x, &mu);
            let r = y - p[0] * g - p[BG];
            let mut row = Params::new(g, 0.0, 0.0, 0.0, 1.0);
            for a in self.first_axis..3 {
                row[a + 1] = p[0] * g * (x[a] - mu[a]) * inv_s2;
            }
            jtj += row * row.transpose();
            jtr += row * r;
        }
        (jtj, jtr)
    }
}

fn clamp_params(p: &mut Params, w: &Window, opts: &FitOptions) {
    p[0] = p[0].clamp(0.0, opts.alpha_max);
    for a in 0..3 {
        p[a + 1] = p[a + 1].clamp(w.lower[a], w.upper[a]);
    }
}

/// Fits amplitude and centre to the window, starting from `(alpha0, mu0)`.
///
/// Iterates until a step smaller than `step_tolerance` is accepted or the
/// iteration budget is spent. Every accepted step lowers the residual, so the
/// final iterate is never worse than the start.
pub(crate) fn fit_gaussian(
    w: &Window,
    alpha0: f64,
    mu0: [f64; 3],
    sigma: f64,
    shape: Shape3,
    opts: &FitOptions,
) -> FitOutcome {
    let model = Model {
        sigma,
        norm: gaussian_peak(sigma, shape.ndim),
        first_axis: shape.first_axis(),
    };
    let mut p = Params::new(alpha0, mu0[0], mu0[1], mu0[2], 0.0);
    clamp_params(&mut p, w, opts);
    let mut sse = model.sse(w, &p);
    let mut lambda = opts.initial_damping;
    let mut converged = false;

    if sse.is_finite() {
        'outer: for _ in 0..opts.max_iterations {
            let (jtj, jtr) = model.normal_equations(w, &p);
            let diag_floor = 1e-12 * jtj.diagonal().max().max(f64::MIN_POSITIVE);
            loop {
                let mut m = jtj;
                let mut rhs = jtr;
                for a in 0..5 {
                    let pinned = (a >= 1 && a < BG && a - 1 < model.first_axis)
                        || (a == BG && !opts.background);
                    if pinned {
                        for b in 0..5 {
                            m[(a, b)] = 0.0;
                            m[(b, a)] = 0.0;
                        }
                        m[(a, a)] = 1.0;
                        rhs[a] = 0.0;
                    } else {
                        m[(a, a)] += lambda * jtj[(a, a)].max(diag_floor);
                    }
                }
                let Some(step) = m.cholesky().map(|c| c.solve(&rhs)) else {
                    lambda *= 10.0;
                    if lambda > 1e12 {
                        converged = true;
                        break 'outer;
                    }
                    continue;
                };
                let mut candidate = p + step;
                clamp_params(&mut candidate, w, opts);
                let cand_sse = model.sse(w, &candidate);
                if cand_sse.is_finite() && cand_sse <= sse {
                    let moved = (candidate - p).amax();
                    p = candidate;
                    sse = cand_sse;
                    lambda = (lambda * 0.1).max(1e-12);
                    if moved < opts.step_tolerance {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e12 {
                    // no descent direction left at working precision
                    converged = true;
                    break 'outer;
                }
            }
        }
    }

    let status = if !(sse.is_finite() && p.iter().all(|v| v.is_finite())) {
        FitStatus::Failed
    } else if converged {
        FitStatus::Converged
    } else {
        FitStatus::IterationLimit
    };
    FitOutcome {
        alpha: p[0],
        mu: [p[1], p[2], p[3]],
        rms: (sse / w.values.len() as f64).sqrt(),
        status,
    }
}
