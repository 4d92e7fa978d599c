//! Slow, independent reference computations for tests.
//!
//! Nothing here shares code with the `peakforge` crate: points are plain
//! `[f64; 3]` arrays and volumes are flat slices with explicit extents.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

/// Minimum total cost over all injective assignments of the smaller side.
pub fn brute_force_assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        return brute_force_assignment_cost(&t);
    }
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

/// Nelder-Mead minimisation with restarts from the incumbent.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    scale: &[f64],
    max_evals: usize,
    tol: f64,
) -> Vec<f64> {
    let n = start.len();
    let mut best = start.to_vec();
    let mut evals = 0;
    for restart in 0..8 {
        let shrink = 0.5f64.powi(restart);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let fb = f(&best);
        simplex.push((best.clone(), fb));
        for i in 0..n {
            let mut p = best.clone();
            p[i] += scale[i] * shrink;
            let fp = f(&p);
            simplex.push((p, fp));
        }
        evals += n + 1;
        loop {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
            let spread = simplex[n].1 - simplex[0].1;
            let size = (1..=n)
                .map(|k| {
                    simplex[k]
                        .0
                        .iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if (spread.abs() < tol * 1e-6 && size < tol) || evals > max_evals {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|d| simplex[..n].iter().map(|s| s.0[d]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..n)
                    .map(|d| centroid[d] + t * (simplex[n].0[d] - centroid[d]))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = f(&xe);
                evals += 1;
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let xc = if fr < simplex[n].1 {
                    along(-0.5)
                } else {
                    along(0.5)
                };
                let fc = f(&xc);
                evals += 1;
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x0 = simplex[0].0.clone();
                    for s in simplex.iter_mut().skip(1) {
                        for d in 0..n {
                            s.0[d] = x0[d] + 0.5 * (s.0[d] - x0[d]);
                        }
                        s.1 = f(&s.0);
                    }
                    evals += n;
                }
            }
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
        let improved = simplex[0].1 < fb - 1e-30;
        best = simplex[0].0.clone();
        if !improved || evals > max_evals {
            break;
        }
    }
    best
}

/// A scalar field sampled on a regular grid (row-major, last axis fastest).
pub struct Grid<'a> {
    pub dims: &'a [usize],
    pub values: &'a [f64],
}

impl Grid<'_> {
    pub fn index_of(&self, mut linear: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            out[a] = linear % self.dims[a];
            linear /= self.dims[a];
        }
        out
    }
}

fn density(x: &[f64], mu: &[f64], sigma: f64) -> f64 {
    let d = x.len() as f64;
    let r2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    (2.0 * PI * sigma * sigma).powf(-d / 2.0) * (-r2 / (2.0 * sigma * sigma)).exp()
}

/// Joint least-squares fit of `sum_k alpha_k N(mu_k, sigma^2 I)` to every
/// voxel within `reach` of any initial centre, all components at once.
///
/// `init` holds `(alpha, centre)` pairs; returns the fitted pairs in the same
/// order.
pub fn joint_mixture_fit(
    grid: &Grid,
    sigma: f64,
    init: &[(f64, Vec<f64>)],
    reach: f64,
) -> Vec<(f64, Vec<f64>)> {
    let nd = grid.dims.len();
    let mut samples: Vec<(Vec<f64>, f64)> = Vec::new();
    for (i, &v) in grid.values.iter().enumerate() {
        let x: Vec<f64> = grid.index_of(i).iter().map(|&c| c as f64).collect();
        let near = init.iter().any(|(_, c)| {
            x.iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                <= reach
        });
        if near {
            samples.push((x, v));
        }
    }
    let k = init.len();
    let stride = nd + 1;
    let objective = |p: &[f64]| -> f64 {
        samples
            .iter()
            .map(|(x, y)| {
                let model: f64 = (0..k)
                    .map(|c| {
                        p[c * stride] * density(x, &p[c * stride + 1..(c + 1) * stride], sigma)
                    })
                    .sum();
                (y - model).powi(2)
            })
            .sum()
    };
    let mut start = Vec::with_capacity(k * stride);
    let mut scale = Vec::with_capacity(k * stride);
    for (a, c) in init {
        start.push(*a);
        scale.push(0.05);
        start.extend_from_slice(c);
        scale.extend(std::iter::repeat_n(0.2, nd));
    }
    let best = nelder_mead(&objective, &start, &scale, 200_000, 1e-9);
    (0..k)
        .map(|c| {
            (
                best[c * stride],
                best[c * stride + 1..(c + 1) * stride].to_vec(),
            )
        })
        .collect()
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
    }
}

fn full_neighbours(dims: &[usize], idx: &[usize]) -> Vec<(Vec<usize>, f64)> {
    let nd = dims.len();
    let mut out = Vec::new();
    let total = 3usize.pow(nd as u32);
    for code in 0..total {
        let mut c = code;
        let mut n = Vec::with_capacity(nd);
        let mut len2 = 0.0;
        let mut ok = true;
        for a in 0..nd {
            let d = (c % 3) as isize - 1;
            c /= 3;
            len2 += (d * d) as f64;
            let v = idx[a] as isize + d;
            if v < 0 || v >= dims[a] as isize {
                ok = false;
            }
            n.push(v.max(0) as usize);
        }
        if ok && len2 > 0.0 {
            out.push((n, len2.sqrt()));
        }
    }
    out
}

fn linear(dims: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Dijkstra on the full-neighbourhood grid graph with edge cost
/// `step * (1 + lambda * |dI|)`.
pub fn dijkstra_geodesic(grid: &Grid, seeds: &[Vec<usize>], lambda: f64) -> Vec<f64> {
    let n = grid.values.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for s in seeds {
        let i = linear(grid.dims, s);
        dist[i] = 0.0;
        heap.push(HeapItem(0.0, i));
    }
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        let ui = grid.index_of(u);
        for (vi, step) in full_neighbours(grid.dims, &ui) {
            let v = linear(grid.dims, &vi);
            let w = step * (1.0 + lambda * (grid.values[v] - grid.values[u]).abs());
            if d + w < dist[v] {
                dist[v] = d + w;
                heap.push(HeapItem(d + w, v));
            }
        }
    }
    dist
}

/// Connected components of `values > tau` by repeated min-label relaxation
/// until a fixed point. Returns each component as a sorted list of linear
/// indices, ordered by smallest member.
pub fn relaxation_components(grid: &Grid, tau: f64) -> Vec<Vec<usize>> {
    let n = grid.values.len();
    let fg: Vec<bool> = grid.values.iter().map(|&v| v > tau).collect();
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for u in 0..n {
            if !fg[u] {
                continue;
            }
            for (vi, _) in full_neighbours(grid.dims, &grid.index_of(u)) {
                let v = linear(grid.dims, &vi);
                if fg[v] && label[v] < label[u] {
                    label[u] = label[v];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for u in 0..n {
        if fg[u] {
            groups.entry(label[u]).or_default().push(u);
        }
    }
    groups.into_values().collect()
}
