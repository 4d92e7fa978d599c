//! Threshold-and-cluster baseline detector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{binary_entropy, DetectedLesion, FitStatus};
use crate::error::{param, Result};
use crate::volume::{Shape3, Volume};

/// How a connected component is reduced to one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcMode {
    /// Intensity-weighted centre of mass.
    CenterOfMass,
    /// Highest voxel (lowest linear index on ties).
    Maximum,
}

/// Labels voxels with value `> tau` into full-neighbourhood components.
///
/// Returns per-voxel labels (0 = background, components numbered from 1 in
/// order of their first voxel) and the component count.
pub fn label_components(field: &Volume, tau: f64) -> (Vec<u32>, usize) {
    let shape = field.shape();
    let data = field.data();
    let offsets = shape.neighbour_offsets();
    let mut labels = vec![0u32; data.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for seed in 0..data.len() {
        if labels[seed] != 0 || (data[seed] as f64) <= tau {
            continue;
        }
        next += 1;
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(u) = queue.pop_front() {
            let ui = shape.unravel(u);
            for &d in &offsets {
                if let Some(vi) = shape.offset(ui, d) {
                    let v = shape.linear(vi);
                    if labels[v] == 0 && (data[v] as f64) > tau {
                        labels[v] = next;
                        queue.push_back(v);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Binarizes `field` at `tau`, clusters and reduces each cluster to a point.
///
/// `alpha` is the clamped component mass; it is a diagnostic, not a calibrated
/// probability.
pub fn detect_connected_components(
    field: &Volume,
    tau: f64,
    mode: CcMode,
) -> Result<Vec<DetectedLesion>> {
    if !tau.is_finite() {
        return param(format!("threshold {tau} is not finite"));
    }
    if let Some(i) = field.data().iter().position(|v| !v.is_finite()) {
        return param(format!("field has a non-finite value at linear index {i}"));
    }
    let shape: Shape3 = field.shape();
    let (labels, count) = label_components(field, tau);

    struct Acc {
        mass: f64,
        weighted: [f64; 3],
        best: (usize, f32),
    }
    let mut acc: Vec<Acc> = (0..count)
        .map(|_| Acc {
            mass: 0.0,
            weighted: [0.0; 3],
            best: (usize::MAX, f32::MIN),
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let a = &mut acc[l as usize - 1];
        let v = field.data()[i];
        let x = shape.unravel(i);
        a.mass += v as f64;
        for ax in 0..3 {
            a.weighted[ax] += v as f64 * x[ax] as f64;
        }
        if v > a.best.1 {
            a.best = (i, v);
        }
    }

    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(iteration, a)| {
            let center = match mode {
                CcMode::Maximum => shape.unpad_index(shape.unravel(a.best.0)),
                CcMode::CenterOfMass => shape.unpad(a.weighted.map(|w| w / a.mass)),
            };
            let alpha = a.mass.clamp(0.0, 1.0);
            DetectedLesion {
                center,
                alpha,
                entropy_bits: binary_entropy(alpha),
                iteration,
                fit_residual: 0.0,
                initial_alpha: alpha,
                amplitude: a.mass,
                fit_status: FitStatus::Converged,
            }
        })
        .collect())
}
