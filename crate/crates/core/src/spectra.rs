//! Principal-component dimensionality: how many directions carry a given
//! share of the variance in an activation matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Singular values below this fraction of the largest count as zero.
const RANK_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub task: String,
    pub layer: usize,
    pub dims_required: usize,
    pub threshold: f64,
    pub total_rank: usize,
}

impl VarianceProfile {
    pub fn compute(task: impl Into<String>, layer: usize, x: &DenseMatrix, threshold: f64) -> Result<Self> {
        let spectrum = centered_spectrum(x)?;
        Ok(Self {
            task: task.into(),
            layer,
            dims_required: dims_from_spectrum(&spectrum, threshold)?,
            threshold,
            total_rank: spectrum.len(),
        })
    }
}

/// Singular values of the column-centered matrix, descending, with values
/// under the numerical rank cutoff dropped.
pub fn centered_spectrum(x: &DenseMatrix) -> Result<Vec<f64>> {
    if x.rows() < 2 {
        return Err(Error::InvalidInput("variance needs at least two rows".into()));
    }
    let centered = x.column_centered().to_nalgebra();
    let mut sv: Vec<f64> = centered.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::DegenerateInput(
            "all rows identical; no variance to explain".into(),
        ));
    }
    sv.retain(|&s| s >= RANK_CUTOFF * top);
    Ok(sv)
}

fn dims_from_spectrum(spectrum: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    let energies: Vec<f64> = spectrum.iter().map(|s| s * s).collect();
    let total: f64 = energies.iter().sum();
    let mut acc = 0.0;
    for (k, e) in energies.iter().enumerate() {
        acc += e;
        if acc / total >= threshold {
            return Ok(k + 1);
        }
    }
    Ok(energies.len())
}

/// Smallest number of principal components whose squared singular values
/// reach `threshold` of the total, after centering each column.
pub fn dims_for_variance(x: &DenseMatrix, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    dims_from_spectrum(&centered_spectrum(x)?, threshold)
}

/// Average `dims_required` over the profiles at `layer`.
pub fn mean_dims_across_tasks(profiles: &[VarianceProfile], layer: usize) -> Result<f64> {
    let at_layer: Vec<usize> = profiles
        .iter()
        .filter(|p| p.layer == layer)
        .map(|p| p.dims_required)
        .collect();
    if at_layer.is_empty() {
        return Err(Error::InvalidInput(format!("no profiles at layer {layer}")));
    }
    Ok(at_layer.iter().sum::<usize>() as f64 / at_layer.len() as f64)
}
