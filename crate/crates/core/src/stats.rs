//! Pearson correlation and boxplot summaries of per-layer CKA scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Five-number summary plus Tukey whiskers for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub layer: usize,
    pub covariate_name: String,
    pub r: f64,
    pub n: usize,
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "pearson on {} vs {} values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "pearson needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("pearson on non-finite values".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let constant = |v: &[f64]| v.iter().all(|&e| e == v[0]);
    if sxx == 0.0 || syy == 0.0 || constant(x) || constant(y) {
        return Err(Error::DegenerateInput("pearson on a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Quantile by linear interpolation between order statistics at position
/// `(n - 1) p` of the sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("median of nothing".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, 0.5))
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("mean of nothing".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Boxplot statistics over `(task, value)` pairs with 1.5 IQR whiskers.
/// The `layer` field is left at 0; see [`boxplot_for_layer`].
pub fn boxplot_summary(values: &[(String, f64)]) -> Result<LayerProfile> {
    if values.is_empty() {
        return Err(Error::InvalidInput("boxplot of an empty sample".into()));
    }
    if values.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidInput("boxplot on non-finite values".into()));
    }
    // sort by value, then task, so the outlier list is order independent
    let mut items: Vec<(String, f64)> = values.to_vec();
    items.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let sorted: Vec<f64> = items.iter().map(|(_, v)| *v).collect();

    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;

    let inside: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| *v >= lo_fence && *v <= hi_fence)
        .collect();
    // the order statistic just below q1 (and above q3) is always in-fence
    let whisker_lo = inside[0];
    let whisker_hi = inside[inside.len() - 1];
    let outliers = items
        .into_iter()
        .filter(|(_, v)| *v < lo_fence || *v > hi_fence)
        .collect();

    Ok(LayerProfile {
        layer: 0,
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        whisker_lo,
        whisker_hi,
        outliers,
    })
}

pub fn boxplot_for_layer(layer: usize, values: &[(String, f64)]) -> Result<LayerProfile> {
    let mut p = boxplot_summary(values)?;
    p.layer = layer;
    Ok(p)
}

/// Pearson correlation between per-task CKA and a per-task covariate over
/// the tasks both maps share, taken in task-id order.
pub fn correlate_cka(
    layer: usize,
    cka_by_task: &BTreeMap<String, f64>,
    covariate_by_task: &BTreeMap<String, f64>,
    covariate_name: &str,
) -> Result<CorrelationResult> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = cka_by_task
        .iter()
        .filter_map(|(task, c)| covariate_by_task.get(task).map(|v| (*c, *v)))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "only {} tasks have both CKA and {covariate_name}",
            xs.len()
        )));
    }
    Ok(CorrelationResult {
        layer,
        covariate_name: covariate_name.to_string(),
        r: pearson(&xs, &ys)?,
        n: xs.len(),
    })
}
