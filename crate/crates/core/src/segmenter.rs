//! Three-regime segmentation of a layer stack.
//!
//! Per-layer CKA summaries are fitted with a piecewise-constant model with
//! exactly two change points, giving contiguous shared, transition and
//! refinement ranges. This is a least-squares heuristic for the regime
//! boundaries, not a model-selection procedure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Layers are 1-based; each range is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub shared: [usize; 2],
    pub transition: [usize; 2],
    pub refinement: [usize; 2],
    /// Residual sum of squares of the fitted piecewise-constant model.
    pub fit_score: f64,
}

impl SegmentationResult {
    /// Last layer of the shared range.
    pub fn b1(&self) -> usize {
        self.shared[1]
    }

    /// Last layer of the transition range.
    pub fn b2(&self) -> usize {
        self.transition[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerStatistic {
    #[default]
    Median,
    Mean,
}

/// Residual sum of squares of `values` around their own mean, computed in
/// two passes. A segment of equal values costs exactly zero.
fn segment_cost(values: &[f64]) -> f64 {
    if values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// Optimal two-change-point piecewise-constant fit over all `(b1, b2)` with
/// `1 <= b1 < b2 < L`. Near-ties (within `1e-12` of the total variation)
/// go to the smallest `b1`, then the smallest `b2`.
pub fn segment_layers(values: &[f64]) -> Result<SegmentationResult> {
    let l = values.len();
    if l < 5 {
        return Err(Error::InvalidInput(format!(
            "segmentation needs at least 5 layers, got {l}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite layer value".into()));
    }

    // cost[a][b]: cost of the segment holding values[a..b]
    let mut cost = vec![vec![0.0; l + 1]; l + 1];
    for a in 0..l {
        for b in a + 1..=l {
            cost[a][b] = segment_cost(&values[a..b]);
        }
    }
    let tol = 1e-12 * cost[0][l];

    let mut best = (1, 2, f64::INFINITY);
    for b1 in 1..l - 1 {
        for b2 in b1 + 1..l {
            let fit = cost[0][b1] + cost[b1][b2] + cost[b2][l];
            if fit < best.2 - tol {
                best = (b1, b2, fit);
            }
        }
    }
    let (b1, b2, fit_score) = best;
    Ok(SegmentationResult {
        shared: [1, b1],
        transition: [b1 + 1, b2],
        refinement: [b2 + 1, l],
        fit_score,
    })
}

/// Reduces each layer's per-task scores to one statistic and segments the
/// resulting curve. `per_layer[k]` holds the scores of layer `k + 1`.
pub fn segment_from_cka(per_layer: &[Vec<f64>], statistic: LayerStatistic) -> Result<SegmentationResult> {
    let summary = per_layer
        .iter()
        .enumerate()
        .map(|(k, scores)| {
            if scores.is_empty() {
                return Err(Error::InvalidInput(format!("layer {} has no scores", k + 1)));
            }
            match statistic {
                LayerStatistic::Median => stats::median(scores),
                LayerStatistic::Mean => stats::mean(scores),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    segment_layers(&summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn planted() -> Vec<f64> {
        let mut v = vec![0.9; 9];
        v.extend(vec![0.98; 6]);
        v.extend(vec![0.95; 17]);
        v
    }

    fn brute_force(values: &[f64]) -> f64 {
        let l = values.len();
        let sse = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        let mut best = f64::INFINITY;
        for b1 in 1..l {
            for b2 in b1 + 1..l {
                best = best.min(sse(&values[..b1]) + sse(&values[b1..b2]) + sse(&values[b2..]));
            }
        }
        best
    }

    #[test]
    fn exact_piecewise_constant_recovery() {
        let r = segment_layers(&planted()).unwrap();
        assert_eq!((r.b1(), r.b2()), (9, 15));
        assert_eq!(r.fit_score, 0.0);
        assert_eq!(r.shared, [1, 9]);
        assert_eq!(r.transition, [10, 15]);
        assert_eq!(r.refinement, [16, 32]);
    }

    #[test]
    fn constant_signal_tie_break() {
        let r = segment_layers(&[0.7; 12]).unwrap();
        assert_eq!((r.b1(), r.b2(), r.fit_score), (1, 2, 0.0));
    }

    #[test]
    fn too_few_layers() {
        assert!(matches!(segment_layers(&[1.0; 4]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn noisy_planted_signal() {
        let noise = Normal::new(0.0, 0.005).unwrap();
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = planted().iter().map(|x| x + noise.sample(&mut rng)).collect();
            let r = segment_layers(&v).unwrap();
            if (r.b1(), r.b2()) == (9, 15) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn optimal_against_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for l in 5..=12 {
            for _ in 0..20 {
                let v: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..1.0)).collect();
                let r = segment_layers(&v).unwrap();
                assert!((r.fit_score - brute_force(&v)).abs() < 1e-12);
                assert_eq!(r.shared[0], 1);
                assert_eq!(r.transition[0], r.shared[1] + 1);
                assert_eq!(r.refinement[0], r.transition[1] + 1);
                assert_eq!(r.refinement[1], l);
            }
        }
    }

    #[test]
    fn shift_leaves_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let v: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
            let shifted: Vec<f64> = v.iter().map(|x| x + 3.25).collect();
            let a = segment_layers(&v).unwrap();
            let b = segment_layers(&shifted).unwrap();
            assert_eq!((a.b1(), a.b2()), (b.b1(), b.b2()));
        }
    }

    #[test]
    fn singleton_layers_delegate() {
        let per_layer: Vec<Vec<f64>> = planted().into_iter().map(|v| vec![v]).collect();
        assert_eq!(
            segment_from_cka(&per_layer, LayerStatistic::Median).unwrap(),
            segment_layers(&planted()).unwrap()
        );
    }

    #[test]
    fn median_shrugs_off_one_outlier_per_layer() {
        let noise = Normal::new(0.0, 0.005).unwrap();
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let per_layer: Vec<Vec<f64>> = planted()
                .iter()
                .map(|&level| {
                    let mut scores: Vec<f64> =
                        (0..15).map(|_| level + noise.sample(&mut rng)).collect();
                    scores.push(rng.random_range(0.0..0.3));
                    scores
                })
                .collect();
            let r = segment_from_cka(&per_layer, LayerStatistic::Median).unwrap();
            if (r.b1(), r.b2()) == (9, 15) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn empty_layer_is_invalid() {
        let mut per_layer: Vec<Vec<f64>> = planted().into_iter().map(|v| vec![v]).collect();
        per_layer[3].clear();
        assert!(matches!(
            segment_from_cka(&per_layer, LayerStatistic::Mean),
            Err(Error::InvalidInput(_))
        ));
    }
}
