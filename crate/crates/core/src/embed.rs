//! Exact t-SNE for plotting task clusters at a given layer.
//!
//! Affinities come from a per-point bandwidth search matching the requested
//! perplexity; the layout minimizes KL(P || Q) under a Student-t kernel with
//! momentum, per-coordinate gains and early exaggeration. Every reduction
//! runs in a fixed order, so a seed fully determines the output no matter
//! how many threads the rayon pool has.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram_linear, DenseMatrix};

const MAX_SEARCH_STEPS: usize = 100;
/// Bandwidth search stops once |H - ln(perplexity)| drops below this (nats).
const ENTROPY_TOL: f64 = 1e-9;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub output_dims: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
    /// Larger inputs are subsampled, stratified by label, down to this many points.
    pub max_points: usize,
    /// Record KL every this many iterations (0 disables the trace).
    pub kl_every: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            output_dims: 2,
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
            max_points: 2000,
            kl_every: 50,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::InvalidInput(format!("t-SNE needs at least 4 points, got {n}")));
        }
        if !(self.perplexity > 1.0) {
            return Err(Error::InvalidInput(format!(
                "perplexity {} must exceed 1",
                self.perplexity
            )));
        }
        if self.perplexity >= (n as f64 - 1.0) / 3.0 {
            return Err(Error::InvalidInput(format!(
                "perplexity {} too large for {n} points (must be below {})",
                self.perplexity,
                (n as f64 - 1.0) / 3.0
            )));
        }
        if self.output_dims == 0 || !(self.learning_rate > 0.0) || !(self.exaggeration > 0.0) {
            return Err(Error::InvalidInput(
                "output_dims, learning_rate and exaggeration must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `n x output_dims` coordinates.
    pub points: DenseMatrix,
    /// Label of each embedded row; empty when embedding unlabelled data.
    pub labels: Vec<String>,
    /// Rows of the original input that were embedded, ascending.
    pub indices: Vec<usize>,
    /// KL right after early exaggeration ends.
    pub post_exaggeration_kl: f64,
    pub final_kl: f64,
    pub kl_trace: Vec<(usize, f64)>,
}

/// Row-stochastic conditional affinities `p(j|i)` and the Gaussian
/// precisions found for each row.
#[derive(Debug, Clone)]
pub struct ConditionalAffinities {
    pub n: usize,
    pub p: Vec<f64>,
    pub betas: Vec<f64>,
}

fn squared_distances(x: &DenseMatrix) -> Result<Vec<f64>> {
    let n = x.rows();
    let k = gram_linear(x)?;
    let norms: Vec<f64> = (0..n).map(|i| k.get(i, i)).collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = (norms[i] + norms[j] - 2.0 * k.get(i, j)).max(0.0);
            }
        }
    }
    Ok(d)
}

/// Entropy (nats) and normalized weights of `exp(-beta * s)`.
fn row_distribution(shifted: &[f64], beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut ws = 0.0;
    for (o, &s) in out.iter_mut().zip(shifted) {
        let w = (-beta * s).exp();
        *o = w;
        z += w;
        ws += w * s;
    }
    out.iter_mut().for_each(|o| *o /= z);
    z.ln() + beta * ws / z
}

fn calibrate_row(i: usize, dists: &[f64], perplexity: f64) -> Result<(Vec<f64>, f64)> {
    let others: Vec<f64> = dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect();
    let dmin = others.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = others.iter().map(|v| v - dmin).collect();
    let spread = shifted.iter().copied().fold(0.0, f64::max);
    let m = others.len();
    let mut probs = vec![0.0; m];

    if spread == 0.0 {
        if dmin == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "point {i} coincides with every other point"
            )));
        }
        // equidistant neighbours: uniform is the only possible row
        probs.fill(1.0 / m as f64);
        return Ok((expand_row(i, &probs), 0.0));
    }

    let target = perplexity.ln();
    let mut beta = m as f64 / shifted.iter().sum::<f64>();
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..MAX_SEARCH_STEPS {
        let h = row_distribution(&shifted, beta, &mut probs);
        let diff = h - target;
        if diff.abs() < ENTROPY_TOL {
            return Ok((expand_row(i, &probs), beta));
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    Err(Error::NumericalInstability(format!(
        "bandwidth search for point {i} did not reach perplexity {perplexity} in {MAX_SEARCH_STEPS} steps"
    )))
}

fn expand_row(i: usize, probs: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(probs.len() + 1);
    row.extend_from_slice(&probs[..i]);
    row.push(0.0);
    row.extend_from_slice(&probs[i..]);
    row
}

/// Per-row bandwidth search so each conditional distribution has
/// perplexity `2^H` equal to `perplexity`.
pub fn conditional_affinities(x: &DenseMatrix, perplexity: f64) -> Result<ConditionalAffinities> {
    let n = x.rows();
    if n < 4 {
        return Err(Error::InvalidInput(format!("need at least 4 points, got {n}")));
    }
    if !(perplexity > 1.0) || perplexity > (n - 1) as f64 {
        return Err(Error::InvalidInput(format!(
            "perplexity {perplexity} not in (1, {}]",
            n - 1
        )));
    }
    let d = squared_distances(x)?;
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(i, &d[i * n..(i + 1) * n], perplexity))
        .collect::<Result<_>>()?;
    let mut p = Vec::with_capacity(n * n);
    let mut betas = Vec::with_capacity(n);
    for (row, beta) in rows {
        p.extend_from_slice(&row);
        betas.push(beta);
    }
    Ok(ConditionalAffinities { n, p, betas })
}

/// Symmetric joint affinities `(p(j|i) + p(i|j)) / 2n`, row-major `n x n`.
pub fn perplexity_affinities(x: &DenseMatrix, perplexity: f64) -> Result<Vec<f64>> {
    let cond = conditional_affinities(x, perplexity)?;
    let n = cond.n;
    let scale = 1.0 / (2.0 * n as f64);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = (cond.p[i * n + j] + cond.p[j * n + i]) * scale;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    Ok(p)
}

/// Student-t kernel weights `1 / (1 + |yi - yj|²)` (zero diagonal) and
/// their total.
fn student_weights(y: &[f64], n: usize, dims: usize, w: &mut [f64]) -> f64 {
    let row_sums: Vec<f64> = w
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let yi = &y[i * dims..(i + 1) * dims];
            let mut s = 0.0;
            for (j, wij) in row.iter_mut().enumerate() {
                if i == j {
                    *wij = 0.0;
                    continue;
                }
                let yj = &y[j * dims..(j + 1) * dims];
                let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                *wij = 1.0 / (1.0 + d2);
                s += *wij;
            }
            s
        })
        .collect();
    row_sums.iter().sum()
}

fn kl_divergence(p: &[f64], w: &[f64], z: f64, n: usize) -> f64 {
    let row_kl: Vec<f64> = p
        .par_chunks(n)
        .zip(w.par_chunks(n))
        .map(|(pr, wr)| {
            pr.iter()
                .zip(wr)
                .filter(|(&pij, _)| pij > 0.0)
                .map(|(&pij, &wij)| pij * (pij / (wij / z).max(f64::MIN_POSITIVE)).ln())
                .sum::<f64>()
        })
        .collect();
    row_kl.iter().sum()
}

fn initial_layout(n: usize, dims: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    (0..n * dims).map(|_| normal.sample(&mut rng)).collect()
}

/// Embeds the rows of `x` with exact t-SNE.
pub fn tsne(x: &DenseMatrix, cfg: &TsneConfig) -> Result<Embedding> {
    tsne_from(x, cfg, None)
}

/// Like [`tsne`] but starting from a caller supplied `n x output_dims` layout.
pub fn tsne_from(x: &DenseMatrix, cfg: &TsneConfig, init: Option<&DenseMatrix>) -> Result<Embedding> {
    let n = x.rows();
    cfg.validate(n)?;
    let dims = cfg.output_dims;
    let mut y = match init {
        Some(m) if m.rows() == n && m.cols() == dims => m.data().to_vec(),
        Some(m) => {
            return Err(Error::ShapeMismatch(format!(
                "initial layout is {}x{}, expected {n}x{dims}",
                m.rows(),
                m.cols()
            )))
        }
        None => initial_layout(n, dims, cfg.seed),
    };
    let p = perplexity_affinities(x, cfg.perplexity)?;

    let mut w = vec![0.0; n * n];
    let mut grad = vec![0.0; n * dims];
    let mut update = vec![0.0; n * dims];
    let mut gains = vec![1.0_f64; n * dims];
    let mut kl_trace = Vec::new();
    let mut post_exaggeration_kl = None;

    for it in 0..cfg.iterations {
        let z = student_weights(&y, n, dims, &mut w);
        if it == cfg.exaggeration_iters {
            post_exaggeration_kl = Some(kl_divergence(&p, &w, z, n));
        }
        if cfg.kl_every > 0 && it % cfg.kl_every == 0 {
            kl_trace.push((it, kl_divergence(&p, &w, z, n)));
        }

        let exaggeration = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        // The KL gradient without its constant factor of 4, which the
        // default learning rate assumes.
        let (p_ref, w_ref, y_ref) = (&p, &w, &y);
        grad.par_chunks_mut(dims).enumerate().for_each(|(i, gi)| {
            gi.fill(0.0);
            let yi = &y_ref[i * dims..(i + 1) * dims];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let wij = w_ref[i * n + j];
                let mult = (exaggeration * p_ref[i * n + j] - wij / z) * wij;
                let yj = &y_ref[j * dims..(j + 1) * dims];
                for ((g, a), b) in gi.iter_mut().zip(yi).zip(yj) {
                    *g += mult * (a - b);
                }
            }
        });
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalInstability(format!(
                "non-finite t-SNE gradient at iteration {it}"
            )));
        }

        let momentum = if it < cfg.momentum_switch {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(MIN_GAIN)
            };
            *u = momentum * *u - cfg.learning_rate * *gain * g;
        }
        for (v, u) in y.iter_mut().zip(&update) {
            *v += u;
        }
        for c in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * dims + c] -= mean);
        }
    }

    let z = student_weights(&y, n, dims, &mut w);
    let final_kl = kl_divergence(&p, &w, z, n);
    if cfg.kl_every > 0 {
        kl_trace.push((cfg.iterations, final_kl));
    }
    let points = DenseMatrix::from_vec(n, dims, y).map_err(|_| {
        Error::NumericalInstability("t-SNE layout diverged to non-finite values".into())
    })?;
    Ok(Embedding {
        points,
        labels: Vec::new(),
        indices: (0..n).collect(),
        post_exaggeration_kl: post_exaggeration_kl.unwrap_or(final_kl),
        final_kl,
        kl_trace,
    })
}

/// Picks at most `cap` row indices, allocating to each label in proportion
/// to its size (largest remainder) and sampling within a label with a
/// seeded shuffle. Returned indices are ascending.
pub fn stratified_subsample(labels: &[String], cap: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if n <= cap {
        return (0..n).collect();
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let mut quotas: Vec<(usize, f64, &str)> = groups
        .iter()
        .map(|(label, idx)| {
            let exact = cap as f64 * idx.len() as f64 / n as f64;
            (exact.floor() as usize, exact - exact.floor(), *label)
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &k in order.iter().take(cap - assigned) {
        quotas[k].0 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(cap);
    for (quota, _, label) in quotas {
        let mut idx = groups[label].clone();
        idx.shuffle(&mut rng);
        picked.extend_from_slice(&idx[..quota]);
    }
    picked.sort_unstable();
    picked
}

/// Embeds labelled rows (labels are usually task clusters), subsampling to
/// `cfg.max_points` first when needed.
pub fn tsne_labeled(x: &DenseMatrix, labels: &[String], cfg: &TsneConfig) -> Result<Embedding> {
    if labels.len() != x.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let indices = stratified_subsample(labels, cfg.max_points, cfg.seed);
    let mut emb = if indices.len() == x.rows() {
        tsne(x, cfg)?
    } else {
        tsne(&x.select_rows(&indices)?, cfg)?
    };
    emb.labels = indices.iter().map(|&i| labels[i].clone()).collect();
    emb.indices = indices;
    Ok(emb)
}
