//! The analysis commands. Each reads its inputs, computes everything in
//! memory and only then writes its outputs, so a failed command leaves no
//! partial files behind.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use repscope::activation_io::{load_pair, Manifest, TaskEntry};
use repscope::embed::{tsne_labeled, TsneConfig};
use repscope::segmenter::{segment_from_cka, SegmentationResult};
use repscope::spectra::{mean_dims_across_tasks, VarianceProfile};
use repscope::stats::{boxplot_for_layer, correlate_cka, LayerProfile};
use repscope::textstats::ReadabilityScore;
use repscope::{cka, DenseMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{Covariate, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaRow {
    pub model: String,
    pub task: String,
    pub cluster: String,
    pub layer: usize,
    pub cka: f64,
    pub n: usize,
}

pub const CKA_HEADER: [&str; 6] = ["model", "task", "cluster", "layer", "cka", "n"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub task: String,
    pub layer: usize,
    pub dims_required: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceMeanRow {
    pub layer: usize,
    pub mean_dims: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub layer: usize,
    pub covariate: String,
    /// Empty when either series is constant.
    pub r: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneRow {
    pub layer: usize,
    pub x: f64,
    pub y: f64,
    pub task_id: String,
    pub cluster_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub layer: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub n_outliers: usize,
}

struct Context {
    manifest: Manifest,
    manifest_sha256: String,
}

fn open(cfg: &RunConfig) -> CliResult<Context> {
    let manifest = cfg.load_manifest()?;
    let manifest_sha256 = file_sha256(&cfg.manifest)?;
    Ok(Context {
        manifest,
        manifest_sha256,
    })
}

/// CKA between the experimental model and each task's control model at
/// every layer. Writes `cka.csv`.
pub fn cmd_cka(cfg: &RunConfig) -> CliResult<Vec<CkaRow>> {
    let ctx = open(cfg)?;
    let experimental = cfg.experimental()?;
    let pairs = cfg.control_pairs(&ctx.manifest)?;
    let jobs: Vec<(&TaskEntry, &str, usize)> = pairs
        .iter()
        .flat_map(|(t, c)| (1..=ctx.manifest.layers).map(move |l| (*t, c.as_str(), l)))
        .collect();
    info!("cka: {} task/layer pairs", jobs.len());

    let rows = jobs
        .par_iter()
        .map(|&(task, control, layer)| {
            let label = format!(
                "task {:?} layer {layer} ({experimental} vs {control})",
                task.task_id
            );
            let (x, y) = load_pair(&ctx.manifest, experimental, control, &task.task_id, layer)
                .map_err(|e| CliError::from_core(&label, e))?;
            let value = cka(&x, &y).map_err(|e| CliError::from_core(&label, e))?;
            Ok(CkaRow {
                model: experimental.to_string(),
                task: task.task_id.clone(),
                cluster: task.cluster_id.clone(),
                layer,
                cka: value,
                n: x.rows(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    write_csv(&cfg.out.join(CKA_CSV), &rows, &CKA_HEADER)?;
    write_meta(&cfg.out, "cka", &ctx.manifest_sha256, &[CKA_CSV])?;
    Ok(rows)
}

/// Principal components needed for `variance_threshold` of the variance of
/// the experimental model's activations, per task and layer.
pub fn cmd_variance(cfg: &RunConfig) -> CliResult<(Vec<VarianceRow>, Vec<VarianceMeanRow>)> {
    let ctx = open(cfg)?;
    let model = cfg.experimental()?;
    let tasks = cfg.selected_tasks(&ctx.manifest);
    if tasks.is_empty() {
        return Err(CliError::Input("no tasks selected".into()));
    }
    let jobs: Vec<(&TaskEntry, usize)> = tasks
        .iter()
        .flat_map(|t| (1..=ctx.manifest.layers).map(move |l| (*t, l)))
        .collect();
    let profiles = jobs
        .par_iter()
        .map(|&(task, layer)| {
            let label = format!("task {:?} layer {layer} ({model})", task.task_id);
            let x = ctx
                .manifest
                .load_matrix(model, &task.task_id, layer)
                .map_err(|e| CliError::from_core(&label, e))?;
            VarianceProfile::compute(&task.task_id, layer, &x, cfg.variance_threshold)
                .map_err(|e| CliError::from_core(&label, e))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let rows: Vec<VarianceRow> = profiles
        .iter()
        .map(|p| VarianceRow {
            task: p.task.clone(),
            layer: p.layer,
            dims_required: p.dims_required,
            threshold: p.threshold,
        })
        .collect();
    let means = (1..=ctx.manifest.layers)
        .map(|layer| {
            Ok(VarianceMeanRow {
                layer,
                mean_dims: mean_dims_across_tasks(&profiles, layer)
                    .map_err(|e| CliError::from_core("variance means", e))?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    write_csv(
        &cfg.out.join(VARIANCE_CSV),
        &rows,
        &["task", "layer", "dims_required", "threshold"],
    )?;
    write_csv(&cfg.out.join(VARIANCE_MEANS_CSV), &means, &["layer", "mean_dims"])?;
    write_meta(
        &cfg.out,
        "variance",
        &ctx.manifest_sha256,
        &[VARIANCE_CSV, VARIANCE_MEANS_CSV],
    )?;
    Ok((rows, means))
}

/// Mean readability of each task's instruction texts.
pub fn cmd_readability(cfg: &RunConfig) -> CliResult<Vec<ReadabilityScore>> {
    let ctx = open(cfg)?;
    let tasks: Vec<&TaskEntry> = cfg
        .selected_tasks(&ctx.manifest)
        .into_iter()
        .filter(|t| {
            let has = t.text_path.is_some();
            if !has {
                warn!("task {:?} has no text_path; skipped", t.task_id);
            }
            has
        })
        .collect();
    if tasks.is_empty() {
        return Err(CliError::Input("no selected task has a text_path".into()));
    }
    let scores = tasks
        .par_iter()
        .map(|t| {
            let label = format!("texts of task {:?}", t.task_id);
            let texts = ctx
                .manifest
                .load_texts(&t.task_id)
                .map_err(|e| CliError::from_core(&label, e))?;
            ReadabilityScore::for_task(&t.task_id, &texts).map_err(|e| CliError::from_core(&label, e))
        })
        .collect::<CliResult<Vec<_>>>()?;

    write_csv(
        &cfg.out.join(READABILITY_CSV),
        &scores,
        &["task", "fk_grade", "cl_index", "n_texts"],
    )?;
    write_meta(&cfg.out, "readability", &ctx.manifest_sha256, &[READABILITY_CSV])?;
    Ok(scores)
}

fn cka_by_layer(rows: &[CkaRow]) -> BTreeMap<usize, BTreeMap<String, f64>> {
    let mut by_layer: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows {
        by_layer.entry(r.layer).or_default().insert(r.task.clone(), r.cka);
    }
    by_layer
}

/// Per-layer Pearson correlation of CKA against each requested covariate.
pub fn cmd_correlate(cfg: &RunConfig) -> CliResult<Vec<CorrelationRow>> {
    let ctx = open(cfg)?;
    let cka_rows: Vec<CkaRow> = read_csv(&cfg.out.join(CKA_CSV))?;
    if cfg.covariates.is_empty() {
        return Err(CliError::Input("no covariates requested".into()));
    }

    let mut covariates: Vec<(Covariate, BTreeMap<String, f64>)> = Vec::new();
    let needs_text = cfg
        .covariates
        .iter()
        .any(|c| matches!(c, Covariate::FkGrade | Covariate::ClIndex));
    let readability: Vec<ReadabilityScore> = if needs_text {
        read_csv(&cfg.out.join(READABILITY_CSV))?
    } else {
        Vec::new()
    };
    for &c in &cfg.covariates {
        let values: BTreeMap<String, f64> = match c {
            Covariate::FkGrade => readability.iter().map(|r| (r.task.clone(), r.fk_grade)).collect(),
            Covariate::ClIndex => readability.iter().map(|r| (r.task.clone(), r.cl_index)).collect(),
            Covariate::DataSize => ctx
                .manifest
                .tasks
                .iter()
                .map(|t| (t.task_id.clone(), t.effective_data_size() as f64))
                .collect(),
        };
        covariates.push((c, values));
    }

    let mut rows = Vec::new();
    for (layer, scores) in cka_by_layer(&cka_rows) {
        for (c, values) in &covariates {
            let row = match correlate_cka(layer, &scores, values, c.name()) {
                Ok(res) => CorrelationRow {
                    layer,
                    covariate: res.covariate_name,
                    r: Some(res.r),
                    n: res.n,
                },
                Err(repscope::Error::DegenerateInput(msg)) => {
                    warn!("layer {layer}, {c}: {msg}; r left empty");
                    CorrelationRow {
                        layer,
                        covariate: c.name().to_string(),
                        r: None,
                        n: scores.keys().filter(|t| values.contains_key(*t)).count(),
                    }
                }
                Err(e) => return Err(CliError::from_core(&format!("layer {layer}, {c}"), e)),
            };
            rows.push(row);
        }
    }

    write_csv(&cfg.out.join(CORRELATION_CSV), &rows, &["layer", "covariate", "r", "n"])?;
    write_meta(&cfg.out, "correlate", &ctx.manifest_sha256, &[CORRELATION_CSV])?;
    Ok(rows)
}

/// Joint t-SNE of all selected tasks at each requested layer, labelled by
/// task cluster.
pub fn cmd_tsne(cfg: &RunConfig) -> CliResult<Vec<TsneRow>> {
    let ctx = open(cfg)?;
    let model = cfg.experimental()?;
    let tasks = cfg.selected_tasks(&ctx.manifest);
    if tasks.is_empty() {
        return Err(CliError::Input("no tasks selected".into()));
    }
    let layers: Vec<usize> = match &cfg.tsne_layers {
        Some(l) => l.clone(),
        None => (1..=ctx.manifest.layers).collect(),
    };
    if let Some(bad) = layers.iter().find(|&&l| l == 0 || l > ctx.manifest.layers) {
        return Err(CliError::Input(format!(
            "t-SNE layer {bad} outside 1..={}",
            ctx.manifest.layers
        )));
    }

    let mut rows = Vec::new();
    for layer in layers {
        let mut parts = Vec::with_capacity(tasks.len());
        let mut task_of_row = Vec::new();
        let mut labels = Vec::new();
        for t in &tasks {
            let label = format!("task {:?} layer {layer} ({model})", t.task_id);
            let m = ctx
                .manifest
                .load_matrix(model, &t.task_id, layer)
                .map_err(|e| CliError::from_core(&label, e))?;
            task_of_row.extend(std::iter::repeat_n(*t, m.rows()));
            labels.extend(std::iter::repeat_n(t.cluster_id.clone(), m.rows()));
            parts.push(m);
        }
        let refs: Vec<&DenseMatrix> = parts.iter().collect();
        let x = DenseMatrix::vstack(&refs).map_err(|e| CliError::from_core("stacking tasks", e))?;
        let tsne_cfg = TsneConfig {
            perplexity: cfg.perplexity,
            iterations: cfg.tsne_iterations,
            max_points: cfg.tsne_max_points,
            seed: cfg.seed.wrapping_add(layer as u64),
            ..TsneConfig::default()
        };
        info!("tsne: layer {layer}, {} points", x.rows());
        let emb = tsne_labeled(&x, &labels, &tsne_cfg)
            .map_err(|e| CliError::from_core(&format!("t-SNE at layer {layer}"), e))?;
        for (k, &i) in emb.indices.iter().enumerate() {
            rows.push(TsneRow {
                layer,
                x: emb.points.get(k, 0),
                y: emb.points.get(k, 1),
                task_id: task_of_row[i].task_id.clone(),
                cluster_id: task_of_row[i].cluster_id.clone(),
            });
        }
    }

    write_csv(
        &cfg.out.join(TSNE_CSV),
        &rows,
        &["layer", "x", "y", "task_id", "cluster_id"],
    )?;
    write_meta(&cfg.out, "tsne", &ctx.manifest_sha256, &[TSNE_CSV])?;
    Ok(rows)
}

/// Scores of each layer, indexed from layer 1. Fails unless the layers form
/// the contiguous range `1..=L`.
pub fn per_layer_scores(rows: &[CkaRow]) -> CliResult<Vec<Vec<f64>>> {
    let by_layer = cka_by_layer(rows);
    let mut out = Vec::with_capacity(by_layer.len());
    for (k, (layer, scores)) in by_layer.into_iter().enumerate() {
        if layer != k + 1 {
            return Err(CliError::Input(format!(
                "CKA table skips layer {}; layers must run 1..=L",
                k + 1
            )));
        }
        out.push(scores.into_values().collect());
    }
    Ok(out)
}

/// Three-regime segmentation of the per-layer CKA summary in `cka.csv`.
pub fn cmd_segment(cfg: &RunConfig) -> CliResult<SegmentationResult> {
    let rows: Vec<CkaRow> = read_csv(&cfg.out.join(CKA_CSV))?;
    let per_layer = per_layer_scores(&rows)?;
    let result = segment_from_cka(&per_layer, cfg.statistic)
        .map_err(|e| CliError::from_core("segmentation", e))?;
    write_json(&cfg.out.join(SEGMENTATION_JSON), &result)?;
    let sha = file_sha256(&cfg.manifest).unwrap_or_default();
    write_meta(&cfg.out, "segment", &sha, &[SEGMENTATION_JSON])?;
    Ok(result)
}

pub fn layer_profiles(rows: &[CkaRow]) -> CliResult<Vec<LayerProfile>> {
    cka_by_layer(rows)
        .into_iter()
        .map(|(layer, scores)| {
            let values: Vec<(String, f64)> = scores.into_iter().collect();
            boxplot_for_layer(layer, &values).map_err(|e| CliError::from_core("layer profile", e))
        })
        .collect()
}

pub fn profile_rows(profiles: &[LayerProfile]) -> Vec<ProfileRow> {
    profiles
        .iter()
        .map(|p| ProfileRow {
            layer: p.layer,
            min: p.min,
            q1: p.q1,
            median: p.median,
            q3: p.q3,
            max: p.max,
            whisker_lo: p.whisker_lo,
            whisker_hi: p.whisker_hi,
            n_outliers: p.outliers.len(),
        })
        .collect()
}

/// Runs every enabled analysis in dependency order, then the report.
pub fn run_all(cfg: &RunConfig) -> CliResult<()> {
    let a = cfg.analyses;
    if a.cka {
        cmd_cka(cfg)?;
    }
    if a.variance {
        cmd_variance(cfg)?;
    }
    if a.readability {
        cmd_readability(cfg)?;
    }
    if a.correlate {
        cmd_correlate(cfg)?;
    }
    if a.tsne {
        cmd_tsne(cfg)?;
    }
    if a.segment {
        cmd_segment(cfg)?;
    }
    crate::report::cmd_report(cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(task: &str, layer: usize, cka: f64) -> CkaRow {
        CkaRow {
            model: "e".into(),
            task: task.into(),
            cluster: "c".into(),
            layer,
            cka,
            n: 10,
        }
    }

    #[test]
    fn scores_grouped_by_layer_in_task_order() {
        let rows = vec![row("b", 2, 0.4), row("a", 1, 0.1), row("b", 1, 0.2), row("a", 2, 0.3)];
        assert_eq!(per_layer_scores(&rows).unwrap(), vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
    }

    #[test]
    fn gaps_in_layers_are_rejected() {
        let rows = vec![row("a", 1, 0.1), row("a", 3, 0.3)];
        let err = per_layer_scores(&rows).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("layer 2"));
    }

    #[test]
    fn profiles_count_outliers() {
        let mut rows: Vec<CkaRow> = (0..8).map(|i| row(&format!("t{i}"), 1, 0.9 + 0.001 * i as f64)).collect();
        rows.push(row("odd", 1, 0.1));
        let profiles = layer_profiles(&rows).unwrap();
        assert_eq!(profiles.len(), 1);
        assert_eq!(profiles[0].outliers, vec![("odd".to_string(), 0.1)]);
        assert_eq!(profile_rows(&profiles)[0].n_outliers, 1);
    }
}
