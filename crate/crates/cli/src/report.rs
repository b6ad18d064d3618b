//! `report.json`: the aggregate of every step's outputs, plus provenance.

use std::path::Path;

use log::warn;
use repscope::segmenter::SegmentationResult;
use repscope::stats::LayerProfile;
use repscope::textstats::ReadabilityScore;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::*;
use crate::pipeline::{layer_profiles, profile_rows, CkaRow, CorrelationRow, TsneRow, VarianceMeanRow};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON Schema for [`Report`].
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaSummary {
    pub model: String,
    pub tasks: usize,
    pub layers: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSummary {
    pub file: String,
    pub layers: Vec<usize>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: ToolInfo,
    /// RFC 3339 UTC. The only field that differs between identical runs.
    pub generated_at: String,
    pub seed: u64,
    pub manifest_sha256: String,
    pub config: RunConfig,
    pub cka: CkaSummary,
    pub layer_profiles: Vec<LayerProfile>,
    pub correlations: Option<Vec<CorrelationRow>>,
    pub variance_means: Option<Vec<VarianceMeanRow>>,
    pub readability: Option<Vec<ReadabilityScore>>,
    pub segmentation: Option<SegmentationResult>,
    pub tsne: Option<TsneSummary>,
    pub steps: Vec<StepMeta>,
    pub warnings: Vec<String>,
}

/// Reads an enabled step's output, or nothing when the step is disabled.
fn optional<T>(enabled: bool, read: impl FnOnce() -> CliResult<T>) -> CliResult<Option<T>> {
    if enabled {
        read().map(Some)
    } else {
        Ok(None)
    }
}

fn read_steps(out: &Path) -> CliResult<Vec<StepMeta>> {
    let mut steps = Vec::new();
    for step in ["cka", "variance", "readability", "correlate", "tsne", "segment"] {
        let path = meta_path(out, step);
        if path.exists() {
            steps.push(read_json(&path)?);
        }
    }
    Ok(steps)
}

/// Builds the report from the files in the output directory. Fails with
/// exit code 3 when `cka.csv` or an enabled step's output is missing.
pub fn build_report(cfg: &RunConfig) -> CliResult<Report> {
    let manifest_sha256 = file_sha256(&cfg.manifest)?;
    let rows: Vec<CkaRow> = read_csv(&cfg.out.join(CKA_CSV))?;
    if rows.is_empty() {
        return Err(CliError::Input(format!("{CKA_CSV} has no rows")));
    }
    let profiles = layer_profiles(&rows)?;
    let a = cfg.analyses;

    let correlations: Option<Vec<CorrelationRow>> = optional(a.correlate, || read_csv(&cfg.out.join(CORRELATION_CSV)))?;
    let variance_means: Option<Vec<VarianceMeanRow>> = optional(a.variance, || read_csv(&cfg.out.join(VARIANCE_MEANS_CSV)))?;
    let readability: Option<Vec<ReadabilityScore>> = optional(a.readability, || read_csv(&cfg.out.join(READABILITY_CSV)))?;
    let segmentation: Option<SegmentationResult> = optional(a.segment, || read_json(&cfg.out.join(SEGMENTATION_JSON)))?;
    let tsne = optional(a.tsne, || {
        let points: Vec<TsneRow> = read_csv(&cfg.out.join(TSNE_CSV))?;
        let mut layers: Vec<usize> = points.iter().map(|p| p.layer).collect();
        layers.dedup();
        Ok(TsneSummary {
            file: TSNE_CSV.to_string(),
            layers,
            points: points.len(),
        })
    })?;

    let steps = read_steps(&cfg.out)?;
    let mut warnings = Vec::new();
    for s in &steps {
        if !s.manifest_sha256.is_empty() && s.manifest_sha256 != manifest_sha256 {
            warnings.push(format!(
                "manifest changed since step {:?} ran (was {}, now {})",
                s.step, s.manifest_sha256, manifest_sha256
            ));
        }
    }
    if let Some(corr) = &correlations {
        let empty = corr.iter().filter(|c| c.r.is_none()).count();
        if empty > 0 {
            warnings.push(format!("{empty} correlations undefined on constant data"));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }

    let mut tasks: Vec<&str> = rows.iter().map(|r| r.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        seed: cfg.seed,
        manifest_sha256,
        config: cfg.clone(),
        cka: CkaSummary {
            model: rows[0].model.clone(),
            tasks: tasks.len(),
            layers: profiles.len(),
            file: CKA_CSV.to_string(),
        },
        layer_profiles: profiles,
        correlations,
        variance_means,
        readability,
        segmentation,
        tsne,
        steps,
        warnings,
    })
}

pub fn cmd_report(cfg: &RunConfig) -> CliResult<Report> {
    let report = build_report(cfg)?;
    write_csv(
        &cfg.out.join(PROFILES_CSV),
        &profile_rows(&report.layer_profiles),
        &[
            "layer", "min", "q1", "median", "q3", "max", "whisker_lo", "whisker_hi", "n_outliers",
        ],
    )?;
    write_json(&cfg.out.join(REPORT_JSON), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_is_valid_json_and_names_every_field() {
        let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
        let required: Vec<&str> = schema["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        for field in [
            "schema_version", "generated_at", "manifest_sha256", "config", "layer_profiles",
            "segmentation", "warnings",
        ] {
            assert!(required.contains(&field), "{field}");
        }
    }

    #[test]
    fn disabled_steps_are_not_read() {
        let read = optional(false, || -> CliResult<u32> { panic!("should not read") }).unwrap();
        assert_eq!(read, None);
        assert_eq!(optional(true, || Ok(3)).unwrap(), Some(3));
    }
}
