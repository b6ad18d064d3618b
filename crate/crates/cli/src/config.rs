use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use repscope::activation_io::{Manifest, TaskEntry};
use repscope::segmenter::LayerStatistic;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Which analyses a `run` performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyses {
    pub cka: bool,
    pub variance: bool,
    pub readability: bool,
    pub correlate: bool,
    pub tsne: bool,
    pub segment: bool,
}

impl Analyses {
    pub const NAMES: [&'static str; 6] = ["cka", "variance", "readability", "correlate", "tsne", "segment"];

    pub fn all() -> Self {
        Self {
            cka: true,
            variance: true,
            readability: true,
            correlate: true,
            tsne: true,
            segment: true,
        }
    }

    pub fn none() -> Self {
        Self {
            cka: false,
            variance: false,
            readability: false,
            correlate: false,
            tsne: false,
            segment: false,
        }
    }
}

impl FromStr for Analyses {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut a = Analyses::none();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "all" => a = Analyses::all(),
                "cka" => a.cka = true,
                "variance" => a.variance = true,
                "readability" => a.readability = true,
                "correlate" => a.correlate = true,
                "tsne" => a.tsne = true,
                "segment" => a.segment = true,
                other => {
                    return Err(format!(
                        "unknown analysis {other:?}; expected one of {}",
                        Analyses::NAMES.join(", ")
                    ))
                }
            }
        }
        Ok(a)
    }
}

/// Restricts a run to trained-on tasks, held-out tasks, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFilter {
    #[default]
    All,
    Seen,
    Unseen,
}

impl TaskFilter {
    pub fn keeps(self, task: &TaskEntry) -> bool {
        match self {
            TaskFilter::All => true,
            TaskFilter::Seen => task.seen,
            TaskFilter::Unseen => !task.seen,
        }
    }
}

impl FromStr for TaskFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(TaskFilter::All),
            "seen" => Ok(TaskFilter::Seen),
            "unseen" => Ok(TaskFilter::Unseen),
            other => Err(format!("unknown task filter {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    FkGrade,
    ClIndex,
    DataSize,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::FkGrade => "fk_grade",
            Covariate::ClIndex => "cl_index",
            Covariate::DataSize => "data_size",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Covariate>, String> {
        let mut out = Vec::new();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let c = match name {
                "fk" | "fk_grade" => Covariate::FkGrade,
                "cl" | "cl_index" => Covariate::ClIndex,
                "data_size" | "size" => Covariate::DataSize,
                other => return Err(format!("unknown covariate {other:?}")),
            };
            if !out.contains(&c) {
                out.push(c);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything that determines a run's outputs. Thread count is deliberately
/// absent: it must not influence results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub experimental: Option<String>,
    /// task id -> control model id
    pub controls: BTreeMap<String, String>,
    pub out: PathBuf,
    pub analyses: Analyses,
    pub tasks: TaskFilter,
    pub seed: u64,
    pub variance_threshold: f64,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub tsne_layers: Option<Vec<usize>>,
    pub tsne_max_points: usize,
    pub covariates: Vec<Covariate>,
    pub statistic: LayerStatistic,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            experimental: None,
            controls: BTreeMap::new(),
            out: out.into(),
            analyses: Analyses::all(),
            tasks: TaskFilter::All,
            seed: 0,
            variance_threshold: 0.99,
            perplexity: 30.0,
            tsne_iterations: 1000,
            tsne_layers: None,
            tsne_max_points: 2000,
            covariates: vec![Covariate::FkGrade, Covariate::ClIndex, Covariate::DataSize],
            statistic: LayerStatistic::Median,
        }
    }

    pub fn load_manifest(&self) -> CliResult<Manifest> {
        Manifest::load(&self.manifest)
            .map_err(|e| CliError::Input(format!("manifest {}: {e}", self.manifest.display())))
    }

    pub fn experimental(&self) -> CliResult<&str> {
        self.experimental
            .as_deref()
            .ok_or_else(|| CliError::Input("--experimental is required".into()))
    }

    /// Tasks selected by the filter, in task-id order.
    pub fn selected_tasks<'m>(&self, manifest: &'m Manifest) -> Vec<&'m TaskEntry> {
        manifest
            .sorted_tasks()
            .into_iter()
            .filter(|t| self.tasks.keeps(t))
            .collect()
    }

    /// Resolves the control model of every selected task and checks the
    /// experimental/control pairing against the manifest.
    pub fn control_pairs<'m>(&self, manifest: &'m Manifest) -> CliResult<Vec<(&'m TaskEntry, String)>> {
        let experimental = self.experimental()?;
        if !manifest.has_model(experimental) {
            return Err(CliError::Input(format!(
                "experimental model {experimental:?} is not in the manifest"
            )));
        }
        let tasks = self.selected_tasks(manifest);
        if tasks.is_empty() {
            return Err(CliError::Input("no tasks selected".into()));
        }
        let mut pairs = Vec::with_capacity(tasks.len());
        for task in tasks {
            let control = self.controls.get(&task.task_id).ok_or_else(|| {
                CliError::Input(format!("no control model for task {:?}", task.task_id))
            })?;
            if control == experimental {
                return Err(CliError::Input(format!(
                    "task {:?}: control model equals the experimental model {experimental:?}",
                    task.task_id
                )));
            }
            if !manifest.has_model(control) {
                return Err(CliError::Input(format!(
                    "task {:?}: control model {control:?} is not in the manifest",
                    task.task_id
                )));
            }
            pairs.push((task, control.clone()));
        }
        Ok(pairs)
    }
}

/// Reads a `{"task": "control-model"}` JSON object.
pub fn load_controls_map(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("controls map {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("controls map {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_analysis_lists() {
        let a: Analyses = "cka,segment".parse().unwrap();
        assert!(a.cka && a.segment && !a.tsne);
        assert_eq!("all".parse::<Analyses>().unwrap(), Analyses::all());
        assert!("cka,bogus".parse::<Analyses>().is_err());
    }

    #[test]
    fn parses_covariates() {
        assert_eq!(
            Covariate::parse_list("fk,cl,data_size,fk").unwrap(),
            vec![Covariate::FkGrade, Covariate::ClIndex, Covariate::DataSize]
        );
        assert!(Covariate::parse_list("smog").is_err());
    }

    #[test]
    fn pairing_checks() {
        let manifest = Manifest::from_json(
            r#"{"models":["e","c1"],"layers":1,"tasks":[
                {"task_id":"t1","cluster_id":"a","n_examples":3},
                {"task_id":"t2","cluster_id":"a","n_examples":3,"seen":false}]}"#,
            "",
        )
        .unwrap();
        let mut cfg = RunConfig::new("m.json", "out");
        assert!(matches!(cfg.control_pairs(&manifest), Err(CliError::Input(_))));
        cfg.experimental = Some("e".into());
        cfg.controls.insert("t1".into(), "c1".into());
        let err = cfg.control_pairs(&manifest).unwrap_err();
        assert!(err.to_string().contains("t2"));
        assert_eq!(err.exit_code(), 2);
        cfg.tasks = TaskFilter::Seen;
        assert_eq!(cfg.control_pairs(&manifest).unwrap().len(), 1);
        cfg.controls.insert("t1".into(), "e".into());
        assert!(cfg.control_pairs(&manifest).is_err());
    }
}
