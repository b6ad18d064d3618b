//! Synthetic activation datasets with planted structure, for demos and
//! tests.
//!
//! Each task belongs to a cluster. The experimental model's activations at a
//! layer are a cluster offset plus isotropic Gaussian rows. A task's control
//! model sees the same activations plus isotropic noise whose scale depends
//! on which of three layer regimes the layer falls in, so the CKA profile
//! across layers has two planted change points.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use repscope::activation_io::{write_tensor, DType, Manifest, TaskEntry};
use repscope::DenseMatrix;

use crate::error::{CliError, CliResult};

pub const EXPERIMENTAL: &str = "experimental";

pub fn control_name(task: &str) -> String {
    format!("control-{task}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub tasks: usize,
    pub unseen_tasks: usize,
    pub clusters: usize,
    pub layers: usize,
    pub dims: usize,
    /// Inclusive range of per-task example counts.
    pub n_examples: (usize, usize),
    /// Last layer of the first and second regimes.
    pub boundaries: (usize, usize),
    /// Control-noise scale in each regime.
    pub regime_noise: [f64; 3],
    /// Log-normal spread of each task's noise scale around the regime value.
    pub task_jitter: f64,
    /// Distance between cluster centres, in units of the within-task spread.
    pub cluster_separation: f64,
    pub dtype: DType,
    pub with_texts: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            tasks: 12,
            unseen_tasks: 2,
            clusters: 4,
            layers: 32,
            dims: 16,
            n_examples: (24, 40),
            boundaries: (9, 15),
            regime_noise: [0.6, 0.15, 0.35],
            task_jitter: 0.1,
            cluster_separation: 6.0,
            dtype: DType::F32,
            with_texts: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn regime(&self, layer: usize) -> usize {
        if layer <= self.boundaries.0 {
            0
        } else if layer <= self.boundaries.1 {
            1
        } else {
            2
        }
    }

    fn check(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Input(format!("synthetic spec: {m}")));
        if self.tasks == 0 || self.clusters == 0 || self.dims == 0 {
            return bad("tasks, clusters and dims must be positive");
        }
        if self.unseen_tasks > self.tasks {
            return bad("more unseen tasks than tasks");
        }
        if self.n_examples.0 < 2 || self.n_examples.0 > self.n_examples.1 {
            return bad("n_examples range must satisfy 2 <= lo <= hi");
        }
        let (b1, b2) = self.boundaries;
        if !(1 <= b1 && b1 < b2 && b2 < self.layers) {
            return bad("boundaries must satisfy 1 <= b1 < b2 < layers");
        }
        if self.regime_noise.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("regime noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest_path: PathBuf,
    pub controls_path: PathBuf,
    pub controls: BTreeMap<String, String>,
    pub manifest: Manifest,
}

const EASY: &[&str] = &[
    "the", "cat", "sat", "on", "a", "mat", "dog", "ran", "to", "me", "it", "is", "red", "big",
    "sun", "go", "up", "we", "say", "yes", "no", "box", "pen", "cup", "hat",
];
const HARD: &[&str] = &[
    "classification", "determination", "sentence", "paragraph", "documentation", "hypothesis",
    "entailment", "contradiction", "summarization", "interpretation", "considerable",
    "identification", "sophisticated", "relationship", "information", "consequently",
];

fn text_for(rng: &mut ChaCha8Rng, difficulty: f64) -> String {
    let mut sentences = Vec::new();
    for _ in 0..2 {
        let len = 4 + (difficulty * 14.0).round() as usize + rng.random_range(0..3);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let pool = if rng.random::<f64>() < difficulty { HARD } else { EASY };
                pool[rng.random_range(0..pool.len())]
            })
            .collect();
        let mut s = words.join(" ");
        if let Some(first) = s.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        s.push('.');
        sentences.push(s);
    }
    sentences.join(" ")
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

/// Writes a complete dataset (tensors, texts, manifest, controls map) under
/// `dir`.
pub fn generate(dir: &Path, spec: &SynthSpec) -> CliResult<SynthDataset> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut tasks = Vec::with_capacity(spec.tasks);
    let mut task_scale = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let id = format!("task{t:03}");
        let n = rng.random_range(spec.n_examples.0..=spec.n_examples.1);
        tasks.push(TaskEntry {
            task_id: id,
            cluster_id: format!("cluster{}", t % spec.clusters),
            n_examples: n,
            seen: t < spec.tasks - spec.unseen_tasks,
            text_path: spec.with_texts.then(|| PathBuf::from(format!("texts/task{t:03}.jsonl"))),
            data_size: Some(10f64.powf(rng.random_range(3.0..5.0)).round() as u64),
        });
        task_scale.push((spec.task_jitter * gaussian(&mut rng)).exp());
    }

    let controls: BTreeMap<String, String> = tasks
        .iter()
        .map(|t| (t.task_id.clone(), control_name(&t.task_id)))
        .collect();
    let mut models = vec![EXPERIMENTAL.to_string()];
    models.extend(controls.values().cloned());
    let mut manifest = Manifest::new(models, tasks.clone(), spec.layers)
        .map_err(|e| CliError::from_core("synthetic manifest", e))?;
    manifest.hidden_size = Some(spec.dims);
    manifest.extraction_note = Some("synthetic".into());
    manifest = manifest.with_root(dir);

    for layer in 1..=spec.layers {
        let centres: Vec<Vec<f64>> = (0..spec.clusters)
            .map(|_| {
                (0..spec.dims)
                    .map(|_| spec.cluster_separation * gaussian(&mut rng))
                    .collect()
            })
            .collect();
        let sigma = spec.regime_noise[spec.regime(layer)];
        for (k, task) in tasks.iter().enumerate() {
            let centre = &centres[k % spec.clusters];
            let e: Vec<f64> = (0..task.n_examples * spec.dims)
                .map(|idx| centre[idx % spec.dims] + gaussian(&mut rng))
                .collect();
            let s = sigma * task_scale[k];
            let c: Vec<f64> = e.iter().map(|v| v + s * gaussian(&mut rng)).collect();
            let e = DenseMatrix::from_vec(task.n_examples, spec.dims, e)
                .map_err(|err| CliError::from_core("synthetic activations", err))?;
            let c = DenseMatrix::from_vec(task.n_examples, spec.dims, c)
                .map_err(|err| CliError::from_core("synthetic activations", err))?;
            for (model, m) in [(EXPERIMENTAL.to_string(), &e), (controls[&task.task_id].clone(), &c)] {
                let path = manifest
                    .tensor_path(&model, &task.task_id, layer)
                    .map_err(|err| CliError::from_core("synthetic path", err))?;
                write_tensor(&path, m, spec.dtype)
                    .map_err(|err| CliError::Output(format!("{}: {err}", path.display())))?;
            }
        }
    }

    if spec.with_texts {
        for task in &tasks {
            let difficulty: f64 = rng.random();
            let path = dir.join(task.text_path.as_ref().expect("texts enabled"));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            let mut body = String::new();
            for _ in 0..task.n_examples {
                let line = serde_json::json!({ "text": text_for(&mut rng, difficulty) });
                body.push_str(&line.to_string());
                body.push('\n');
            }
            fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        }
    }

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest_path = dir.join("manifest.json");
    manifest
        .save(&manifest_path)
        .map_err(|e| CliError::Output(e.to_string()))?;
    let controls_path = dir.join("controls.json");
    let body = serde_json::to_string_pretty(&controls).expect("map serializes");
    fs::write(&controls_path, body + "\n").map_err(|e| io_err(&controls_path, e))?;

    Ok(SynthDataset {
        manifest_path,
        controls_path,
        controls,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regimes_follow_boundaries() {
        let spec = SynthSpec::default();
        assert_eq!(spec.regime(9), 0);
        assert_eq!(spec.regime(10), 1);
        assert_eq!(spec.regime(15), 1);
        assert_eq!(spec.regime(16), 2);
    }

    #[test]
    fn generates_loadable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            tasks: 3,
            unseen_tasks: 1,
            layers: 6,
            boundaries: (2, 4),
            ..SynthSpec::default()
        };
        let ds = generate(dir.path(), &spec).unwrap();
        let m = Manifest::load(&ds.manifest_path).unwrap();
        let pairs: Vec<(&str, &str)> = m
            .tasks
            .iter()
            .flat_map(|t| [(EXPERIMENTAL, t.task_id.as_str()), (ds.controls[&t.task_id].as_str(), t.task_id.as_str())])
            .collect();
        m.validate(&pairs).unwrap();
        for t in &m.tasks {
            assert_eq!(m.load_texts(&t.task_id).unwrap().len(), t.n_examples);
        }
        assert_eq!(m.tasks.iter().filter(|t| !t.seen).count(), 1);
    }

    #[test]
    fn rejects_bad_boundaries() {
        let spec = SynthSpec {
            boundaries: (9, 40),
            ..SynthSpec::default()
        };
        assert!(generate(Path::new("/nonexistent"), &spec).is_err());
    }
}
