//! Dataset manifest: which models, tasks and layers exist, and where their
//! tensors live.
//!
//! ```json
//! {
//!   "models": ["base", "ctrl-anli"],
//!   "layers": 32,
//!   "file_pattern": "{model}/{task}/layer_{layer}.ract",
//!   "extraction_note": "post-block hidden state, last non-padding token",
//!   "tasks": [
//!     {"task_id": "anli", "cluster_id": "nli", "n_examples": 200,
//!      "seen": true, "text_path": "texts/anli.jsonl"}
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the manifest.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::tensor::{read_tensor, TensorHeader};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const DEFAULT_FILE_PATTERN: &str = "{model}/{task}/layer_{layer}.ract";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: String,
    pub cluster_id: String,
    pub n_examples: usize,
    /// `false` for held-out tasks the experimental model never trained on.
    #[serde(default = "default_seen")]
    pub seen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_path: Option<PathBuf>,
    /// Size of the task's training set, when it differs from the number of
    /// probe examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_size: Option<u64>,
}

impl TaskEntry {
    /// `data_size`, falling back to `n_examples`.
    pub fn effective_data_size(&self) -> u64 {
        self.data_size.unwrap_or(self.n_examples as u64)
    }
}

fn default_seen() -> bool {
    true
}

fn default_pattern() -> String {
    DEFAULT_FILE_PATTERN.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub models: Vec<String>,
    pub tasks: Vec<TaskEntry>,
    /// Layer count shared by every model; layers are numbered from 1.
    pub layers: usize,
    #[serde(default = "default_pattern")]
    pub file_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn new(models: Vec<String>, tasks: Vec<TaskEntry>, layers: usize) -> Result<Self> {
        let m = Self {
            models,
            tasks,
            layers,
            file_pattern: default_pattern(),
            extraction_note: None,
            hidden_size: None,
            root: PathBuf::new(),
        };
        m.check_structure()?;
        Ok(m)
    }

    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest = serde_json::from_str(text)
            .map_err(|e| Error::Manifest(format!("malformed manifest JSON: {e}")))?;
        m.root = root.into();
        m.check_structure()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, root)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Writes the manifest as `path` and re-roots it at `path`'s directory.
    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))?;
        self.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    fn check_structure(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Manifest("no models listed".into()));
        }
        if self.layers == 0 {
            return Err(Error::Manifest("layer count must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m.as_str()) {
                return Err(Error::Manifest(format!("duplicate model id {m:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.task_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate task id {:?}", t.task_id)));
            }
            if t.n_examples == 0 {
                return Err(Error::Manifest(format!("task {:?} has no examples", t.task_id)));
            }
        }
        for key in ["{model}", "{task}", "{layer}"] {
            if !self.file_pattern.contains(key) {
                return Err(Error::Manifest(format!(
                    "file pattern {:?} lacks {key}",
                    self.file_pattern
                )));
            }
        }
        Ok(())
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskEntry> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| Error::Manifest(format!("unknown task {task_id:?}")))
    }

    pub fn has_model(&self, model_id: &str) -> bool {
        self.models.iter().any(|m| m == model_id)
    }

    /// Tasks sorted by id.
    pub fn sorted_tasks(&self) -> Vec<&TaskEntry> {
        let mut tasks: Vec<_> = self.tasks.iter().collect();
        tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        tasks
    }

    /// Every (task, layer) pair, ordered by task id then layer.
    pub fn task_layer_pairs(&self) -> Vec<(&TaskEntry, usize)> {
        self.sorted_tasks()
            .into_iter()
            .flat_map(|t| (1..=self.layers).map(move |l| (t, l)))
            .collect()
    }

    pub fn tensor_path(&self, model: &str, task: &str, layer: usize) -> Result<PathBuf> {
        if !self.has_model(model) {
            return Err(Error::Manifest(format!("unknown model {model:?}")));
        }
        self.task(task)?;
        if layer == 0 || layer > self.layers {
            return Err(Error::Manifest(format!(
                "layer {layer} outside 1..={}",
                self.layers
            )));
        }
        let rel = self
            .file_pattern
            .replace("{model}", model)
            .replace("{task}", task)
            .replace("{layer}", &layer.to_string());
        Ok(self.root.join(rel))
    }

    /// Loads one (model, task, layer) matrix and checks its row count.
    pub fn load_matrix(&self, model: &str, task: &str, layer: usize) -> Result<DenseMatrix> {
        let m = self.read_raw(model, task, layer)?;
        self.check_rows(model, task, layer, m.rows())?;
        Ok(m)
    }

    /// Like [`Manifest::load_matrix`], reading through `cache`.
    pub fn load_matrix_cached(
        &self,
        cache: &TensorCache,
        model: &str,
        task: &str,
        layer: usize,
    ) -> Result<Arc<DenseMatrix>> {
        let path = self.tensor_path(model, task, layer)?;
        let m = cache.get_or_read(&path).map_err(|e| missing_as_manifest(e, model, task, layer))?;
        self.check_rows(model, task, layer, m.rows())?;
        Ok(m)
    }

    fn read_raw(&self, model: &str, task: &str, layer: usize) -> Result<DenseMatrix> {
        let path = self.tensor_path(model, task, layer)?;
        read_tensor(&path).map_err(|e| missing_as_manifest(e, model, task, layer))
    }

    fn check_rows(&self, model: &str, task: &str, layer: usize, rows: usize) -> Result<()> {
        let expected = self.task(task)?.n_examples;
        if rows != expected {
            return Err(Error::Manifest(format!(
                "({model}, {task}, layer {layer}) has {rows} rows, manifest says {expected}"
            )));
        }
        Ok(())
    }

    /// Fully reads every layer of every listed (model, task) pair. After this
    /// succeeds, loading any of those triples cannot fail short of the files
    /// changing underneath.
    pub fn validate(&self, model_tasks: &[(&str, &str)]) -> Result<()> {
        for &(model, task) in model_tasks {
            for layer in 1..=self.layers {
                self.load_matrix(model, task, layer)?;
            }
        }
        Ok(())
    }

    /// Header-only variant of [`Manifest::validate`]: checks presence, header
    /// and file length but not payload finiteness.
    pub fn validate_headers(&self, model_tasks: &[(&str, &str)]) -> Result<Vec<TensorHeader>> {
        let mut out = Vec::new();
        for &(model, task) in model_tasks {
            for layer in 1..=self.layers {
                let path = self.tensor_path(model, task, layer)?;
                let h = super::tensor::read_header(&path)
                    .map_err(|e| missing_as_manifest(e, model, task, layer))?;
                self.check_rows(model, task, layer, h.rows as usize)?;
                out.push(h);
            }
        }
        Ok(out)
    }

    /// Raw instruction texts of a task, one per activation row.
    pub fn load_texts(&self, task: &str) -> Result<Vec<String>> {
        let entry = self.task(task)?;
        let rel = entry
            .text_path
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("task {task:?} has no text_path")))?;
        let path = self.root.join(rel);
        let texts = read_text_lines(&path)?;
        if texts.len() != entry.n_examples {
            return Err(Error::Manifest(format!(
                "{} has {} texts, manifest says {} examples",
                path.display(),
                texts.len(),
                entry.n_examples
            )));
        }
        Ok(texts)
    }
}

fn missing_as_manifest(e: Error, model: &str, task: &str, layer: usize) -> Error {
    match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            Error::Manifest(format!(
                "missing tensor for ({model}, {task}, layer {layer}): {}",
                path.display()
            ))
        }
        other => other,
    }
}

#[derive(Deserialize)]
struct TextLine {
    text: String,
}

/// Reads a JSON-lines file whose objects carry a `text` field. Blank lines
/// are skipped.
pub fn read_text_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TextLine = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(parsed.text);
    }
    Ok(out)
}

/// Loads the (experimental, control) matrices for one task and layer.
pub fn load_pair(
    manifest: &Manifest,
    model_a: &str,
    model_b: &str,
    task: &str,
    layer: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let a = manifest.read_raw(model_a, task, layer)?;
    let b = manifest.read_raw(model_b, task, layer)?;
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{task} layer {layer}: {model_a} has {} rows, {model_b} has {}",
            a.rows(),
            b.rows()
        )));
    }
    manifest.check_rows(model_a, task, layer, a.rows())?;
    Ok((a, b))
}

/// Read-through tensor cache keyed by path, shareable across threads.
#[derive(Debug, Default)]
pub struct TensorCache {
    entries: Mutex<HashMap<PathBuf, Arc<DenseMatrix>>>,
}

impl TensorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_read(&self, path: &Path) -> Result<Arc<DenseMatrix>> {
        if let Some(m) = self.entries.lock().unwrap().get(path) {
            return Ok(Arc::clone(m));
        }
        // Read outside the lock; a racing reader may insert first, in which
        // case its copy wins.
        let m = Arc::new(read_tensor(path)?);
        let mut entries = self.entries.lock().unwrap();
        Ok(Arc::clone(entries.entry(path.to_path_buf()).or_insert(m)))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
