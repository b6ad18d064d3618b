//! Layer-wise representation similarity analysis.
//!
//! The central quantity is linear Centered Kernel Alignment between the
//! last-token activations of an experimental model and those of a per-task
//! control model, computed at every layer. Around it sit the companion
//! analyses: principal-component dimensionality, readability of the task
//! inputs, Pearson correlation against CKA, exact t-SNE embeddings and a
//! three-regime segmentation of the layer stack.

pub mod activation_io;
pub mod embed;
mod error;
pub mod linalg;
pub mod segmenter;
pub mod spectra;
pub mod stats;
pub mod textstats;

pub use error::{Error, Result};
pub use linalg::{cka, center_gram, gram_linear, hsic, CkaScore, DenseMatrix, GramMatrix};
