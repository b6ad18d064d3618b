//! Dense kernel computations: linear Gram matrices, double centering, HSIC
//! and Centered Kernel Alignment. Everything runs in `f64`.

mod cka;
mod gram;
mod matrix;

pub use cka::{cka, CkaScore};
pub use gram::{center_gram, gram_linear, hsic, GramMatrix};
pub use matrix::DenseMatrix;
