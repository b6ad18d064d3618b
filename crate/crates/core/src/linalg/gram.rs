use crate::error::{Error, Result};

use super::DenseMatrix;

/// Relative tolerance for accepting a matrix as symmetric.
const SYMMETRY_TOL: f64 = 1e-10;

/// Row-block size for the lower-triangular Gram product.
const BLOCK: usize = 256;

/// Square symmetric kernel matrix over `order` examples.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    order: usize,
    data: Vec<f64>,
    centered: bool,
}

impl GramMatrix {
    /// Wraps a user supplied `order x order` row-major kernel matrix. The
    /// result is marked uncentered.
    pub fn new(order: usize, data: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("Gram matrix of order 0".into()));
        }
        if data.len() != order * order {
            return Err(Error::ShapeMismatch(format!(
                "order {order} needs {} entries, got {}",
                order * order,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Gram matrix has non-finite entries".into()));
        }
        let gram = Self {
            order,
            data,
            centered: false,
        };
        gram.check_symmetric()?;
        Ok(gram)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.get(i, i)).sum()
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn check_symmetric(&self) -> Result<()> {
        let n = self.order;
        let tol = SYMMETRY_TOL * self.max_abs();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if (a - b).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "Gram matrix not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Linear-kernel Gram matrix `X Xᵀ`.
///
/// Only the lower block triangle is multiplied; the upper triangle is a
/// mirror, so the result is exactly symmetric.
pub fn gram_linear(x: &DenseMatrix) -> Result<GramMatrix> {
    let n = x.rows();
    let d = x.cols();
    let src = x.data();
    let mut k = vec![0.0; n * n];

    for i0 in (0..n).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(n);
        for j0 in (0..=i0).step_by(BLOCK) {
            let j1 = (j0 + BLOCK).min(n);
            // SAFETY: the A, B and C views stay inside `src` and `k`; A is
            // rows i0..i1 of X, B is Xᵀ restricted to columns j0..j1, and C
            // is the (i0..i1, j0..j1) block of the n x n output.
            unsafe {
                matrixmultiply::dgemm(
                    i1 - i0,
                    d,
                    j1 - j0,
                    1.0,
                    src.as_ptr().add(i0 * d),
                    d as isize,
                    1,
                    src.as_ptr().add(j0 * d),
                    1,
                    d as isize,
                    0.0,
                    k.as_mut_ptr().add(i0 * n + j0),
                    n as isize,
                    1,
                );
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            k[j * n + i] = k[i * n + j];
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "Gram matrix overflowed; input magnitudes too large".into(),
        ));
    }
    Ok(GramMatrix {
        order: n,
        data: k,
        centered: false,
    })
}

/// Double centering `K - 1K/n - K1/n + 1K1/n²`, done by subtracting row and
/// column means. Centering an already centered matrix is allowed and leaves
/// it unchanged up to rounding.
pub fn center_gram(k: &GramMatrix) -> Result<GramMatrix> {
    k.check_symmetric()?;
    let n = k.order;
    let nf = n as f64;
    let mut row_means = vec![0.0; n];
    let mut col_means = vec![0.0; n];
    for i in 0..n {
        let row = &k.data[i * n..(i + 1) * n];
        row_means[i] = row.iter().sum::<f64>() / nf;
        for (c, v) in col_means.iter_mut().zip(row) {
            *c += v;
        }
    }
    col_means.iter_mut().for_each(|c| *c /= nf);
    let grand = row_means.iter().sum::<f64>() / nf;

    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let a = k.data[i * n + j] - row_means[i] - col_means[j] + grand;
            let b = k.data[j * n + i] - row_means[j] - col_means[i] + grand;
            let v = 0.5 * (a + b);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(GramMatrix {
        order: n,
        data: out,
        centered: true,
    })
}

/// Hilbert-Schmidt independence criterion in trace form, `Tr(K1ᵀ K2)`.
///
/// No `1/(n-1)²` factor is applied; it cancels in CKA.
pub fn hsic(k1: &GramMatrix, k2: &GramMatrix) -> Result<f64> {
    if k1.order != k2.order {
        return Err(Error::ShapeMismatch(format!(
            "Gram orders differ: {} vs {}",
            k1.order, k2.order
        )));
    }
    if !k1.centered || !k2.centered {
        return Err(Error::InvalidInput("HSIC requires centered Gram matrices".into()));
    }
    Ok(k1.data.iter().zip(&k2.data).map(|(a, b)| a * b).sum())
}
