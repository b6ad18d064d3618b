use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{center_gram, gram_linear, hsic, DenseMatrix};

/// Self-HSIC below this is an exact zero: the rows carry no centered variance.
const DEGENERATE_HSIC: f64 = 1e-300;

/// Allowed floating-point excursion outside [0, 1] before clamping.
const CLAMP_SLACK: f64 = 1e-9;

/// CKA similarity of one (task, layer) pair of activation matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaScore {
    pub value: f64,
    pub task: String,
    pub layer: usize,
    pub n_examples: usize,
}

impl CkaScore {
    pub fn compute(
        task: impl Into<String>,
        layer: usize,
        x: &DenseMatrix,
        y: &DenseMatrix,
    ) -> Result<Self> {
        Ok(Self {
            value: cka(x, y)?,
            task: task.into(),
            layer,
            n_examples: x.rows(),
        })
    }
}

/// Linear Centered Kernel Alignment between two representations of the
/// same `n` examples. Column counts may differ.
///
/// Returns a value in `[0, 1]`.
pub fn cka(x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::ShapeMismatch(format!(
            "CKA needs the same examples on both sides: {} vs {} rows",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::InvalidInput("CKA needs at least two examples".into()));
    }
    for (name, m) in [("first", x), ("second", y)] {
        if all_rows_identical(m) {
            return Err(Error::DegenerateInput(format!(
                "{name} matrix has identical rows; zero centered variance"
            )));
        }
    }

    let kx = center_gram(&gram_linear(x)?)?;
    let ky = center_gram(&gram_linear(y)?)?;
    let hxy = hsic(&kx, &ky)?;
    let hxx = hsic(&kx, &kx)?;
    let hyy = hsic(&ky, &ky)?;
    if hxx < DEGENERATE_HSIC || hyy < DEGENERATE_HSIC {
        return Err(Error::DegenerateInput(format!(
            "self-HSIC vanishes ({hxx:e}, {hyy:e})"
        )));
    }

    let raw = hxy / (hxx.sqrt() * hyy.sqrt());
    if !(-CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&raw) {
        return Err(Error::NumericalInstability(format!(
            "CKA evaluated to {raw} before clamping"
        )));
    }
    Ok(raw.clamp(0.0, 1.0))
}

fn all_rows_identical(m: &DenseMatrix) -> bool {
    let first = m.row(0);
    m.row_iter().skip(1).all(|r| r == first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal)).unwrap()
    }

    /// Brute force: explicit ones-matrix centering, element-wise HSIC.
    fn oracle(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
        let n = x.rows();
        let gram = |m: &DenseMatrix| {
            let mut k = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    for c in 0..m.cols() {
                        k[i][j] += m.get(i, c) * m.get(j, c);
                    }
                }
            }
            k
        };
        let center = |k: Vec<Vec<f64>>| {
            let nf = n as f64;
            let mut out = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let mut one_k = 0.0;
                    let mut k_one = 0.0;
                    let mut one_k_one = 0.0;
                    for a in 0..n {
                        one_k += k[a][j];
                        k_one += k[i][a];
                        for b in 0..n {
                            one_k_one += k[a][b];
                        }
                    }
                    out[i][j] = k[i][j] - one_k / nf - k_one / nf + one_k_one / (nf * nf);
                }
            }
            out
        };
        let h = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += a[i][j] * b[i][j];
                }
            }
            s
        };
        let kx = center(gram(x));
        let ky = center(gram(y));
        h(&kx, &ky) / (h(&kx, &kx) * h(&ky, &ky)).sqrt()
    }

    #[test]
    fn self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, 10, 4);
        assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_composition_oracle_with_different_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = gaussian(&mut rng, 6, 3);
            let y = gaussian(&mut rng, 6, 4);
            let got = cka(&x, &y).unwrap();
            assert!((got - oracle(&x, &y)).abs() < 1e-12, "{got}");
        }
    }

    #[test]
    fn scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(&mut rng, 9, 5);
        for c in [1e-3, -2.5, 1e3] {
            let scaled =
                DenseMatrix::from_vec(9, 5, x.data().iter().map(|v| v * c).collect()).unwrap();
            assert!((cka(&x, &scaled).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn row_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(&mut rng, 5, 2);
        let y = gaussian(&mut rng, 4, 2);
        assert!(matches!(cka(&x, &y), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let x = DenseMatrix::from_rows(&[[0.1, 0.7], [0.1, 0.7], [0.1, 0.7]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = gaussian(&mut rng, 3, 2);
        assert!(matches!(cka(&x, &y), Err(Error::DegenerateInput(_))));
        assert!(matches!(cka(&y, &x), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn single_example_is_invalid() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(cka(&x, &x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn score_records_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(&mut rng, 7, 3);
        let s = CkaScore::compute("anli", 4, &x, &x).unwrap();
        assert_eq!(s.task, "anli");
        assert_eq!(s.layer, 4);
        assert_eq!(s.n_examples, 7);
    }
}
