//! Cholesky factorization and triangular solves for small SPD systems.

use super::{GradError, Tensor};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// Only the lower triangle of `a` is read.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Tensor) -> Result<Self, GradError> {
        let (n, m) = a.shape();
        if n != m {
            return Err(GradError::ShapeMismatch {
                op: "cholesky",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a.get(j, j);
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(GradError::NotPositiveDefinite { pivot: j });
            }
            let d = diag.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor, GradError> {
        let n = self.n;
        if b.rows() != n {
            return Err(GradError::ShapeMismatch {
                op: "cholesky_solve",
                left: (n, n),
                right: b.shape(),
            });
        }
        let m = b.cols();
        let l = &self.lower;
        let mut x = b.clone();
        let xd = x.data_mut();
        for col in 0..m {
            // L y = b
            for i in 0..n {
                let mut s = xd[i * m + col];
                for k in 0..i {
                    s -= l[i * n + k] * xd[k * m + col];
                }
                xd[i * m + col] = s / l[i * n + i];
            }
            // Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = xd[i * m + col];
                for k in i + 1..n {
                    s -= l[k * n + i] * xd[k * m + col];
                }
                xd[i * m + col] = s / l[i * n + i];
            }
        }
        Ok(x)
    }
}

/// `(A + Aᵀ) / 2`
pub fn symmetric_part(a: &Tensor) -> Tensor {
    let n = a.rows();
    let mut s = a.clone();
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_known_system() {
        let a = Tensor::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![2.0], vec![1.0]]).unwrap();
        let x = Cholesky::factor(&a).unwrap().solve(&b).unwrap();
        let back = a.matmul(&x).unwrap();
        assert!(back.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            Cholesky::factor(&a),
            Err(GradError::NotPositiveDefinite { pivot: 1 })
        ));
        let z = Tensor::zeros(2, 2);
        assert!(Cholesky::factor(&z).is_err());
    }
}
