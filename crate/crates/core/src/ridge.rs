//! Closed-form ridge regression head with a learned affine calibration.
//!
//! `W = Φ_Sᵀ (Φ_S Φ_Sᵀ + λI)⁻¹ Y_S` is solved in the `NK × NK` dual form,
//! query logits are `a · Φ_Q W + b`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{Cholesky, GradError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RidgeError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("ridge penalty must be positive, got {0}")]
    BadLambda(f64),
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Meta-learned scalars, stored in log space where positivity is required.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MetaScalars {
    pub log_lambda: f64,
    pub log_a: f64,
    pub b: f64,
}

impl MetaScalars {
    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    pub fn a(&self) -> f64 {
        self.log_a.exp()
    }
}

/// Ridge weights `E × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeSolution {
    pub w: Tensor,
}

pub fn fit(phi_s: &Tensor, y_s: &Tensor, lambda: f64) -> Result<RidgeSolution, RidgeError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(RidgeError::BadLambda(lambda));
    }
    if !phi_s.is_finite() {
        return Err(RidgeError::NonFinite("support features"));
    }
    if !y_s.is_finite() {
        return Err(RidgeError::NonFinite("support labels"));
    }
    let mut gram = phi_s.matmul(&phi_s.transpose())?;
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) + lambda);
    }
    let dual = Cholesky::factor(&gram)?.solve(y_s)?;
    Ok(RidgeSolution {
        w: phi_s.transpose().matmul(&dual)?,
    })
}

/// Calibrated logits `a · Φ_Q W + b`.
pub fn predict(phi_q: &Tensor, solution: &RidgeSolution, a: f64, b: f64) -> Result<Tensor, RidgeError> {
    Ok(phi_q.matmul(&solution.w)?.map(|x| a * x + b))
}

/// Row-wise argmax; ties go to the lowest column.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Mean query cross-entropy of `logits` against one-hot `y_q`.
pub fn episode_loss(logits: &Tensor, y_q: &Tensor) -> Result<f64, RidgeError> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let loss = tape.cross_entropy(x, y_q)?;
    Ok(tape.value(loss).item())
}

/// The ridge objective `‖Φ W − Y‖²_F + λ ‖W‖²_F`.
pub fn ridge_objective(phi_s: &Tensor, y_s: &Tensor, w: &Tensor, lambda: f64) -> Result<f64, RidgeError> {
    let resid = phi_s.matmul(w)?;
    let fit: f64 = resid.data().iter().zip(y_s.data()).map(|(p, y)| (p - y).powi(2)).sum();
    let pen: f64 = w.data().iter().map(|x| x * x).sum();
    Ok(fit + lambda * pen)
}

/// `‖(ΦᵀΦ + λI) W − ΦᵀY‖_F` and `‖ΦᵀY‖_F`.
pub fn normal_equation_residual(phi_s: &Tensor, y_s: &Tensor, w: &Tensor, lambda: f64) -> Result<(f64, f64), RidgeError> {
    let pt = phi_s.transpose();
    let rhs = pt.matmul(y_s)?;
    let mut lhs = pt.matmul(phi_s)?.matmul(w)?;
    for (l, x) in lhs.data_mut().iter_mut().zip(w.data()) {
        *l += lambda * x;
    }
    let resid: f64 = lhs
        .data()
        .iter()
        .zip(rhs.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((resid, rhs.frobenius_norm()))
}

/// Meta-scalars recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ScalarVars {
    pub log_lambda: Var,
    pub log_a: Var,
    pub b: Var,
}

impl ScalarVars {
    pub fn bind(tape: &mut Tape, scalars: &MetaScalars, trainable: bool) -> Self {
        let mut mk = |x: f64| {
            if trainable {
                tape.leaf(Tensor::scalar(x))
            } else {
                tape.constant(Tensor::scalar(x))
            }
        };
        ScalarVars {
            log_lambda: mk(scalars.log_lambda),
            log_a: mk(scalars.log_a),
            b: mk(scalars.b),
        }
    }

    pub fn vars(&self) -> [Var; 3] {
        [self.log_lambda, self.log_a, self.b]
    }
}

/// Differentiable ridge fit and calibrated prediction: returns query logits.
pub fn logits_on_tape(tape: &mut Tape, phi_s: Var, y_s: &Tensor, phi_q: Var, scalars: ScalarVars) -> Result<Var, RidgeError> {
    let nk = tape.value(phi_s).rows();
    let pst = tape.transpose(phi_s);
    let gram = tape.matmul(phi_s, pst)?;
    let lambda = tape.exp(scalars.log_lambda);
    let eye = tape.constant(Tensor::identity(nk));
    let reg = tape.scale_by(eye, lambda)?;
    let system = tape.add(gram, reg)?;
    let y = tape.constant(y_s.clone());
    let dual = tape.solve_spd(system, y)?;
    let w = tape.matmul(pst, dual)?;
    let raw = tape.matmul(phi_q, w)?;
    let a = tape.exp(scalars.log_a);
    let scaled = tape.scale_by(raw, a)?;
    Ok(tape.add_scalar(scaled, scalars.b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_features() {
        let w = fit(&Tensor::identity(2), &Tensor::identity(2), 1.0).unwrap().w;
        assert!(w.max_abs_diff(&Tensor::identity(2).scaled(0.5)) < 1e-15);
        let w = fit(&Tensor::zeros(3, 4), &Tensor::identity(3), 0.7).unwrap().w;
        assert_eq!(w, Tensor::zeros(4, 3));
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let phi = Tensor::identity(2);
        assert!(matches!(fit(&phi, &phi, 0.0), Err(RidgeError::BadLambda(_))));
        let mut bad = phi.clone();
        bad.set(0, 1, f64::NAN);
        assert!(matches!(fit(&bad, &phi, 1.0), Err(RidgeError::NonFinite(_))));
    }

    #[test]
    fn predict_and_loss() {
        let sol = RidgeSolution { w: Tensor::identity(2) };
        let phi_q = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        assert_eq!(predict(&phi_q, &sol, 1.0, 0.0).unwrap(), phi_q);
        let null = predict(&Tensor::zeros(2, 2), &sol, 3.0, 0.25).unwrap();
        assert!(null.data().iter().all(|&x| x == 0.25));
        let uniform = Tensor::zeros(3, 5);
        let mut y = Tensor::zeros(3, 5);
        for r in 0..3 {
            y.set(r, r, 1.0);
        }
        assert!((episode_loss(&uniform, &y).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_falls_with_scale_for_correct_rows() {
        let sol = RidgeSolution { w: Tensor::identity(3) };
        let phi_q = Tensor::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.0, 0.2, 0.7]]).unwrap();
        let y = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let mut prev = f64::INFINITY;
        for a in [0.5, 1.0, 2.0, 8.0, 32.0, 128.0] {
            let loss = episode_loss(&predict(&phi_q, &sol, a, -0.3).unwrap(), &y).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn weight_norm_shrinks_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random(&mut rng, 6, 9);
        let y = random(&mut rng, 6, 3);
        let mut prev = f64::INFINITY;
        for k in -4..8 {
            let norm = fit(&phi, &y, 2f64.powi(k)).unwrap().w.frobenius_norm();
            assert!(norm < prev);
            prev = norm;
        }
    }

    #[test]
    fn residual_and_push_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let phi = random(&mut rng, 10, 8);
            let y = random(&mut rng, 10, 4);
            let lambda = rng.gen_range(0.1..2.0);
            let w = fit(&phi, &y, lambda).unwrap().w;
            let (resid, scale) = normal_equation_residual(&phi, &y, &w, lambda).unwrap();
            assert!(resid < 1e-8 * (1.0 + scale), "{resid}");

            // primal form (ΦᵀΦ + λI)⁻¹ Φᵀ Y
            let mut primal = phi.transpose().matmul(&phi).unwrap();
            for i in 0..primal.rows() {
                primal.set(i, i, primal.get(i, i) + lambda);
            }
            let rhs = phi.transpose().matmul(&y).unwrap();
            let w2 = Cholesky::factor(&primal).unwrap().solve(&rhs).unwrap();
            assert!(w.max_abs_diff(&w2) < 1e-9);
        }
    }

    #[test]
    fn argmax_is_invariant_to_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi_s = random(&mut rng, 10, 6);
        let mut y_s = Tensor::zeros(10, 5);
        for r in 0..10 {
            y_s.set(r, r % 5, 1.0);
        }
        let sol = fit(&phi_s, &y_s, 0.5).unwrap();
        let phi_q = random(&mut rng, 15, 6);
        let base = argmax_rows(&predict(&phi_q, &sol, 1.0, 0.0).unwrap());
        for _ in 0..20 {
            let a = rng.gen_range(-3.0f64..3.0).exp();
            let b = rng.gen_range(-5.0..5.0);
            assert_eq!(argmax_rows(&predict(&phi_q, &sol, a, b).unwrap()), base);
        }
    }

    #[test]
    fn tape_logits_match_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi_s = random(&mut rng, 4, 3);
        let phi_q = random(&mut rng, 5, 3);
        let y_s = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let scalars = MetaScalars { log_lambda: -0.3, log_a: 0.4, b: 0.1 };
        let mut tape = Tape::new();
        let ps = tape.constant(phi_s.clone());
        let pq = tape.constant(phi_q.clone());
        let sv = ScalarVars::bind(&mut tape, &scalars, false);
        let logits = logits_on_tape(&mut tape, ps, &y_s, pq, sv).unwrap();
        let sol = fit(&phi_s, &y_s, scalars.lambda()).unwrap();
        let plain = predict(&phi_q, &sol, scalars.a(), scalars.b).unwrap();
        assert!(tape.value(logits).max_abs_diff(&plain) < 1e-12);
    }
}
