//! Minimal reverse-mode differentiation engine in `f64`.
//!
//! Covers exactly what the attention generator and ridge head need: dense
//! 2-D tensors, a recording [`Tape`], and a finite-difference checker.

mod check;
mod linalg;
mod tape;
mod tensor;

pub use check::{check_op, gradcheck, gradcheck_many, op_cases, GradCheckOptions, GradCheckReport, OpCase, DEFAULT_EPS};
pub use linalg::{symmetric_part, Cholesky};
pub use tape::{sigmoid, softmax, Axis, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("shape {shape:?} does not match data length {len}")]
    BadLength { shape: (usize, usize), len: usize },
    #[error("{op}: range {range:?} out of bounds for shape {shape:?}")]
    BadSlice {
        op: &'static str,
        range: (usize, usize),
        shape: (usize, usize),
    },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("backward requires a 1x1 loss, got {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("{0}")]
    InvalidArgument(&'static str),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn spd(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let m = random(rng, n, n);
        let mut a = m.matmul(&m.transpose()).unwrap();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        a
    }

    #[test]
    fn every_op_case_passes_gradcheck() {
        let cases = op_cases();
        for kind in OpKind::DIFFERENTIABLE {
            assert!(cases.iter().any(|c| c.kind == kind), "no case for {kind}");
        }
        for case in &cases {
            let err = check_op(case, 10, 1000, None).unwrap();
            assert!(err < 1e-4, "{}: {err}", case.label);
        }
    }

    #[test]
    fn every_faulted_op_case_fails_gradcheck() {
        for case in &op_cases() {
            let err = check_op(case, 2, 1000, Some(case.kind)).unwrap();
            assert!(err > 1e-2, "{}: {err}", case.label);
        }
    }

    #[test]
    fn cross_entropy_passes_gradcheck() {
        for trial in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let logits = random(&mut rng, 4, 5);
            let mut targets = Tensor::zeros(4, 5);
            for r in 0..4 {
                targets.set(r, rng.gen_range(0..5), 1.0);
            }
            let err = gradcheck(|t, x| t.cross_entropy(x, &targets), &logits, DEFAULT_EPS).unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn dropout_with_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = tape.dropout(xv, &[true; 12], 0.0).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn solve_spd_passes_gradcheck_wrt_both_inputs() {
        for trial in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(50 + trial);
            let a = spd(&mut rng, 4);
            let b = random(&mut rng, 4, 3);
            let report = gradcheck_many(
                |t, v| {
                    let x = t.solve_spd(v[0], v[1])?;
                    Ok::<_, GradError>(t.sum(x))
                },
                &[a, b],
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-5, "trial {trial}: {report:?}");
        }
    }

    #[test]
    fn solve_spd_scalar_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::identity(3).scaled(2.0));
        let b_val = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = tape.constant(b_val.clone());
        let x = tape.solve_spd(a, b).unwrap();
        assert!(tape.value(x).max_abs_diff(&b_val.scaled(0.5)) < 1e-15);
    }

    #[test]
    fn solve_spd_rejects_indefinite() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let b = tape.constant(Tensor::zeros(2, 1));
        assert!(matches!(
            tape.solve_spd(a, b),
            Err(GradError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(1, 7, 3.5));
        let y = tape.softmax(x, Axis::Cols);
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_of_zero_logits_is_log_classes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(3, 5));
        let mut targets = Tensor::zeros(3, 5);
        targets.set(0, 1, 1.0);
        targets.set(1, 4, 1.0);
        targets.set(2, 0, 1.0);
        let loss = tape.cross_entropy(x, &targets).unwrap();
        assert!((tape.value(loss).item() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let x_val = Tensor::from_vec(2, 2, vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(x_val.clone());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.leaf(x_val.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(x).unwrap(), &x_val);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(GradError::NotScalar { .. })));
    }

    #[test]
    fn quadratic_gradcheck_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 1, 6);
        let err = gradcheck(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn injected_fault_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 2, 3);
        let report = gradcheck_many(
            |t, v| {
                let y = t.tanh(v[0]);
                Ok::<_, GradError>(t.sum(y))
            },
            &[x],
            GradCheckOptions {
                fault: Some(OpKind::Tanh),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2);
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_gradients() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut tape = Tape::new();
            let a = tape.leaf(random(&mut rng, 3, 3));
            let b = tape.leaf(random(&mut rng, 3, 2));
            let m = tape.matmul(a, b).unwrap();
            let t = tape.tanh(m);
            let s = tape.sum(t);
            let g = tape.backward(s).unwrap();
            (g.get(a).unwrap().clone(), g.get(b).unwrap().clone())
        };
        assert_eq!(run(), run());
    }
}
