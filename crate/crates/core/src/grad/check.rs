//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Axis, GradError, OpKind, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |a − b| / max(1, |a|, |b|)
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Backward rule to corrupt on the analytic pass (negative controls).
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: DEFAULT_EPS,
            fault: None,
        }
    }
}

/// Checks a scalar function of one tensor. Returns the max relative error.
pub fn gradcheck<F>(f: F, point: &Tensor, eps: f64) -> Result<f64, GradError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, GradError>,
{
    let report = gradcheck_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        GradCheckOptions { eps, fault: None },
    )?;
    Ok(report.max_rel_error)
}

/// Checks a scalar function of several tensors, perturbing every coordinate
/// of every input.
pub fn gradcheck_many<F, E>(f: F, points: &[Tensor], options: GradCheckOptions) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    let mut tape = match options.fault {
        Some(kind) => Tape::with_fault(kind),
        None => Tape::new(),
    };
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss).map_err(E::from)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(*v).cloned().expect("leaf gradient"))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        if value.shape() != (1, 1) {
            return Err(GradError::NotScalar {
                shape: value.shape(),
            }
            .into());
        }
        Ok(value.item())
    };

    let mut work: Vec<Tensor> = points.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (input, grad) in analytic.iter().enumerate() {
        for coord in 0..points[input].len() {
            let orig = points[input].data()[coord];
            work[input].data_mut()[coord] = orig + options.eps;
            let plus = eval(&work)?;
            work[input].data_mut()[coord] = orig - options.eps;
            let minus = eval(&work)?;
            work[input].data_mut()[coord] = orig;

            let numeric = (plus - minus) / (2.0 * options.eps);
            let a = grad.data()[coord];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coordinates += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((input, coord));
            }
        }
    }
    Ok(report)
}

/// A graph exercising one backward rule, used by the per-op gradient suite.
pub struct OpCase {
    pub kind: OpKind,
    /// Distinguishes several cases of one kind (e.g. softmax axes).
    pub label: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    pub build: fn(&mut Tape, &[Var]) -> Result<Var, GradError>,
}

fn uniform(rng: &mut ChaCha8Rng, (rows, cols): (usize, usize), lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

fn uniforms(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)]) -> Vec<Tensor> {
    shapes.iter().map(|&s| uniform(rng, s, -1.0, 1.0)).collect()
}

/// `M Mᵀ + n I`, comfortably positive definite.
fn spd(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let m = uniform(rng, (n, n), -1.0, 1.0);
    let mut a = m.matmul(&m.transpose()).expect("square");
    for i in 0..n {
        a.set(i, i, a.get(i, i) + n as f64);
    }
    a
}

const DROPOUT_KEEP: [bool; 12] = [
    true, false, true, true, false, true, true, true, false, true, false, true,
];

/// One case per differentiable op kind (two for softmax).
pub fn op_cases() -> Vec<OpCase> {
    use OpKind::*;
    let case = |kind, label, inputs, build| OpCase { kind, label, inputs, build };
    vec![
        case(MatMul, "matmul", |r| uniforms(r, &[(3, 4), (4, 2)]), |t, v| t.matmul(v[0], v[1])),
        case(Add, "add", |r| uniforms(r, &[(2, 3), (2, 3)]), |t, v| t.add(v[0], v[1])),
        case(AddRow, "add_row", |r| uniforms(r, &[(3, 4), (1, 4)]), |t, v| t.add_row(v[0], v[1])),
        case(AddScalar, "add_scalar", |r| uniforms(r, &[(3, 2), (1, 1)]), |t, v| t.add_scalar(v[0], v[1])),
        case(Scale, "scale", |r| uniforms(r, &[(2, 2)]), |t, v| Ok(t.scale(v[0], -1.7))),
        case(ScaleBy, "scale_by", |r| uniforms(r, &[(2, 3), (1, 1)]), |t, v| t.scale_by(v[0], v[1])),
        case(Mul, "mul", |r| uniforms(r, &[(2, 3), (2, 3)]), |t, v| t.mul(v[0], v[1])),
        case(Tanh, "tanh", |r| uniforms(r, &[(3, 3)]), |t, v| Ok(t.tanh(v[0]))),
        case(Sigmoid, "sigmoid", |r| uniforms(r, &[(3, 3)]), |t, v| Ok(t.sigmoid(v[0]))),
        case(Exp, "exp", |r| uniforms(r, &[(2, 3)]), |t, v| Ok(t.exp(v[0]))),
        case(Log, "log", |r| vec![uniform(r, (2, 3), 0.5, 2.0)], |t, v| Ok(t.log(v[0]))),
        case(ConcatRows, "concat_rows", |r| uniforms(r, &[(2, 3), (1, 3)]), |t, v| {
            t.concat_rows(&[v[0], v[1], v[0]])
        }),
        case(ConcatCols, "concat_cols", |r| uniforms(r, &[(2, 3), (2, 1)]), |t, v| {
            t.concat_cols(&[v[1], v[0]])
        }),
        case(Transpose, "transpose", |r| uniforms(r, &[(2, 3)]), |t, v| Ok(t.transpose(v[0]))),
        case(SliceRows, "slice_rows", |r| uniforms(r, &[(4, 3)]), |t, v| t.slice_rows(v[0], 1, 3)),
        case(SliceCols, "slice_cols", |r| uniforms(r, &[(3, 5)]), |t, v| t.slice_cols(v[0], 2, 4)),
        case(Softmax, "softmax_cols", |r| uniforms(r, &[(3, 4)]), |t, v| Ok(t.softmax(v[0], Axis::Cols))),
        case(Softmax, "softmax_rows", |r| uniforms(r, &[(4, 2)]), |t, v| Ok(t.softmax(v[0], Axis::Rows))),
        case(Dropout, "dropout", |r| uniforms(r, &[(3, 4)]), |t, v| t.dropout(v[0], &DROPOUT_KEEP, 0.3)),
        case(Mean, "mean", |r| uniforms(r, &[(3, 4)]), |t, v| Ok(t.mean(v[0]))),
        case(Sum, "sum", |r| uniforms(r, &[(3, 4)]), |t, v| Ok(t.sum(v[0]))),
        case(CrossEntropy, "cross_entropy", |r| uniforms(r, &[(4, 5)]), |t, v| {
            let mut targets = Tensor::zeros(4, 5);
            for (row, class) in [3, 0, 4, 1].into_iter().enumerate() {
                targets.set(row, class, 1.0);
            }
            t.cross_entropy(v[0], &targets)
        }),
        case(SolveSpd, "solve_spd", |r| vec![spd(r, 4), uniform(r, (4, 3), -1.0, 1.0)], |t, v| {
            t.solve_spd(v[0], v[1])
        }),
    ]
}

/// Worst relative error of `case` over `trials` random points. Non-scalar
/// outputs are reduced by a random weighted sum so that transposed or
/// permuted rules cannot cancel out.
pub fn check_op(case: &OpCase, trials: u64, seed: u64, fault: Option<OpKind>) -> Result<f64, GradError> {
    let mut worst = 0f64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial));
        let points = (case.inputs)(&mut rng);
        let mut probe = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| probe.constant(p.clone())).collect();
        let out = (case.build)(&mut probe, &vars)?;
        let weights = match probe.value(out).shape() {
            (1, 1) => None,
            shape => Some(uniform(&mut rng, shape, -1.0, 1.0)),
        };
        let report = gradcheck_many(
            |tape, vars| {
                let out = (case.build)(tape, vars)?;
                match &weights {
                    None => Ok(out),
                    Some(w) => {
                        let w = tape.constant(w.clone());
                        let p = tape.mul(out, w)?;
                        Ok(tape.sum(p))
                    }
                }
            },
            &points,
            GradCheckOptions { eps: DEFAULT_EPS, fault },
        )?;
        if report.max_rel_error.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}
