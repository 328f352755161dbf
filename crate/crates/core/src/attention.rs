//! Attention generator: maps per-token signatures to attention weights over
//! the tokens of an example, and pools word embeddings with those weights.
//!
//! The encoder is a bidirectional LSTM (or a per-token MLP for the
//! no-recurrence ablation). Token scores are `h_i · v`, normalized with a
//! softmax over positions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmbeddingTable, WordId};
use crate::grad::{Axis, GradError, Tape, Tensor, Var};
use crate::signatures::SignatureMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("empty example")]
    EmptyExample,
    #[error("at least one of use_s and use_t must be set")]
    NoSignature,
    #[error("attention has {alpha} weights for {tokens} tokens")]
    LengthMismatch { alpha: usize, tokens: usize },
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub use_s: bool,
    pub use_t: bool,
    pub use_bilstm: bool,
    /// Feed `t / (1 + t)` instead of raw `t`.
    pub rescale_t: bool,
    /// Hidden units per LSTM direction, or MLP width.
    pub hidden: usize,
    /// Dropout rate on encoder outputs during training.
    pub dropout: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            use_s: true,
            use_t: true,
            use_bilstm: true,
            rescale_t: true,
            hidden: 50,
            dropout: 0.1,
        }
    }
}

impl AttentionConfig {
    pub fn input_dim(&self) -> usize {
        self.use_s as usize + self.use_t as usize
    }

    /// Width of the encoder output and of `v`.
    pub fn output_dim(&self) -> usize {
        if self.use_bilstm {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.input_dim() == 0 {
            return Err(AttentionError::NoSignature);
        }
        if self.hidden == 0 {
            return Err(GradError::InvalidArgument("hidden size must be positive").into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GradError::InvalidArgument("dropout rate must be in [0, 1)").into());
        }
        Ok(())
    }

    /// Encoder input rows `[s_i, t_i]`, restricted to the active signatures.
    pub fn input_matrix(&self, sig: &SignatureMatrix) -> Tensor {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(sig.len() * d);
        for (&s, &t) in sig.s.iter().zip(&sig.t) {
            if self.use_s {
                data.push(s);
            }
            if self.use_t {
                data.push(if self.rescale_t { t / (1.0 + t) } else { t });
            }
        }
        Tensor::from_vec(sig.len(), d, data).expect("input width")
    }

    /// Parameter names and shapes, in serialization and optimizer order.
    pub fn param_shapes(&self) -> Vec<(&'static str, (usize, usize))> {
        let (d, h) = (self.input_dim(), self.hidden);
        let mut shapes = if self.use_bilstm {
            vec![
                ("fwd.w_ih", (d, 4 * h)),
                ("fwd.w_hh", (h, 4 * h)),
                ("fwd.bias", (1, 4 * h)),
                ("bwd.w_ih", (d, 4 * h)),
                ("bwd.w_hh", (h, 4 * h)),
                ("bwd.bias", (1, 4 * h)),
            ]
        } else {
            vec![
                ("mlp.w1", (d, h)),
                ("mlp.b1", (1, h)),
                ("mlp.w2", (h, h)),
                ("mlp.b2", (1, h)),
            ]
        };
        shapes.push(("v", (self.output_dim(), 1)));
        shapes
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Weights of one LSTM direction. Gate column blocks are ordered
/// input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_ih = uniform(input, 4 * hidden, 1.0 / (input as f64).sqrt(), rng);
        let w_hh = uniform(hidden, 4 * hidden, 1.0 / (hidden as f64).sqrt(), rng);
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            bias.set(0, c, 1.0);
        }
        LstmParams { w_ih, w_hh, bias }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    BiLstm { fwd: LstmParams, bwd: LstmParams },
    Mlp { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub config: AttentionConfig,
    pub encoder: Encoder,
    /// `output_dim × 1`
    pub v: Tensor,
}

impl AttentionParams {
    pub fn init(config: AttentionConfig, rng: &mut impl Rng) -> Result<Self, AttentionError> {
        config.validate()?;
        let (d, h) = (config.input_dim(), config.hidden);
        let encoder = if config.use_bilstm {
            let fwd = LstmParams::init(d, h, rng);
            let bwd = LstmParams::init(d, h, rng);
            Encoder::BiLstm { fwd, bwd }
        } else {
            Encoder::Mlp {
                w1: uniform(d, h, 1.0 / (d as f64).sqrt(), rng),
                b1: Tensor::zeros(1, h),
                w2: uniform(h, h, 1.0 / (h as f64).sqrt(), rng),
                b2: Tensor::zeros(1, h),
            }
        };
        let out = config.output_dim();
        let v = uniform(out, 1, 1.0 / (out as f64).sqrt(), rng);
        Ok(AttentionParams { config, encoder, v })
    }

    /// Parameters in the order of [`AttentionConfig::param_shapes`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = match &self.encoder {
            Encoder::BiLstm { fwd, bwd } => vec![&fwd.w_ih, &fwd.w_hh, &fwd.bias, &bwd.w_ih, &bwd.w_hh, &bwd.bias],
            Encoder::Mlp { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        };
        out.push(&self.v);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = match &mut self.encoder {
            Encoder::BiLstm { fwd, bwd } => vec![
                &mut fwd.w_ih,
                &mut fwd.w_hh,
                &mut fwd.bias,
                &mut bwd.w_ih,
                &mut bwd.w_hh,
                &mut bwd.bias,
            ],
            Encoder::Mlp { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        };
        out.push(&mut self.v);
        out
    }

    /// Rebuilds parameters from tensors given in [`AttentionConfig::param_shapes`]
    /// order, checking every shape.
    pub fn from_tensors(config: AttentionConfig, tensors: Vec<(String, Tensor)>) -> Result<Self, AttentionError> {
        config.validate()?;
        let shapes = config.param_shapes();
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut ordered = Vec::with_capacity(shapes.len());
        for (name, expected) in shapes {
            let t = by_name
                .remove(name)
                .ok_or_else(|| AttentionError::MissingParam(name.to_owned()))?;
            if t.shape() != expected {
                return Err(AttentionError::ParamShape {
                    name: name.to_owned(),
                    expected,
                    found: t.shape(),
                });
            }
            ordered.push(t);
        }
        let mut it = ordered.into_iter();
        let mut next = || it.next().expect("param count");
        let encoder = if config.use_bilstm {
            let fwd = LstmParams { w_ih: next(), w_hh: next(), bias: next() };
            let bwd = LstmParams { w_ih: next(), w_hh: next(), bias: next() };
            Encoder::BiLstm { fwd, bwd }
        } else {
            Encoder::Mlp { w1: next(), b1: next(), w2: next(), b2: next() }
        };
        let v = next();
        Ok(AttentionParams { config, encoder, v })
    }

    /// Records the parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> AttentionVars {
        let vars = self
            .tensors()
            .into_iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        AttentionVars {
            config: self.config,
            vars,
        }
    }
}

/// Attention parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct AttentionVars {
    config: AttentionConfig,
    vars: Vec<Var>,
}

struct LstmVars {
    w_ih: Var,
    w_hh: Var,
    bias: Var,
}

/// Dropout keep-mask source for one forward pass; `None` disables dropout.
pub type DropoutRng<'a> = Option<&'a mut dyn rand::RngCore>;

impl AttentionVars {
    /// Wraps tape variables given in [`AttentionConfig::param_shapes`] order.
    pub fn from_vars(config: AttentionConfig, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), config.param_shapes().len(), "attention parameter count");
        AttentionVars { config, vars }
    }

    /// Tape variables in [`AttentionConfig::param_shapes`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    fn v(&self) -> Var {
        *self.vars.last().expect("v")
    }

    /// Runs one LSTM direction over a batch of equal-length sequences.
    /// `inputs[t]` holds position `t` of every sequence (`B × d`); returns
    /// the `B × H` hidden states in position order.
    fn lstm(&self, tape: &mut Tape, p: &LstmVars, inputs: &[Var], reverse: bool) -> Result<Vec<Var>, GradError> {
        let h_dim = self.config.hidden;
        let batch = tape.value(inputs[0]).rows();
        let mut h = tape.constant(Tensor::zeros(batch, h_dim));
        let mut c = tape.constant(Tensor::zeros(batch, h_dim));
        let mut outputs = vec![None; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let xt = tape.matmul(inputs[t], p.w_ih)?;
            let xt = tape.add_row(xt, p.bias)?;
            let rec = tape.matmul(h, p.w_hh)?;
            let gates = tape.add(xt, rec)?;
            let i = tape.slice_cols(gates, 0, h_dim)?;
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(gates, h_dim, 2 * h_dim)?;
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(gates, 2 * h_dim, 3 * h_dim)?;
            let g = tape.tanh(g);
            let o = tape.slice_cols(gates, 3 * h_dim, 4 * h_dim)?;
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c);
            h = tape.mul(o, squashed)?;
            outputs[t] = Some(h);
        }
        Ok(outputs.into_iter().map(|o| o.expect("every step")).collect())
    }

    /// Encoder outputs (`B × output_dim`) per position.
    fn encode(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Vec<Var>, GradError> {
        let v = &self.vars;
        if self.config.use_bilstm {
            let fwd = LstmVars { w_ih: v[0], w_hh: v[1], bias: v[2] };
            let bwd = LstmVars { w_ih: v[3], w_hh: v[4], bias: v[5] };
            let hf = self.lstm(tape, &fwd, inputs, false)?;
            let hb = self.lstm(tape, &bwd, inputs, true)?;
            hf.iter().zip(&hb).map(|(&a, &b)| tape.concat_cols(&[a, b])).collect()
        } else {
            inputs
                .iter()
                .map(|&x| {
                    let hidden = tape.matmul(x, v[0])?;
                    let hidden = tape.add_row(hidden, v[1])?;
                    let hidden = tape.tanh(hidden);
                    let out = tape.matmul(hidden, v[2])?;
                    tape.add_row(out, v[3])
                })
                .collect()
        }
    }

    /// Attention weights (`B × T`) for signatures of one common length `T`.
    fn attend_group(
        &self,
        tape: &mut Tape,
        sigs: &[&SignatureMatrix],
        dropout: &mut DropoutRng<'_>,
    ) -> Result<Var, GradError> {
        let rows: Vec<Tensor> = sigs.iter().map(|s| self.config.input_matrix(s)).collect();
        let d = self.config.input_dim();
        let inputs: Vec<Var> = (0..sigs[0].len())
            .map(|t| {
                let data = rows.iter().flat_map(|r| r.row(t).iter().copied()).collect();
                tape.constant(Tensor::from_vec(sigs.len(), d, data).expect("input width"))
            })
            .collect();
        let hidden = self.encode(tape, &inputs)?;
        let rate = self.config.dropout;
        let mut scores = Vec::with_capacity(hidden.len());
        for mut h in hidden {
            if let Some(rng) = dropout.as_mut() {
                if rate > 0.0 {
                    let keep: Vec<bool> = (0..tape.value(h).len()).map(|_| rng.gen::<f64>() >= rate).collect();
                    h = tape.dropout(h, &keep, rate)?;
                }
            }
            scores.push(tape.matmul(h, self.v())?);
        }
        let scores = tape.concat_cols(&scores)?;
        Ok(tape.softmax(scores, Axis::Cols))
    }

    /// Attention weights for several examples, each a `1 × T` row.
    /// Examples of equal length are encoded together; the result is the
    /// same as encoding them one at a time.
    pub fn attend_many(
        &self,
        tape: &mut Tape,
        sigs: &[&SignatureMatrix],
        mut dropout: DropoutRng<'_>,
    ) -> Result<Vec<Var>, AttentionError> {
        if sigs.iter().any(|s| s.is_empty()) {
            return Err(AttentionError::EmptyExample);
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, s) in sigs.iter().enumerate() {
            groups.entry(s.len()).or_default().push(i);
        }
        let mut out = vec![None; sigs.len()];
        for members in groups.values() {
            let group: Vec<&SignatureMatrix> = members.iter().map(|&i| sigs[i]).collect();
            let alpha = self.attend_group(tape, &group, &mut dropout)?;
            if members.len() == 1 {
                out[members[0]] = Some(alpha);
            } else {
                for (k, &i) in members.iter().enumerate() {
                    out[i] = Some(tape.slice_rows(alpha, k, k + 1)?);
                }
            }
        }
        Ok(out.into_iter().map(|a| a.expect("every example")).collect())
    }

    /// Attention weights (`1 × T`) for one example.
    pub fn attend(&self, tape: &mut Tape, sig: &SignatureMatrix, dropout: DropoutRng<'_>) -> Result<Var, AttentionError> {
        Ok(self.attend_many(tape, &[sig], dropout)?[0])
    }
}

/// Attention weights of one example, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionScores {
    pub alpha: Vec<f64>,
}

/// `φ(x) = α E_x` on the tape for a `1 × T` row `α`, as a `1 × E` row.
pub fn represent_on_tape(
    tape: &mut Tape,
    tokens: &[WordId],
    alpha: Var,
    embeddings: &EmbeddingTable,
) -> Result<Var, AttentionError> {
    let t = tape.value(alpha).len();
    if t != tokens.len() {
        return Err(AttentionError::LengthMismatch { alpha: t, tokens: tokens.len() });
    }
    let e = tape.constant(embeddings.gather(tokens));
    Ok(tape.matmul(alpha, e)?)
}

/// Evaluation-mode attention for one example (no dropout).
pub fn attend(sig: &SignatureMatrix, params: &AttentionParams) -> Result<AttentionScores, AttentionError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let alpha = vars.attend(&mut tape, sig, None)?;
    Ok(AttentionScores {
        alpha: tape.value(alpha).data().to_vec(),
    })
}

/// `φ(x) = Σ_i α_i · e(x_i)`.
pub fn represent(tokens: &[WordId], scores: &AttentionScores, embeddings: &EmbeddingTable) -> Result<Vec<f64>, AttentionError> {
    if scores.alpha.len() != tokens.len() {
        return Err(AttentionError::LengthMismatch {
            alpha: scores.alpha.len(),
            tokens: tokens.len(),
        });
    }
    let mut out = vec![0.0; embeddings.dim()];
    for (&w, &a) in tokens.iter().zip(&scores.alpha) {
        for (o, e) in out.iter_mut().zip(embeddings.row(w)) {
            *o += a * e;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(s: &[f64], t: &[f64]) -> SignatureMatrix {
        SignatureMatrix { s: s.to_vec(), t: t.to_vec() }
    }

    fn params(config: AttentionConfig, seed: u64) -> AttentionParams {
        AttentionParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn singleton_and_zero_v() {
        let mut p = params(AttentionConfig::default(), 1);
        assert_eq!(attend(&sig(&[0.3], &[2.0]), &p).unwrap().alpha, vec![1.0]);
        p.v = Tensor::zeros(100, 1);
        let a = attend(&sig(&[0.1, 0.9, 0.5], &[1.0, 5.0, 0.2]), &p).unwrap();
        for x in a.alpha {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_is_uniform_on_identical_rows_and_equivariant() {
        let config = AttentionConfig { use_bilstm: false, ..AttentionConfig::default() };
        let p = params(config, 2);
        let a = attend(&sig(&[0.4; 4], &[1.5; 4]), &p).unwrap();
        for x in &a.alpha {
            assert!((x - 0.25).abs() < 1e-12);
        }
        let s = [0.1, 0.7, 0.3, 0.9];
        let t = [3.0, 0.2, 1.0, 8.0];
        let base = attend(&sig(&s, &t), &p).unwrap().alpha;
        let perm = [2, 0, 3, 1];
        let ps: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
        let pt: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        let permuted = attend(&sig(&ps, &pt), &p).unwrap().alpha;
        for (k, &i) in perm.iter().enumerate() {
            assert!((permuted[k] - base[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_is_a_distribution() {
        let p = params(AttentionConfig::default(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for len in 1..12 {
            let s: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t: Vec<f64> = (0..len).map(|_| rng.gen_range(0.5..1000.0)).collect();
            let a = attend(&sig(&s, &t), &p).unwrap().alpha;
            assert!(a.iter().all(|&x| x >= 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn init_follows_conventions() {
        let p = params(AttentionConfig::default(), 4);
        let Encoder::BiLstm { fwd, .. } = &p.encoder else { panic!() };
        assert_eq!(fwd.w_ih.shape(), (2, 200));
        assert!(fwd.w_ih.data().iter().all(|x| x.abs() <= 1.0 / 2f64.sqrt()));
        assert!(fwd.w_hh.data().iter().all(|x| x.abs() <= 1.0 / 50f64.sqrt()));
        assert!(p.v.data().iter().all(|x| x.abs() <= 0.1));
        for c in 0..200 {
            let expected = if (50..100).contains(&c) { 1.0 } else { 0.0 };
            assert_eq!(fwd.bias.get(0, c), expected);
        }
        let only_s = AttentionConfig { use_t: false, ..AttentionConfig::default() };
        assert_eq!(only_s.param_shapes()[0].1, (1, 200));
        let none = AttentionConfig { use_s: false, use_t: false, ..AttentionConfig::default() };
        assert_eq!(none.validate(), Err(AttentionError::NoSignature));
    }

    #[test]
    fn tensors_round_trip() {
        for use_bilstm in [true, false] {
            let config = AttentionConfig { use_bilstm, ..AttentionConfig::default() };
            let p = params(config, 5);
            let named = config
                .param_shapes()
                .iter()
                .zip(p.tensors())
                .map(|((n, _), t)| (n.to_string(), t.clone()))
                .collect();
            assert_eq!(AttentionParams::from_tensors(config, named).unwrap(), p);
        }
    }

    #[test]
    fn rescale_maps_t_into_unit_interval() {
        let c = AttentionConfig::default();
        let x = c.input_matrix(&sig(&[0.5], &[1000.0]));
        assert_eq!(x.get(0, 0), 0.5);
        assert!((x.get(0, 1) - 1000.0 / 1001.0).abs() < 1e-15);
        let raw = AttentionConfig { rescale_t: false, ..c }.input_matrix(&sig(&[0.5], &[1000.0]));
        assert_eq!(raw.get(0, 1), 1000.0);
    }

    #[test]
    fn represent_cases() {
        let emb = EmbeddingTable::from_matrix(
            Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap(),
        );
        let one_hot = AttentionScores { alpha: vec![0.0, 1.0] };
        assert_eq!(represent(&[1, 2], &one_hot, &emb).unwrap(), vec![3.0, -1.0]);
        let uniform = AttentionScores { alpha: vec![0.5, 0.5] };
        assert_eq!(represent(&[1, 2], &uniform, &emb).unwrap(), emb.mean(&[1, 2]));
        assert!(matches!(
            represent(&[1], &uniform, &emb),
            Err(AttentionError::LengthMismatch { .. })
        ));
        let zeros = EmbeddingTable::zeros(3, 2);
        assert_eq!(represent(&[1, 2], &one_hot, &zeros).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn batched_encoding_matches_single_examples() {
        for use_bilstm in [true, false] {
            let p = params(AttentionConfig { use_bilstm, ..AttentionConfig::default() }, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let sigs: Vec<SignatureMatrix> = [4, 2, 4, 1, 4, 2]
                .iter()
                .map(|&len| {
                    let s: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let t: Vec<f64> = (0..len).map(|_| rng.gen_range(0.5..20.0)).collect();
                    sig(&s, &t)
                })
                .collect();
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape, false);
            let refs: Vec<&SignatureMatrix> = sigs.iter().collect();
            let batched = vars.attend_many(&mut tape, &refs, None).unwrap();
            for (s, a) in sigs.iter().zip(batched) {
                let single = attend(s, &p).unwrap().alpha;
                let got = tape.value(a).data();
                assert_eq!(got.len(), single.len());
                for (x, y) in got.iter().zip(&single) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dropout_only_changes_training_pass() {
        let p = params(AttentionConfig::default(), 6);
        let s = sig(&[0.2, 0.8, 0.5], &[1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = vars.attend(&mut tape, &s, Some(&mut rng)).unwrap();
        let trained = tape.value(a).data().to_vec();
        assert_ne!(trained, attend(&s, &p).unwrap().alpha);
        assert!((trained.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
