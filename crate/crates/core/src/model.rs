//! Learners, their parameters, and the per-episode forward pass.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::attention::{represent_on_tape, AttentionConfig, AttentionParams, AttentionVars};
use crate::baselines::{baseline_represent, nn_classify, IdfWeights, RepMode};
use crate::corpus::{unigram_model, ClassSplit, Corpus, EmbeddingTable, UnigramModel};
use crate::episodes::{relabel, sample_episode, Episode, EpisodeError, EpisodeShape, Phase};
use crate::grad::{Tape, Tensor, Var};
use crate::meta::adam::{Adam, ParamSlot};
use crate::ridge::{argmax_rows, logits_on_tape, MetaScalars, ScalarVars};
use crate::signatures::{episode_signatures, EpisodeSignatures, EstimatorMode, SupportClassifierConfig};
use crate::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Learner {
    #[serde(rename = "main")]
    Main,
    #[serde(rename = "avg+nn")]
    AvgNn,
    #[serde(rename = "idf+nn")]
    IdfNn,
    #[serde(rename = "avg+rr")]
    AvgRr,
    #[serde(rename = "idf+rr")]
    IdfRr,
}

impl Learner {
    pub const ALL: [Learner; 5] = [Learner::Main, Learner::AvgNn, Learner::IdfNn, Learner::AvgRr, Learner::IdfRr];

    pub fn name(self) -> &'static str {
        match self {
            Learner::Main => "main",
            Learner::AvgNn => "avg+nn",
            Learner::IdfNn => "idf+nn",
            Learner::AvgRr => "avg+rr",
            Learner::IdfRr => "idf+rr",
        }
    }

    /// Fixed representation, or `None` for the attention model.
    pub fn rep_mode(self) -> Option<RepMode> {
        match self {
            Learner::Main => None,
            Learner::AvgNn | Learner::AvgRr => Some(RepMode::Avg),
            Learner::IdfNn | Learner::IdfRr => Some(RepMode::Idf),
        }
    }

    pub fn uses_ridge(self) -> bool {
        !matches!(self, Learner::AvgNn | Learner::IdfNn)
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything that determines the shape and meaning of a model's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub learner: Learner,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_classifier: Option<SupportClassifierConfig>,
}

impl Architecture {
    /// Attention settings are kept only for the attention model.
    pub fn new(
        learner: Learner,
        attention: AttentionConfig,
        estimator: EstimatorMode,
        support_classifier: SupportClassifierConfig,
    ) -> Self {
        if learner == Learner::Main {
            Architecture {
                learner,
                attention: Some(attention),
                estimator: Some(estimator),
                support_classifier: Some(support_classifier),
            }
        } else {
            Architecture {
                learner,
                attention: None,
                estimator: None,
                support_classifier: None,
            }
        }
    }

    pub fn main(attention: AttentionConfig, estimator: EstimatorMode) -> Self {
        Architecture::new(Learner::Main, attention, estimator, SupportClassifierConfig::default())
    }

    pub fn baseline(learner: Learner) -> Self {
        Architecture::new(
            learner,
            AttentionConfig::default(),
            EstimatorMode::default(),
            SupportClassifierConfig::default(),
        )
    }

    fn attention_parts(&self) -> Result<(AttentionConfig, EstimatorMode, SupportClassifierConfig), Error> {
        match (self.attention, self.estimator, self.support_classifier) {
            (Some(a), Some(e), Some(s)) => Ok((a, e, s)),
            _ => Err(Error::ModelFormat(
                "attention model requires attention, estimator and support_classifier settings".into(),
            )),
        }
    }
}

/// Corpus, embeddings and split, plus per-class statistics reused by every
/// episode.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub corpus: Corpus,
    pub embeddings: EmbeddingTable,
    pub split: ClassSplit,
    class_counts: Vec<Vec<u64>>,
    idf: IdfWeights,
}

impl Dataset {
    pub fn new(corpus: Corpus, embeddings: EmbeddingTable, split: ClassSplit) -> Result<Self, Error> {
        let vocab = embeddings.vocab_size();
        if let Some(w) = corpus.examples().iter().flat_map(|e| e.tokens.iter()).find(|&&w| w >= vocab) {
            return Err(Error::Config(format!(
                "token id {w} outside the embedding table of {vocab} rows"
            )));
        }
        let class_counts = (0..corpus.num_classes())
            .map(|c| {
                unigram_model(corpus.examples_of(c).iter().map(|&i| corpus.example(i)), vocab)
                    .counts()
                    .to_vec()
            })
            .collect();
        let train_docs = split
            .train
            .iter()
            .flat_map(|&c| corpus.examples_of(c).iter().map(|&i| corpus.example(i)));
        let idf = IdfWeights::from_documents(train_docs, vocab);
        Ok(Dataset {
            corpus,
            embeddings,
            split,
            class_counts,
            idf,
        })
    }

    pub fn idf(&self) -> &IdfWeights {
        &self.idf
    }

    /// Token-level unigram model of the episode's source pool.
    pub fn pool_unigram(&self, episode: &Episode) -> UnigramModel {
        let mut counts = vec![0u64; self.embeddings.vocab_size()];
        for &c in &episode.source_classes {
            for (acc, n) in counts.iter_mut().zip(&self.class_counts[c]) {
                *acc += n;
            }
        }
        UnigramModel::from_counts(counts)
    }

    pub fn sample(&self, phase: Phase, shape: EpisodeShape, rng: &mut impl Rng) -> Result<Episode, EpisodeError> {
        sample_episode(&self.corpus, &self.split, phase, shape, rng)
    }
}

/// Per-episode inputs that do not depend on learned parameters.
#[derive(Clone, Debug)]
pub enum Features {
    Signatures(EpisodeSignatures),
    /// Fixed support and query representations, one row per example.
    Fixed { support: Tensor, query: Tensor },
}

#[derive(Clone, Debug)]
pub struct PreparedEpisode<'a> {
    pub episode: &'a Episode,
    pub features: Features,
    pub y_s: Tensor,
    pub y_q: Tensor,
}

/// Nodes of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub loss: Var,
    pub logits: Var,
    pub phi_s: Var,
    pub phi_q: Var,
    /// Attention weights (`T × 1`) of the support then query examples;
    /// empty for fixed representations.
    pub alphas: Vec<Var>,
}

/// Query predictions and loss for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    /// Mean query cross-entropy; `None` for nearest-neighbor learners.
    pub loss: Option<f64>,
}

/// One learner: architecture plus learned parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub attention: Option<AttentionParams>,
    pub scalars: MetaScalars,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    architecture: Architecture,
    params: Vec<NamedTensor>,
}

const SCALAR_NAMES: [&str; 3] = ["log_lambda", "log_a", "b"];

impl ModelParams {
    /// Fresh parameters; meta-scalars start at `λ = a = 1, b = 0`.
    pub fn init(architecture: Architecture, rng: &mut impl Rng) -> Result<Self, Error> {
        let attention = match architecture.learner {
            Learner::Main => Some(AttentionParams::init(architecture.attention_parts()?.0, rng)?),
            _ => None,
        };
        Ok(ModelParams {
            architecture,
            attention,
            scalars: MetaScalars::default(),
        })
    }

    pub fn learner(&self) -> Learner {
        self.architecture.learner
    }

    /// Whether the learner has anything to meta-train.
    pub fn is_trainable(&self) -> bool {
        self.learner().uses_ridge()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = match &self.attention {
            Some(a) => a.config.param_shapes().iter().map(|(n, _)| n.to_string()).collect(),
            None => Vec::new(),
        };
        if self.is_trainable() {
            names.extend(SCALAR_NAMES.iter().map(|s| s.to_string()));
        }
        names
    }

    /// Trainable tensors in [`Self::param_names`] order.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = match &self.attention {
            Some(a) => a.tensors().into_iter().cloned().collect(),
            None => Vec::new(),
        };
        if self.is_trainable() {
            let s = self.scalars;
            out.extend([s.log_lambda, s.log_a, s.b].map(Tensor::scalar));
        }
        out
    }

    /// Rebuilds a model of the same architecture from tensors in
    /// [`Self::param_names`] order.
    pub fn with_tensors(&self, tensors: &[Tensor]) -> Result<Self, Error> {
        let names = self.param_names();
        if tensors.len() != names.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} tensors, got {}",
                names.len(),
                tensors.len()
            )));
        }
        from_named(
            self.architecture.clone(),
            names.into_iter().zip(tensors.iter().cloned()).collect(),
        )
    }

    /// Records parameters on `tape` in [`Self::param_names`] order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { tape.leaf(t) } else { tape.constant(t) })
            .collect()
    }

    /// One Adam update with gradients in [`Self::param_names`] order.
    pub fn adam_step(&mut self, adam: &mut Adam, grads: &[Tensor]) -> Result<(), Error> {
        let names = self.param_names();
        let mut values: Vec<&mut [f64]> = match &mut self.attention {
            Some(a) => a.tensors_mut().into_iter().map(|t| t.data_mut()).collect(),
            None => Vec::new(),
        };
        let s = &mut self.scalars;
        values.push(std::slice::from_mut(&mut s.log_lambda));
        values.push(std::slice::from_mut(&mut s.log_a));
        values.push(std::slice::from_mut(&mut s.b));
        let mut slots: Vec<ParamSlot<'_>> = values
            .into_iter()
            .zip(grads)
            .zip(&names)
            .map(|((value, grad), name)| ParamSlot {
                name,
                value,
                grad: grad.data(),
            })
            .collect();
        if slots.len() != names.len() {
            return Err(Error::ModelFormat("gradient count does not match parameters".into()));
        }
        adam.step(&mut slots)?;
        debug_assert!(self.scalars.lambda() > 0.0 && self.scalars.a() > 0.0);
        Ok(())
    }

    pub fn check_architecture(&self, expected: &Architecture) -> Result<(), Error> {
        if &self.architecture != expected {
            return Err(Error::ArchitectureMismatch(format!(
                "model has {}, configuration asks for {}",
                serde_json::to_string(&self.architecture).unwrap_or_default(),
                serde_json::to_string(expected).unwrap_or_default()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let params = self
            .param_names()
            .into_iter()
            .zip(self.tensors())
            .map(|(name, t)| NamedTensor {
                name,
                shape: [t.rows(), t.cols()],
                data: t.into_data(),
            })
            .collect();
        let file = ModelFile {
            schema_version: SCHEMA_VERSION,
            architecture: self.architecture.clone(),
            params,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let mut named = Vec::with_capacity(file.params.len());
        for p in file.params {
            let t = Tensor::from_vec(p.shape[0], p.shape[1], p.data)
                .map_err(|e| Error::ModelFormat(format!("{}: {e}", p.name)))?;
            named.push((p.name, t));
        }
        from_named(file.architecture, named)
    }

    /// Parameter-free inputs of one episode: signatures for the attention
    /// model, fixed representations otherwise.
    pub fn prepare<'a>(&self, data: &Dataset, episode: &'a Episode) -> Result<PreparedEpisode<'a>, Error> {
        let features = match self.learner().rep_mode() {
            None => {
                let (_, estimator, support_classifier) = self.architecture.attention_parts()?;
                let pool = data.pool_unigram(episode);
                Features::Signatures(episode_signatures(
                    episode,
                    &pool,
                    &data.embeddings,
                    estimator,
                    &support_classifier,
                )?)
            }
            Some(mode) => {
                let rows = |examples: &[crate::corpus::Example]| -> Result<Tensor, Error> {
                    let reps: Vec<Vec<f64>> = examples
                        .iter()
                        .map(|e| baseline_represent(&e.tokens, mode, &data.embeddings, data.idf()))
                        .collect();
                    Ok(Tensor::from_rows(&reps)?)
                };
                Features::Fixed {
                    support: rows(&episode.support)?,
                    query: rows(&episode.query)?,
                }
            }
        };
        let (y_s, y_q) = relabel(episode);
        Ok(PreparedEpisode {
            episode,
            features,
            y_s,
            y_q,
        })
    }

    /// Records the ridge-head forward pass using parameter variables in
    /// [`Self::param_names`] order. `dropout` enables training-mode dropout.
    pub fn record(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        prepared: &PreparedEpisode<'_>,
        embeddings: &EmbeddingTable,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Recorded, Error> {
        if !self.is_trainable() {
            return Err(Error::Config(format!("{} has no ridge head", self.learner())));
        }
        let n_attn = vars.len().saturating_sub(3);
        let scalars = ScalarVars {
            log_lambda: vars[n_attn],
            log_a: vars[n_attn + 1],
            b: vars[n_attn + 2],
        };
        let mut alphas = Vec::new();
        let (phi_s, phi_q) = match &prepared.features {
            Features::Fixed { support, query } => (tape.constant(support.clone()), tape.constant(query.clone())),
            Features::Signatures(sigs) => {
                let config = self.attention.as_ref().expect("attention params").config;
                let attn = AttentionVars::from_vars(config, vars[..n_attn].to_vec());
                let all: Vec<&crate::signatures::SignatureMatrix> = sigs.support.iter().chain(&sigs.query).collect();
                alphas = attn.attend_many(tape, &all, dropout)?;
                let examples = prepared.episode.support.iter().chain(&prepared.episode.query);
                let mut phis = Vec::with_capacity(all.len());
                for (ex, &alpha) in examples.zip(&alphas) {
                    phis.push(represent_on_tape(tape, &ex.tokens, alpha, embeddings)?);
                }
                let ns = sigs.support.len();
                let stacked = [tape.concat_rows(&phis[..ns])?, tape.concat_rows(&phis[ns..])?];
                let (phi_s, phi_q) = (stacked[0], stacked[1]);
                (phi_s, phi_q)
            }
        };
        let logits = logits_on_tape(tape, phi_s, &prepared.y_s, phi_q, scalars)?;
        let loss = tape.cross_entropy(logits, &prepared.y_q)?;
        Ok(Recorded {
            loss,
            logits,
            phi_s,
            phi_q,
            alphas,
        })
    }

    /// Training-mode loss and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        data: &Dataset,
        episode: &Episode,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Vec<Tensor>), Error> {
        let prepared = self.prepare(data, episode)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true);
        let rec = self.record(&mut tape, &vars, &prepared, &data.embeddings, dropout)?;
        let grads = tape.backward(rec.loss)?;
        let out = vars
            .iter()
            .map(|&v| grads.get(v).cloned().expect("leaf gradient"))
            .collect();
        Ok((tape.value(rec.loss).item(), out))
    }

    /// Evaluation-mode predictions (no dropout).
    pub fn evaluate_episode(&self, data: &Dataset, episode: &Episode) -> Result<EpisodeOutcome, Error> {
        let labels = episode.query_labels();
        let (predictions, loss) = if self.is_trainable() {
            let prepared = self.prepare(data, episode)?;
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let rec = self.record(&mut tape, &vars, &prepared, &data.embeddings, None)?;
            (argmax_rows(tape.value(rec.logits)), Some(tape.value(rec.loss).item()))
        } else {
            let mode = self.learner().rep_mode().expect("baseline representation");
            let rep = |e: &crate::corpus::Example| baseline_represent(&e.tokens, mode, &data.embeddings, data.idf());
            let support: Vec<Vec<f64>> = episode.support.iter().map(rep).collect();
            let support_labels = episode.support_labels();
            let preds = episode
                .query
                .iter()
                .map(|q| nn_classify(&support, &support_labels, &rep(q)))
                .collect();
            (preds, None)
        };
        let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
        Ok(EpisodeOutcome {
            accuracy: correct as f64 / labels.len() as f64,
            predictions,
            loss,
        })
    }

    /// Query representations `NL × E` in evaluation mode. With `uniform`,
    /// attention is replaced by equal weights (the mean embedding).
    pub fn query_representations(&self, data: &Dataset, episode: &Episode, uniform: bool) -> Result<Tensor, Error> {
        if uniform {
            let rows: Vec<Vec<f64>> = episode.query.iter().map(|e| data.embeddings.mean(&e.tokens)).collect();
            return Ok(Tensor::from_rows(&rows)?);
        }
        match self.prepare(data, episode)?.features {
            Features::Fixed { query, .. } => Ok(query),
            Features::Signatures(_) => {
                let prepared = self.prepare(data, episode)?;
                let mut tape = Tape::new();
                let vars = self.bind(&mut tape, false);
                let rec = self.record(&mut tape, &vars, &prepared, &data.embeddings, None)?;
                Ok(tape.value(rec.phi_q).clone())
            }
        }
    }

    /// Evaluation-mode attention weights of the support then query examples,
    /// with the signatures they were computed from.
    pub fn attention_weights(&self, data: &Dataset, episode: &Episode) -> Result<(EpisodeSignatures, Vec<Vec<f64>>), Error> {
        let prepared = self.prepare(data, episode)?;
        let Features::Signatures(sigs) = &prepared.features else {
            return Err(Error::Config(format!("{} has no attention", self.learner())));
        };
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let rec = self.record(&mut tape, &vars, &prepared, &data.embeddings, None)?;
        let alphas = rec.alphas.iter().map(|&a| tape.value(a).data().to_vec()).collect();
        Ok((sigs.clone(), alphas))
    }
}

fn from_named(architecture: Architecture, mut named: Vec<(String, Tensor)>) -> Result<ModelParams, Error> {
    let mut scalars = MetaScalars::default();
    if architecture.learner.uses_ridge() {
        let mut take = |name: &str| -> Result<f64, Error> {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::ModelFormat(format!("missing parameter {name}")))?;
            let (_, t) = named.remove(pos);
            if t.shape() != (1, 1) || !t.item().is_finite() {
                return Err(Error::ModelFormat(format!("{name} must be a finite 1x1 value")));
            }
            Ok(t.item())
        };
        scalars = MetaScalars {
            log_lambda: take("log_lambda")?,
            log_a: take("log_a")?,
            b: take("b")?,
        };
    }
    let attention = match architecture.learner {
        Learner::Main => Some(AttentionParams::from_tensors(architecture.attention_parts()?.0, named)?),
        _ if named.is_empty() => None,
        _ => {
            return Err(Error::ModelFormat(format!(
                "unexpected parameter {} for {}",
                named[0].0, architecture.learner
            )))
        }
    };
    Ok(ModelParams {
        architecture,
        attention,
        scalars,
    })
}
