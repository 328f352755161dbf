//! Distributional signatures of the tokens of an example.
//!
//! General importance `s(w) = ε / (ε + P(w))` uses the unigram model of the
//! source pool. Class-specific importance `t(w) = 1 / H(P(y | w))` uses a
//! conditional estimated on the support set, either with a regularized
//! softmax classifier over word embeddings or with raw support counts.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmbeddingTable, Example, UnigramModel, WordId};
use crate::episodes::Episode;
use crate::grad::{softmax, Axis, Tensor};
use crate::meta::adam::{Adam, AdamConfig, ParamSlot};

/// Smoothing constant of the general-importance statistic.
pub const EPSILON: f64 = 1e-3;
/// Lower clamp on the conditional entropy, keeping `t ≤ 1000`.
pub const ENTROPY_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignatureError {
    #[error("support classifier needs embedding dimension > 0")]
    ZeroDimension,
    #[error("support classifier needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("support set is empty")]
    EmptySupport,
    #[error("support label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("perturbation is not a bijection on [0, {0})")]
    NotBijective(usize),
    #[error("perturbation maps word {word} (count {from}) to word {image} (count {to})")]
    NotFrequencyPreserving { word: WordId, image: WordId, from: u64, to: u64 },
}

/// Per-token signatures of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureMatrix {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

impl SignatureMatrix {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

pub fn general_importance(tokens: &[WordId], unigram: &UnigramModel) -> Vec<f64> {
    tokens
        .iter()
        .map(|&w| EPSILON / (EPSILON + unigram.prob(w)))
        .collect()
}

/// Natural-log entropy with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    #[default]
    EmbeddingLinear,
    CountMle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportClassifierConfig {
    /// Weight of the squared Frobenius penalty.
    pub reg: f64,
    pub step_size: f64,
    /// Stop once the gradient Frobenius norm falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for SupportClassifierConfig {
    fn default() -> Self {
        SupportClassifierConfig {
            reg: 0.1,
            step_size: 0.1,
            grad_tol: 0.1,
            max_iters: 1000,
        }
    }
}

/// Softmax-linear classifier `softmax(W ψ(x))` fit on the support set, with
/// `ψ(x)` the mean word embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportClassifier {
    /// `N × E`
    weights: Tensor,
    iterations: usize,
    grad_norm: f64,
}

fn loss_gradient(weights: &Tensor, features: &Tensor, labels: &[usize], reg: f64) -> Tensor {
    // grad = (1/M) (P − Y)ᵀ Ψ + 2·reg·W
    let m = features.rows() as f64;
    let logits = features.matmul(&weights.transpose()).expect("feature width");
    let mut resid = softmax(&logits, Axis::Cols);
    for (r, &l) in labels.iter().enumerate() {
        resid.set(r, l, resid.get(r, l) - 1.0);
    }
    let mut grad = resid.transpose().matmul(features).expect("residual shape").scaled(1.0 / m);
    grad.add_scaled(weights, 2.0 * reg);
    grad
}

impl SupportClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        SupportClassifier {
            weights: Tensor::zeros(classes, dim),
            iterations: 0,
            grad_norm: 0.0,
        }
    }

    /// Minimizes mean support cross-entropy plus `reg · ‖W‖²_F` with
    /// full-batch Adam from `W = 0`. Deterministic.
    pub fn fit(
        support: &[Example],
        labels: &[usize],
        classes: usize,
        embeddings: &EmbeddingTable,
        config: &SupportClassifierConfig,
    ) -> Result<Self, SignatureError> {
        let dim = embeddings.dim();
        if dim == 0 {
            return Err(SignatureError::ZeroDimension);
        }
        if classes < 2 {
            return Err(SignatureError::TooFewClasses(classes));
        }
        if support.is_empty() {
            return Err(SignatureError::EmptySupport);
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(SignatureError::LabelOutOfRange { label, classes });
        }
        let rows: Vec<Vec<f64>> = support.iter().map(|ex| embeddings.mean(&ex.tokens)).collect();
        let features = Tensor::from_rows(&rows).expect("equal widths");

        let mut weights = Tensor::zeros(classes, dim);
        let mut adam = Adam::new(AdamConfig::with_lr(config.step_size));
        let mut iterations = 0;
        let mut grad = loss_gradient(&weights, &features, labels, config.reg);
        while grad.frobenius_norm() >= config.grad_tol && iterations < config.max_iters {
            adam.step(&mut [ParamSlot {
                name: "support_classifier",
                value: weights.data_mut(),
                grad: grad.data(),
            }])
            .expect("finite support gradient");
            iterations += 1;
            grad = loss_gradient(&weights, &features, labels, config.reg);
        }
        Ok(SupportClassifier {
            weights,
            iterations,
            grad_norm: grad.frobenius_norm(),
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Gradient norm at the returned weights.
    pub fn grad_norm(&self) -> f64 {
        self.grad_norm
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.classes())
            .map(|c| self.weights.row(c).iter().zip(features).map(|(w, x)| w * x).sum())
            .collect();
        softmax(&Tensor::row_vector(logits), Axis::Cols).into_data()
    }
}

/// Word-by-class occurrence counts over a support set.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportCounts {
    classes: usize,
    counts: HashMap<WordId, Vec<u64>>,
}

impl SupportCounts {
    pub fn new(support: &[Example], labels: &[usize], classes: usize) -> Self {
        let mut counts: HashMap<WordId, Vec<u64>> = HashMap::new();
        for (ex, &l) in support.iter().zip(labels) {
            for &w in &ex.tokens {
                counts.entry(w).or_insert_with(|| vec![0; classes])[l] += 1;
            }
        }
        SupportCounts { classes, counts }
    }

    pub fn count(&self, word: WordId, class: usize) -> u64 {
        self.counts.get(&word).map_or(0, |c| c[class])
    }
}

/// Where `P(y | w)` comes from.
#[derive(Clone, Copy, Debug)]
pub enum ConditionalSource<'a> {
    Linear {
        classifier: &'a SupportClassifier,
        embeddings: &'a EmbeddingTable,
    },
    Counts(&'a SupportCounts),
}

impl ConditionalSource<'_> {
    pub fn classes(&self) -> usize {
        match self {
            ConditionalSource::Linear { classifier, .. } => classifier.classes(),
            ConditionalSource::Counts(c) => c.classes,
        }
    }
}

/// Estimated `P(y | word)` over the episode's N classes. In count mode a
/// word absent from the support gets the uniform distribution.
pub fn conditional_distribution(word: WordId, source: &ConditionalSource<'_>) -> Vec<f64> {
    match source {
        ConditionalSource::Linear { classifier, embeddings } => classifier.predict_proba(embeddings.row(word)),
        ConditionalSource::Counts(counts) => {
            let n = counts.classes;
            match counts.counts.get(&word) {
                Some(row) => {
                    let total: u64 = row.iter().sum();
                    row.iter().map(|&c| c as f64 / total as f64).collect()
                }
                None => vec![1.0 / n as f64; n],
            }
        }
    }
}

pub fn class_specific_importance(tokens: &[WordId], source: &ConditionalSource<'_>) -> Vec<f64> {
    let mut cache: HashMap<WordId, f64> = HashMap::new();
    tokens
        .iter()
        .map(|&w| {
            *cache
                .entry(w)
                .or_insert_with(|| 1.0 / entropy(&conditional_distribution(w, source)).max(ENTROPY_FLOOR))
        })
        .collect()
}

/// Signatures for every support and query example of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSignatures {
    pub support: Vec<SignatureMatrix>,
    pub query: Vec<SignatureMatrix>,
}

/// Computes `s` from `pool` and `t` from the episode's support set.
pub fn episode_signatures(
    episode: &Episode,
    pool: &UnigramModel,
    embeddings: &EmbeddingTable,
    mode: EstimatorMode,
    config: &SupportClassifierConfig,
) -> Result<EpisodeSignatures, SignatureError> {
    let labels = episode.support_labels();
    let n = episode.ways();
    let classifier;
    let counts;
    let source = match mode {
        EstimatorMode::EmbeddingLinear => {
            classifier = SupportClassifier::fit(&episode.support, &labels, n, embeddings, config)?;
            ConditionalSource::Linear {
                classifier: &classifier,
                embeddings,
            }
        }
        EstimatorMode::CountMle => {
            counts = SupportCounts::new(&episode.support, &labels, n);
            ConditionalSource::Counts(&counts)
        }
    };
    let sig = |ex: &Example| SignatureMatrix {
        s: general_importance(&ex.tokens, pool),
        t: class_specific_importance(&ex.tokens, &source),
    };
    Ok(EpisodeSignatures {
        support: episode.support.iter().map(sig).collect(),
        query: episode.query.iter().map(sig).collect(),
    })
}

/// A word-substitution map over the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerturbationMap {
    forward: Vec<WordId>,
}

impl PerturbationMap {
    pub fn identity(vocab_size: usize) -> Self {
        PerturbationMap {
            forward: (0..vocab_size).collect(),
        }
    }

    /// Wraps an arbitrary map without checking it; see [`Self::validate`].
    pub fn from_mapping(forward: Vec<WordId>) -> Self {
        PerturbationMap { forward }
    }

    pub fn apply(&self, w: WordId) -> WordId {
        self.forward.get(w).copied().unwrap_or(w)
    }

    pub fn mapping(&self) -> &[WordId] {
        &self.forward
    }

    pub fn is_bijection(&self) -> bool {
        let n = self.forward.len();
        let mut seen = vec![false; n];
        for &w in &self.forward {
            if w >= n || std::mem::replace(&mut seen[w], true) {
                return false;
            }
        }
        true
    }

    /// Checks bijectivity and `count(w) = count(σ(w))` for every word.
    pub fn validate(&self, unigram: &UnigramModel) -> Result<(), SignatureError> {
        if !self.is_bijection() {
            return Err(SignatureError::NotBijective(self.forward.len()));
        }
        for (w, &image) in self.forward.iter().enumerate() {
            let (from, to) = (unigram.count(w), unigram.count(image));
            if from != to {
                return Err(SignatureError::NotFrequencyPreserving { word: w, image, from, to });
            }
        }
        Ok(())
    }

    pub fn inverse(&self) -> Result<PerturbationMap, SignatureError> {
        if !self.is_bijection() {
            return Err(SignatureError::NotBijective(self.forward.len()));
        }
        let mut inv = vec![0; self.forward.len()];
        for (w, &image) in self.forward.iter().enumerate() {
            inv[image] = w;
        }
        Ok(PerturbationMap { forward: inv })
    }
}

/// Random frequency-preserving bijection: words are grouped by exact count
/// and shuffled within each group. Groups are visited in ascending count
/// order, members in ascending word id.
pub fn build_perturbation(unigram: &UnigramModel, rng: &mut impl Rng) -> PerturbationMap {
    let mut groups: BTreeMap<u64, Vec<WordId>> = BTreeMap::new();
    for w in 0..unigram.vocab_size() {
        groups.entry(unigram.count(w)).or_default().push(w);
    }
    let mut forward: Vec<WordId> = (0..unigram.vocab_size()).collect();
    for members in groups.values() {
        let mut images = members.clone();
        for i in (1..images.len()).rev() {
            let j = rng.gen_range(0..=i);
            images.swap(i, j);
        }
        for (&w, &image) in members.iter().zip(&images) {
            forward[w] = image;
        }
    }
    PerturbationMap { forward }
}

/// Maps every support and query token through `sigma`; the source pool is
/// left as is.
pub fn apply_perturbation(episode: &Episode, sigma: &PerturbationMap) -> Episode {
    let map = |examples: &[Example]| -> Vec<Example> {
        examples
            .iter()
            .map(|ex| Example {
                tokens: ex.tokens.iter().map(|&w| sigma.apply(w)).collect(),
                label: ex.label,
            })
            .collect()
    };
    Episode {
        support: map(&episode.support),
        query: map(&episode.query),
        ..episode.clone()
    }
}
