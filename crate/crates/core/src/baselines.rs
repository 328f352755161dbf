//! Fixed-representation reference learners: mean or idf-weighted mean of
//! word embeddings, classified by 1-nearest-neighbor or by the ridge head.

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Example, WordId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepMode {
    Avg,
    Idf,
}

/// `idf(w) = ln(D / df(w))` over a document set; words that never occur get 0.
#[derive(Clone, Debug, PartialEq)]
pub struct IdfWeights {
    weights: Vec<f64>,
}

impl IdfWeights {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Example>, vocab_size: usize) -> Self {
        let mut df = vec![0u64; vocab_size];
        let mut seen = vec![usize::MAX; vocab_size];
        let mut d = 0usize;
        for (i, doc) in docs.into_iter().enumerate() {
            d += 1;
            for &w in &doc.tokens {
                if seen[w] != i {
                    seen[w] = i;
                    df[w] += 1;
                }
            }
        }
        let weights = df
            .iter()
            .map(|&n| if n == 0 { 0.0 } else { (d as f64 / n as f64).ln() })
            .collect();
        IdfWeights { weights }
    }

    pub fn uniform(vocab_size: usize, value: f64) -> Self {
        IdfWeights {
            weights: vec![value; vocab_size],
        }
    }

    pub fn get(&self, w: WordId) -> f64 {
        self.weights.get(w).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Unweighted or idf-weighted mean of the token embeddings. An idf example
/// whose weights are all zero maps to the zero vector.
pub fn baseline_represent(tokens: &[WordId], mode: RepMode, embeddings: &EmbeddingTable, idf: &IdfWeights) -> Vec<f64> {
    match mode {
        RepMode::Avg => embeddings.mean(tokens),
        RepMode::Idf => {
            let mut out = vec![0.0; embeddings.dim()];
            let mut total = 0.0;
            for &w in tokens {
                let weight = idf.get(w);
                total += weight;
                for (o, e) in out.iter_mut().zip(embeddings.row(w)) {
                    *o += weight * e;
                }
            }
            if total > 0.0 {
                out.iter_mut().for_each(|o| *o /= total);
            }
            out
        }
    }
}

/// Label of the Euclidean-nearest support vector; ties go to the lowest
/// support index.
pub fn nn_classify(support: &[Vec<f64>], labels: &[usize], query: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, s) in support.iter().enumerate() {
        let d: f64 = s.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    labels[best.1]
}
