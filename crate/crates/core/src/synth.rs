//! Synthetic corpora with planted class keywords.
//!
//! Every class owns a private keyword set. Each token of a document is a
//! uniformly drawn keyword of the document's class with probability
//! `keyword_rate`, otherwise a background word drawn from a Zipf(1)
//! distribution shared by all classes. Classes are assigned to train, val
//! and test in index order, so test keywords never occur in training classes.

use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, write_embeddings, write_split, ClassSplit, Corpus, EmbeddingTable, Example, Vocabulary};
use crate::grad::Tensor;
use crate::seeds::{Purpose, Seeds};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub docs_per_class: usize,
    pub doc_length: usize,
    pub keywords_per_class: usize,
    /// Probability that a token is a class keyword, in `(0, 1]`.
    pub keyword_rate: f64,
    pub background_vocab_size: usize,
    pub embedding_dim: usize,
    pub train_classes: usize,
    pub val_classes: usize,
    pub test_classes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 20,
            docs_per_class: 100,
            doc_length: 20,
            keywords_per_class: 5,
            keyword_rate: 0.3,
            background_vocab_size: 500,
            embedding_dim: 32,
            train_classes: 10,
            val_classes: 5,
            test_classes: 5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("num_classes", self.num_classes),
            ("docs_per_class", self.docs_per_class),
            ("doc_length", self.doc_length),
            ("keywords_per_class", self.keywords_per_class),
            ("background_vocab_size", self.background_vocab_size),
            ("embedding_dim", self.embedding_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth: {name} must be positive")));
        }
        if !(self.keyword_rate > 0.0 && self.keyword_rate <= 1.0) {
            return Err(Error::Config(format!(
                "synth: keyword_rate must be in (0, 1], got {}",
                self.keyword_rate
            )));
        }
        if self.train_classes + self.val_classes + self.test_classes > self.num_classes {
            return Err(Error::Config("synth: split uses more classes than num_classes".into()));
        }
        Ok(())
    }

    pub fn keyword(class: usize, j: usize) -> String {
        format!("kw{class}_{j}")
    }

    pub fn background(rank: usize) -> String {
        format!("bg{rank}")
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub split: ClassSplit,
}

/// Paths written by [`SynthData::write`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthFiles {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub split: PathBuf,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData, Error> {
    spec.validate()?;
    let mut vocab = Vocabulary::new();
    let background: Vec<usize> = (1..=spec.background_vocab_size)
        .map(|r| vocab.insert(&SynthSpec::background(r)))
        .collect();
    let keywords: Vec<Vec<usize>> = (0..spec.num_classes)
        .map(|c| {
            (0..spec.keywords_per_class)
                .map(|j| vocab.insert(&SynthSpec::keyword(c, j)))
                .collect()
        })
        .collect();

    let seeds = Seeds::new(spec.seed);
    let mut rng = seeds.rng(Purpose::Synth, &[0]);
    let zipf = WeightedIndex::new((1..=spec.background_vocab_size).map(|r| 1.0 / r as f64)).expect("positive weights");
    let mut examples = Vec::with_capacity(spec.num_classes * spec.docs_per_class);
    for (c, kws) in keywords.iter().enumerate() {
        for _ in 0..spec.docs_per_class {
            let tokens = (0..spec.doc_length)
                .map(|_| {
                    if rng.gen::<f64>() < spec.keyword_rate {
                        kws[rng.gen_range(0..kws.len())]
                    } else {
                        background[zipf.sample(&mut rng)]
                    }
                })
                .collect();
            examples.push(Example { tokens, label: c });
        }
    }
    let names = (0..spec.num_classes).map(|c| format!("class{c:02}")).collect();
    let corpus = Corpus::new(examples, names);

    let mut rng = seeds.rng(Purpose::Synth, &[1]);
    let (v, e) = (vocab.len(), spec.embedding_dim);
    let data = (0..v * e).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let embeddings = EmbeddingTable::from_matrix(Tensor::from_vec(v, e, data)?);

    let t = spec.train_classes;
    let vl = spec.val_classes;
    let split = ClassSplit {
        train: (0..t).collect(),
        val: (t..t + vl).collect(),
        test: (t + vl..t + vl + spec.test_classes).collect(),
    };
    Ok(SynthData {
        corpus,
        vocab,
        embeddings,
        split,
    })
}

impl SynthData {
    /// Writes `corpus.jsonl`, `embeddings.txt` and `split.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<SynthFiles, Error> {
        std::fs::create_dir_all(dir)?;
        let files = SynthFiles {
            corpus: dir.join("corpus.jsonl"),
            embeddings: dir.join("embeddings.txt"),
            split: dir.join("split.json"),
        };
        write_corpus(&files.corpus, &self.corpus, &self.vocab)?;
        write_embeddings(&files.embeddings, &self.embeddings, &self.vocab)?;
        write_split(&files.split, &self.split, &self.corpus)?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_keyword_rate_uses_only_keywords() {
        let spec = SynthSpec { keyword_rate: 1.0, doc_length: 5, ..SynthSpec::default() };
        let d = generate(&spec).unwrap();
        for ex in d.corpus.examples() {
            for &w in &ex.tokens {
                assert!(d.vocab.word(w).unwrap().starts_with(&format!("kw{}_", ex.label)));
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SynthSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.embeddings, b.embeddings);
        let c = generate(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn shapes_and_ranges() {
        let d = generate(&SynthSpec::default()).unwrap();
        assert_eq!(d.corpus.len(), 2000);
        assert!(d.corpus.examples().iter().all(|e| e.tokens.len() == 20));
        assert_eq!(d.vocab.len(), 1 + 500 + 100);
        assert_eq!(d.embeddings.dim(), 32);
        assert!(d.embeddings.matrix().data().iter().all(|x| x.abs() <= 0.5));
        assert!(d.split.validate(5).is_ok());
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SynthSpec { keyword_rate: 0.0, ..SynthSpec::default() },
            SynthSpec { keyword_rate: 1.5, ..SynthSpec::default() },
            SynthSpec { test_classes: 11, ..SynthSpec::default() },
            SynthSpec { doc_length: 0, ..SynthSpec::default() },
        ] {
            assert!(matches!(generate(&spec), Err(Error::Config(_))));
        }
    }
}
