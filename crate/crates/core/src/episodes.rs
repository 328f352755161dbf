//! N-way K-shot episode sampling with a source pool.
//!
//! Random draws happen in a fixed order from the caller's generator: first
//! the N classes (partial Fisher–Yates over the phase's class list), then,
//! class by class in sampled order, K support draws followed by L query
//! draws (partial Fisher–Yates over that class's examples). The query is
//! therefore drawn from the class minus its support.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClassId, ClassSplit, Corpus, Example, Vocabulary, UNK_TOKEN};
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Val,
    Test,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Val => "val",
            Phase::Test => "test",
        }
    }

    pub fn classes(self, split: &ClassSplit) -> &[ClassId] {
        match self {
            Phase::Train => &split.train,
            Phase::Val => &split.val,
            Phase::Test => &split.test,
        }
    }
}

/// Classes per episode (N), support examples per class (K), query
/// examples per class (L).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EpisodeError {
    #[error("{phase} split has {have} classes, episode needs {need}")]
    NotEnoughClasses {
        phase: &'static str,
        have: usize,
        need: usize,
    },
    #[error("class {class:?} has {have} examples, episode needs {need}")]
    NotEnoughExamples { class: String, have: usize, need: usize },
    #[error("episode shape must have ways >= 2, shots >= 1, queries >= 1")]
    BadShape,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Episode {
    pub phase: Phase,
    /// Sampled classes; the local label of `classes[i]` is `i`.
    pub classes: Vec<ClassId>,
    pub support: Vec<Example>,
    /// Corpus indices of `support`.
    pub support_ids: Vec<usize>,
    pub query: Vec<Example>,
    pub query_ids: Vec<usize>,
    /// The source pool is every corpus example labeled with one of these.
    pub source_classes: Vec<ClassId>,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.classes.len()
    }

    pub fn local_label(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// Global class id → local id in `[0, N)`.
    pub fn label_map(&self) -> BTreeMap<ClassId, usize> {
        self.classes.iter().enumerate().map(|(i, &c)| (c, i)).collect()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.local_labels(&self.support)
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.local_labels(&self.query)
    }

    fn local_labels(&self, examples: &[Example]) -> Vec<usize> {
        let map = self.label_map();
        examples.iter().map(|e| map[&e.label]).collect()
    }

    /// Corpus indices of the source pool, in corpus order.
    pub fn source_pool_ids(&self, corpus: &Corpus) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .source_classes
            .iter()
            .flat_map(|&c| corpus.examples_of(c).iter().copied())
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn source_pool<'a>(&self, corpus: &'a Corpus) -> impl Iterator<Item = &'a Example> + 'a {
        self.source_pool_ids(corpus).into_iter().map(move |i| corpus.example(i))
    }
}

fn partial_shuffle<T: Copy>(items: &mut [T], k: usize, rng: &mut impl Rng) {
    for i in 0..k {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
}

pub fn sample_episode(
    corpus: &Corpus,
    split: &ClassSplit,
    phase: Phase,
    shape: EpisodeShape,
    rng: &mut impl Rng,
) -> Result<Episode, EpisodeError> {
    let EpisodeShape { ways, shots, queries } = shape;
    if ways < 2 || shots == 0 || queries == 0 {
        return Err(EpisodeError::BadShape);
    }
    let pool = phase.classes(split);
    if pool.len() < ways {
        return Err(EpisodeError::NotEnoughClasses {
            phase: phase.name(),
            have: pool.len(),
            need: ways,
        });
    }
    let mut candidates = pool.to_vec();
    partial_shuffle(&mut candidates, ways, rng);
    let classes: Vec<ClassId> = candidates[..ways].to_vec();

    let mut support_ids = Vec::with_capacity(ways * shots);
    let mut query_ids = Vec::with_capacity(ways * queries);
    for &class in &classes {
        let mut members = corpus.examples_of(class).to_vec();
        if members.len() < shots + queries {
            return Err(EpisodeError::NotEnoughExamples {
                class: corpus.class_name(class).to_owned(),
                have: members.len(),
                need: shots + queries,
            });
        }
        partial_shuffle(&mut members, shots + queries, rng);
        support_ids.extend_from_slice(&members[..shots]);
        query_ids.extend_from_slice(&members[shots..shots + queries]);
    }

    let source_classes = match phase {
        Phase::Train => split.train.iter().copied().filter(|c| !classes.contains(c)).collect(),
        Phase::Val | Phase::Test => split.train.clone(),
    };

    Ok(Episode {
        phase,
        support: support_ids.iter().map(|&i| corpus.example(i).clone()).collect(),
        query: query_ids.iter().map(|&i| corpus.example(i).clone()).collect(),
        classes,
        support_ids,
        query_ids,
        source_classes,
    })
}

/// One-hot label matrices `(Y_S, Y_Q)` of shapes `NK × N` and `NL × N`.
pub fn relabel(episode: &Episode) -> (Tensor, Tensor) {
    let n = episode.ways();
    let one_hot = |labels: Vec<usize>| {
        let mut y = Tensor::zeros(labels.len(), n);
        for (r, l) in labels.into_iter().enumerate() {
            y.set(r, l, 1.0);
        }
        y
    };
    (one_hot(episode.support_labels()), one_hot(episode.query_labels()))
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    text: Vec<&'a str>,
    label: &'a str,
    role: &'static str,
}

/// Writes support and query as corpus-format JSON lines with a `role` field.
pub fn write_episode_dump(
    out: &mut impl Write,
    episode: &Episode,
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> io::Result<()> {
    let sets = [("support", &episode.support), ("query", &episode.query)];
    for (role, examples) in sets {
        for ex in examples {
            let record = DumpRecord {
                text: ex.tokens.iter().map(|&t| vocab.word(t).unwrap_or(UNK_TOKEN)).collect(),
                label: corpus.class_name(ex.label),
                role,
            };
            writeln!(out, "{}", serde_json::to_string(&record).map_err(io::Error::other)?)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(classes: usize, per_class: usize) -> Corpus {
        let mut examples = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                examples.push(Example { tokens: vec![1 + c, 100 + i], label: c });
            }
        }
        Corpus::new(examples, (0..classes).map(|c| format!("c{c}")).collect())
    }

    fn split() -> ClassSplit {
        ClassSplit { train: vec![0, 1, 2, 3, 4], val: vec![5, 6, 7], test: vec![8, 9, 10] }
    }

    #[test]
    fn fig3_shape() {
        let c = toy(11, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = EpisodeShape { ways: 3, shots: 1, queries: 2 };
        let e = sample_episode(&c, &split(), Phase::Train, shape, &mut rng).unwrap();
        assert_eq!(e.support.len(), 3);
        assert_eq!(e.query.len(), 6);
        assert_eq!(e.source_classes.len(), 2);
    }

    #[test]
    fn test_phase_pool_is_all_train_examples() {
        let c = toy(11, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = EpisodeShape { ways: 3, shots: 2, queries: 2 };
        let e = sample_episode(&c, &split(), Phase::Test, shape, &mut rng).unwrap();
        assert_eq!(e.source_pool_ids(&c).len(), 50);
    }

    #[test]
    fn same_seed_same_episode() {
        let c = toy(11, 10);
        let shape = EpisodeShape { ways: 3, shots: 2, queries: 3 };
        let a = sample_episode(&c, &split(), Phase::Train, shape, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_episode(&c, &split(), Phase::Train, shape, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_name_the_problem() {
        let c = toy(11, 3);
        let shape = EpisodeShape { ways: 3, shots: 2, queries: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_episode(&c, &split(), Phase::Train, shape, &mut rng).unwrap_err();
        assert!(matches!(err, EpisodeError::NotEnoughExamples { have: 3, need: 4, .. }));
        let shape = EpisodeShape { ways: 4, shots: 1, queries: 1 };
        let err = sample_episode(&c, &split(), Phase::Val, shape, &mut rng).unwrap_err();
        assert_eq!(err, EpisodeError::NotEnoughClasses { phase: "val", have: 3, need: 4 });
    }

    #[test]
    fn relabel_is_one_hot_and_balanced() {
        let c = toy(11, 10);
        let shape = EpisodeShape { ways: 4, shots: 3, queries: 2 };
        let e = sample_episode(&c, &split(), Phase::Train, shape, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (ys, yq) = relabel(&e);
        assert_eq!(ys.shape(), (12, 4));
        assert_eq!(yq.shape(), (8, 4));
        for r in 0..ys.rows() {
            assert_eq!(ys.row(r).iter().sum::<f64>(), 1.0);
            assert_eq!(ys.get(r, e.local_label(e.support[r].label).unwrap()), 1.0);
        }
        for col in 0..4 {
            assert_eq!((0..12).map(|r| ys.get(r, col)).sum::<f64>(), 3.0);
        }
    }

    #[test]
    fn relabel_direct_construction() {
        let e = Episode {
            phase: Phase::Test,
            classes: vec![7, 9],
            support: vec![Example { tokens: vec![1], label: 7 }, Example { tokens: vec![2], label: 9 }],
            support_ids: vec![0, 1],
            query: vec![Example { tokens: vec![1], label: 9 }],
            query_ids: vec![2],
            source_classes: vec![],
        };
        let (ys, yq) = relabel(&e);
        assert_eq!(ys.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(yq.data(), &[0.0, 1.0]);
    }

    #[test]
    fn dump_has_roles() {
        let c = toy(11, 10);
        let mut vocab = Vocabulary::new();
        for w in 1..120 {
            vocab.insert(&format!("w{w}"));
        }
        let shape = EpisodeShape { ways: 2, shots: 1, queries: 1 };
        let e = sample_episode(&c, &split(), Phase::Train, shape, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut buf = Vec::new();
        write_episode_dump(&mut buf, &e, &c, &vocab).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().contains("\"role\":\"support\""));
    }
}
