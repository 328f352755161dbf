//! Labeled token corpora, vocabularies, unigram models, word embeddings,
//! class splits, and word/class association statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::Tensor;

pub type WordId = usize;
pub type ClassId = usize;

/// Reserved id for words missing from a supplied vocabulary.
pub const UNK: WordId = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: example has no tokens")]
    EmptyExample { line: usize },
    #[error("embeddings line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },
    #[error("split: {0}")]
    Split(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Bijective word ↔ id map with dense ids; id 0 is always [`UNK_TOKEN`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK_TOKEN);
        v
    }

    /// Returns the id of `word`, assigning the next free id if unseen.
    pub fn insert(&mut self, word: &str) -> WordId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_owned());
        self.index.insert(word.to_owned(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    /// Id of `word`, or [`UNK`].
    pub fn id_or_unk(&self, word: &str) -> WordId {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// One labeled document.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: Vec<WordId>,
    pub label: ClassId,
}

/// Examples plus class names; class ids index `class_names`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    examples: Vec<Example>,
    class_names: Vec<String>,
    by_class: Vec<Vec<usize>>,
}

impl Corpus {
    pub fn new(examples: Vec<Example>, class_names: Vec<String>) -> Self {
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= by_class.len() {
                by_class.resize(ex.label + 1, Vec::new());
            }
            by_class[ex.label].push(i);
        }
        Corpus {
            examples,
            class_names,
            by_class,
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, idx: usize) -> &Example {
        &self.examples[idx]
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, class: ClassId) -> &str {
        self.class_names.get(class).map_or("?", String::as_str)
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Corpus indices of the examples labeled `class`, in corpus order.
    pub fn examples_of(&self, class: ClassId) -> &[usize] {
        self.by_class.get(class).map_or(&[], Vec::as_slice)
    }
}

#[derive(Deserialize, Serialize)]
struct Record<T> {
    text: Vec<T>,
    label: String,
}

/// Reads a JSON-lines corpus. Without `vocab`, a vocabulary is built in
/// first-occurrence order after [`UNK`]; with one, unknown words map to
/// [`UNK`]. Blank lines are skipped.
pub fn load_corpus(path: &Path, vocab: Option<&Vocabulary>) -> Result<(Corpus, Vocabulary), CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_corpus(BufReader::new(file), vocab).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_corpus(reader: impl BufRead, vocab: Option<&Vocabulary>) -> Result<(Corpus, Vocabulary), CorpusError> {
    let mut own = vocab.cloned().unwrap_or_default();
    let grow = vocab.is_none();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, ClassId> = HashMap::new();
    let mut examples = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record<String> = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if record.text.is_empty() {
            return Err(CorpusError::EmptyExample { line: lineno });
        }
        let tokens = record
            .text
            .iter()
            .map(|w| if grow { own.insert(w) } else { own.id_or_unk(w) })
            .collect();
        let next = class_names.len();
        let label = *class_index.entry(record.label.clone()).or_insert_with(|| {
            class_names.push(record.label.clone());
            next
        });
        examples.push(Example { tokens, label });
    }
    Ok((Corpus::new(examples, class_names), own))
}

/// Writes `corpus` in the JSON-lines format read by [`load_corpus`].
pub fn write_corpus(path: &Path, corpus: &Corpus, vocab: &Vocabulary) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for ex in corpus.examples() {
        let record = Record {
            text: ex.tokens.iter().map(|&t| vocab.word(t).unwrap_or(UNK_TOKEN)).collect(),
            label: corpus.class_name(ex.label).to_owned(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Maximum-likelihood unigram counts, no smoothing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnigramModel {
    counts: Vec<u64>,
    total: u64,
}

impl UnigramModel {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        UnigramModel { counts, total }
    }

    pub fn count(&self, w: WordId) -> u64 {
        self.counts.get(w).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn prob(&self, w: WordId) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.count(w) as f64 / self.total as f64
    }
}

/// Token counts over `examples` for a vocabulary of `vocab_size` words.
pub fn unigram_model<'a>(examples: impl IntoIterator<Item = &'a Example>, vocab_size: usize) -> UnigramModel {
    let mut counts = vec![0u64; vocab_size];
    for ex in examples {
        for &t in &ex.tokens {
            if t >= counts.len() {
                counts.resize(t + 1, 0);
            }
            counts[t] += 1;
        }
    }
    UnigramModel::from_counts(counts)
}

/// `V × E` word embedding matrix indexed by [`WordId`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
}

/// What happened while reading an embedding file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EmbeddingLoadInfo {
    /// Vocabulary words that received a vector.
    pub found: usize,
    /// Lines whose word had already appeared (the last occurrence wins).
    pub duplicates: usize,
    /// Lines whose word is not in the vocabulary.
    pub unused: usize,
}

impl EmbeddingTable {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        EmbeddingTable {
            matrix: Tensor::zeros(vocab_size, dim),
        }
    }

    /// Wraps a `V × E` matrix. The [`UNK`] row is zeroed.
    pub fn from_matrix(mut matrix: Tensor) -> Self {
        if matrix.rows() > UNK {
            let cols = matrix.cols();
            matrix.data_mut()[UNK * cols..(UNK + 1) * cols].fill(0.0);
        }
        EmbeddingTable { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn row(&self, w: WordId) -> &[f64] {
        self.matrix.row(w)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// `T × E` matrix of the embeddings of `tokens`.
    pub fn gather(&self, tokens: &[WordId]) -> Tensor {
        let e = self.dim();
        let mut data = Vec::with_capacity(tokens.len() * e);
        for &t in tokens {
            data.extend_from_slice(self.row(t));
        }
        Tensor::from_vec(tokens.len(), e, data).expect("gather shape")
    }

    /// Mean of the embeddings of `tokens`.
    pub fn mean(&self, tokens: &[WordId]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for &t in tokens {
            for (o, v) in out.iter_mut().zip(self.row(t)) {
                *o += v;
            }
        }
        let n = tokens.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Table with row `mapping[w]` set to this table's row `w`.
    pub fn permuted(&self, mapping: &[WordId]) -> EmbeddingTable {
        let e = self.dim();
        let mut m = Tensor::zeros(self.vocab_size(), e);
        for (w, &to) in mapping.iter().enumerate() {
            m.data_mut()[to * e..(to + 1) * e].copy_from_slice(self.row(w));
        }
        EmbeddingTable { matrix: m }
    }
}

/// Reads a text embedding table ("word v1 … vE" per line) for `vocab`.
/// Vocabulary words without a line keep a zero vector, as does [`UNK`].
/// A leading "count dim" header line, as written by fastText, is skipped.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<(EmbeddingTable, EmbeddingLoadInfo), CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_embeddings(BufReader::new(file), vocab)
}

pub fn read_embeddings(
    reader: impl BufRead,
    vocab: &Vocabulary,
) -> Result<(EmbeddingTable, EmbeddingLoadInfo), CorpusError> {
    let mut dim: Option<usize> = None;
    let mut rows: HashMap<WordId, Vec<f64>> = HashMap::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut info = EmbeddingLoadInfo::default();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::EmbeddingFormat {
            line: lineno,
            message: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if lineno == 1 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let values = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CorpusError::EmbeddingFormat {
                line: lineno,
                message: format!("bad value: {e}"),
            })?;
        if values.is_empty() {
            return Err(CorpusError::EmbeddingFormat {
                line: lineno,
                message: "embedding dimension is zero".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::EmbeddingFormat {
                line: lineno,
                message: "non-finite value".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CorpusError::EmbeddingFormat {
                    line: lineno,
                    message: format!("dimension {} differs from {}", values.len(), d),
                })
            }
            _ => {}
        }
        if !seen.insert(word.to_owned()) {
            info.duplicates += 1;
        }
        match vocab.id(word) {
            Some(UNK) => {}
            Some(id) => {
                rows.insert(id, values);
            }
            None => info.unused += 1,
        }
    }

    let dim = dim.ok_or(CorpusError::EmbeddingFormat {
        line: 0,
        message: "no embedding lines".into(),
    })?;
    let mut table = EmbeddingTable::zeros(vocab.len(), dim);
    info.found = rows.len();
    for (id, values) in rows {
        table.matrix.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
    }
    Ok((table, info))
}

/// Writes every vocabulary word except [`UNK`] with its vector.
pub fn write_embeddings(path: &Path, table: &EmbeddingTable, vocab: &Vocabulary) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for (id, word) in vocab.words().iter().enumerate().skip(1) {
        write!(w, "{word}").map_err(io_err(path))?;
        for v in table.row(id) {
            write!(w, " {v}").map_err(io_err(path))?;
        }
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Disjoint train / validation / test class sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<ClassId>,
    pub val: Vec<ClassId>,
    pub test: Vec<ClassId>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

impl ClassSplit {
    /// Checks pairwise disjointness and that every set has at least `n`
    /// classes.
    pub fn validate(&self, n: usize) -> Result<(), CorpusError> {
        let sets = [("train", &self.train), ("val", &self.val), ("test", &self.test)];
        let mut owner: HashMap<ClassId, &str> = HashMap::new();
        for (name, set) in sets {
            if set.len() < n {
                return Err(CorpusError::Split(format!(
                    "{name} has {} classes, need at least {n}",
                    set.len()
                )));
            }
            for &c in set {
                if let Some(prev) = owner.insert(c, name) {
                    return Err(CorpusError::Split(format!("class {c} is in both {prev} and {name}")));
                }
            }
        }
        Ok(())
    }
}

pub fn load_split(path: &Path, corpus: &Corpus) -> Result<ClassSplit, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let file: SplitFile = serde_json::from_str(&text).map_err(|e| CorpusError::Split(e.to_string()))?;
    let resolve = |names: &[String]| -> Result<Vec<ClassId>, CorpusError> {
        names
            .iter()
            .map(|n| {
                corpus
                    .class_id(n)
                    .ok_or_else(|| CorpusError::Split(format!("unknown class {n:?}")))
            })
            .collect()
    };
    let split = ClassSplit {
        train: resolve(&file.train)?,
        val: resolve(&file.val)?,
        test: resolve(&file.test)?,
    };
    split.validate(0)?;
    Ok(split)
}

pub fn write_split(path: &Path, split: &ClassSplit, corpus: &Corpus) -> Result<(), CorpusError> {
    let names = |ids: &[ClassId]| ids.iter().map(|&c| corpus.class_name(c).to_owned()).collect();
    let file = SplitFile {
        train: names(&split.train),
        val: names(&split.val),
        test: names(&split.test),
    };
    let text = serde_json::to_string_pretty(&file).expect("split serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Local mutual information of one (word, class) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiEntry {
    pub class: ClassId,
    pub word: WordId,
    pub lmi: f64,
}

/// `P(w,c) · ln(P(w,c) / (P(w) P(c)))` from token-level counts, for every
/// pair with a nonzero joint count. Grouped by class id ascending, sorted by
/// descending LMI within a class (ties by word id).
pub fn lmi_table(corpus: &Corpus) -> Result<Vec<LmiEntry>, CorpusError> {
    let mut joint: BTreeMap<(ClassId, WordId), u64> = BTreeMap::new();
    let mut word_counts: HashMap<WordId, u64> = HashMap::new();
    let mut class_counts: HashMap<ClassId, u64> = HashMap::new();
    let mut total = 0u64;
    for ex in corpus.examples() {
        for &w in &ex.tokens {
            *joint.entry((ex.label, w)).or_default() += 1;
            *word_counts.entry(w).or_default() += 1;
            *class_counts.entry(ex.label).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = total as f64;
    let mut out: Vec<LmiEntry> = joint
        .into_iter()
        .map(|((class, word), count)| {
            let p_wc = count as f64 / n;
            let p_w = word_counts[&word] as f64 / n;
            let p_c = class_counts[&class] as f64 / n;
            LmiEntry {
                class,
                word,
                lmi: p_wc * (p_wc / (p_w * p_c)).ln(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.class
            .cmp(&b.class)
            .then(b.lmi.total_cmp(&a.lmi))
            .then(a.word.cmp(&b.word))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_from(lines: &str) -> (Corpus, Vocabulary) {
        read_corpus(lines.as_bytes(), None).unwrap()
    }

    #[test]
    fn loads_two_classes() {
        let (c, v) = corpus_from(
            "{\"text\": [\"grandma\", \"beauty\"], \"label\": \"a\"}\n{\"text\": [\"beauty\"], \"label\": \"b\"}\n",
        );
        assert_eq!(c.len(), 2);
        assert_eq!(c.num_classes(), 2);
        assert_eq!(v.id("grandma"), Some(1));
        assert_eq!(v.id("beauty"), Some(2));
        assert_eq!(c.example(0).tokens, vec![1, 2]);
    }

    #[test]
    fn empty_text_names_the_line() {
        let err = read_corpus("{\"text\": [\"x\"], \"label\": \"a\"}\n{\"text\": [], \"label\": \"b\"}\n".as_bytes(), None)
            .unwrap_err();
        assert!(matches!(err, CorpusError::EmptyExample { line: 2 }));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = read_corpus("{\"text\": [\"x\"], \"label\": \"a\"}\n\n{\"text\": 5}\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 3, .. }));
    }

    #[test]
    fn supplied_vocab_maps_unknown_to_unk() {
        let (_, v) = corpus_from("{\"text\": [\"a\", \"b\"], \"label\": \"x\"}\n");
        let (c, v2) = read_corpus("{\"text\": [\"b\", \"zzz\"], \"label\": \"y\"}\n".as_bytes(), Some(&v)).unwrap();
        assert_eq!(c.example(0).tokens, vec![2, UNK]);
        assert_eq!(v2, v);
    }

    #[test]
    fn unigram_counts() {
        let ex = [
            Example { tokens: vec![1, 1, 2], label: 0 },
            Example { tokens: vec![3], label: 1 },
        ];
        let u = unigram_model(&ex, 4);
        assert_eq!(u.prob(1), 0.5);
        assert_eq!(u.prob(2), 0.25);
        assert_eq!(u.prob(3), 0.25);
        assert_eq!(u.prob(0), 0.0);

        let empty = unigram_model(&[], 4);
        assert_eq!(empty.total(), 0);
        assert!((0..4).all(|w| empty.prob(w) == 0.0));
    }

    #[test]
    fn embeddings_fill_missing_with_zero() {
        let (_, v) = corpus_from("{\"text\": [\"a\", \"b\", \"c\"], \"label\": \"x\"}\n");
        let (t, info) = read_embeddings("a 1 2 3\nc 4 5 6\n".as_bytes(), &v).unwrap();
        assert_eq!((t.vocab_size(), t.dim()), (4, 3));
        assert_eq!(t.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(t.row(2), &[0.0; 3]);
        assert_eq!(t.row(UNK), &[0.0; 3]);
        assert_eq!(info.found, 2);
    }

    #[test]
    fn embeddings_reject_mixed_dims_and_zero_dim() {
        let (_, v) = corpus_from("{\"text\": [\"a\", \"b\"], \"label\": \"x\"}\n");
        assert!(matches!(
            read_embeddings("a 1 2 3\nb 1 2 3 4\n".as_bytes(), &v),
            Err(CorpusError::EmbeddingFormat { line: 2, .. })
        ));
        assert!(read_embeddings("a\n".as_bytes(), &v).is_err());
    }

    #[test]
    fn duplicate_embedding_last_wins() {
        let (_, v) = corpus_from("{\"text\": [\"a\", \"b\"], \"label\": \"x\"}\n");
        let (t, info) = read_embeddings("a 1 1\nb 2 2\na 3 3\n".as_bytes(), &v).unwrap();
        assert_eq!(t.row(1), &[3.0, 3.0]);
        assert_eq!(info.duplicates, 1);
    }

    #[test]
    fn fasttext_header_is_skipped() {
        let (_, v) = corpus_from("{\"text\": [\"a\"], \"label\": \"x\"}\n");
        let (t, _) = read_embeddings("1 2\na 0.5 -0.5\n".as_bytes(), &v).unwrap();
        assert_eq!(t.row(1), &[0.5, -0.5]);
    }

    #[test]
    fn split_validation() {
        let ok = ClassSplit { train: vec![0, 1], val: vec![2, 3], test: vec![4, 5] };
        assert!(ok.validate(2).is_ok());
        assert!(ok.validate(3).is_err());
        let overlap = ClassSplit { train: vec![0, 1], val: vec![1, 3], test: vec![4, 5] };
        assert!(overlap.validate(1).is_err());
    }

    #[test]
    fn lmi_prefers_class_exclusive_words() {
        // u only in class 0; v evenly in both.
        let (c, vocab) = corpus_from(concat!(
            "{\"text\": [\"u\", \"v\"], \"label\": \"c1\"}\n",
            "{\"text\": [\"u\", \"v\"], \"label\": \"c1\"}\n",
            "{\"text\": [\"w\", \"v\"], \"label\": \"c2\"}\n",
            "{\"text\": [\"w\", \"v\"], \"label\": \"c2\"}\n",
        ));
        let table = lmi_table(&c).unwrap();
        let get = |class: usize, word: &str| {
            let id = vocab.id(word).unwrap();
            table.iter().find(|e| e.class == class && e.word == id).unwrap().lmi
        };
        assert!(get(0, "u") > get(0, "v"));
        assert_eq!(table[0].word, vocab.id("u").unwrap());
    }

    #[test]
    fn lmi_single_class_is_zero() {
        let (c, _) = corpus_from("{\"text\": [\"a\", \"b\", \"a\"], \"label\": \"x\"}\n{\"text\": [\"c\"], \"label\": \"x\"}\n");
        for e in lmi_table(&c).unwrap() {
            assert!(e.lmi.abs() < 1e-15, "{e:?}");
        }
    }

    #[test]
    fn lmi_matches_count_and_log_oracle() {
        // 3 words, 2 classes. Token counts:
        //   class 0: a×3 b×1        class 1: b×2 c×2
        let (c, v) = corpus_from(concat!(
            "{\"text\": [\"a\", \"a\", \"b\"], \"label\": \"x\"}\n",
            "{\"text\": [\"a\"], \"label\": \"x\"}\n",
            "{\"text\": [\"b\", \"c\", \"c\", \"b\"], \"label\": \"y\"}\n",
        ));
        let counts: [[f64; 3]; 2] = [[3.0, 1.0, 0.0], [0.0, 2.0, 2.0]];
        let n: f64 = 8.0;
        let table = lmi_table(&c).unwrap();
        for (class, row) in counts.iter().enumerate() {
            let pc = row.iter().sum::<f64>() / n;
            for (wi, word) in ["a", "b", "c"].iter().enumerate() {
                let joint = row[wi];
                let pw = (counts[0][wi] + counts[1][wi]) / n;
                let id = v.id(word).unwrap();
                let found = table.iter().find(|e| e.class == class && e.word == id);
                if joint == 0.0 {
                    assert!(found.is_none());
                    continue;
                }
                let pwc = joint / n;
                let expected = pwc * (pwc / (pw * pc)).ln();
                assert!((found.unwrap().lmi - expected).abs() < 1e-12);
            }
        }
        assert!(matches!(lmi_table(&Corpus::new(vec![], vec![])), Err(CorpusError::EmptyCorpus)));
    }

    proptest! {
        #[test]
        fn vocabulary_round_trips(words in proptest::collection::vec("[a-z]{1,6}", 0..40)) {
            let mut v = Vocabulary::new();
            for w in &words {
                v.insert(w);
            }
            for id in 0..v.len() {
                prop_assert_eq!(v.id(v.word(id).unwrap()), Some(id));
            }
        }

        #[test]
        fn unigram_normalizes(tokens in proptest::collection::vec(0usize..20, 1..200)) {
            let ex = [Example { tokens: tokens.clone(), label: 0 }];
            let u = unigram_model(&ex, 20);
            let total: f64 = (0..20).map(|w| u.prob(w)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for w in 0..20 {
                prop_assert_eq!(u.prob(w) == 0.0, u.count(w) == 0);
            }
        }

        #[test]
        fn exclusive_word_beats_uniform_word(count in 1usize..10, other in 1usize..10) {
            // "x" only in class 0, "y" spread evenly: same total count 2*count.
            let mut lines = String::new();
            for _ in 0..count {
                lines += "{\"text\": [\"x\", \"x\", \"y\"], \"label\": \"c0\"}\n";
                lines += "{\"text\": [\"y\"], \"label\": \"c1\"}\n";
            }
            for _ in 0..other {
                lines += "{\"text\": [\"z\"], \"label\": \"c1\"}\n";
            }
            let (c, v) = read_corpus(lines.as_bytes(), None).unwrap();
            let t = lmi_table(&c).unwrap();
            let x = v.id("x").unwrap();
            let y = v.id("y").unwrap();
            let lmi = |w| t.iter().find(|e| e.class == 0 && e.word == w).map_or(0.0, |e| e.lmi);
            prop_assert!(lmi(y) <= lmi(x));
        }
    }

    #[test]
    fn loading_is_deterministic() {
        let text = "{\"text\": [\"q\", \"r\", \"q\"], \"label\": \"a\"}\n{\"text\": [\"s\"], \"label\": \"b\"}\n";
        let a = read_corpus(text.as_bytes(), None).unwrap();
        let b = read_corpus(text.as_bytes(), None).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.examples(), b.0.examples());
    }
}
