use std::collections::HashSet;

use distsig::corpus::{lmi_table, load_corpus, load_embeddings, load_split};
use distsig::synth::{generate, SynthSpec};

#[test]
fn written_files_load_back_identically() {
    let data = generate(&SynthSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = data.write(dir.path()).unwrap();

    let (corpus, vocab) = load_corpus(&files.corpus, Some(&data.vocab)).unwrap();
    assert_eq!(corpus, data.corpus);
    assert_eq!(vocab, data.vocab);
    let (embeddings, _) = load_embeddings(&files.embeddings, &vocab).unwrap();
    assert_eq!(embeddings, data.embeddings);
    assert_eq!(load_split(&files.split, &corpus).unwrap(), data.split);

    // A fresh vocabulary renumbers words but keeps every document.
    let (fresh, fresh_vocab) = load_corpus(&files.corpus, None).unwrap();
    assert_eq!(fresh.len(), data.corpus.len());
    for (a, b) in fresh.examples().iter().zip(data.corpus.examples()) {
        let words = |ex: &distsig::corpus::Example, v: &distsig::corpus::Vocabulary| {
            ex.tokens.iter().map(|&w| v.word(w).unwrap().to_string()).collect::<Vec<_>>()
        };
        assert_eq!(words(a, &fresh_vocab), words(b, &data.vocab));
        assert_eq!(fresh.class_name(a.label), data.corpus.class_name(b.label));
    }
}

#[test]
fn keyword_sets_are_disjoint_and_test_keywords_unseen_in_training() {
    let spec = SynthSpec::default();
    let data = generate(&spec).unwrap();
    let mut owner = std::collections::HashMap::new();
    for ex in data.corpus.examples() {
        for &w in &ex.tokens {
            let word = data.vocab.word(w).unwrap();
            if word.starts_with("kw") {
                assert_eq!(*owner.entry(w).or_insert(ex.label), ex.label, "{word} used by two classes");
            }
        }
    }
    let train_words: HashSet<usize> = data
        .split
        .train
        .iter()
        .flat_map(|&c| data.corpus.examples_of(c).iter())
        .flat_map(|&i| data.corpus.example(i).tokens.iter().copied())
        .collect();
    for &c in &data.split.test {
        for j in 0..spec.keywords_per_class {
            let kw = data.vocab.id(&SynthSpec::keyword(c, j));
            assert!(kw.is_none_or(|w| !train_words.contains(&w)));
        }
    }
}

#[test]
fn top_lmi_word_is_a_planted_keyword_across_seeds() {
    let mut hits = 0;
    let mut total = 0;
    for seed in 0..20 {
        let data = generate(&SynthSpec { seed, ..SynthSpec::default() }).unwrap();
        let table = lmi_table(&data.corpus).unwrap();
        let mut seen = HashSet::new();
        for e in &table {
            if seen.insert(e.class) {
                total += 1;
                let word = data.vocab.word(e.word).unwrap();
                hits += usize::from(word.starts_with(&format!("kw{}_", e.class)));
            }
        }
    }
    assert_eq!(total, 20 * 20);
    assert!(hits as f64 / total as f64 >= 0.95, "{hits} of {total}");
}
