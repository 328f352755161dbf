use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use distsig::corpus::{lmi_table, load_corpus, load_embeddings, load_split, Vocabulary};
use distsig::episodes::Episode;
use distsig::meta::{evaluate, evaluation_episode, train, EpisodeRecord};
use distsig::model::{Dataset, Learner, ModelParams};
use distsig::seeds::{Purpose, Seeds};
use distsig::signatures::episode_signatures;
use distsig::synth::{generate, SynthSpec};
use distsig::verify::{self, Fault};

use crate::config::RunConfig;
use crate::failure::Failure;

struct Run {
    config: RunConfig,
    data: Dataset,
    vocab: Vocabulary,
    out: PathBuf,
}

/// Loads the config and its data, creates the output directory and echoes
/// the effective config into it.
fn open(config_path: &Path) -> Result<Run, Failure> {
    let config = RunConfig::load(config_path)?;
    let paths = config.data_paths()?;
    let (corpus, vocab) = load_corpus(&paths.corpus, None).map_err(|e| Failure::config(format!("corpus: {e}")))?;
    let (embeddings, info) =
        load_embeddings(&paths.embeddings, &vocab).map_err(|e| Failure::config(format!("embeddings: {e}")))?;
    log::info!(
        "{} of {} vocabulary words have embeddings",
        info.found,
        vocab.len().saturating_sub(1)
    );
    let split = load_split(&paths.split, &corpus).map_err(|e| Failure::config(format!("split: {e}")))?;
    let data = Dataset::new(corpus, embeddings, split)?;
    std::fs::create_dir_all(&paths.output_dir)
        .map_err(|e| Failure::config(format!("output_dir: {}: {e}", paths.output_dir.display())))?;
    let effective = serde_json::to_string_pretty(&config.effective()).expect("config serializes");
    std::fs::write(paths.output_dir.join("config.json"), effective + "\n")?;
    Ok(Run {
        config,
        data,
        vocab,
        out: paths.output_dir,
    })
}

fn load_model(path: &Path, config: &RunConfig) -> Result<ModelParams, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::model(format!("{}: {e}", path.display())))?;
    let model = ModelParams::from_json(&text).map_err(|e| Failure::from(e).context(&path.display().to_string()))?;
    model.check_architecture(&config.architecture())?;
    Ok(model)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, Failure> {
    Ok(csv::Writer::from_path(path)?)
}

fn word(vocab: &Vocabulary, id: usize) -> &str {
    vocab.word(id).unwrap_or("")
}

fn episode_id(seed: u64, index: usize) -> String {
    EpisodeRecord {
        seed,
        index,
        accuracy: 0.0,
    }
    .episode_id()
}

pub fn train_cmd(config_path: &Path) -> Result<(), Failure> {
    let run = open(config_path)?;
    let seeds = Seeds::new(run.config.seed);
    let mut init_rng = seeds.rng(Purpose::Init, &[]);
    let initial = ModelParams::init(run.config.architecture(), &mut init_rng)?;

    let mut log = BufWriter::new(File::create(run.out.join("log.jsonl"))?);
    let mut write_err = None;
    let outcome = train(initial, &run.data, &run.config.train_config(), &seeds, |entry| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log.flush()?;
    std::fs::write(run.out.join("model.json"), outcome.params.to_json())?;
    match outcome.log.iter().find(|e| e.epoch == outcome.best_epoch) {
        Some(best) => println!(
            "{}: {} epochs, best epoch {} (val loss {:.4}, val acc {:.4})",
            run.config.learner,
            outcome.log.len(),
            best.epoch,
            best.val_loss,
            best.val_acc
        ),
        None => println!("{}: nothing to train", run.config.learner),
    }
    println!("wrote {}", run.out.join("model.json").display());
    Ok(())
}

pub fn eval_cmd(config_path: &Path, model_path: &Path) -> Result<(), Failure> {
    let run = open(config_path)?;
    let model = load_model(model_path, &run.config)?;
    let c = &run.config;
    let report = evaluate(&model, &run.data, c.eval_phase, c.shape(), c.eval_episodes, &c.eval_seeds())?;

    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(run.out.join("report.json"), text + "\n")?;
    let mut w = csv_writer(&run.out.join("episodes.csv"))?;
    w.write_record(["episode_id", "accuracy"])?;
    for r in &report.per_episode {
        w.write_record([r.episode_id(), r.accuracy.to_string()])?;
    }
    w.flush()?;
    println!(
        "{} on {} {}-way {}-shot: accuracy {:.4} ± {:.4} over {} episodes",
        report.learner,
        c.eval_phase.name(),
        c.ways,
        c.shots,
        report.mean_acc,
        report.ci95,
        report.episodes
    );
    Ok(())
}

fn dump_episode(run: &Run) -> Result<Episode, Failure> {
    let c = &run.config;
    Ok(evaluation_episode(&run.data, c.dump_phase, c.shape(), c.dump_seed(), c.dump_index)?)
}

pub fn stats_cmd(config_path: &Path) -> Result<(), Failure> {
    let run = open(config_path)?;
    let corpus = &run.data.corpus;
    let table = lmi_table(corpus).map_err(|e| Failure::config(format!("corpus: {e}")))?;
    let mut w = csv_writer(&run.out.join("lmi.csv"))?;
    w.write_record(["class", "word", "lmi"])?;
    for e in &table {
        w.write_record([corpus.class_name(e.class), word(&run.vocab, e.word), &e.lmi.to_string()])?;
    }
    w.flush()?;

    let episode = match dump_episode(&run) {
        Ok(e) => e,
        Err(f) if f.code == Failure::CONFIG => {
            log::warn!("no signature dump: {f}");
            let _ = std::fs::remove_file(run.out.join("signatures.csv"));
            println!("wrote {}", run.out.join("lmi.csv").display());
            return Ok(());
        }
        Err(f) => return Err(f),
    };
    let pool = run.data.pool_unigram(&episode);
    let c = &run.config;
    let sigs = episode_signatures(&episode, &pool, &run.data.embeddings, c.estimator, &c.support_classifier)
        .map_err(distsig::Error::from)?;
    let id = episode_id(c.dump_seed(), c.dump_index);
    let mut w = csv_writer(&run.out.join("signatures.csv"))?;
    w.write_record(["episode_id", "example_id", "position", "word", "s", "t"])?;
    let examples = episode.support_ids.iter().zip(&episode.support).chain(episode.query_ids.iter().zip(&episode.query));
    for ((&ex_id, ex), sig) in examples.zip(sigs.support.iter().chain(&sigs.query)) {
        for (pos, &tok) in ex.tokens.iter().enumerate() {
            w.write_record([
                id.as_str(),
                &ex_id.to_string(),
                &pos.to_string(),
                word(&run.vocab, tok),
                &sig.s[pos].to_string(),
                &sig.t[pos].to_string(),
            ])?;
        }
    }
    w.flush()?;
    println!(
        "wrote {} and {}",
        run.out.join("lmi.csv").display(),
        run.out.join("signatures.csv").display()
    );
    Ok(())
}

pub fn dump_repr_cmd(config_path: &Path, model_path: &Path, uniform: bool) -> Result<(), Failure> {
    let run = open(config_path)?;
    let model = load_model(model_path, &run.config)?;
    let episode = dump_episode(&run)?;
    let reps = model.query_representations(&run.data, &episode, uniform)?;

    let mut w = csv_writer(&run.out.join("representations.csv"))?;
    let mut header = vec!["example_id".to_string(), "class".to_string()];
    header.extend((1..=reps.cols()).map(|i| format!("v_{i}")));
    w.write_record(&header)?;
    for (row, (&ex_id, ex)) in episode.query_ids.iter().zip(&episode.query).enumerate() {
        let mut record = vec![ex_id.to_string(), run.data.corpus.class_name(ex.label).to_string()];
        record.extend(reps.row(row).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    println!("wrote {}", run.out.join("representations.csv").display());

    if model.learner() == Learner::Main && !uniform {
        let (_, alphas) = model.attention_weights(&run.data, &episode)?;
        let id = episode_id(run.config.dump_seed(), run.config.dump_index);
        let mut w = csv_writer(&run.out.join("attention.csv"))?;
        w.write_record(["episode_id", "example_id", "position", "word", "alpha"])?;
        let examples = episode.support_ids.iter().zip(&episode.support).chain(episode.query_ids.iter().zip(&episode.query));
        for ((&ex_id, ex), alpha) in examples.zip(&alphas) {
            for (pos, (&tok, a)) in ex.tokens.iter().zip(alpha).enumerate() {
                w.write_record([id.as_str(), &ex_id.to_string(), &pos.to_string(), word(&run.vocab, tok), &a.to_string()])?;
            }
        }
        w.flush()?;
        println!("wrote {}", run.out.join("attention.csv").display());
    }
    Ok(())
}

pub fn verify_cmd(config_path: Option<&Path>, seed: Option<u64>, fault: Option<Fault>) -> Result<(), Failure> {
    let config = match config_path {
        Some(p) => {
            let c = RunConfig::load(p)?;
            c.validate()?;
            c
        }
        None => RunConfig::default(),
    };
    let seed = seed.unwrap_or(config.seed);
    if let Some(f) = fault {
        println!("injected fault: {f}");
    }
    let ctx = verify::Context::new(seed, fault)?;
    let results = verify::run_all(&ctx);
    print!("{}", verify::format_table(&results));
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(&results).expect("results serialize");
        std::fs::write(dir.join("verify.json"), text + "\n")?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    if failed.is_empty() {
        println!("all {} checks passed in {total:.1}s", results.len());
        Ok(())
    } else {
        Err(Failure {
            code: Failure::VERIFY,
            message: format!("failed checks: {}", failed.join(", ")),
        })
    }
}

pub fn synth_cmd(out: &Path, spec_path: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = generate(&spec)?;
    let files = data.write(out)?;
    let name = |p: &Path| PathBuf::from(p.file_name().expect("file name"));
    let template = RunConfig {
        corpus: Some(name(&files.corpus)),
        embeddings: Some(name(&files.embeddings)),
        split: Some(name(&files.split)),
        output_dir: Some(PathBuf::from("run")),
        ..RunConfig::default()
    };
    let text = serde_json::to_string_pretty(&template).expect("config serializes");
    std::fs::write(out.join("run.json"), text + "\n")?;
    println!(
        "wrote {} documents over {} classes to {} (run config: {})",
        data.corpus.len(),
        data.corpus.num_classes(),
        out.display(),
        out.join("run.json").display()
    );
    Ok(())
}
