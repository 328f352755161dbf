//! Run configuration files.

use std::path::{Path, PathBuf};

use distsig::attention::AttentionConfig;
use distsig::episodes::{EpisodeShape, Phase};
use distsig::meta::TrainConfig;
use distsig::model::{Architecture, Learner};
use distsig::signatures::{EstimatorMode, SupportClassifierConfig};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Everything one run needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Master seed for initialization, training episodes and dropout.
    pub seed: u64,

    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub episodes_per_epoch: usize,
    pub patience: usize,
    pub lr: f64,
    pub tasks_per_step: usize,
    pub val_episodes: usize,
    pub max_epochs: usize,

    pub learner: Learner,
    pub use_s: bool,
    pub use_t: bool,
    pub use_bilstm: bool,
    pub rescale_t: bool,
    pub hidden: usize,
    pub dropout: f64,
    pub estimator: EstimatorMode,
    pub support_classifier: SupportClassifierConfig,

    pub eval_phase: Phase,
    pub eval_episodes: usize,
    /// Evaluation seeds; empty means `[seed]`.
    pub eval_seeds: Vec<u64>,

    /// Episode dumped by `stats` and `dump-repr`, identified like an
    /// evaluation episode; `dump_seed` defaults to `seed`.
    pub dump_phase: Phase,
    pub dump_seed: Option<u64>,
    pub dump_index: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let attention = AttentionConfig::default();
        RunConfig {
            corpus: None,
            embeddings: None,
            split: None,
            output_dir: None,
            seed: 0,
            ways: train.ways,
            shots: train.shots,
            queries: train.queries,
            episodes_per_epoch: train.episodes_per_epoch,
            patience: train.patience,
            lr: train.lr,
            tasks_per_step: train.tasks_per_step,
            val_episodes: train.val_episodes,
            max_epochs: train.max_epochs,
            learner: Learner::Main,
            use_s: attention.use_s,
            use_t: attention.use_t,
            use_bilstm: attention.use_bilstm,
            rescale_t: attention.rescale_t,
            hidden: attention.hidden,
            dropout: attention.dropout,
            estimator: EstimatorMode::default(),
            support_classifier: SupportClassifierConfig::default(),
            eval_phase: Phase::Test,
            eval_episodes: 1000,
            eval_seeds: Vec::new(),
            dump_phase: Phase::Test,
            dump_seed: None,
            dump_index: 0,
        }
    }
}

/// Input files and output directory of a validated config.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPaths {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub split: PathBuf,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.corpus,
            &mut config.embeddings,
            &mut config.split,
            &mut config.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            ways: self.ways,
            shots: self.shots,
            queries: self.queries,
            episodes_per_epoch: self.episodes_per_epoch,
            patience: self.patience,
            lr: self.lr,
            tasks_per_step: self.tasks_per_step,
            val_episodes: self.val_episodes,
            max_epochs: self.max_epochs,
        }
    }

    pub fn shape(&self) -> EpisodeShape {
        self.train_config().shape()
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            use_s: self.use_s,
            use_t: self.use_t,
            use_bilstm: self.use_bilstm,
            rescale_t: self.rescale_t,
            hidden: self.hidden,
            dropout: self.dropout,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.learner, self.attention_config(), self.estimator, self.support_classifier)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        if self.eval_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.eval_seeds.clone()
        }
    }

    pub fn dump_seed(&self) -> u64 {
        self.dump_seed.unwrap_or(self.seed)
    }

    /// Checks every setting that does not need the data.
    pub fn validate(&self) -> Result<(), Failure> {
        self.train_config().validate().map_err(|e| Failure::config(e.to_string()))?;
        if self.learner == Learner::Main {
            self.attention_config().validate().map_err(|e| Failure::config(e.to_string()))?;
        }
        let sc = &self.support_classifier;
        if !(sc.reg >= 0.0 && sc.step_size > 0.0 && sc.grad_tol >= 0.0 && sc.max_iters > 0) {
            return Err(Failure::config(
                "support_classifier: reg and grad_tol must be non-negative, step_size and max_iters positive",
            ));
        }
        if self.eval_episodes == 0 {
            return Err(Failure::config("eval_episodes: must be at least 1"));
        }
        Ok(())
    }

    /// Validates settings and that every input file exists.
    pub fn data_paths(&self) -> Result<DataPaths, Failure> {
        self.validate()?;
        let existing = |name: &str, p: &Option<PathBuf>| -> Result<PathBuf, Failure> {
            match p {
                None => Err(Failure::config(format!("{name}: required"))),
                Some(p) if !p.is_file() => Err(Failure::config(format!("{name}: {} does not exist", p.display()))),
                Some(p) => Ok(p.clone()),
            }
        };
        Ok(DataPaths {
            corpus: existing("corpus", &self.corpus)?,
            embeddings: existing("embeddings", &self.embeddings)?,
            split: existing("split", &self.split)?,
            output_dir: self
                .output_dir
                .clone()
                .ok_or_else(|| Failure::config("output_dir: required"))?,
        })
    }

    /// The config with absolute paths, as echoed into the output directory.
    pub fn effective(&self) -> RunConfig {
        let absolute = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| std::fs::canonicalize(p).unwrap_or_else(|_| std::path::absolute(p).unwrap_or_else(|_| p.clone())))
        };
        RunConfig {
            corpus: absolute(&self.corpus),
            embeddings: absolute(&self.embeddings),
            split: absolute(&self.split),
            output_dir: absolute(&self.output_dir),
            eval_seeds: self.eval_seeds(),
            dump_seed: Some(self.dump_seed()),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.shape(), EpisodeShape { ways: 5, shots: 1, queries: 5 });
        assert_eq!(c.eval_seeds(), vec![0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.json", r#"{"wayz": 3}"#);
        let err = RunConfig::load(&p).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("wayz"), "{}", err.message);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "corpus.jsonl", "");
        let p = write(dir.path(), "c.json", r#"{"corpus": "corpus.jsonl", "output_dir": "/tmp/x"}"#);
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.corpus.unwrap(), dir.path().join("corpus.jsonl"));
        assert_eq!(c.output_dir.unwrap(), PathBuf::from("/tmp/x"));
    }

    #[test]
    fn missing_files_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "corpus.jsonl", "");
        write(dir.path(), "split.json", "");
        let p = write(
            dir.path(),
            "c.json",
            r#"{"corpus": "corpus.jsonl", "split": "split.json", "embeddings": "nope.txt", "output_dir": "out"}"#,
        );
        let err = RunConfig::load(&p).unwrap().data_paths().unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.starts_with("embeddings:"), "{}", err.message);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let c = RunConfig { patience: 0, ..RunConfig::default() };
        assert!(c.validate().unwrap_err().message.contains("patience"));
        let c = RunConfig { eval_episodes: 0, ..RunConfig::default() };
        assert!(c.validate().unwrap_err().message.contains("eval_episodes"));
    }

    #[test]
    fn effective_config_round_trips() {
        let c = RunConfig { seed: 9, learner: Learner::IdfRr, ..RunConfig::default() }.effective();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.eval_seeds, vec![9]);
    }
}
