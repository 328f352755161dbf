use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::episodes::{EpisodeShape, Phase};
use crate::grad::Tensor;
use crate::model::{Dataset, ModelParams};
use crate::seeds::{Purpose, Seeds};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub episodes_per_epoch: usize,
    pub patience: usize,
    pub lr: f64,
    /// Episodes whose gradients are averaged into one update.
    pub tasks_per_step: usize,
    pub val_episodes: usize,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ways: 5,
            shots: 1,
            queries: 5,
            episodes_per_epoch: 100,
            patience: 20,
            lr: 1e-3,
            tasks_per_step: 1,
            val_episodes: 100,
            max_epochs: 1000,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            ways: self.ways,
            shots: self.shots,
            queries: self.queries,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let counts = [
            ("shots", self.shots),
            ("queries", self.queries),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("patience", self.patience),
            ("tasks_per_step", self.tasks_per_step),
            ("val_episodes", self.val_episodes),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.ways < 2 {
            return Err(Error::Config("ways must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training-episode loss before each update, with dropout.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Best validation loss so far.
    pub best: f64,
}

/// Patience-based stopping on a loss that must strictly improve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's loss; returns whether it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn check_data(data: &Dataset, config: &TrainConfig) -> Result<(), Error> {
    let need = config.shots + config.queries;
    for phase in [Phase::Train, Phase::Val] {
        let classes = phase.classes(&data.split);
        if classes.len() < config.ways {
            return Err(Error::Config(format!(
                "{} split has {} classes, episodes need {}",
                phase.name(),
                classes.len(),
                config.ways
            )));
        }
        for &c in classes {
            let have = data.corpus.examples_of(c).len();
            if have < need {
                return Err(Error::Config(format!(
                    "class {} has {have} examples, episodes need {need}",
                    data.corpus.class_name(c)
                )));
            }
        }
    }
    Ok(())
}

/// Mean validation loss and accuracy over fresh episodes for `epoch`.
fn validate(model: &ModelParams, data: &Dataset, config: &TrainConfig, seeds: &Seeds, epoch: usize) -> Result<(f64, f64), Error> {
    let results = (0..config.val_episodes)
        .into_par_iter()
        .map(|j| {
            let mut rng = seeds.rng(Purpose::ValEpisodes, &[epoch as u64, j as u64]);
            let episode = data.sample(Phase::Val, config.shape(), &mut rng)?;
            let out = model.evaluate_episode(data, &episode)?;
            Ok((out.loss.unwrap_or(f64::NAN), out.accuracy))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let n = results.len() as f64;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = results.iter().map(|r| r.1).sum::<f64>() / n;
    Ok((loss, acc))
}

/// Meta-trains `initial` and returns the best-validation snapshot.
///
/// Epoch `e` (1-based) draws training episode `i` and its dropout masks from
/// streams keyed `[e, i]`, and validation episode `j` from `[e, j]`. Learners
/// without trainable parameters are returned unchanged with an empty log.
pub fn train(
    initial: ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    seeds: &Seeds,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, Error> {
    config.validate()?;
    check_data(data, config)?;
    if !initial.is_trainable() {
        return Ok(TrainOutcome {
            params: initial,
            log: Vec::new(),
            best_epoch: 0,
        });
    }
    let mut model = initial;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best = (model.clone(), 0);
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        let indices: Vec<usize> = (0..config.episodes_per_epoch).collect();
        for batch in indices.chunks(config.tasks_per_step) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let key = [epoch as u64, i as u64];
                    let mut rng = seeds.rng(Purpose::TrainEpisodes, &key);
                    let episode = data.sample(Phase::Train, config.shape(), &mut rng)?;
                    let mut dropout = seeds.rng(Purpose::Dropout, &key);
                    model.loss_and_grads(data, &episode, Some(&mut dropout))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let scale = 1.0 / results.len() as f64;
            let mut mean: Vec<Tensor> = results[0].1.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
            for (loss, grads) in &results {
                loss_sum += loss;
                for (acc, g) in mean.iter_mut().zip(grads) {
                    for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * x;
                    }
                }
            }
            model.adam_step(&mut adam, &mean)?;
        }

        let (val_loss, val_acc) = validate(&model, data, config, seeds, epoch)?;
        if stopping.observe(val_loss) {
            best = (model.clone(), epoch);
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / config.episodes_per_epoch as f64,
            val_loss,
            val_acc,
            best: stopping.best(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} acc {:.4}",
            entry.train_loss,
            val_loss,
            val_acc
        );
        on_epoch(&entry);
        log.push(entry);
        if stopping.should_stop() {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        log,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_stops_after_patience_plus_one() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(0.7));
        assert!(!s.should_stop());
        assert!(!s.observe(0.7));
        assert!(s.should_stop());

        let mut s = EarlyStopping::new(3);
        let mut epochs = 0;
        for loss in [1.0, 0.9, 0.95, 0.9, 0.8, 0.85, 0.85, 0.85, 0.1] {
            epochs += 1;
            s.observe(loss);
            if s.should_stop() {
                break;
            }
        }
        assert_eq!(epochs, 8);
        assert_eq!(s.best(), 0.8);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { patience: 0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(m)) if m.contains("patience")));
        let bad = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
