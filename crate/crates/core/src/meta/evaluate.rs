use rayon::prelude::*;
use serde::Serialize;

use crate::episodes::{Episode, EpisodeShape, Phase};
use crate::model::{Dataset, ModelParams};
use crate::seeds::{Purpose, Seeds};
use crate::Error;

/// Accuracy on one evaluation episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub index: usize,
    pub accuracy: f64,
}

impl EpisodeRecord {
    pub fn episode_id(&self) -> String {
        format!("{}-{}", self.seed, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_acc: f64,
    /// Sample standard deviation of the per-seed mean accuracies (0 for one seed).
    pub std: f64,
    /// Half-width of the normal-approximation 95% interval over episodes.
    pub ci95: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub learner: String,
    #[serde(skip)]
    pub per_episode: Vec<EpisodeRecord>,
}

fn phase_code(phase: Phase) -> u64 {
    match phase {
        Phase::Train => 0,
        Phase::Val => 1,
        Phase::Test => 2,
    }
}

/// The `index`-th evaluation episode for `seed`. Depends only on the data,
/// phase, shape, seed and index, so every learner sees the same episodes.
pub fn evaluation_episode(
    data: &Dataset,
    phase: Phase,
    shape: EpisodeShape,
    seed: u64,
    index: usize,
) -> Result<Episode, Error> {
    let mut rng = Seeds::new(seed).rng(Purpose::EvalEpisodes, &[phase_code(phase), index as u64]);
    Ok(data.sample(phase, shape, &mut rng)?)
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean query accuracy over `episodes` episodes for each seed, with dropout
/// disabled. Episodes run in parallel; results are kept in (seed, index) order.
pub fn evaluate(
    model: &ModelParams,
    data: &Dataset,
    phase: Phase,
    shape: EpisodeShape,
    episodes: usize,
    seeds: &[u64],
) -> Result<EvalReport, Error> {
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one episode and one seed".into()));
    }
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..episodes).map(move |i| (s, i))).collect();
    let per_episode = jobs
        .par_iter()
        .map(|&(seed, index)| {
            let episode = evaluation_episode(data, phase, shape, seed, index)?;
            let outcome = model.evaluate_episode(data, &episode)?;
            Ok(EpisodeRecord {
                seed,
                index,
                accuracy: outcome.accuracy,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let accs: Vec<f64> = per_episode.iter().map(|r| r.accuracy).collect();
    let n = accs.len();
    let mean_acc = accs.iter().sum::<f64>() / n as f64;
    let seed_means: Vec<f64> = accs.chunks(episodes).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    Ok(EvalReport {
        mean_acc,
        std: sample_std(&seed_means),
        ci95: 1.96 * sample_std(&accs) / (n as f64).sqrt(),
        episodes: n,
        seeds: seeds.to_vec(),
        learner: model.learner().name().to_owned(),
        per_episode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_values() {
        assert_eq!(sample_std(&[0.3]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
