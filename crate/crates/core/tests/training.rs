use distsig::attention::AttentionConfig;
use distsig::episodes::Phase;
use distsig::meta::{evaluate, train, TrainConfig};
use distsig::model::{Architecture, Dataset, Learner, ModelParams};
use distsig::seeds::{Purpose, Seeds};
use distsig::signatures::EstimatorMode;
use distsig::synth::{generate, SynthSpec};

fn dataset(spec: SynthSpec) -> Dataset {
    let d = generate(&spec).unwrap();
    Dataset::new(d.corpus, d.embeddings, d.split).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        max_epochs: 3,
        episodes_per_epoch: 20,
        val_episodes: 20,
        ..TrainConfig::default()
    }
}

fn small_attention() -> AttentionConfig {
    AttentionConfig {
        hidden: 8,
        ..AttentionConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_serializes_exactly() {
    let data = dataset(SynthSpec::default());
    let seeds = Seeds::new(3);
    let run = || {
        let arch = Architecture::main(small_attention(), EstimatorMode::CountMle);
        let init = ModelParams::init(arch, &mut seeds.rng(Purpose::Init, &[])).unwrap();
        train(init, &data, &quick(), &seeds, |_| {}).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.len(), 3);
    assert!(a.log.windows(2).all(|w| w[1].best <= w[0].best));

    let reloaded = ModelParams::from_json(&a.params.to_json()).unwrap();
    assert_eq!(reloaded, a.params);
    let shape = quick().shape();
    let r1 = evaluate(&a.params, &data, Phase::Test, shape, 30, &[5]).unwrap();
    let r2 = evaluate(&reloaded, &data, Phase::Test, shape, 30, &[5]).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn learners_share_evaluation_episodes() {
    let data = dataset(SynthSpec::default());
    let shape = quick().shape();
    let seeds = Seeds::new(0);
    let mut ids = Vec::new();
    for learner in [Learner::AvgNn, Learner::IdfRr, Learner::Main] {
        let arch = Architecture::new(learner, small_attention(), EstimatorMode::default(), Default::default());
        let model = ModelParams::init(arch, &mut seeds.rng(Purpose::Init, &[])).unwrap();
        let report = evaluate(&model, &data, Phase::Test, shape, 10, &[1, 2]).unwrap();
        assert_eq!(report.learner, learner.name());
        assert_eq!(report.episodes, 20);
        ids.push(report.per_episode.iter().map(|r| r.episode_id()).collect::<Vec<_>>());
    }
    assert!(ids.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn signal_free_corpus_stays_near_chance() {
    // Keywords are almost never drawn, so classes differ only by noise.
    let spec = SynthSpec {
        keyword_rate: 1e-9,
        ..SynthSpec::default()
    };
    let data = dataset(spec);
    let seeds = Seeds::new(1);
    let arch = Architecture::main(small_attention(), EstimatorMode::default());
    let init = ModelParams::init(arch, &mut seeds.rng(Purpose::Init, &[])).unwrap();
    let trained = train(init, &data, &quick(), &seeds, |_| {}).unwrap();
    let report = evaluate(&trained.params, &data, Phase::Test, quick().shape(), 200, &[9]).unwrap();
    assert!(
        (report.mean_acc - 0.2).abs() <= report.ci95 + 0.03,
        "{} ± {}",
        report.mean_acc,
        report.ci95
    );
}

#[test]
fn trained_attention_beats_averaging_on_planted_keywords() {
    let data = dataset(SynthSpec::default());
    let seeds = Seeds::new(2);
    let config = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let arch = Architecture::main(AttentionConfig::default(), EstimatorMode::default());
    let init = ModelParams::init(arch, &mut seeds.rng(Purpose::Init, &[])).unwrap();
    let trained = train(init, &data, &config, &seeds, |_| {}).unwrap();
    let shape = config.shape();
    let main = evaluate(&trained.params, &data, Phase::Test, shape, 100, &[4]).unwrap();
    let avg = ModelParams::init(Architecture::baseline(Learner::AvgNn), &mut seeds.rng(Purpose::Init, &[])).unwrap();
    let avg = evaluate(&avg, &data, Phase::Test, shape, 100, &[4]).unwrap();
    assert!(main.mean_acc > avg.mean_acc + 0.1, "{} vs {}", main.mean_acc, avg.mean_acc);
}
