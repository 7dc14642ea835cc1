use evfuse::model::{FusionMode, ModelConfig, SegModel};
use evfuse::par::Exec;
use evfuse::scenegen::{build_corpus, Corpus, CorpusOptions, Difficulty, NUM_CLASSES};
use evfuse::train::{evaluate, prepare_all, train, TrainConfig};

fn corpus() -> Corpus {
    build_corpus(Exec::Parallel, &CorpusOptions::new(4, 2, 300, Difficulty::Blur)).unwrap()
}

fn run(exec: Exec, corpus: &Corpus, mode: FusionMode, epochs: usize) -> (Vec<u8>, evfuse::train::TrainLog) {
    let cfg = ModelConfig::toy(mode, NUM_CLASSES).with_input_size(64, 128);
    let data = prepare_all(exec, &corpus.train, &cfg, 1.0).unwrap();
    let mut model = SegModel::new(cfg, 5).unwrap();
    let tc = TrainConfig {
        epochs,
        seed: 5,
        ..TrainConfig::default()
    };
    let log = train(exec, &mut model, &data, &tc).unwrap();
    let mut bytes = Vec::new();
    model.save(&mut bytes).unwrap();
    (bytes, log)
}

#[test]
fn training_is_bitwise_reproducible() {
    let c = corpus();
    let (a, la) = run(Exec::Parallel, &c, FusionMode::D2sEgm, 2);
    let (b, lb) = run(Exec::Parallel, &c, FusionMode::D2sEgm, 2);
    let (s, ls) = run(Exec::Sequential, &c, FusionMode::D2sEgm, 2);
    assert_eq!(a, b);
    assert_eq!(a, s);
    assert_eq!(la.epochs, lb.epochs);
    assert_eq!(la.epochs, ls.epochs);
}

#[test]
fn joint_loss_halves_on_a_small_corpus() {
    let c = corpus();
    let (bytes, log) = run(Exec::Parallel, &c, FusionMode::D2sEgm, 30);
    let (first, last) = (log.initial_loss().unwrap(), log.final_loss().unwrap());
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    assert!(log.epochs.iter().all(|e| e.event_loss.is_some()));

    let cfg = ModelConfig::toy(FusionMode::D2sEgm, NUM_CLASSES).with_input_size(64, 128);
    let model = SegModel::load(cfg.clone(), &bytes[..]).unwrap();
    let data = prepare_all(Exec::Parallel, &c.train, &cfg, 1.0).unwrap();
    let cm = evaluate(Exec::Parallel, &model, &data).unwrap();
    assert_eq!(cm.total(), 4 * 64 * 128);
    assert!(cm.acc().unwrap() > 0.8);
}

#[test]
fn rgb_baseline_ignores_events() {
    let c = corpus();
    let (_, log) = run(Exec::Parallel, &c, FusionMode::RgbOnly, 3);
    assert!(log.epochs.iter().all(|e| e.event_loss.is_none()));
    assert!(log.final_loss().unwrap() < log.initial_loss().unwrap());
}
