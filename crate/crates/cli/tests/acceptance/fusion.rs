use std::time::Instant;

use evfuse::model::{FusionMode, ModelConfig, SegModel};
use evfuse::par::Exec;
use evfuse::scenegen::{build_corpus, Corpus, CorpusOptions, Difficulty, NUM_CLASSES};
use evfuse::train::{evaluate, prepare_all, train, TrainConfig};

use crate::Verdict;

const SEEDS: [u64; 3] = [0, 1, 2];
const CORPUS_SEED: u64 = 1000;
const BUDGET_SECS: f64 = 1800.0;

pub fn param_ordering() -> Verdict {
    let count = |mode| ModelConfig::paper_scale(mode, 19).param_count();
    let (d2s, s2d, rgb) = (count(FusionMode::D2sEgm), count(FusionMode::S2dEam), count(FusionMode::RgbOnly));
    let built = SegModel::new(ModelConfig::paper_scale(FusionMode::D2sEgm, 19), 0)
        .map(|m| m.param_count())
        .unwrap_or(0);
    Verdict::new(
        d2s < s2d && built == d2s,
        format!(
            "paper-scale widths, 19 classes: D2S {d2s} ({:.2}M) < S2D {s2d} ({:.2}M); RGB-only {rgb}; instantiated D2S {built}",
            d2s as f64 / 1e6,
            s2d as f64 / 1e6
        ),
    )
}

fn test_miou(corpus: &Corpus, mode: FusionMode, bins: usize, seed: u64) -> f64 {
    let cfg = ModelConfig::toy(mode, NUM_CLASSES).with_time_bins(bins);
    let train_set = prepare_all(Exec::Parallel, &corpus.train, &cfg, 1.0).unwrap();
    let test_set = prepare_all(Exec::Parallel, &corpus.test, &cfg, 1.0).unwrap();
    let mut model = SegModel::new(cfg, seed).unwrap();
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    train(Exec::Parallel, &mut model, &train_set, &tc).unwrap();
    evaluate(Exec::Parallel, &model, &test_set).unwrap().miou().unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{:.2}", 100.0 * x)).collect::<Vec<_>>().join("/")
}

/// Both directional criteria share one set of runs on the blur+lowlight corpus.
pub fn directional() -> Vec<(&'static str, Verdict)> {
    let t0 = Instant::now();
    let corpus = build_corpus(Exec::Parallel, &CorpusOptions::new(200, 50, CORPUS_SEED, Difficulty::BlurLowlight)).unwrap();
    let runs = |mode, bins| SEEDS.iter().map(|&s| test_miou(&corpus, mode, bins, s)).collect::<Vec<f64>>();
    let rgb = runs(FusionMode::RgbOnly, 2);
    let d2s2 = runs(FusionMode::D2sEgm, 2);
    let d2s1 = runs(FusionMode::D2sEgm, 1);
    let secs = t0.elapsed().as_secs_f64();
    let (m_rgb, m2, m1) = (100.0 * mean(&rgb), 100.0 * mean(&d2s2), 100.0 * mean(&d2s1));
    let gain = m2 - m_rgb;
    vec![
        (
            "fusion-gain",
            Verdict::new(
                gain >= 2.0 && secs < BUDGET_SECS,
                format!(
                    "blur+lowlight 200/50, seeds {SEEDS:?}: D2S B=2 mIoU {m2:.2} ({}) vs RGB {m_rgb:.2} ({}), gain {gain:+.2} points (need >= +2.00) [{secs:.0} s for all 9 runs, budget {BUDGET_SECS:.0} s]",
                    fmt(&d2s2),
                    fmt(&rgb)
                ),
            ),
        ),
        (
            "time-bins",
            Verdict::new(
                m2 >= m1,
                format!("D2S B=2 mIoU {m2:.2} ({}) vs B=1 {m1:.2} ({})", fmt(&d2s2), fmt(&d2s1)),
            ),
        ),
    ]
}
