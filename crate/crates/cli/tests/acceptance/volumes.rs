use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evfuse::events::{discretize_volume, volume_input, Event, EventStream, Polarity};
use evfuse::metrics::ConfusionMatrix;
use evfuse::par::Exec;

use crate::Verdict;

const BINS: [usize; 4] = [1, 2, 10, 18];

fn random_stream(r: &mut ChaCha8Rng) -> EventStream {
    let (w, h) = (r.random_range(1..24), r.random_range(1..16));
    let n = r.random_range(0..400);
    let coarse = r.random_bool(0.3);
    let events = (0..n)
        .map(|_| Event {
            x: r.random_range(0..w) as u16,
            y: r.random_range(0..h) as u16,
            t: if coarse { f64::from(r.random_range(0..4u8)) } else { r.random_range(0.0..1.0) },
            p: if r.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative },
        })
        .collect();
    EventStream::from_unsorted(w, h, events).unwrap()
}

pub fn mass_conservation() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut total = 0usize;
    for _ in 0..1000 {
        let s = random_stream(&mut r);
        total += s.count();
        let n = s.count() as f64;
        for b in BINS {
            let merged: f64 = volume_input(&s, b).unwrap().data().iter().sum();
            let per_polarity = discretize_volume(&s, b, b).unwrap();
            for sum in [merged, per_polarity.total_mass()] {
                worst = worst.max((sum - n).abs());
            }
            let pos = s.count_polarity(Polarity::Positive) as f64;
            worst = worst.max((per_polarity.positive_mass() - pos).abs());
        }
    }
    Verdict::new(
        worst <= 1e-9,
        format!("1000 streams ({total} events), B in {BINS:?}; max |sum - count| = {worst:.1e} (tolerance 1e-9)"),
    )
}

const K: usize = 5;
const IGNORE: usize = 255;

/// Per-pixel tally without a confusion matrix: (acc, mIoU, fwIoU).
fn tally(pairs: &[(Vec<usize>, Vec<usize>)]) -> (f64, f64, f64) {
    let mut n = 0u64;
    let mut correct = 0u64;
    let (mut tp, mut fp, mut fneg) = ([0u64; K], [0u64; K], [0u64; K]);
    for (pred, gt) in pairs {
        for (&p, &g) in pred.iter().zip(gt) {
            if g == IGNORE {
                continue;
            }
            n += 1;
            if p == g {
                correct += 1;
                tp[g] += 1;
            } else {
                fp[p] += 1;
                fneg[g] += 1;
            }
        }
    }
    let mut ious = Vec::new();
    let mut fw = 0.0;
    for c in 0..K {
        let union = tp[c] + fp[c] + fneg[c];
        if union > 0 {
            let iou = tp[c] as f64 / union as f64;
            fw += (tp[c] + fneg[c]) as f64 / n as f64 * iou;
            ious.push(iou);
        }
    }
    (correct as f64 / n as f64, ious.iter().sum::<f64>() / ious.len() as f64, fw)
}

pub fn metrics_oracle() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..1000)
        .map(|_| {
            let pred = (0..64).map(|_| r.random_range(0..K)).collect();
            let gt = (0..64).map(|_| if r.random_bool(0.1) { IGNORE } else { r.random_range(0..K) }).collect();
            (pred, gt)
        })
        .collect();
    let mut mismatches = 0;
    let mine = |p: &[(Vec<usize>, Vec<usize>)]| {
        let cm = ConfusionMatrix::from_pairs(Exec::Parallel, K, Some(IGNORE), p).unwrap();
        (cm.acc().unwrap(), cm.miou().unwrap(), cm.fwiou().unwrap())
    };
    for p in pairs.chunks(1) {
        if mine(p) != tally(p) {
            mismatches += 1;
        }
    }
    let whole = mine(&pairs) == tally(&pairs);

    let mut cm = ConfusionMatrix::new(2, None);
    cm.accumulate(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
    let hand = (cm.acc().unwrap() - 0.75).abs() < 1e-12 && (cm.miou().unwrap() - 7.0 / 12.0).abs() < 1e-12;
    Verdict::new(
        mismatches == 0 && whole && hand,
        format!(
            "1000 random 8x8 pairs (K=5, ignore 255): {mismatches} per-pair mismatches, aggregate {}; 2x2 example acc {} mIoU {:.12}",
            if whole { "exact" } else { "differs" },
            cm.acc().unwrap(),
            cm.miou().unwrap()
        ),
    )
}
