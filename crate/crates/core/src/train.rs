//! Joint-loss training and evaluation.
//!
//! Each mini-batch runs one tape per sample (in parallel when enabled);
//! per-sample gradients are summed in sample order, so results do not
//! depend on the thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{event_target, volume_input};
use crate::metrics::ConfusionMatrix;
use crate::model::{joint_loss, ModelConfig, NetInput, SegModel};
use crate::par::{self, Exec};
use crate::scenegen::Sample;
use crate::tensor::{adam_step, cosine_lr, AdamConfig, AdamState, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub hflip: bool,
    /// Event intensity applied to the supervision target.
    pub event_intensity: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 2,
            lr0: 4e-4,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            seed: 0,
            hflip: true,
            event_intensity: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::invalid(format!("learning rates {} -> {} are inconsistent", self.lr0, self.lr_min)));
        }
        if !(self.event_intensity > 0.0 && self.event_intensity <= 1.0) {
            return Err(Error::invalid(format!("event intensity {} outside (0, 1]", self.event_intensity)));
        }
        Ok(())
    }
}

/// A sample converted to network tensors.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: Tensor,
    pub labels: Vec<usize>,
    /// Event volume (input modes) or event target (dense-to-sparse mode).
    pub events: Option<Tensor>,
    pub width: usize,
}

impl Prepared {
    pub fn flipped(&self) -> Prepared {
        let w = self.width;
        let labels = self.labels.chunks(w).flat_map(|row| row.iter().rev().copied()).collect();
        Prepared {
            image: self.image.flip_last_axis(),
            labels,
            events: self.events.as_ref().map(Tensor::flip_last_axis),
            width: w,
        }
    }

    fn input(&self, cfg: &ModelConfig) -> NetInput {
        let input = NetInput::new(self.image.clone());
        match (&self.events, cfg.mode.uses_event_input()) {
            (Some(v), true) => input.with_events(v.clone()),
            _ => input,
        }
    }

    fn target(&self, cfg: &ModelConfig) -> Option<&Tensor> {
        self.events.as_ref().filter(|_| cfg.mode.predicts_events())
    }
}

/// Gray level `v` maps to `v / 255 · 2 − 1`, replicated over the input channels.
pub fn image_tensor(sample: &Sample, channels: usize) -> Result<Tensor> {
    let f = &sample.frame_anchor;
    let scale = f64::from(f.maxval.max(1));
    let plane: Vec<f64> = f.data.iter().map(|&v| f64::from(v) / scale * 2.0 - 1.0).collect();
    let mut data = Vec::with_capacity(channels * plane.len());
    for _ in 0..channels {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec(vec![channels, f.height, f.width], data)
}

pub fn prepare(sample: &Sample, cfg: &ModelConfig, event_intensity: f64) -> Result<Prepared> {
    let (h, w) = cfg.input_size;
    if (sample.height(), sample.width()) != (h, w) {
        return Err(Error::invalid(format!(
            "sample is {}x{}, model expects {h}x{w}",
            sample.height(),
            sample.width()
        )));
    }
    let events = if cfg.mode.uses_event_input() {
        Some(volume_input(&sample.events, cfg.time_bins)?)
    } else if cfg.mode.predicts_events() {
        Some(event_target(&sample.events, cfg.time_bins, event_intensity)?)
    } else {
        None
    };
    Ok(Prepared {
        image: image_tensor(sample, cfg.in_channels)?,
        labels: sample.labels(),
        events,
        width: w,
    })
}

pub fn prepare_all(exec: Exec, samples: &[Sample], cfg: &ModelConfig, event_intensity: f64) -> Result<Vec<Prepared>> {
    par::map(exec, samples, |s| prepare(s, cfg, event_intensity)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub seg_loss: f64,
    pub event_loss: Option<f64>,
    /// Pixel accuracy of the training forward passes.
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub param_count: usize,
    pub samples: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

struct StepOut {
    grads: Vec<Tensor>,
    loss: f64,
    seg: f64,
    event: Option<f64>,
    correct: usize,
    pixels: usize,
}

fn sample_step(model: &SegModel, p: &Prepared) -> Result<StepOut> {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let out = model.forward(&mut tape, &bound, &p.input(cfg))?;
    let target = p.target(cfg);
    let seg = tape.cross_entropy(out.logits, &p.labels, None)?;
    let event = match (out.event_logits, target) {
        (Some(e), Some(t)) => Some(tape.bce_with_logits(e, t)?),
        _ => None,
    };
    let loss = joint_loss(&mut tape, out.logits, &p.labels, None, out.event_logits, target, cfg.event_loss_weight)?;
    tape.backward(loss)?;
    let pred = tape.value(out.logits).argmax_channels()?;
    let correct = pred.iter().zip(&p.labels).filter(|(a, b)| a == b).count();
    let grads = bound
        .iter()
        .map(|(_, id)| tape.grad(id).cloned().expect("trainable leaf"))
        .collect();
    let value = |id| tape.value(id).item().expect("scalar loss");
    Ok(StepOut {
        grads,
        loss: value(loss),
        seg: value(seg),
        event: event.map(value),
        correct,
        pixels: p.labels.len(),
    })
}

/// Trains `model` in place. The same seed, data and configuration give
/// bit-identical weights and logs.
pub fn train(exec: Exec, model: &mut SegModel, data: &[Prepared], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut state = AdamState::new(&model.params().values().collect::<Vec<_>>());
    let mut adam = AdamConfig {
        lr: cfg.lr0,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1a);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        adam.lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seg_sum, mut ev_sum, mut has_ev) = (0.0, 0.0, 0.0, false);
        let (mut correct, mut pixels) = (0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<Prepared> = batch
                .iter()
                .map(|&i| if cfg.hflip && rng.random_bool(0.5) { data[i].flipped() } else { data[i].clone() })
                .collect();
            let model_ref = &*model;
            let outs = par::map(exec, &items, |p| sample_step(model_ref, p));
            let mut total: Option<Vec<Tensor>> = None;
            for out in outs {
                let out = out?;
                if !out.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        detail: format!("loss is {}", out.loss),
                    });
                }
                loss_sum += out.loss;
                seg_sum += out.seg;
                if let Some(e) = out.event {
                    ev_sum += e;
                    has_ev = true;
                }
                correct += out.correct;
                pixels += out.pixels;
                match total.as_mut() {
                    None => total = Some(out.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&out.grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            if let Some(bad) = grads.iter().position(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("non-finite gradient in parameter #{bad}"),
                });
            }
            let mut params: Vec<&mut Tensor> = model.params_mut().collect();
            adam_step(&mut params, &grads.iter().collect::<Vec<_>>(), &mut state, &adam)?;
            step += 1;
        }
        let n = data.len() as f64;
        epochs.push(EpochLog {
            epoch,
            lr: adam.lr,
            loss: loss_sum / n,
            seg_loss: seg_sum / n,
            event_loss: has_ev.then(|| ev_sum / n),
            train_acc: correct as f64 / pixels as f64,
        });
    }
    Ok(TrainLog {
        model: model.config.clone(),
        train: cfg.clone(),
        param_count: model.param_count(),
        samples: data.len(),
        epochs,
    })
}

/// Confusion matrix of `model` over `data`.
pub fn evaluate(exec: Exec, model: &SegModel, data: &[Prepared]) -> Result<ConfusionMatrix> {
    let cfg = &model.config;
    let pairs = par::map(exec, data, |p| model.predict(&p.input(cfg)).map(|pred| (pred, p.labels.clone())))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_pairs(exec, cfg.num_classes, None, &pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionMode;
    use crate::scenegen::{build_corpus, CorpusOptions, Difficulty};

    fn tiny(mode: FusionMode) -> (ModelConfig, Vec<Prepared>) {
        let mut opts = CorpusOptions::new(4, 1, 3, Difficulty::Blur);
        opts.width = 64;
        opts.height = 32;
        let corpus = build_corpus(Exec::Sequential, &opts).unwrap();
        let mut cfg = ModelConfig::toy(mode, 4).with_input_size(32, 64);
        cfg.spp_grids = vec![(1, 2), (1, 1)];
        let data = prepare_all(Exec::Sequential, &corpus.train, &cfg, 1.0).unwrap();
        (cfg, data)
    }

    #[test]
    fn one_epoch_smoke() {
        for mode in [FusionMode::D2sEgm, FusionMode::S2dEam] {
            let (cfg, data) = tiny(mode);
            let mut m = SegModel::new(cfg, 1).unwrap();
            let tc = TrainConfig { epochs: 1, ..TrainConfig::default() };
            let log = train(Exec::Parallel, &mut m, &data, &tc).unwrap();
            assert_eq!(log.epochs.len(), 1);
            assert!(log.epochs[0].loss.is_finite());
            assert_eq!(log.epochs[0].event_loss.is_some(), mode == FusionMode::D2sEgm);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let (_, data) = tiny(FusionMode::D2sEgm);
        let p = &data[0];
        let back = p.flipped().flipped();
        assert_eq!(back.labels, p.labels);
        assert_eq!(back.image, p.image);
        assert_eq!(back.events, p.events);
        assert_ne!(p.flipped().labels, p.labels);
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        let (cfg, data) = tiny(FusionMode::RgbOnly);
        let mut m = SegModel::new(cfg, 1).unwrap();
        assert!(train(Exec::Sequential, &mut m, &[], &TrainConfig::default()).is_err());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(Exec::Sequential, &mut m, &data, &bad).is_err());
    }
}
