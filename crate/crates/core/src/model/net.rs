use super::blocks::{self, Bound};
use super::{FusionMode, SegModel, STAGES};
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

/// One network input: a C×H×W image and, for modes that consume it, a
/// B×H×W event volume.
#[derive(Debug, Clone)]
pub struct NetInput {
    pub image: Tensor,
    pub events: Option<Tensor>,
    /// Skip the event encoder and feed zeros into the attention merges.
    pub zero_event_features: bool,
}

impl NetInput {
    pub fn new(image: Tensor) -> Self {
        NetInput {
            image,
            events: None,
            zero_event_features: false,
        }
    }

    pub fn with_events(mut self, volume: Tensor) -> Self {
        self.events = Some(volume);
        self
    }

    pub fn without_event_features(mut self) -> Self {
        self.zero_event_features = true;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOut {
    /// K×H×W class scores.
    pub logits: NodeId,
    /// B×H×W event logits (dense-to-sparse mode only).
    pub event_logits: Option<NodeId>,
}

impl SegModel {
    /// Records the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound::record(tape, self.params(), trainable)
    }

    fn check_input(&self, input: &NetInput) -> Result<()> {
        let cfg = &self.config;
        let (h, w) = cfg.input_size;
        let expect = |t: &Tensor, c: usize, what: &str| -> Result<()> {
            if t.shape() != [c, h, w] {
                return Err(Error::invalid(format!("{what} must be {c}x{h}x{w}, got {:?}", t.shape())));
            }
            Ok(())
        };
        if cfg.mode.uses_rgb_input() {
            expect(&input.image, cfg.in_channels, "image")?;
        }
        if cfg.mode.uses_event_input() && !input.zero_event_features {
            match &input.events {
                Some(v) => expect(v, cfg.time_bins, "event volume")?,
                None => return Err(Error::invalid(format!("{} mode needs an event volume", cfg.mode.label()))),
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, input: &NetInput) -> Result<ForwardOut> {
        self.check_input(input)?;
        let cfg = &self.config;
        let size = cfg.input_size;
        let mut event_logits = None;
        let (context, skips) = match cfg.mode {
            FusionMode::RgbOnly | FusionMode::EventOnly => {
                let (prefix, x) = if cfg.mode == FusionMode::RgbOnly {
                    ("rgb", input.image.clone())
                } else {
                    let v = input.events.clone().ok_or_else(|| Error::invalid("event-only mode needs an event volume"))?;
                    ("evt", v)
                };
                let x = tape.constant(x);
                let mut f = blocks::stem(tape, p, prefix, x)?;
                let mut skips = Vec::with_capacity(STAGES);
                for i in 0..STAGES {
                    f = blocks::stage(tape, p, prefix, i, f)?;
                    skips.push(f);
                }
                (blocks::spp_forward(tape, p, "spp", f, &cfg.spp_grids)?, skips)
            }
            FusionMode::S2dEam => {
                let x = tape.constant(input.image.clone());
                let mut f = blocks::stem(tape, p, "rgb", x)?;
                let mut e = match (&input.events, input.zero_event_features) {
                    (Some(v), false) => {
                        let v = tape.constant(v.clone());
                        Some(blocks::stem(tape, p, "evt", v)?)
                    }
                    _ => None,
                };
                let mut skips = Vec::with_capacity(STAGES);
                for i in 0..STAGES {
                    let fi = blocks::stage(tape, p, "rgb", i, f)?;
                    let ei = match e {
                        Some(prev) => blocks::stage(tape, p, "evt", i, prev)?,
                        None => {
                            let shape = tape.shape(fi).to_vec();
                            tape.constant(Tensor::zeros(&shape))
                        }
                    };
                    f = blocks::eam_forward(tape, p, &format!("eam{i}"), fi, ei)?;
                    e = e.map(|_| ei);
                    skips.push(f);
                }
                (blocks::spp_forward(tape, p, "spp", f, &cfg.spp_grids)?, skips)
            }
            FusionMode::D2sEgm => {
                let x = tape.constant(input.image.clone());
                let s = blocks::stem(tape, p, "rgb", x)?;
                let mut f = s;
                let mut e = s;
                let mut skips = Vec::with_capacity(STAGES);
                for i in 0..STAGES {
                    f = blocks::stage(tape, p, "rgb", i, f)?;
                    skips.push(f);
                    e = blocks::event_branch_stage(tape, p, i, e)?;
                    e = blocks::egm_forward(tape, p, &format!("egm{i}"), f, e)?;
                }
                let head = blocks::conv(tape, p, "evb.head", e, 1)?;
                event_logits = Some(tape.upsample_bilinear(head, size.0, size.1)?);
                (blocks::espp_forward(tape, p, "spp", f, e, &cfg.spp_grids)?, skips)
            }
        };
        let logits = blocks::decoder(tape, p, context, &skips, size)?;
        Ok(ForwardOut { logits, event_logits })
    }

    /// Inference pass returning the logits (and event logits) as tensors.
    pub fn infer(&self, input: &NetInput) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, input)?;
        let ev = out.event_logits.map(|id| tape.value(id).clone());
        Ok((tape.value(out.logits).clone(), ev))
    }

    /// Per-pixel argmax class ids, row-major.
    pub fn predict(&self, input: &NetInput) -> Result<Vec<usize>> {
        self.infer(input)?.0.argmax_channels()
    }
}

/// Sparse-to-dense forward on an image and event volume; returns K×H×W logits.
pub fn forward_s2d(model: &SegModel, image: &Tensor, volume: &Tensor) -> Result<Tensor> {
    if model.config.mode != FusionMode::S2dEam {
        return Err(Error::invalid("forward_s2d needs an s2d model"));
    }
    Ok(model.infer(&NetInput::new(image.clone()).with_events(volume.clone()))?.0)
}

/// Dense-to-sparse forward; returns K×H×W class logits and B×H×W event logits.
pub fn forward_d2s(model: &SegModel, image: &Tensor) -> Result<(Tensor, Tensor)> {
    if model.config.mode != FusionMode::D2sEgm {
        return Err(Error::invalid("forward_d2s needs a d2s model"));
    }
    let (logits, ev) = model.infer(&NetInput::new(image.clone()))?;
    Ok((logits, ev.expect("d2s emits event logits")))
}

/// `CE(logits, labels) + weight·BCE(event_logits, event_target)`; the event
/// term is dropped when either side is absent.
pub fn joint_loss(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    ignore: Option<usize>,
    event_logits: Option<NodeId>,
    event_target: Option<&Tensor>,
    weight: f64,
) -> Result<NodeId> {
    let seg = tape.cross_entropy(logits, labels, ignore)?;
    match (event_logits, event_target) {
        (Some(e), Some(t)) if weight != 0.0 => {
            let ev = tape.bce_with_logits(e, t)?;
            let ev = tape.scale(ev, weight);
            tape.add(seg, ev)
        }
        _ => Ok(seg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small(mode: FusionMode) -> ModelConfig {
        let mut cfg = ModelConfig::toy(mode, 4).with_input_size(32, 64);
        cfg.spp_grids = vec![(1, 2), (1, 1)];
        cfg
    }

    fn image(h: usize, w: usize, c: usize) -> Tensor {
        let n = c * h * w;
        Tensor::from_vec(vec![c, h, w], (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()).unwrap()
    }

    #[test]
    fn output_shapes_all_modes() {
        for mode in [FusionMode::S2dEam, FusionMode::D2sEgm, FusionMode::RgbOnly, FusionMode::EventOnly] {
            let m = SegModel::new(small(mode), 7).unwrap();
            let input = NetInput::new(image(32, 64, 3)).with_events(image(32, 64, 2));
            let (logits, ev) = m.infer(&input).unwrap();
            assert_eq!(logits.shape(), [4, 32, 64]);
            assert_eq!(ev.map(|t| t.shape().to_vec()), mode.predicts_events().then(|| vec![2, 32, 64]));
            assert!(logits.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn missing_volume_is_rejected() {
        let m = SegModel::new(small(FusionMode::S2dEam), 1).unwrap();
        assert!(m.infer(&NetInput::new(image(32, 64, 3))).is_err());
        let wrong = NetInput::new(image(32, 32, 3)).with_events(image(32, 32, 2));
        assert!(m.infer(&wrong).is_err());
    }

    #[test]
    fn zero_weight_drops_event_term() {
        let mut tape = Tape::new();
        let logits = tape.constant(image(4, 4, 3));
        let ev = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let labels = vec![1; 16];
        let target = Tensor::full(&[2, 4, 4], 1.0);
        let seg = tape.cross_entropy(logits, &labels, None).unwrap();
        let joint = joint_loss(&mut tape, logits, &labels, None, Some(ev), Some(&target), 0.0).unwrap();
        assert_eq!(tape.value(joint).item(), tape.value(seg).item());
        let joint = joint_loss(&mut tape, logits, &labels, None, Some(ev), Some(&target), 1.0).unwrap();
        let diff = tape.value(joint).item().unwrap() - tape.value(seg).item().unwrap();
        assert!((diff - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
