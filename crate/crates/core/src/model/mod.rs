//! Fusion segmentation networks.
//!
//! Four topologies share one encoder/decoder skeleton: a 7×7 stride-2 stem,
//! four residual stages at 1/4 … 1/32 resolution, a pyramid-pooling context
//! head and a ladder decoder with 1×1 skip connections.
//!
//! * `S2dEam`: a second encoder consumes the event volume; after every
//!   stage an attention module merges both branches into the RGB stream.
//! * `D2sEgm`: a shallow full-resolution event branch grows out of the RGB
//!   stem, is gated against each RGB stage, is supervised with the event
//!   target and feeds the event-aware pyramid pooling.
//! * `RgbOnly` / `EventOnly`: single-branch baselines.

mod blocks;
mod net;

pub use blocks::{eam_forward, egm_forward, espp_forward, spp_forward, Bound};
pub use net::{forward_d2s, forward_s2d, joint_loss, ForwardOut, NetInput};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_checkpoint, write_checkpoint, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    S2dEam,
    D2sEgm,
    RgbOnly,
    EventOnly,
}

impl FusionMode {
    pub fn uses_event_input(self) -> bool {
        matches!(self, FusionMode::S2dEam | FusionMode::EventOnly)
    }

    pub fn uses_rgb_input(self) -> bool {
        !matches!(self, FusionMode::EventOnly)
    }

    pub fn predicts_events(self) -> bool {
        self == FusionMode::D2sEgm
    }

    pub fn label(self) -> &'static str {
        match self {
            FusionMode::S2dEam => "s2d",
            FusionMode::D2sEgm => "d2s",
            FusionMode::RgbOnly => "rgb",
            FusionMode::EventOnly => "event",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2d" | "s2d_eam" => Ok(FusionMode::S2dEam),
            "d2s" | "d2s_egm" => Ok(FusionMode::D2sEgm),
            "rgb" | "rgb_only" => Ok(FusionMode::RgbOnly),
            "event" | "event_only" => Ok(FusionMode::EventOnly),
            other => Err(Error::invalid(format!("unknown fusion mode {other:?}"))),
        }
    }
}

pub const STAGES: usize = 4;
const DOWNSAMPLE_RATES: [usize; STAGES] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: FusionMode,
    /// Image channels at the network input (grayscale frames are replicated).
    pub in_channels: usize,
    pub rgb_channels: Vec<usize>,
    pub event_channels_d2s: Vec<usize>,
    pub downsample_rates: Vec<usize>,
    /// Total event time bins `B`; see [`crate::events::split_bins`].
    pub time_bins: usize,
    pub num_classes: usize,
    /// Pyramid pooling grids as (rows, columns).
    pub spp_grids: Vec<(usize, usize)>,
    pub spp_channels: usize,
    pub decoder_channels: usize,
    pub event_loss_weight: f64,
    /// Input (height, width); both must be multiples of 32.
    pub input_size: (usize, usize),
}

impl ModelConfig {
    /// Quarter-width network for 64×128 inputs.
    pub fn toy(mode: FusionMode, num_classes: usize) -> Self {
        ModelConfig {
            mode,
            in_channels: 3,
            rgb_channels: vec![16, 32, 64, 128],
            event_channels_d2s: vec![16, 8, 4, 2],
            downsample_rates: DOWNSAMPLE_RATES.to_vec(),
            time_bins: 2,
            num_classes,
            spp_grids: vec![(2, 4), (1, 2), (1, 1)],
            spp_channels: 32,
            decoder_channels: 32,
            event_loss_weight: 1.0,
            input_size: (64, 128),
        }
    }

    /// Full-width network for 512×1024 inputs.
    pub fn paper_scale(mode: FusionMode, num_classes: usize) -> Self {
        ModelConfig {
            mode,
            in_channels: 3,
            rgb_channels: vec![64, 128, 256, 512],
            event_channels_d2s: vec![64, 32, 16, 8],
            downsample_rates: DOWNSAMPLE_RATES.to_vec(),
            time_bins: 2,
            num_classes,
            spp_grids: vec![(8, 16), (4, 8), (2, 4)],
            spp_channels: 128,
            decoder_channels: 128,
            event_loss_weight: 1.0,
            input_size: (512, 1024),
        }
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    pub fn with_time_bins(mut self, bins: usize) -> Self {
        self.time_bins = bins;
        self
    }

    /// Spatial size of the 1/32 feature map.
    pub fn deepest_size(&self) -> (usize, usize) {
        (self.input_size.0 / 32, self.input_size.1 / 32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.rgb_channels.len() != STAGES || self.event_channels_d2s.len() != STAGES {
            return bad(format!("expected {STAGES} stage widths"));
        }
        if self.downsample_rates != DOWNSAMPLE_RATES {
            return bad(format!("downsample rates must be {DOWNSAMPLE_RATES:?}"));
        }
        if self.rgb_channels.iter().chain(&self.event_channels_d2s).any(|&c| c == 0) {
            return bad("zero channel width".into());
        }
        if self.in_channels == 0 || self.num_classes < 2 || self.time_bins == 0 {
            return bad("in_channels, num_classes >= 2 and time_bins must be positive".into());
        }
        if self.spp_channels == 0 || self.decoder_channels == 0 || self.spp_grids.is_empty() {
            return bad("empty pyramid or decoder".into());
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return bad(format!("input {h}x{w} must be a non-zero multiple of 32"));
        }
        let (dh, dw) = self.deepest_size();
        if let Some(g) = self.spp_grids.iter().find(|&&(gh, gw)| gh == 0 || gw == 0 || gh > dh || gw > dw) {
            return bad(format!("pyramid grid {g:?} does not fit the {dh}x{dw} deepest map"));
        }
        if !(self.event_loss_weight >= 0.0) {
            return bad("event loss weight must be non-negative".into());
        }
        Ok(())
    }

    /// Shapes of every learnable tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut d = Decl::default();
        blocks::declare(self, &mut d);
        d.items.into_iter().map(|p| (p.name, p.shape)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Fan-in normal with std sqrt(2 / fan_in).
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Default)]
pub(crate) struct Decl {
    pub items: Vec<ParamDecl>,
}

impl Decl {
    pub fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, bias: bool) {
        self.items.push(ParamDecl {
            name: format!("{name}.weight"),
            shape: vec![c_out, c_in, k, k],
            init: Init::Kaiming { fan_in: c_in * k * k },
        });
        if bias {
            self.items.push(ParamDecl {
                name: format!("{name}.bias"),
                shape: vec![c_out],
                init: Init::Zeros,
            });
        }
    }

    pub fn affine(&mut self, name: &str, c: usize) {
        self.items.push(ParamDecl {
            name: format!("{name}.scale"),
            shape: vec![c],
            init: Init::Ones,
        });
        self.items.push(ParamDecl {
            name: format!("{name}.shift"),
            shape: vec![c],
            init: Init::Zeros,
        });
    }
}

/// Named parameters plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

impl SegModel {
    /// Kaiming-initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut d = Decl::default();
        blocks::declare(&config, &mut d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for p in d.items {
            let n: usize = p.shape.iter().product();
            let data = match p.init {
                Init::Kaiming { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            if params.insert(p.name.clone(), Tensor::from_vec(p.shape, data)?).is_some() {
                return Err(Error::invalid(format!("duplicate parameter {}", p.name)));
            }
        }
        Ok(SegModel { config, params })
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Mutable parameters in name order, matching [`SegModel::params`].
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.values_mut()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        write_checkpoint(self.params.iter().map(|(k, v)| (k.as_str(), v)), w)
    }

    /// Loads weights for `config`, checking every name and shape.
    pub fn load<R: Read>(config: ModelConfig, r: R) -> Result<Self> {
        let mut model = SegModel::new(config, 0)?;
        let loaded = read_checkpoint(r)?;
        if loaded.len() != model.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} tensors, model expects {}",
                loaded.len(),
                model.params.len()
            )));
        }
        for (name, t) in loaded {
            let slot = model
                .params
                .get_mut(&name)
                .ok_or_else(|| Error::invalid(format!("unexpected tensor {name} in checkpoint")))?;
            if slot.shape() != t.shape() {
                return Err(Error::invalid(format!("{name}: shape {:?} vs expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        Ok(model)
    }
}
