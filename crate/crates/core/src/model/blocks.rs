//! Parameter declarations and building blocks.
//!
//! Convolutions own `{name}.weight` (and `{name}.bias` when biased);
//! per-channel affine layers own `{name}.scale` and `{name}.shift`.

use std::collections::BTreeMap;

use super::{Decl, FusionMode, ModelConfig, STAGES};
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

/// Parameter tensors recorded on a tape, looked up by name.
#[derive(Debug, Default, Clone)]
pub struct Bound {
    nodes: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records every tensor as a leaf; `trainable` leaves collect gradients.
    pub fn record(tape: &mut Tape, params: &BTreeMap<String, Tensor>, trainable: bool) -> Self {
        let nodes = params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect();
        Bound { nodes }
    }

    pub fn insert(&mut self, name: impl Into<String>, id: NodeId) {
        self.nodes.insert(name.into(), id);
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

pub(crate) fn conv(tape: &mut Tape, p: &Bound, name: &str, x: NodeId, stride: usize) -> Result<NodeId> {
    let w = p.get(&format!("{name}.weight"))?;
    let bias_name = format!("{name}.bias");
    let b = if p.contains(&bias_name) { Some(p.get(&bias_name)?) } else { None };
    let k = tape.shape(w)[2];
    tape.conv2d(x, w, b, stride, k / 2)
}

fn affine(tape: &mut Tape, p: &Bound, name: &str, x: NodeId) -> Result<NodeId> {
    let s = p.get(&format!("{name}.scale"))?;
    let t = p.get(&format!("{name}.shift"))?;
    tape.affine(x, s, t)
}

fn conv_affine_relu(tape: &mut Tape, p: &Bound, conv_name: &str, norm: &str, x: NodeId, stride: usize) -> Result<NodeId> {
    let y = conv(tape, p, conv_name, x, stride)?;
    let y = affine(tape, p, norm, y)?;
    Ok(tape.relu(y))
}

fn declare_encoder(d: &mut Decl, prefix: &str, c_in: usize, widths: &[usize]) {
    let c0 = widths[0];
    d.conv(&format!("{prefix}.stem"), c0, c_in, 7, false);
    d.affine(&format!("{prefix}.stem_n"), c0);
    let mut prev = c0;
    for (i, &c) in widths.iter().enumerate() {
        let s = format!("{prefix}.s{i}");
        d.conv(&format!("{s}.conv1"), c, prev, 3, false);
        d.affine(&format!("{s}.n1"), c);
        d.conv(&format!("{s}.conv2"), c, c, 3, false);
        d.affine(&format!("{s}.n2"), c);
        d.conv(&format!("{s}.skip"), c, prev, 1, false);
        d.affine(&format!("{s}.nskip"), c);
        prev = c;
    }
}

pub(crate) fn stem(tape: &mut Tape, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    conv_affine_relu(tape, p, &format!("{prefix}.stem"), &format!("{prefix}.stem_n"), x, 2)
}

/// Residual stage that halves the resolution.
pub(crate) fn stage(tape: &mut Tape, p: &Bound, prefix: &str, i: usize, x: NodeId) -> Result<NodeId> {
    let s = format!("{prefix}.s{i}");
    let y = conv_affine_relu(tape, p, &format!("{s}.conv1"), &format!("{s}.n1"), x, 2)?;
    let y = conv(tape, p, &format!("{s}.conv2"), y, 1)?;
    let y = affine(tape, p, &format!("{s}.n2"), y)?;
    let skip = conv(tape, p, &format!("{s}.skip"), x, 2)?;
    let skip = affine(tape, p, &format!("{s}.nskip"), skip)?;
    let sum = tape.add(y, skip)?;
    Ok(tape.relu(sum))
}

fn declare_eam(d: &mut Decl, prefix: &str, c: usize, c_evt: usize) {
    d.conv(&format!("{prefix}.gate_img"), c, c, 1, true);
    d.conv(&format!("{prefix}.gate_evt"), c, c, 1, true);
    if c_evt != c {
        d.conv(&format!("{prefix}.proj"), c, c_evt, 1, false);
    }
}

fn channel_gate(tape: &mut Tape, p: &Bound, name: &str, x: NodeId) -> Result<NodeId> {
    let pooled = tape.adaptive_avg_pool(x, 1, 1)?;
    let logit = conv(tape, p, name, pooled, 1)?;
    let gate = tape.sigmoid(logit);
    tape.mul_gate(x, gate)
}

/// Attention merge `f_img·σ(g_img(gap f_img)) + f_evt·σ(g_evt(gap f_evt))`
/// with 1×1 gate convolutions `{prefix}.gate_img` and `{prefix}.gate_evt`.
/// An optional `{prefix}.proj` 1×1 convolution first maps the event map to
/// the image width.
pub fn eam_forward(tape: &mut Tape, p: &Bound, prefix: &str, f_img: NodeId, f_evt: NodeId) -> Result<NodeId> {
    let f_evt = if p.contains(&format!("{prefix}.proj.weight")) {
        conv(tape, p, &format!("{prefix}.proj"), f_evt, 1)?
    } else {
        f_evt
    };
    if tape.shape(f_img) != tape.shape(f_evt) {
        return Err(Error::invalid(format!(
            "attention merge needs equal shapes, got {:?} and {:?}",
            tape.shape(f_img),
            tape.shape(f_evt)
        )));
    }
    let a = channel_gate(tape, p, &format!("{prefix}.gate_img"), f_img)?;
    let b = channel_gate(tape, p, &format!("{prefix}.gate_evt"), f_evt)?;
    tape.add(a, b)
}

fn declare_egm(d: &mut Decl, prefix: &str, c_img: usize, c_evt: usize) {
    d.conv(&format!("{prefix}.g"), c_evt, c_img, 1, true);
    d.conv(&format!("{prefix}.reduce"), c_evt, 2 * c_evt, 1, true);
}

/// Gated event refinement `f_evt·σ(reduce[f_evt, up(g f_img)]) + f_evt`.
/// `{prefix}.g` projects the image map to the event width before it is
/// upsampled to the event resolution; `{prefix}.reduce` maps the
/// concatenation back to the event width.
pub fn egm_forward(tape: &mut Tape, p: &Bound, prefix: &str, f_img: NodeId, f_evt: NodeId) -> Result<NodeId> {
    let (_, h, w) = tape.value(f_evt).chw()?;
    let g = conv(tape, p, &format!("{prefix}.g"), f_img, 1)?;
    let g = tape.upsample_bilinear(g, h, w)?;
    let cat = tape.concat(&[f_evt, g], 0)?;
    let logit = conv(tape, p, &format!("{prefix}.reduce"), cat, 1)?;
    let gate = tape.sigmoid(logit);
    let gated = tape.mul(f_evt, gate)?;
    tape.add(gated, f_evt)
}

fn declare_spp(d: &mut Decl, prefix: &str, c_in: usize, grids: usize, out: usize, ctx_in: Option<usize>) {
    for j in 0..grids {
        d.conv(&format!("{prefix}.g{j}"), out, c_in, 1, true);
    }
    if let Some(c) = ctx_in {
        d.conv(&format!("{prefix}.ctx"), out, c, 1, true);
    }
    let levels = grids + usize::from(ctx_in.is_some());
    d.conv(&format!("{prefix}.fuse"), out, levels * out, 1, true);
}

fn pyramid_levels(tape: &mut Tape, p: &Bound, prefix: &str, f: NodeId, grids: &[(usize, usize)]) -> Result<Vec<NodeId>> {
    let (_, h, w) = tape.value(f).chw()?;
    grids
        .iter()
        .enumerate()
        .map(|(j, &(gh, gw))| {
            if gh == 0 || gw == 0 || gh > h || gw > w {
                return Err(Error::invalid(format!("pyramid grid {gh}x{gw} does not fit {h}x{w}")));
            }
            let pooled = tape.adaptive_avg_pool(f, gh, gw)?;
            let y = conv(tape, p, &format!("{prefix}.g{j}"), pooled, 1)?;
            let y = tape.relu(y);
            tape.upsample_bilinear(y, h, w)
        })
        .collect()
}

fn fuse_levels(tape: &mut Tape, p: &Bound, prefix: &str, levels: &[NodeId]) -> Result<NodeId> {
    let cat = tape.concat(levels, 0)?;
    let y = conv(tape, p, &format!("{prefix}.fuse"), cat, 1)?;
    Ok(tape.relu(y))
}

/// Spatial pyramid pooling: each grid level is pooled, projected by
/// `{prefix}.g{j}` and upsampled back; `{prefix}.fuse` merges the levels.
pub fn spp_forward(tape: &mut Tape, p: &Bound, prefix: &str, f: NodeId, grids: &[(usize, usize)]) -> Result<NodeId> {
    let levels = pyramid_levels(tape, p, prefix, f, grids)?;
    fuse_levels(tape, p, prefix, &levels)
}

/// Pyramid pooling with one extra level: the event feature is averaged down
/// to the size of `f` and projected by `{prefix}.ctx`.
pub fn espp_forward(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    f: NodeId,
    f_evt: NodeId,
    grids: &[(usize, usize)],
) -> Result<NodeId> {
    let (_, h, w) = tape.value(f).chw()?;
    let (_, eh, ew) = tape.value(f_evt).chw()?;
    if eh < h || ew < w {
        return Err(Error::invalid(format!("event context {eh}x{ew} is smaller than {h}x{w}")));
    }
    let mut levels = pyramid_levels(tape, p, prefix, f, grids)?;
    let ctx = tape.adaptive_avg_pool(f_evt, h, w)?;
    let ctx = conv(tape, p, &format!("{prefix}.ctx"), ctx, 1)?;
    levels.push(tape.relu(ctx));
    fuse_levels(tape, p, prefix, &levels)
}

fn declare_decoder(d: &mut Decl, cfg: &ModelConfig, widths: &[usize]) {
    let dc = cfg.decoder_channels;
    if cfg.spp_channels != dc {
        d.conv("dec.in", dc, cfg.spp_channels, 1, false);
    }
    for l in (0..STAGES - 1).rev() {
        d.conv(&format!("dec.skip{l}"), dc, widths[l], 1, true);
        d.conv(&format!("dec.blend{l}"), dc, dc, 3, false);
        d.affine(&format!("dec.n{l}"), dc);
    }
    d.conv("dec.head", cfg.num_classes, dc, 1, true);
}

/// Ladder decoder: upsample, add a projected skip, blend; then classify and
/// upsample to `out`.
pub(crate) fn decoder(
    tape: &mut Tape,
    p: &Bound,
    context: NodeId,
    skips: &[NodeId],
    out: (usize, usize),
) -> Result<NodeId> {
    let mut x = if p.contains("dec.in.weight") { conv(tape, p, "dec.in", context, 1)? } else { context };
    for l in (0..STAGES - 1).rev() {
        let (_, h, w) = tape.value(skips[l]).chw()?;
        let up = tape.upsample_bilinear(x, h, w)?;
        let s = conv(tape, p, &format!("dec.skip{l}"), skips[l], 1)?;
        let sum = tape.add(up, s)?;
        x = conv_affine_relu(tape, p, &format!("dec.blend{l}"), &format!("dec.n{l}"), sum, 1)?;
    }
    let logits = conv(tape, p, "dec.head", x, 1)?;
    tape.upsample_bilinear(logits, out.0, out.1)
}

/// Full parameter list for `cfg`.
pub(crate) fn declare(cfg: &ModelConfig, d: &mut Decl) {
    let rgb = &cfg.rgb_channels;
    let grids = cfg.spp_grids.len();
    match cfg.mode {
        FusionMode::RgbOnly => {
            declare_encoder(d, "rgb", cfg.in_channels, rgb);
            declare_spp(d, "spp", rgb[STAGES - 1], grids, cfg.spp_channels, None);
        }
        FusionMode::EventOnly => {
            declare_encoder(d, "evt", event_channels(cfg), rgb);
            declare_spp(d, "spp", rgb[STAGES - 1], grids, cfg.spp_channels, None);
        }
        FusionMode::S2dEam => {
            declare_encoder(d, "rgb", cfg.in_channels, rgb);
            declare_encoder(d, "evt", event_channels(cfg), rgb);
            for (i, &c) in rgb.iter().enumerate() {
                declare_eam(d, &format!("eam{i}"), c, c);
            }
            declare_spp(d, "spp", rgb[STAGES - 1], grids, cfg.spp_channels, None);
        }
        FusionMode::D2sEgm => {
            declare_encoder(d, "rgb", cfg.in_channels, rgb);
            let ev = &cfg.event_channels_d2s;
            let mut prev = rgb[0];
            for (i, &c) in ev.iter().enumerate() {
                d.conv(&format!("evb.s{i}.conv"), c, prev, 3, false);
                d.affine(&format!("evb.s{i}.n"), c);
                declare_egm(d, &format!("egm{i}"), rgb[i], c);
                prev = c;
            }
            d.conv("evb.head", event_channels(cfg), prev, 1, true);
            declare_spp(d, "spp", rgb[STAGES - 1], grids, cfg.spp_channels, Some(prev));
        }
    }
    declare_decoder(d, cfg, rgb);
}

/// Channel count of the event volume (input or supervision target).
pub(crate) fn event_channels(cfg: &ModelConfig) -> usize {
    cfg.time_bins
}

/// One refinement stage of the full-resolution event branch.
pub(crate) fn event_branch_stage(tape: &mut Tape, p: &Bound, i: usize, x: NodeId) -> Result<NodeId> {
    conv_affine_relu(tape, p, &format!("evb.s{i}.conv"), &format!("evb.s{i}.n"), x, 1)
}
