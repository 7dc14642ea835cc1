//! Event streams: simulation from frame pairs, per-polarity timestamp
//! normalization, discretized event volumes and accumulated event frames.

mod io;

pub use io::{read_csv, read_evt1, read_vol1, write_csv, write_evt1, write_vol1};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Plane, RgbImage};
use crate::par::{self, Exec};
use crate::tensor::Tensor;

/// Sign of the log-intensity change that triggered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_i8(p: i8) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// A single `(x, y, t, p)` event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f64,
    pub p: Polarity,
}

/// Time-ordered events on a fixed sensor geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, checking pixel bounds and non-decreasing timestamps.
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        check_geometry(width, height)?;
        for (i, e) in events.iter().enumerate() {
            if usize::from(e.x) >= width || usize::from(e.y) >= height {
                return Err(Error::invalid(format!(
                    "event {i} at ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
            if !e.t.is_finite() {
                return Err(Error::invalid(format!("event {i} has non-finite timestamp")));
            }
        }
        if events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::invalid("events are not sorted by timestamp"));
        }
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    /// Like [`EventStream::new`] but stably sorts by timestamp first.
    pub fn from_unsorted(width: usize, height: usize, mut events: Vec<Event>) -> Result<Self> {
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self::new(width, height, events)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn count(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count_polarity(&self, p: Polarity) -> usize {
        self.events.iter().filter(|e| e.p == p).count()
    }

    /// Mirrors the stream left-to-right.
    pub fn flip_horizontal(&self) -> EventStream {
        let w = self.width as u16;
        EventStream {
            width: self.width,
            height: self.height,
            events: self
                .events
                .iter()
                .map(|e| Event {
                    x: w - 1 - e.x,
                    ..*e
                })
                .collect(),
        }
    }
}

fn check_geometry(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width > usize::from(u16::MAX) || height > usize::from(u16::MAX) {
        return Err(Error::invalid(format!("unsupported geometry {width}x{height}")));
    }
    Ok(())
}

/// Dense `(B⁺ + B⁻) × H × W` volume. Bins `[0, B⁺)` hold positive events,
/// bins `[B⁺, B⁺ + B⁻)` negative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVolume {
    pub bins_pos: usize,
    pub bins_neg: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl EventVolume {
    pub fn zeros(bins_pos: usize, bins_neg: usize, width: usize, height: usize) -> Self {
        EventVolume {
            bins_pos,
            bins_neg,
            width,
            height,
            data: vec![0.0; (bins_pos + bins_neg) * width * height],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins_pos + self.bins_neg
    }

    #[inline]
    pub fn get(&self, bin: usize, x: usize, y: usize) -> f64 {
        self.data[(bin * self.height + y) * self.width + x]
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over the positive sub-volume.
    pub fn positive_mass(&self) -> f64 {
        self.data[..self.bins_pos * self.width * self.height].iter().sum()
    }

    /// Sum over the negative sub-volume.
    pub fn negative_mass(&self) -> f64 {
        self.data[self.bins_pos * self.width * self.height..].iter().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![self.bins(), self.height, self.width], self.data.clone())
            .expect("volume layout matches its shape")
    }
}

/// Two log-intensity frames separated by `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogIntensityPair {
    prev: Plane,
    curr: Plane,
    dt: f64,
}

impl LogIntensityPair {
    pub fn new(prev: Plane, curr: Plane, dt: f64) -> Result<Self> {
        if prev.width != curr.width || prev.height != curr.height {
            return Err(Error::invalid(format!(
                "frame geometry mismatch: {}x{} vs {}x{}",
                prev.width, prev.height, curr.width, curr.height
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        check_geometry(prev.width, prev.height)?;
        Ok(LogIntensityPair { prev, curr, dt })
    }

    /// Converts two raw intensity frames with [`log_intensity`].
    pub fn from_frames(prev: &Plane, curr: &Plane, log_eps: f64, dt: f64) -> Result<Self> {
        Self::new(log_intensity(prev, log_eps)?, log_intensity(curr, log_eps)?, dt)
    }

    pub fn prev(&self) -> &Plane {
        &self.prev
    }

    pub fn curr(&self) -> &Plane {
        &self.curr
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    /// Contrast threshold `C` on the log-intensity change.
    pub threshold_c: f64,
    /// Offset added to raw intensities before the logarithm.
    pub log_eps: f64,
    pub max_events_per_pixel: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            threshold_c: 0.1,
            log_eps: 1.0,
            max_events_per_pixel: 32,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_c > 0.0 && self.threshold_c.is_finite()) {
            return Err(Error::invalid("threshold_c must be positive"));
        }
        if !(self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return Err(Error::invalid("log_eps must be positive"));
        }
        if self.max_events_per_pixel == 0 {
            return Err(Error::invalid("max_events_per_pixel must be positive"));
        }
        Ok(())
    }
}

/// Elementwise `ln(I + log_eps)`.
pub fn log_intensity(frame: &Plane, log_eps: f64) -> Result<Plane> {
    if let Some(v) = frame.data.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("negative or NaN intensity {v}")));
    }
    Ok(Plane {
        width: frame.width,
        height: frame.height,
        data: frame.data.iter().map(|v| (v + log_eps).ln()).collect(),
    })
}

/// Emits threshold-crossing events for the change between two log frames.
///
/// A pixel whose log intensity moved by `ΔL` fires `floor(|ΔL| / C)` events
/// (capped) of polarity `sign(ΔL)`. Crossing `j` is placed at
/// `dt · j · C / |ΔL|`, i.e. the signal is assumed to ramp linearly between
/// the two frames.
pub fn simulate_events(pair: &LogIntensityPair, cfg: &SimulatorConfig) -> Result<EventStream> {
    cfg.validate()?;
    let (w, h) = (pair.prev.width, pair.prev.height);
    let c = cfg.threshold_c;
    let mut events = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let delta = pair.curr.get(x, y) - pair.prev.get(x, y);
            let mag = delta.abs();
            if !(mag >= c) {
                continue;
            }
            let k = ((mag / c).floor() as usize).min(cfg.max_events_per_pixel);
            let p = if delta > 0.0 {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            for j in 1..=k {
                events.push(Event {
                    x: x as u16,
                    y: y as u16,
                    t: pair.dt * (j as f64) * c / mag,
                    p,
                });
            }
        }
    }
    EventStream::from_unsorted(w, h, events)
}

/// Rescales one polarity sub-stream's timestamps onto `[0, bins - 1]`.
///
/// Degenerate ranges (one event, all simultaneous, or a single bin) map
/// every event to 0.
pub fn normalize_times(times: &[f64], bins: usize) -> Vec<f64> {
    let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
        return Vec::new();
    };
    let span = last - first;
    if bins <= 1 || !(span > 0.0) {
        return vec![0.0; times.len()];
    }
    let scale = (bins - 1) as f64;
    times
        .iter()
        .map(|t| (scale * (t - first) / span).clamp(0.0, scale))
        .collect()
}

/// Normalized timestamp of every event in stream order, with positive and
/// negative events each rescaled over their own time range.
pub fn normalize_timestamps(
    stream: &EventStream,
    bins_pos: usize,
    bins_neg: usize,
) -> Result<Vec<f64>> {
    if bins_pos == 0 || bins_neg == 0 {
        return Err(Error::invalid("time bins must be at least 1"));
    }
    let mut out = vec![0.0; stream.count()];
    for (p, bins) in [(Polarity::Positive, bins_pos), (Polarity::Negative, bins_neg)] {
        let idx: Vec<usize> = (0..stream.count())
            .filter(|&i| stream.events[i].p == p)
            .collect();
        let times: Vec<f64> = idx.iter().map(|&i| stream.events[i].t).collect();
        for (i, t) in idx.into_iter().zip(normalize_times(&times, bins)) {
            out[i] = t;
        }
    }
    Ok(out)
}

/// Builds the two-polarity discretized event volume with a triangular
/// kernel over the two nearest integer bins.
pub fn discretize_volume(
    stream: &EventStream,
    bins_pos: usize,
    bins_neg: usize,
) -> Result<EventVolume> {
    let tn = normalize_timestamps(stream, bins_pos, bins_neg)?;
    let (w, h) = (stream.width, stream.height);
    let mut vol = EventVolume::zeros(bins_pos, bins_neg, w, h);
    let plane = w * h;
    for (e, &t) in stream.events.iter().zip(&tn) {
        let (offset, bins) = match e.p {
            Polarity::Positive => (0, bins_pos),
            Polarity::Negative => (bins_pos, bins_neg),
        };
        let pix = usize::from(e.y) * w + usize::from(e.x);
        let lo = t.floor() as usize;
        for b in [lo, lo + 1] {
            if b >= bins {
                continue;
            }
            let weight = (1.0 - (b as f64 - t).abs()).max(0.0);
            if weight > 0.0 {
                vol.data[(offset + b) * plane + pix] += weight;
            }
        }
    }
    Ok(vol)
}

/// Discretizes many streams with the same bin settings.
pub fn discretize_batch(
    exec: Exec,
    streams: &[EventStream],
    bins_pos: usize,
    bins_neg: usize,
) -> Result<Vec<EventVolume>> {
    par::map(exec, streams, |s| discretize_volume(s, bins_pos, bins_neg))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Polarity,
    Grayscale,
}

impl std::str::FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polarity" => Ok(RenderMode::Polarity),
            "grayscale" => Ok(RenderMode::Grayscale),
            other => Err(Error::invalid(format!("unknown render mode {other:?}"))),
        }
    }
}

fn check_intensity(ei: f64) -> Result<()> {
    if !(ei > 0.0 && ei <= 1.0) {
        return Err(Error::invalid(format!("event intensity must lie in (0, 1], got {ei}")));
    }
    Ok(())
}

fn polarity_counts(stream: &EventStream) -> (Vec<u32>, Vec<u32>) {
    let n = stream.width * stream.height;
    let (mut pos, mut neg) = (vec![0u32; n], vec![0u32; n]);
    for e in &stream.events {
        let i = usize::from(e.y) * stream.width + usize::from(e.x);
        match e.p {
            Polarity::Positive => pos[i] += 1,
            Polarity::Negative => neg[i] += 1,
        }
    }
    (pos, neg)
}

/// Per-polarity accumulation frames, each pixel `min(1, count · ei)`.
pub fn polarity_channels(stream: &EventStream, ei: f64) -> Result<(Plane, Plane)> {
    check_intensity(ei)?;
    let (pos, neg) = polarity_counts(stream);
    let acc = |c: &[u32]| Plane {
        width: stream.width,
        height: stream.height,
        data: c.iter().map(|&k| (f64::from(k) * ei).clamp(0.0, 1.0)).collect(),
    };
    Ok((acc(&pos), acc(&neg)))
}

/// Accumulated event frame. Polarity mode yields signed values in
/// `[-1, 1]`; grayscale mode counts both polarities into `[0, 1]`.
pub fn render_event_frame(stream: &EventStream, ei: f64, mode: RenderMode) -> Result<Plane> {
    check_intensity(ei)?;
    match mode {
        RenderMode::Polarity => {
            let (mut pos, neg) = polarity_channels(stream, ei)?;
            for (a, b) in pos.data.iter_mut().zip(&neg.data) {
                *a -= b;
            }
            Ok(pos)
        }
        RenderMode::Grayscale => {
            let (pos, neg) = polarity_counts(stream);
            Ok(Plane {
                width: stream.width,
                height: stream.height,
                data: pos
                    .iter()
                    .zip(&neg)
                    .map(|(&p, &n)| (f64::from(p + n) * ei).clamp(0.0, 1.0))
                    .collect(),
            })
        }
    }
}

/// Polarity frame as color: positive events in blue, negative in red.
pub fn render_polarity_ppm(stream: &EventStream, ei: f64) -> Result<RgbImage> {
    let (pos, neg) = polarity_channels(stream, ei)?;
    let mut img = RgbImage::new(stream.width, stream.height);
    for (i, px) in img.data.iter_mut().enumerate() {
        *px = [
            (neg.data[i] * 255.0).round() as u8,
            0,
            (pos.data[i] * 255.0).round() as u8,
        ];
    }
    Ok(img)
}

/// Grayscale frame scaled to 8 bits.
pub fn render_grayscale_pgm(stream: &EventStream, ei: f64) -> Result<GrayImage> {
    let mut frame = render_event_frame(stream, ei, RenderMode::Grayscale)?;
    frame.data.iter_mut().for_each(|v| *v *= 255.0);
    Ok(frame.to_gray())
}

/// `2 × H × W` occupancy target: channel 0 marks pixels with at least one
/// positive event, channel 1 pixels with at least one negative event.
pub fn binarize_event_target(stream: &EventStream) -> Tensor {
    let (pos, neg) = polarity_counts(stream);
    let data = pos
        .iter()
        .chain(&neg)
        .map(|&k| if k > 0 { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(vec![2, stream.height, stream.width], data).expect("target layout")
}

/// How a total time-bin count `B` maps onto the two polarity sub-volumes.
///
/// `B = 1` collapses both polarities into a single channel; any larger `B`
/// splits into `⌈B/2⌉` positive and `⌊B/2⌋` negative bins.
pub fn split_bins(total: usize) -> Result<Option<(usize, usize)>> {
    match total {
        0 => Err(Error::invalid("time bins must be at least 1")),
        1 => Ok(None),
        b => Ok(Some((b.div_ceil(2), b / 2))),
    }
}

/// `B × H × W` network input for a total of `B` time bins.
pub fn volume_input(stream: &EventStream, total_bins: usize) -> Result<Tensor> {
    let (w, h) = (stream.width, stream.height);
    match split_bins(total_bins)? {
        Some((bp, bn)) => Ok(discretize_volume(stream, bp, bn)?.to_tensor()),
        None => {
            let vol = discretize_volume(stream, 1, 1)?;
            let (pos, neg) = vol.data.split_at(w * h);
            let merged = pos.iter().zip(neg).map(|(a, b)| a + b).collect();
            Tensor::from_vec(vec![1, h, w], merged)
        }
    }
}

/// Soft event-supervision target with one channel per time bin:
/// `min(1, ei · V)` over [`volume_input`]. With `B = 2` and `ei = 1` this is
/// exactly [`binarize_event_target`].
pub fn event_target(stream: &EventStream, total_bins: usize, ei: f64) -> Result<Tensor> {
    check_intensity(ei)?;
    let mut t = volume_input(stream, total_bins)?;
    t.data_mut().iter_mut().for_each(|v| *v = (*v * ei).clamp(0.0, 1.0));
    Ok(t)
}
