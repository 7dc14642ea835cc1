//! Synthetic moving-shapes corpus.
//!
//! Each scene is a static sky/road backdrop with one to three moving agents
//! (discs and boxes). Two frames are rendered: the previous frame at the
//! agents' start positions and the anchor frame one step later. The anchor
//! frame alone carries the segmentation mask and may be degraded by
//! convolving it with line kernels along the agents' velocities; both frames
//! share a global brightness factor. Events are simulated from the quantized pair.
//!
//! Geometry and degradation draw from separate random streams, so corpora
//! that differ only in difficulty share every scene layout.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{read_evt1, simulate_events, write_evt1, EventStream, LogIntensityPair, SimulatorConfig};
use crate::image::{GrayImage, Plane};
use crate::par::{self, Exec};

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_ROAD: u8 = 1;
pub const CLASS_CIRCLE: u8 = 2;
pub const CLASS_BOX: u8 = 3;
pub const NUM_CLASSES: usize = 4;

pub const DEFAULT_WIDTH: usize = 128;
pub const DEFAULT_HEIGHT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle { radius: f64 },
    Box { half_w: f64, half_h: f64 },
}

impl Shape {
    fn class(self) -> u8 {
        match self {
            Shape::Circle { .. } => CLASS_CIRCLE,
            Shape::Box { .. } => CLASS_BOX,
        }
    }

    /// Half extents of the bounding box.
    fn extent(self) -> (f64, f64) {
        match self {
            Shape::Circle { radius } => (radius, radius),
            Shape::Box { half_w, half_h } => (half_w, half_h),
        }
    }

    /// Whether the pixel centre `(px, py)` lies inside the shape centred at `c`.
    pub fn covers(self, c: (f64, f64), px: f64, py: f64) -> bool {
        let (dx, dy) = (px - c.0, py - c.1);
        match self {
            Shape::Circle { radius } => dx * dx + dy * dy <= radius * radius,
            Shape::Box { half_w, half_h } => dx.abs() <= half_w && dy.abs() <= half_h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub shape: Shape,
    /// Centre in the previous frame.
    pub start: (f64, f64),
    /// Displacement per frame.
    pub velocity: (f64, f64),
    /// Gray level in 0..=255 before brightness scaling.
    pub intensity: f64,
}

impl Agent {
    pub fn anchor(&self) -> (f64, f64) {
        (self.start.0 + self.velocity.0, self.start.1 + self.velocity.1)
    }
}

/// Backdrop: sky above the horizon, a road trapezoid below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backdrop {
    pub horizon: f64,
    /// Road half-width at the horizon and at the bottom edge.
    pub road_top_half: f64,
    pub road_bottom_half: f64,
    pub road_center: f64,
    pub sky: f64,
    pub ground: f64,
    pub road: f64,
}

impl Backdrop {
    pub fn is_road(&self, height: usize, px: f64, py: f64) -> bool {
        if py < self.horizon {
            return false;
        }
        let t = (py - self.horizon) / (height as f64 - self.horizon);
        let half = self.road_top_half + t * (self.road_bottom_half - self.road_top_half);
        (px - self.road_center).abs() <= half
    }

    fn value(&self, height: usize, px: f64, py: f64) -> f64 {
        if self.is_road(height, px, py) {
            self.road
        } else if py < self.horizon {
            self.sky
        } else {
            self.ground
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub backdrop: Backdrop,
    pub agents: Vec<Agent>,
    pub global_brightness: f64,
    pub blur_length: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::invalid(format!("canvas {}x{} out of range", self.width, self.height)));
        }
        if !(self.global_brightness > 0.0 && self.global_brightness <= 1.0) {
            return Err(Error::invalid(format!("brightness {} outside (0, 1]", self.global_brightness)));
        }
        if !(self.blur_length >= 0.0 && self.blur_length.is_finite()) {
            return Err(Error::invalid(format!("blur length {} must be finite and >= 0", self.blur_length)));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let (ex, ey) = a.shape.extent();
            if !(ex > 0.0 && ey > 0.0) {
                return Err(Error::invalid(format!("agent {i} has an empty shape")));
            }
            for (cx, cy) in [a.start, a.anchor()] {
                let inside = cx - ex >= 0.0 && cy - ey >= 0.0 && cx + ex <= self.width as f64 && cy + ey <= self.height as f64;
                if !inside {
                    return Err(Error::invalid(format!("agent {i} leaves the canvas")));
                }
            }
            if !(0.0..=255.0).contains(&a.intensity) {
                return Err(Error::invalid(format!("agent {i} intensity {} outside 0..=255", a.intensity)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame_prev: GrayImage,
    pub frame_anchor: GrayImage,
    /// Class ids of the anchor frame, row-major.
    pub mask: Vec<u8>,
    pub events: EventStream,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.frame_anchor.width
    }

    pub fn height(&self) -> usize {
        self.frame_anchor.height
    }

    pub fn labels(&self) -> Vec<usize> {
        self.mask.iter().map(|&c| usize::from(c)).collect()
    }

    pub fn mask_image(&self) -> GrayImage {
        GrayImage {
            width: self.width(),
            height: self.height(),
            maxval: 255,
            data: self.mask.iter().map(|&c| u16::from(c)).collect(),
        }
    }
}

/// Hard-edged anchor-frame class map; later agents occlude earlier ones.
pub fn rasterize_mask(spec: &SceneSpec) -> Vec<u8> {
    let (w, h) = (spec.width, spec.height);
    let mut mask = vec![CLASS_BACKGROUND; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut c = if spec.backdrop.is_road(h, px, py) { CLASS_ROAD } else { CLASS_BACKGROUND };
            for a in &spec.agents {
                if a.shape.covers(a.anchor(), px, py) {
                    c = a.shape.class();
                }
            }
            mask[y * w + x] = c;
        }
    }
    mask
}

/// Offsets along the unit velocity direction sampled by the blur kernel.
fn blur_offsets(agent: &Agent, length: f64) -> Vec<(f64, f64)> {
    let (vx, vy) = agent.velocity;
    let speed = (vx * vx + vy * vy).sqrt();
    let taps = length.round() as usize;
    if taps < 2 || speed == 0.0 {
        return vec![(0.0, 0.0)];
    }
    let (ux, uy) = (vx / speed, vy / speed);
    (0..taps)
        .map(|i| {
            let s = (i as f64 + 0.5) / taps as f64 * length - length / 2.0;
            (s * ux, s * uy)
        })
        .collect()
}

/// Unblurred scene value at a continuous point.
fn sharp_value(spec: &SceneSpec, anchor: bool, px: f64, py: f64) -> f64 {
    let mut v = spec.backdrop.value(spec.height, px, py);
    for a in &spec.agents {
        let c = if anchor { a.anchor() } else { a.start };
        if a.shape.covers(c, px, py) {
            v = a.intensity;
        }
    }
    v
}

/// Renders one frame. With `blur > 0` the whole frame is convolved with the
/// mean of one line kernel per agent, each along that agent's velocity.
fn render(spec: &SceneSpec, anchor: bool, blur: f64) -> Plane {
    let (w, h) = (spec.width, spec.height);
    let mut frame = Plane::zeros(w, h);
    let mut kernel: Vec<(f64, f64)> = spec.agents.iter().flat_map(|a| blur_offsets(a, blur)).collect();
    if kernel.is_empty() {
        kernel.push((0.0, 0.0));
    }
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let v = kernel.iter().map(|(ox, oy)| sharp_value(spec, anchor, px - ox, py - oy)).sum::<f64>() / kernel.len() as f64;
            frame.set(x, y, v * spec.global_brightness);
        }
    }
    frame
}

/// Renders both frames, the mask and the events of one scene.
pub fn generate_sample(spec: &SceneSpec) -> Result<Sample> {
    spec.validate()?;
    let frame_prev = render(spec, false, 0.0).to_gray();
    let frame_anchor = render(spec, true, spec.blur_length).to_gray();
    let cfg = SimulatorConfig::default();
    let pair = LogIntensityPair::from_frames(&frame_prev.to_plane(), &frame_anchor.to_plane(), cfg.log_eps, 1.0)?;
    let events = simulate_events(&pair, &cfg)?;
    Ok(Sample {
        frame_prev,
        frame_anchor,
        mask: rasterize_mask(spec),
        events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Clean,
    Blur,
    Lowlight,
    BlurLowlight,
}

impl Difficulty {
    pub fn has_blur(self) -> bool {
        matches!(self, Difficulty::Blur | Difficulty::BlurLowlight)
    }

    pub fn has_lowlight(self) -> bool {
        matches!(self, Difficulty::Lowlight | Difficulty::BlurLowlight)
    }

    pub fn label(self) -> &'static str {
        match self {
            Difficulty::Clean => "clean",
            Difficulty::Blur => "blur",
            Difficulty::Lowlight => "lowlight",
            Difficulty::BlurLowlight => "blur+lowlight",
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "+").as_str() {
            "clean" => Ok(Difficulty::Clean),
            "blur" => Ok(Difficulty::Blur),
            "lowlight" => Ok(Difficulty::Lowlight),
            "blur+lowlight" | "lowlight+blur" => Ok(Difficulty::BlurLowlight),
            other => Err(Error::invalid(format!("unknown difficulty {other:?}"))),
        }
    }
}

pub const BLUR_RANGE: (f64, f64) = (4.0, 12.0);
pub const LOWLIGHT_RANGE: (f64, f64) = (0.1, 0.3);

const DEGRADATION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn random_agent(rng: &mut ChaCha8Rng, w: f64, h: f64, horizon: f64, tones: (f64, f64, f64)) -> Agent {
    let shape = if rng.random_bool(0.5) {
        Shape::Circle {
            radius: rng.random_range(4.0..9.0),
        }
    } else {
        Shape::Box {
            half_w: rng.random_range(4.0..12.0),
            half_h: rng.random_range(3.0..8.0),
        }
    };
    let speed: f64 = rng.random_range(3.0..8.0);
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let velocity: (f64, f64) = (dir * speed, rng.random_range(-1.5..1.5));
    let (ex, ey) = shape.extent();
    let lo_x = ex + velocity.0.min(0.0).abs();
    let hi_x = w - ex - velocity.0.max(0.0);
    let lo_y = (ey + velocity.1.min(0.0).abs()).max(horizon - ey);
    let hi_y = h - ey - velocity.1.max(0.0);
    let start = (rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
    // Keep every agent well separated from all backdrop tones.
    let (sky, ground, road) = tones;
    let intensity = loop {
        let v: f64 = rng.random_range(150.0..250.0);
        if [sky, ground, road].iter().all(|t| (v - t).abs() >= 40.0) {
            break v.round();
        }
    };
    Agent {
        shape,
        start,
        velocity,
        intensity,
    }
}

/// Scene for `seed`; the layout depends only on `seed`, the degradation on
/// `seed` and `difficulty`.
pub fn random_scene(seed: u64, width: usize, height: usize, difficulty: Difficulty) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let horizon = (h * rng.random_range(0.35..0.5)).round();
    let sky = rng.random_range(80.0..110.0f64).round();
    let ground = rng.random_range(40.0..60.0f64).round();
    let road = rng.random_range(10.0..25.0f64).round();
    let backdrop = Backdrop {
        horizon,
        road_top_half: w * rng.random_range(0.05..0.12),
        road_bottom_half: w * rng.random_range(0.35..0.5),
        road_center: w * rng.random_range(0.4..0.6),
        sky,
        ground,
        road,
    };
    let n_agents = rng.random_range(1..=3);
    let agents = (0..n_agents)
        .map(|_| random_agent(&mut rng, w, h, horizon, (sky, ground, road)))
        .collect();

    let mut deg = ChaCha8Rng::seed_from_u64(seed ^ DEGRADATION_STREAM);
    let blur = deg.random_range(BLUR_RANGE.0..=BLUR_RANGE.1);
    let dark = deg.random_range(LOWLIGHT_RANGE.0..=LOWLIGHT_RANGE.1);
    SceneSpec {
        width,
        height,
        backdrop,
        agents,
        global_brightness: if difficulty.has_lowlight() { dark } else { 1.0 },
        blur_length: if difficulty.has_blur() { blur } else { 0.0 },
        seed,
    }
}

/// Split seeds interleave so train and test never share one.
pub fn split_seed(base_seed: u64, split: Split, index: usize) -> u64 {
    let k = 2 * index as u64 + u64::from(split == Split::Test);
    base_seed.wrapping_add(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub frame_prev: String,
    pub frame_anchor: String,
    pub mask: String,
    pub events: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub index: usize,
    pub files: SampleFiles,
    pub event_count: usize,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub difficulty: Difficulty,
    pub base_seed: u64,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub n_train: usize,
    pub n_test: usize,
    pub base_seed: u64,
    pub difficulty: Difficulty,
    pub width: usize,
    pub height: usize,
}

impl CorpusOptions {
    pub fn new(n_train: usize, n_test: usize, base_seed: u64, difficulty: Difficulty) -> Self {
        CorpusOptions {
            n_train,
            n_test,
            base_seed,
            difficulty,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

/// In-memory corpus; each split keeps manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generates every scene without touching the file system.
pub fn build_corpus(exec: Exec, opts: &CorpusOptions) -> Result<Corpus> {
    if opts.n_train == 0 || opts.n_test == 0 {
        return Err(Error::invalid("corpus needs at least one train and one test sample"));
    }
    let jobs: Vec<(Split, usize)> = (0..opts.n_train)
        .map(|i| (Split::Train, i))
        .chain((0..opts.n_test).map(|i| (Split::Test, i)))
        .collect();
    let built = par::map(exec, &jobs, |&(split, index)| {
        let spec = random_scene(split_seed(opts.base_seed, split, index), opts.width, opts.height, opts.difficulty);
        generate_sample(&spec).map(|s| (split, index, spec, s))
    });
    let mut manifest = Manifest {
        difficulty: opts.difficulty,
        base_seed: opts.base_seed,
        width: opts.width,
        height: opts.height,
        num_classes: NUM_CLASSES,
        n_train: opts.n_train,
        n_test: opts.n_test,
        samples: Vec::with_capacity(jobs.len()),
    };
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for item in built {
        let (split, index, spec, sample) = item?;
        manifest.samples.push(ManifestEntry {
            split,
            index,
            files: sample_files(split, index),
            event_count: sample.events.count(),
            spec,
        });
        match split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok(Corpus { manifest, train, test })
}

fn sample_files(split: Split, index: usize) -> SampleFiles {
    let stem = format!("{}/{index:05}", split.dir());
    SampleFiles {
        frame_prev: format!("{stem}_prev.pgm"),
        frame_anchor: format!("{stem}_anchor.pgm"),
        mask: format!("{stem}_mask.pgm"),
        events: format!("{stem}_events.evt"),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

impl Corpus {
    /// Writes frames, masks and events plus the manifest. Refuses to write
    /// into a directory that already holds a corpus.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for p in [dir.join(MANIFEST_FILE), dir.join(Split::Train.dir()), dir.join(Split::Test.dir())] {
            if p.exists() {
                return Err(Error::PathCollision(p.display().to_string()));
            }
        }
        fs::create_dir_all(dir.join(Split::Train.dir()))?;
        fs::create_dir_all(dir.join(Split::Test.dir()))?;
        let samples = self.train.iter().chain(&self.test);
        for (entry, sample) in self.manifest.samples.iter().zip(samples) {
            let f = &entry.files;
            sample.frame_prev.write_pgm(create(&dir.join(&f.frame_prev))?)?;
            sample.frame_anchor.write_pgm(create(&dir.join(&f.frame_anchor))?)?;
            sample.mask_image().write_pgm(create(&dir.join(&f.mask))?)?;
            write_evt1(&sample.events, create(&dir.join(&f.events))?)?;
        }
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    /// Reads a corpus written by [`Corpus::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_reader(open(&dir.join(MANIFEST_FILE))?)?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for entry in &manifest.samples {
            let f = &entry.files;
            let mask_img = GrayImage::read_pgm(open(&dir.join(&f.mask))?)?;
            let mask = mask_img
                .data
                .iter()
                .map(|&v| if (v as usize) < manifest.num_classes { Ok(v as u8) } else { Err(Error::format("PGM", format!("class id {v} in {}", f.mask))) })
                .collect::<Result<Vec<u8>>>()?;
            let sample = Sample {
                frame_prev: GrayImage::read_pgm(open(&dir.join(&f.frame_prev))?)?,
                frame_anchor: GrayImage::read_pgm(open(&dir.join(&f.frame_anchor))?)?,
                mask,
                events: read_evt1(open(&dir.join(&f.events))?)?,
            };
            let geom = (manifest.width, manifest.height);
            let ok = (sample.frame_prev.width, sample.frame_prev.height) == geom
                && (sample.frame_anchor.width, sample.frame_anchor.height) == geom
                && (mask_img.width, mask_img.height) == geom
                && (sample.events.width(), sample.events.height()) == geom;
            if !ok {
                return Err(Error::invalid(format!("sample {} does not match the {}x{} corpus", f.frame_anchor, geom.0, geom.1)));
            }
            match entry.split {
                Split::Train => train.push(sample),
                Split::Test => test.push(sample),
            }
        }
        if train.len() != manifest.n_train || test.len() != manifest.n_test {
            return Err(Error::invalid("manifest split counts disagree with its entries"));
        }
        Ok(Corpus { manifest, train, test })
    }
}

/// Generates a corpus and writes it to `dir`.
pub fn generate_corpus(exec: Exec, opts: &CorpusOptions, dir: &Path) -> Result<Corpus> {
    let corpus = build_corpus(exec, opts)?;
    corpus.write(dir)?;
    Ok(corpus)
}

/// Where a loader for a real labelled dataset would attach: anything that
/// can hand out anchor frames, masks and events.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<Sample>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("sample {index} out of range")))
    }
}

/// Files belonging to one manifest entry, resolved against `dir`.
pub fn entry_paths(dir: &Path, entry: &ManifestEntry) -> [PathBuf; 4] {
    let f = &entry.files;
    [dir.join(&f.frame_prev), dir.join(&f.frame_anchor), dir.join(&f.mask), dir.join(&f.events)]
}
