//! Time-bin and event-intensity sweeps.
//!
//! Every (setting, seed) pair trains a fresh model on the corpus training
//! split and is scored on its test split. A run that diverges or errors is
//! recorded in its row instead of aborting the sweep.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FusionMode, ModelConfig, SegModel};
use crate::par::{self, Exec};
use crate::scenegen::Corpus;
use crate::train::{evaluate, prepare_all, train, TrainConfig};

pub const DEFAULT_BINS: [usize; 4] = [1, 2, 10, 18];
pub const DEFAULT_EI: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub status: RunStatus,
    pub acc: Option<f64>,
    pub miou: Option<f64>,
    pub fwiou: Option<f64>,
    pub final_loss: Option<f64>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }

    fn pct(&self) -> String {
        format!("{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub network: String,
    pub rgb: bool,
    pub event: bool,
    pub fusion: String,
    pub event_bins: usize,
    pub event_intensity: f64,
    pub params: usize,
    pub runs: Vec<SeedRun>,
    pub acc: Option<Stat>,
    pub miou: Option<Stat>,
    pub fwiou: Option<Stat>,
}

impl AblationRow {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.status != RunStatus::Ok).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    EventBins,
    EventIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub rows: Vec<AblationRow>,
}

fn fusion_label(mode: FusionMode) -> &'static str {
    match mode {
        FusionMode::S2dEam => "S2D (EAM)",
        FusionMode::D2sEgm => "D2S (EGM)",
        FusionMode::RgbOnly | FusionMode::EventOnly => "-",
    }
}

fn one_run(exec: Exec, corpus: &Corpus, cfg: &ModelConfig, tc: &TrainConfig, seed: u64) -> SeedRun {
    let tc = TrainConfig { seed, ..tc.clone() };
    let outcome = (|| {
        let train_set = prepare_all(exec, &corpus.train, cfg, tc.event_intensity)?;
        let test_set = prepare_all(exec, &corpus.test, cfg, tc.event_intensity)?;
        let mut model = SegModel::new(cfg.clone(), seed)?;
        let log = train(exec, &mut model, &train_set, &tc)?;
        let report = evaluate(exec, &model, &test_set)?.report()?;
        Ok::<_, Error>((log.final_loss(), report))
    })();
    match outcome {
        Ok((final_loss, r)) => SeedRun {
            seed,
            status: RunStatus::Ok,
            acc: Some(r.acc),
            miou: Some(r.miou),
            fwiou: Some(r.fwiou),
            final_loss,
            detail: None,
        },
        Err(e) => SeedRun {
            seed,
            status: if matches!(e, Error::Diverged { .. }) { RunStatus::Diverged } else { RunStatus::Failed },
            acc: None,
            miou: None,
            fwiou: None,
            final_loss: None,
            detail: Some(e.to_string()),
        },
    }
}

/// Runs every (configuration, seed) pair, parallel across pairs.
fn sweep(
    exec: Exec,
    corpus: &Corpus,
    settings: &[(ModelConfig, f64)],
    seeds: &[u64],
    tc: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    if settings.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one setting and one seed"));
    }
    for (cfg, ei) in settings {
        cfg.validate()?;
        TrainConfig { event_intensity: *ei, ..tc.clone() }.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..settings.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let runs = par::map(exec, &jobs, |&(s, seed)| {
        let (cfg, ei) = &settings[s];
        let tc = TrainConfig { event_intensity: *ei, ..tc.clone() };
        one_run(exec, corpus, cfg, &tc, seed)
    });
    let mut runs = runs.into_iter();
    Ok(settings
        .iter()
        .map(|(cfg, ei)| {
            let runs: Vec<SeedRun> = runs.by_ref().take(seeds.len()).collect();
            let stat = |f: fn(&SeedRun) -> Option<f64>| Stat::of(&runs.iter().filter_map(f).collect::<Vec<_>>());
            AblationRow {
                network: cfg.mode.label().to_string(),
                rgb: cfg.mode.uses_rgb_input(),
                event: cfg.mode != FusionMode::RgbOnly,
                fusion: fusion_label(cfg.mode).to_string(),
                event_bins: cfg.time_bins,
                event_intensity: *ei,
                params: cfg.param_count(),
                acc: stat(|r| r.acc),
                miou: stat(|r| r.miou),
                fwiou: stat(|r| r.fwiou),
                runs,
            }
        })
        .collect())
}

/// One row per time-bin count.
pub fn ablate_bins(
    exec: Exec,
    corpus: &Corpus,
    base: &ModelConfig,
    bins: &[usize],
    seeds: &[u64],
    tc: &TrainConfig,
) -> Result<AblationTable> {
    if bins.is_empty() {
        return Err(Error::invalid("empty bins list"));
    }
    let settings: Vec<(ModelConfig, f64)> = bins
        .iter()
        .map(|&b| (base.clone().with_time_bins(b), tc.event_intensity))
        .collect();
    Ok(AblationTable {
        kind: AblationKind::EventBins,
        seeds: seeds.to_vec(),
        train: tc.clone(),
        rows: sweep(exec, corpus, &settings, seeds, tc)?,
    })
}

/// One row per event intensity of the supervision target.
pub fn ablate_ei(
    exec: Exec,
    corpus: &Corpus,
    base: &ModelConfig,
    intensities: &[f64],
    seeds: &[u64],
    tc: &TrainConfig,
) -> Result<AblationTable> {
    if intensities.is_empty() {
        return Err(Error::invalid("empty event-intensity list"));
    }
    let settings: Vec<(ModelConfig, f64)> = intensities.iter().map(|&ei| (base.clone(), ei)).collect();
    Ok(AblationTable {
        kind: AblationKind::EventIntensity,
        seeds: seeds.to_vec(),
        train: tc.clone(),
        rows: sweep(exec, corpus, &settings, seeds, tc)?,
    })
}

/// Toy configuration sized to the corpus.
pub fn default_config(corpus: &Corpus, mode: FusionMode) -> ModelConfig {
    let m = &corpus.manifest;
    ModelConfig::toy(mode, m.num_classes).with_input_size(m.height, m.width)
}

fn cell(s: &Option<Stat>) -> String {
    s.as_ref().map_or_else(|| "failed".to_string(), Stat::pct)
}

fn check(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl AblationTable {
    pub fn header(&self) -> Vec<&'static str> {
        match self.kind {
            AblationKind::EventBins => vec!["Network", "RGB", "Event", "Fusion", "Event Bins", "Params(M)", "mIoU"],
            AblationKind::EventIntensity => vec!["Event Intensity", "Acc", "mIoU", "fwIoU"],
        }
    }

    pub fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| match self.kind {
                AblationKind::EventBins => vec![
                    r.network.clone(),
                    check(r.rgb).into(),
                    check(r.event).into(),
                    r.fusion.clone(),
                    r.event_bins.to_string(),
                    format!("{:.3}", r.params as f64 / 1e6),
                    cell(&r.miou),
                ],
                AblationKind::EventIntensity => vec![format!("{}", r.event_intensity), cell(&r.acc), cell(&r.miou), cell(&r.fwiou)],
            })
            .collect()
    }

    /// Column-aligned plain text; metrics in percent, mean±std over seeds.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let cells = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |row: Vec<String>| {
            row.iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        writeln!(out, "{}", line(header.iter().map(|s| s.to_string()).collect())).expect("string write");
        writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")).expect("string write");
        for row in cells {
            writeln!(out, "{}", line(row)).expect("string write");
        }
        out
    }

    /// Whitespace-separated columns for plotting: setting, then mean and
    /// std of acc, mIoU and fwIoU (NaN where no seed finished).
    pub fn to_dat(&self) -> String {
        let mut out = String::from("# setting acc_mean acc_std miou_mean miou_std fwiou_mean fwiou_std\n");
        for r in &self.rows {
            let setting = match self.kind {
                AblationKind::EventBins => r.event_bins.to_string(),
                AblationKind::EventIntensity => r.event_intensity.to_string(),
            };
            let ms = |s: &Option<Stat>| s.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std));
            let (a, b, c) = (ms(&r.acc), ms(&r.miou), ms(&r.fwiou));
            writeln!(out, "{setting} {} {} {} {} {} {}", a.0, a.1, b.0, b.1, c.0, c.1).expect("string write");
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.failed_runs() == 0 && r.miou.is_some())
    }
}
