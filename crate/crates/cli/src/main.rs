mod args;
mod report;

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use serde_json::json;

use evfuse::ablation::{ablate_bins, ablate_ei, default_config, AblationTable};
use evfuse::events::{
    discretize_volume, read_evt1, render_event_frame, render_grayscale_pgm, render_polarity_ppm, simulate_events,
    write_evt1, write_vol1, LogIntensityPair, RenderMode, SimulatorConfig,
};
use evfuse::image::GrayImage;
use evfuse::model::SegModel;
use evfuse::par::{self, Exec};
use evfuse::scenegen::{generate_corpus, Corpus, CorpusOptions, MANIFEST_FILE};
use evfuse::train::{evaluate, prepare_all, train, TrainConfig, TrainLog};
use evfuse::Error;

use args::{Cli, Command, TrainingFlags};
use report::Recorder;

const EXIT_INPUT: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Debug)]
enum Failure {
    Input(String),
    Diverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<String> for Failure {
    fn from(e: String) -> Self {
        Failure::Input(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn with_context<T, E: std::fmt::Display>(path: &Path, r: std::result::Result<T, E>) -> Outcome<T> {
    r.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Outcome<BufReader<fs::File>> {
    with_context(path, fs::File::open(path)).map(BufReader::new)
}

fn create(path: &Path) -> Outcome<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        with_context(dir, fs::create_dir_all(dir))?;
    }
    with_context(path, fs::File::create(path)).map(BufWriter::new)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_gray(path: &Path) -> Outcome<GrayImage> {
    with_context(path, GrayImage::read_pgm(open(path)?))
}

fn load_corpus(dir: &Path, rec: &mut Recorder) -> Outcome<Corpus> {
    let corpus = with_context(dir, Corpus::load(dir))?;
    rec.input(&dir.join(MANIFEST_FILE))?;
    Ok(corpus)
}

fn train_config(flags: &TrainingFlags, seed: u64, ei: f64) -> TrainConfig {
    TrainConfig {
        epochs: flags.epochs,
        batch_size: flags.batch_size,
        lr0: flags.lr,
        weight_decay: flags.weight_decay,
        seed,
        hflip: !flags.no_flip,
        event_intensity: ei,
        ..TrainConfig::default()
    }
}

fn run(cmd: &Command, rec: &mut Recorder, exec: Exec) -> Outcome<(serde_json::Value, PathBuf)> {
    match cmd {
        Command::Simulate(a) => {
            let prev = read_gray(&a.prev)?;
            let curr = read_gray(&a.curr)?;
            rec.input(&a.prev)?;
            rec.input(&a.curr)?;
            let cfg = SimulatorConfig {
                threshold_c: a.threshold,
                log_eps: a.log_eps,
                max_events_per_pixel: a.max_events_per_pixel,
            };
            cfg.validate()?;
            if (prev.width, prev.height) != (curr.width, curr.height) {
                return Err(Failure::Input(format!(
                    "frame geometry differs: {}x{} vs {}x{}",
                    prev.width, prev.height, curr.width, curr.height
                )));
            }
            let pair = LogIntensityPair::from_frames(&prev.to_plane(), &curr.to_plane(), a.log_eps, a.dt)?;
            let stream = simulate_events(&pair, &cfg)?;
            rec.lap("simulate");
            let mut w = create(&a.out)?;
            write_evt1(&stream, &mut w)?;
            w.flush()?;
            println!("events: {}", stream.count());
            Ok((json!({ "events": stream.count() }), a.out.clone()))
        }
        Command::Voxelize(a) => {
            let stream = with_context(&a.events, read_evt1(open(&a.events)?))?;
            rec.input(&a.events)?;
            let vol = discretize_volume(&stream, a.bins_pos, a.bins_neg)?;
            rec.lap("discretize");
            let mut w = create(&a.out)?;
            write_vol1(&vol, &mut w)?;
            w.flush()?;
            let mass = vol.total_mass();
            println!("events: {}", stream.count());
            println!("total mass: {mass}");
            Ok((json!({ "events": stream.count(), "total_mass": mass }), a.out.clone()))
        }
        Command::Render(a) => {
            let stream = with_context(&a.events, read_evt1(open(&a.events)?))?;
            rec.input(&a.events)?;
            let frame = render_event_frame(&stream, a.ei, a.mode)?;
            let mut w = create(&a.out)?;
            match a.mode {
                RenderMode::Polarity => render_polarity_ppm(&stream, a.ei)?.write_ppm(&mut w)?,
                RenderMode::Grayscale => render_grayscale_pgm(&stream, a.ei)?.write_pgm(&mut w)?,
            }
            w.flush()?;
            let lit = frame.data.iter().filter(|&&v| v != 0.0).count();
            println!("active pixels: {lit}");
            Ok((json!({ "events": stream.count(), "active_pixels": lit }), a.out.clone()))
        }
        Command::Gen(a) => {
            let mut opts = CorpusOptions::new(a.n_train, a.n_test, a.seed, a.difficulty);
            opts.width = a.width;
            opts.height = a.height;
            let corpus = generate_corpus(exec, &opts, &a.out_dir)?;
            rec.lap("generate");
            let events: usize = corpus.manifest.samples.iter().map(|e| e.event_count).sum();
            let mean = events as f64 / corpus.manifest.samples.len() as f64;
            println!("samples: {} train, {} test", corpus.train.len(), corpus.test.len());
            println!("mean events per sample: {mean:.1}");
            Ok((
                json!({ "n_train": corpus.train.len(), "n_test": corpus.test.len(), "mean_events": mean }),
                a.out_dir.join(MANIFEST_FILE),
            ))
        }
        Command::Train(a) => {
            let corpus = load_corpus(&a.corpus, rec)?;
            let cfg = default_config(&corpus, a.mode).with_time_bins(a.bins);
            let tc = train_config(&a.training, a.seed, a.ei);
            tc.validate()?;
            let data = prepare_all(exec, &corpus.train, &cfg, a.ei)?;
            let mut model = SegModel::new(cfg, a.seed)?;
            rec.lap("prepare");
            let log = train(exec, &mut model, &data, &tc)?;
            rec.lap("train");
            let mut w = create(&a.out)?;
            model.save(&mut w)?;
            w.flush()?;
            let log_path = sibling(&a.out, ".log.json");
            write_json(&log_path, &log)?;
            rec.output(&log_path);
            println!("parameters: {}", log.param_count);
            println!("loss: {:.4} -> {:.4}", log.initial_loss().unwrap_or(f64::NAN), log.final_loss().unwrap_or(f64::NAN));
            Ok((
                json!({
                    "param_count": log.param_count,
                    "initial_loss": log.initial_loss(),
                    "final_loss": log.final_loss(),
                }),
                a.out.clone(),
            ))
        }
        Command::Eval(a) => {
            let corpus = load_corpus(&a.corpus, rec)?;
            let log_path = a.train_log.clone().unwrap_or_else(|| sibling(&a.checkpoint, ".log.json"));
            let log: TrainLog = with_context(&log_path, serde_json::from_reader(open(&log_path)?))?;
            let model = with_context(&a.checkpoint, SegModel::load(log.model.clone(), open(&a.checkpoint)?))?;
            rec.input(&a.checkpoint)?;
            rec.input(&log_path)?;
            let data = prepare_all(exec, &corpus.test, &log.model, log.train.event_intensity)?;
            let report = evaluate(exec, &model, &data)?.report()?;
            rec.lap("evaluate");
            write_json(&a.out, &report)?;
            println!("acc {:.4}  mIoU {:.4}  fwIoU {:.4}", report.acc, report.miou, report.fwiou);
            Ok((json!({ "acc": report.acc, "miou": report.miou, "fwiou": report.fwiou }), a.out.clone()))
        }
        Command::AblateBins(a) => {
            let bins: Vec<usize> = args::parse_list("bins", &a.bins_list)?;
            let seeds: Vec<u64> = args::parse_list("seeds", &a.seeds)?;
            let corpus = load_corpus(&a.corpus, rec)?;
            let base = default_config(&corpus, a.mode);
            let tc = train_config(&a.training, 0, a.ei);
            let table = ablate_bins(exec, &corpus, &base, &bins, &seeds, &tc)?;
            rec.lap("sweep");
            emit_table(&table, &a.out, rec)
        }
        Command::AblateEi(a) => {
            let eis: Vec<f64> = args::parse_list("event intensity", &a.ei_list)?;
            let seeds: Vec<u64> = args::parse_list("seeds", &a.seeds)?;
            let corpus = load_corpus(&a.corpus, rec)?;
            let base = default_config(&corpus, a.mode).with_time_bins(a.bins);
            let tc = train_config(&a.training, 0, 1.0);
            let table = ablate_ei(exec, &corpus, &base, &eis, &seeds, &tc)?;
            rec.lap("sweep");
            emit_table(&table, &a.out, rec)
        }
    }
}

fn emit_table(table: &AblationTable, out: &Path, rec: &mut Recorder) -> Outcome<(serde_json::Value, PathBuf)> {
    write_json(out, table)?;
    let text = out.with_extension("txt");
    let dat = out.with_extension("dat");
    with_context(&text, fs::write(&text, table.to_text()))?;
    with_context(&dat, fs::write(&dat, table.to_dat()))?;
    rec.output(&text);
    rec.output(&dat);
    print!("{}", table.to_text());
    let failed: usize = table.rows.iter().map(|r| r.failed_runs()).sum();
    if failed > 0 {
        eprintln!("warning: {failed} sub-run(s) failed; see the table JSON for details");
    }
    Ok((json!({ "rows": table.rows.len(), "failed_runs": failed, "complete": table.is_complete() }), out.to_path_buf()))
}

fn threads_from_env() -> Outcome<Option<usize>> {
    match std::env::var("EVFUSE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Input(format!("EVFUSE_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn parse_cli() -> Outcome<Cli> {
    let mut raw: Vec<OsString> = std::env::args_os().collect();
    if let Some(path) = args::find_config(&raw) {
        let value: serde_json::Value = with_context(&path, serde_json::from_reader(open(&path)?))?;
        raw.extend(args::config_overrides(&value)?);
    }
    // Usage errors exit with status 2, help and version with 0.
    Ok(Cli::try_parse_from(raw).unwrap_or_else(|e| e.exit()))
}

fn main_inner() -> Outcome<()> {
    let cli = parse_cli()?;
    let threads = threads_from_env()?;
    if let Some(n) = threads {
        par::init_threads(n);
    }
    let mut rec = Recorder::new(cli.command.name(), cli.command.echo(), threads);
    let (results, primary) = run(&cli.command, &mut rec, Exec::Parallel)?;
    rec.output(&primary);
    let report_path = cli.report.clone().unwrap_or_else(|| sibling(&primary, ".report.json"));
    write_json(&report_path, &rec.finish(results))?;
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DIVERGED)
        }
    }
}
