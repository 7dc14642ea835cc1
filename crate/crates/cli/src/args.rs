use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use evfuse::events::RenderMode;
use evfuse::model::FusionMode;
use evfuse::scenegen::Difficulty;

#[derive(Debug, Parser)]
#[command(name = "evfuse", version, about = "Event simulation, voxelization and RGB-event fusion segmentation")]
#[command(args_override_self = true)]
pub struct Cli {
    /// JSON object whose keys override the matching command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Where to write the run report (default: next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate events between two PGM frames.
    Simulate(SimulateArgs),
    /// Discretize an event file into a time-binned volume.
    Voxelize(VoxelizeArgs),
    /// Render an accumulated event frame as PPM (polarity) or PGM (grayscale).
    Render(RenderArgs),
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train a segmentation model on a corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the corpus test split.
    Eval(EvalArgs),
    /// Sweep the number of event time bins.
    AblateBins(AblateBinsArgs),
    /// Sweep the event intensity of the supervision target.
    AblateEi(AblateEiArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Voxelize(_) => "voxelize",
            Command::Render(_) => "render",
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::AblateBins(_) => "ablate-bins",
            Command::AblateEi(_) => "ablate-ei",
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        let v = match self {
            Command::Simulate(a) => serde_json::to_value(a),
            Command::Voxelize(a) => serde_json::to_value(a),
            Command::Render(a) => serde_json::to_value(a),
            Command::Gen(a) => serde_json::to_value(a),
            Command::Train(a) => serde_json::to_value(a),
            Command::Eval(a) => serde_json::to_value(a),
            Command::AblateBins(a) => serde_json::to_value(a),
            Command::AblateEi(a) => serde_json::to_value(a),
        };
        v.expect("arguments serialize")
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub prev: PathBuf,
    #[arg(long)]
    pub curr: PathBuf,
    /// Contrast threshold on the log-intensity change.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    pub log_eps: f64,
    #[arg(long, default_value_t = 32)]
    pub max_events_per_pixel: usize,
    /// Time between the two frames.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VoxelizeArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub bins_pos: usize,
    #[arg(long)]
    pub bins_neg: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Event intensity in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub ei: f64,
    #[arg(long, default_value = "polarity")]
    pub mode: RenderMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub n_train: usize,
    #[arg(long)]
    pub n_test: usize,
    #[arg(long, default_value = "clean")]
    pub difficulty: Difficulty,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = evfuse::scenegen::DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = evfuse::scenegen::DEFAULT_HEIGHT)]
    pub height: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainingFlags {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    /// Initial learning rate of the cosine schedule.
    #[arg(long, default_value_t = 4e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Disable random horizontal flips.
    #[arg(long)]
    pub no_flip: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "d2s")]
    pub mode: FusionMode,
    /// Total event time bins.
    #[arg(long, default_value_t = 2)]
    pub bins: usize,
    /// Event intensity of the supervision target.
    #[arg(long, default_value_t = 1.0)]
    pub ei: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingFlags,
    /// Checkpoint path; the training log is written to `<out>.log.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training log holding the model configuration (default `<checkpoint>.log.json`).
    #[arg(long)]
    pub train_log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateBinsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "d2s")]
    pub mode: FusionMode,
    /// Comma-separated total bin counts.
    #[arg(long, default_value = "1,2,10,18")]
    pub bins_list: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[arg(long, default_value_t = 1.0)]
    pub ei: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingFlags,
    /// Table JSON; `.txt` and `.dat` siblings are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateEiArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "d2s")]
    pub mode: FusionMode,
    /// Comma-separated event intensities.
    #[arg(long, default_value = "0.1,0.3,0.5,0.7,1.0")]
    pub ei_list: String,
    #[arg(long, default_value_t = 2)]
    pub bins: usize,
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingFlags,
    #[arg(long)]
    pub out: PathBuf,
}

/// Appends `--key value` pairs from a JSON object so they win over earlier
/// flags. Keys may use `_` or `-`; `true` sets a switch, `false` is skipped,
/// arrays become comma-separated lists.
pub fn config_overrides(json: &serde_json::Value) -> Result<Vec<OsString>, String> {
    let obj = json.as_object().ok_or("config file must hold a JSON object")?;
    let mut out = Vec::new();
    for (key, value) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let text = match value {
            serde_json::Value::Bool(true) => {
                out.push(flag.into());
                continue;
            }
            serde_json::Value::Bool(false) | serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Ok(s.clone()),
                    serde_json::Value::Number(n) => Ok(n.to_string()),
                    _ => Err(format!("config key {key:?}: list items must be numbers or strings")),
                })
                .collect::<Result<Vec<_>, _>>()?
                .join(","),
            serde_json::Value::Object(_) => return Err(format!("config key {key:?}: nested objects are not flags")),
        };
        out.push(flag.into());
        out.push(text.into());
    }
    Ok(out)
}

/// Finds the `--config` value in raw arguments.
pub fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

pub fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    if items.is_empty() {
        return Err(format!("{what} list is empty"));
    }
    items
        .iter()
        .map(|x| x.parse().map_err(|_| format!("cannot parse {x:?} in {what} list")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_flatten_json() {
        let v = serde_json::json!({"bins_list": [1, 2], "no_flip": true, "epochs": 3, "mode": "rgb", "x": false});
        let got: Vec<String> = config_overrides(&v).unwrap().into_iter().map(|s| s.into_string().unwrap()).collect();
        assert_eq!(got, ["--bins-list", "1,2", "--epochs", "3", "--mode", "rgb", "--no-flip"]);
        assert!(config_overrides(&serde_json::json!([1])).is_err());
    }

    #[test]
    fn later_flags_win() {
        let cli = Cli::try_parse_from(["evfuse", "train", "--corpus", "c", "--out", "o", "--epochs", "5", "--epochs", "7"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.training.epochs, 7);
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("bins", "1, 2,10").unwrap(), [1, 2, 10]);
        assert!(parse_list::<usize>("bins", "").is_err());
        assert!(parse_list::<f64>("ei", "0.1,x").is_err());
    }

    #[test]
    fn config_flag_is_found() {
        let a: Vec<OsString> = ["evfuse", "gen", "--config=c.json"].iter().map(OsString::from).collect();
        assert_eq!(find_config(&a), Some(PathBuf::from("c.json")));
    }
}
