use std::fs;
use std::path::Path;
use std::process::Command;

use evfuse::ablation::AblationTable;

use crate::Verdict;

fn evfuse(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_evfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("`evfuse {}` exited with {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn read_table(path: &Path) -> Result<AblationTable, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

const BINS_HEADER: [&str; 7] = ["Network", "RGB", "Event", "Fusion", "Event Bins", "Params(M)", "mIoU"];
const EI_HEADER: [&str; 4] = ["Event Intensity", "Acc", "mIoU", "fwIoU"];

fn check_table(t: &AblationTable, text: &str, header: &[&str], rows: usize) -> Result<(), String> {
    if t.rows.len() != rows {
        return Err(format!("{} rows, expected {rows}", t.rows.len()));
    }
    if t.header() != header {
        return Err(format!("columns {:?}", t.header()));
    }
    if !t.is_complete() || text.contains("failed") {
        return Err("table has failed cells".into());
    }
    if text.lines().filter(|l| !l.trim().is_empty()).count() < rows + 1 {
        return Err("text table is missing rows".into());
    }
    Ok(())
}

fn ablation_inner(dir: &Path) -> Result<String, String> {
    evfuse(dir, &["gen", "--n-train", "6", "--n-test", "3", "--difficulty", "blur+lowlight", "--seed", "50", "--out-dir", "corpus"])?;
    let common = ["--corpus", "corpus", "--seeds", "0,1", "--epochs", "2"];
    let mut bins_args = vec!["ablate-bins", "--bins-list", "1,2,10,18", "--out", "bins.json"];
    bins_args.extend(common);
    evfuse(dir, &bins_args)?;
    let mut ei_args = vec!["ablate-ei", "--ei-list", "0.1,0.3,0.5,0.7,1.0", "--out", "ei.json"];
    ei_args.extend(common);
    evfuse(dir, &ei_args)?;

    let bins = read_table(&dir.join("bins.json"))?;
    let ei = read_table(&dir.join("ei.json"))?;
    let bins_text = fs::read_to_string(dir.join("bins.txt")).map_err(|e| e.to_string())?;
    let ei_text = fs::read_to_string(dir.join("ei.txt")).map_err(|e| e.to_string())?;
    check_table(&bins, &bins_text, &BINS_HEADER, 4).map_err(|e| format!("bins table: {e}"))?;
    check_table(&ei, &ei_text, &EI_HEADER, 5).map_err(|e| format!("event-intensity table: {e}"))?;
    for f in ["bins.dat", "ei.dat"] {
        if fs::metadata(dir.join(f)).map(|m| m.len()).unwrap_or(0) == 0 {
            return Err(format!("{f} missing"));
        }
    }
    let listed: Vec<String> = bins.rows.iter().map(|r| r.event_bins.to_string()).collect();
    let eis: Vec<String> = ei.rows.iter().map(|r| r.event_intensity.to_string()).collect();
    Ok(format!(
        "bins table rows {} x {} columns, event-intensity rows {} x {} columns, 2 seeds each, no failed cells",
        listed.join("/"),
        BINS_HEADER.len(),
        eis.join("/"),
        EI_HEADER.len()
    ))
}

pub fn ablation_tables() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    match ablation_inner(dir.path()) {
        Ok(d) => Verdict::new(true, d),
        Err(e) => Verdict::new(false, e),
    }
}

const COMPARED: [&str; 7] = ["ev.evt", "ev.vol", "model.ckpt", "model.ckpt.log.json", "metrics.json", "corpus/manifest.json", "corpus/train/00001_events.evt"];

fn pipeline(dir: &Path) -> Result<(), String> {
    evfuse(dir, &["gen", "--n-train", "4", "--n-test", "2", "--difficulty", "blur", "--seed", "9", "--out-dir", "corpus"])?;
    evfuse(dir, &["simulate", "--prev", "corpus/train/00000_prev.pgm", "--curr", "corpus/train/00000_anchor.pgm", "--out", "ev.evt"])?;
    evfuse(dir, &["voxelize", "--events", "ev.evt", "--bins-pos", "5", "--bins-neg", "5", "--out", "ev.vol"])?;
    evfuse(dir, &["train", "--corpus", "corpus", "--mode", "d2s", "--bins", "2", "--epochs", "3", "--seed", "11", "--out", "model.ckpt"])?;
    evfuse(dir, &["eval", "--corpus", "corpus", "--checkpoint", "model.ckpt", "--out", "metrics.json"])?;
    Ok(())
}

fn determinism_inner() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let mut bytes = 0;
    for f in COMPARED {
        let x = fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
        bytes += x.len();
    }
    Ok(format!("gen -> simulate -> voxelize -> train -> eval twice: {} files ({bytes} bytes) byte-identical", COMPARED.len()))
}

pub fn determinism() -> Verdict {
    match determinism_inner() {
        Ok(d) => Verdict::new(true, d),
        Err(e) => Verdict::new(false, e),
    }
}
