//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p evfuse-cli --test acceptance`. Extra arguments
//! filter criteria by substring of their key.

mod fusion;
mod gradients;
mod pipeline;
mod volumes;

use std::time::{Duration, Instant};

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Vec<(&'static str, Verdict)>;

fn timed(name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> (&'static str, Verdict) {
    let t0 = Instant::now();
    let mut v = f();
    let dt = t0.elapsed();
    if let Some(b) = budget {
        if dt > b {
            v.pass = false;
            v.detail.push_str(&format!("; over the {} s budget", b.as_secs()));
        }
    }
    v.detail.push_str(&format!(" [{:.1} s]", dt.as_secs_f64()));
    (name, v)
}

fn gradient_suite() -> Vec<(&'static str, Verdict)> {
    vec![timed("gradients", Some(Duration::from_secs(120)), gradients::run)]
}

fn mass() -> Vec<(&'static str, Verdict)> {
    vec![timed("mass-conservation", Some(Duration::from_secs(30)), volumes::mass_conservation)]
}

fn metrics() -> Vec<(&'static str, Verdict)> {
    vec![timed("metrics-oracle", Some(Duration::from_secs(10)), volumes::metrics_oracle)]
}

fn params() -> Vec<(&'static str, Verdict)> {
    vec![timed("param-ordering", None, fusion::param_ordering)]
}

fn ablations() -> Vec<(&'static str, Verdict)> {
    vec![timed("ablation-tables", None, pipeline::ablation_tables)]
}

fn determinism() -> Vec<(&'static str, Verdict)> {
    vec![timed("determinism", None, pipeline::determinism)]
}

fn directional() -> Vec<(&'static str, Verdict)> {
    fusion::directional()
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 7] = [
        ("gradients", gradient_suite),
        ("mass-conservation", mass),
        ("metrics-oracle", metrics),
        ("param-ordering", params),
        ("ablation-tables", ablations),
        ("determinism", determinism),
        ("fusion-gain time-bins", directional),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (keys, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| keys.contains(f.as_str())) {
            continue;
        }
        for (name, v) in check() {
            ran += 1;
            if !v.pass {
                failed += 1;
            }
            println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
