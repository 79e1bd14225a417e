#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = r#"{
  "seed": 3,
  "expert": { "exc_count": 20, "kappa": 5, "epochs": 10, "record_last_epochs": 5 }
}"#;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_snn-vpr"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Synthetic dataset plus config file under `dir`.
pub fn dataset(dir: &Path, places: usize) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = snn_vpr::synth::SynthConfig { places, ..Default::default() };
    let (r, q) = snn_vpr::synth::write_dataset(dir, &cfg).unwrap();
    let c = dir.join("config.json");
    std::fs::write(&c, SMALL_CONFIG).unwrap();
    (r, q, c)
}
