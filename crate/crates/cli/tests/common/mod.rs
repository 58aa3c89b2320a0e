#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pointsentinel"));
    c.env("POINTSENTINEL_THREADS", "2");
    c
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn pointsentinel")
}

pub fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

pub fn gen_config(n: usize, seed: u64) -> String {
    format!(
        r#"{{"version": 1, "n": {n}, "patient_group_size": 2,
            "scene": {{"image_size": [32, 32], "seed": {seed}, "pixel_spacing_mm": 0.5}}}}"#
    )
}

pub fn presence_config(n_pos: usize, n_neg: usize) -> String {
    format!(
        r#"{{"version": 1, "presence": {{"n_pos": {n_pos}, "n_neg": {n_neg}}},
            "scene": {{"image_size": [32, 32], "seed": 9}}}}"#
    )
}

/// Small experiment spec; `train_extra` is spliced into the `train` object.
pub fn spec(heads: &[&str], seeds: &[u64], epochs: usize, train_extra: &str) -> String {
    let heads: Vec<String> = heads.iter().map(|h| format!("{h:?}")).collect();
    let seeds: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    format!(
        r#"{{"version": 1, "name": "tiny",
            "train_dataset": "data/train", "test_dataset": "data/test",
            "presence_dataset": "data/presence",
            "heads": [{}], "seeds": [{}], "val_frac": 0.25,
            "train": {{"epochs": {epochs}, "batch_size": 4, "learning_rate": 0.003,
                       "backbone": {{"in_channels": 1, "base_channels": 4, "num_blocks": 1, "output_stride": 4}}{train_extra}}},
            "eval": {{"n_bootstrap": 200, "n_thresholds": 21}},
            "output_dir": "run"}}"#,
        heads.join(", "),
        seeds.join(", ")
    )
}

/// A workspace with generated train, test and presence datasets.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(&root.join("gen/train.json"), &gen_config(24, 1));
    write(&root.join("gen/test.json"), &gen_config(12, 2));
    write(&root.join("gen/presence.json"), &presence_config(8, 8));
    for (cfg, out) in [
        ("gen/train.json", "data/train"),
        ("gen/test.json", "data/test"),
        ("gen/presence.json", "data/presence"),
    ] {
        ok(&["generate", cfg, "--output-dir", out, "--quiet"], root);
    }
    dir
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

pub fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}
