#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_CONFIG: &str = r#"
seed = 1

[phantom]
image_size = 32
n_train = 16
n_val = 2
n_test = 8
anomaly_prevalence = 0.04

[restorer]
channels_per_level = [8, 8]
attention_from_level = 2
time_embed_dim = 8
input_size = 32
norm_groups = 4

[train]
steps = 4
batch_size = 2
val_every = 2

[eval]
single_step_ts = [50, 100]
step_sizes = [25, 50]
"#;

pub fn heal(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_heal"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("heal binary runs");
    out
}

/// Runs `heal` and panics with its stderr unless it succeeds.
pub fn heal_ok(args: &[&str]) {
    let out = heal(args);
    assert!(
        out.status.success(),
        "heal {args:?} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Phantom data, training, sweep scoring and evaluation under `root`.
pub fn pipeline(root: &Path, config: &Path, seed: u64) -> PathBuf {
    let cfg = s(config);
    let seed = seed.to_string();
    let data = root.join("data");
    let train = root.join(format!("train_{seed}"));
    let score = root.join(format!("score_{seed}"));
    let eval = root.join(format!("eval_{seed}"));
    if !data.join("test.json").is_file() {
        heal_ok(&["phantom", "--config", cfg, "--out", s(&data)]);
    }
    heal_ok(&["train", "--config", cfg, "--seed", &seed, "--out", s(&train), "--data", s(&data)]);
    heal_ok(&[
        "score",
        "--config",
        cfg,
        "--out",
        s(&score),
        "--checkpoint",
        s(&train),
        "--data",
        s(&data),
        "--mode",
        "sweep",
    ]);
    heal_ok(&["eval", "--config", cfg, "--out", s(&eval), "--scores", s(&score), "--data", s(&data)]);
    eval
}
