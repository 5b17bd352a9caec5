use std::path::{Path, PathBuf};

use heal_core::datasets_io::{DatasetManifest, LoadedManifest};
use heal_core::{Error, Result, Split};

pub mod eval;
pub mod phantom;
pub mod preview;
pub mod score;
pub mod train;

/// Name of the stacked score maps directory inside a score run.
pub const SCORES_DIR: &str = "scores";
pub const SCORE_INDEX: &str = "index.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Resolves `path` to a manifest file: a directory stands for its
/// `<split>.json`.
pub fn manifest_path(path: &Path, split: Split) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{}.json", split.name()))
    } else {
        path.to_path_buf()
    }
}

pub fn load_manifest(path: &Path, split: Split) -> Result<LoadedManifest> {
    let file = manifest_path(path, split);
    if !file.is_file() {
        return Err(Error::Data(format!("manifest {} not found", file.display())));
    }
    DatasetManifest::load(&file)
}
