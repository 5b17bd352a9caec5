use std::fs;
use std::path::{Path, PathBuf};

use heal_core::{Error, Result, RunConfig};
use serde::Serialize;

pub const CONFIG_ECHO: &str = "config.toml";

/// The output directory of one command.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root`, refusing a non-empty directory unless `force`.
    pub fn prepare(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            if !root.is_dir() {
                return Err(Error::Config(format!("{} exists and is not a directory", root.display())));
            }
            let nonempty = fs::read_dir(root)
                .map_err(|e| Error::io(format!("listing {}", root.display()), e))?
                .next()
                .is_some();
            if nonempty && !force {
                return Err(Error::Config(format!(
                    "output directory {} is not empty (pass --force to overwrite)",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.root.join(name)
    }

    pub fn echo_config(&self, config: &RunConfig) -> Result<()> {
        self.write_text(CONFIG_ECHO, &config.to_toml())
    }

    pub fn write_text(&self, name: impl AsRef<Path>, text: &str) -> Result<()> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn write_json<T: Serialize>(&self, name: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }
}
