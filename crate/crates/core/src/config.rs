//! Run configuration: one TOML document driving a whole experiment.
//!
//! Every key has a default and unknown keys are rejected. Individual keys
//! can be overridden with dotted `section.key=value` assignments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corruption::MaskConfig;
use crate::error::{ensure, Error, Result};
use crate::inference::DEFAULT_STEP_SIZE;
use crate::metrics::DEFAULT_DICE_THRESHOLDS;
use crate::phantom::PhantomSpec;
use crate::restorer::{RestorerConfig, TrainConfig};
use crate::schedule::ScheduleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub step_size: usize,
    /// Scoring threads; results do not depend on it.
    pub workers: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            step_size: DEFAULT_STEP_SIZE,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Conditioning steps of the single-step sweep.
    pub single_step_ts: Vec<usize>,
    /// Step sizes of the multi-step sweep.
    pub step_sizes: Vec<usize>,
    pub dice_thresholds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            single_step_ts: (1..=10).map(|k| 10 * k).collect(),
            step_sizes: vec![10, 20, 25, 33, 50],
            dice_thresholds: DEFAULT_DICE_THRESHOLDS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization and training. The phantom dataset has
    /// its own seed under `[phantom]`.
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub mask: MaskConfig,
    pub phantom: PhantomSpec,
    pub restorer: RestorerConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Applies `section.key=value` assignments. Values are parsed as TOML
    /// and fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        let mut doc = toml::Table::try_from(self).expect("run config is a table");
        for raw in assignments {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
            let value = parse_value(value.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields at least one part");
            let mut table = &mut doc;
            for part in parents {
                table = table
                    .get_mut(*part)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| Error::Config(format!("unknown config section {part:?} in {key:?}")))?;
            }
            if !table.contains_key(*last) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
            table.insert((*last).to_string(), value);
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks every section and the cross-section constraints.
    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule.build()?;
        self.mask.validate()?;
        self.phantom.validate()?;
        self.restorer.validate()?;
        self.train.validate()?;
        ensure(self.restorer.input_size == self.phantom.image_size, || {
            format!(
                "restorer.input_size {} differs from phantom.image_size {}",
                self.restorer.input_size, self.phantom.image_size
            )
        })?;
        let steps = schedule.steps();
        let in_range = |v: usize| (1..=steps).contains(&v);
        ensure(in_range(self.inference.step_size), || {
            format!("inference.step_size {} outside 1..={steps}", self.inference.step_size)
        })?;
        ensure(self.inference.workers >= 1, || "inference.workers must be at least 1".to_string())?;
        ensure(self.eval.single_step_ts.iter().all(|&t| in_range(t)), || {
            format!("eval.single_step_ts must lie in 1..={steps}")
        })?;
        ensure(self.eval.step_sizes.iter().all(|&s| in_range(s)), || {
            format!("eval.step_sizes must lie in 1..={steps}")
        })?;
        ensure(self.eval.dice_thresholds >= 2, || "eval.dice_thresholds must be at least 2".to_string())
    }
}

fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}
