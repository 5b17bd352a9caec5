use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use heal_core::datasets_io::save_stack;
use heal_core::inference::{heal_batch_traced, score_batch};
use heal_core::{Error, Image, Model, RestorerCheckpoint, Result, ScoreMode, Split};
use log::{info, warn};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{load_manifest, CHECKPOINT_FILE, SCORES_DIR, SCORE_INDEX};
use crate::Context;

/// A requested scoring mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Multi(usize),
    Single(usize),
    /// Running sums of a multi-step run, one map per visited step.
    Cumulative(usize),
    /// Every single-step `t` and multi-step size of the eval config, plus
    /// the cumulative profile at the inference step size.
    Sweep,
}

impl FromStr for ModeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "sweep" {
            return Ok(ModeArg::Sweep);
        }
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("mode {s:?} is not sweep, multi:N, single:T or cumulative:N"))?;
        let n: usize = value.parse().map_err(|_| format!("mode {s:?}: {value:?} is not an integer"))?;
        match kind {
            "multi" => Ok(ModeArg::Multi(n)),
            "single" => Ok(ModeArg::Single(n)),
            "cumulative" => Ok(ModeArg::Cumulative(n)),
            _ => Err(format!("unknown mode kind {kind:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Checkpoint file, or a train output directory.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,

    /// Dataset directory (uses `test.json`) or manifest.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,

    /// `multi:N`, `single:T`, `cumulative:N` or `sweep`; repeatable.
    /// Defaults to `multi:<inference.step_size>`.
    #[arg(long = "mode", value_name = "MODE")]
    modes: Vec<ModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryMode {
    SingleStep,
    MultiStep,
    Cumulative,
}

/// One stacked score file of a score run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub label: String,
    pub mode: EntryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<usize>,
    /// Relative to the index file.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreIndex {
    pub dataset: String,
    pub split: Split,
    pub n_images: usize,
    pub checkpoint_seed: u64,
    pub steps_trained: usize,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreIndex {
    /// Reads `dir/scores/index.json`, or `dir/index.json` when `dir` is the
    /// scores directory itself.
    pub fn load(dir: &Path) -> Result<(ScoreIndex, PathBuf)> {
        let nested = dir.join(SCORES_DIR).join(SCORE_INDEX);
        let path = if nested.is_file() { nested } else { dir.join(SCORE_INDEX) };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let index = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok((index, path.parent().expect("index has a parent").to_path_buf()))
    }
}

#[derive(Default)]
struct Plan {
    single: BTreeSet<usize>,
    multi: BTreeSet<usize>,
    cumulative: BTreeSet<usize>,
}

fn plan(ctx: &Context, modes: &[ModeArg]) -> Plan {
    let mut p = Plan::default();
    let default = [ModeArg::Multi(ctx.config.inference.step_size)];
    for m in if modes.is_empty() { &default[..] } else { modes } {
        match *m {
            ModeArg::Multi(s) => {
                p.multi.insert(s);
            }
            ModeArg::Single(t) => {
                p.single.insert(t);
            }
            ModeArg::Cumulative(s) => {
                p.cumulative.insert(s);
            }
            ModeArg::Sweep => {
                p.single.extend(&ctx.config.eval.single_step_ts);
                p.multi.extend(&ctx.config.eval.step_sizes);
                p.multi.insert(ctx.config.inference.step_size);
                p.cumulative.insert(ctx.config.inference.step_size);
            }
        }
    }
    p
}

fn stack(maps: impl ExactSizeIterator<Item = Array2<f32>>, (h, w): (usize, usize)) -> Array3<f32> {
    let mut out = Array3::zeros((maps.len(), h, w));
    for (k, m) in maps.enumerate() {
        out.index_axis_mut(Axis(0), k).assign(&m);
    }
    out
}

fn as_f32(a: &Array2<f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

pub fn run(ctx: &Context, args: &ScoreArgs) -> Result<()> {
    let workers = ctx.config.inference.workers;
    let checkpoint_path = if args.checkpoint.is_dir() { args.checkpoint.join(CHECKPOINT_FILE) } else { args.checkpoint.clone() };
    let checkpoint = RestorerCheckpoint::load(&checkpoint_path)?;
    let model: Model = checkpoint.model()?;
    if checkpoint.schedule != ctx.config.schedule {
        warn!("scoring with the checkpoint's schedule, which differs from [schedule] in the config");
    }
    let steps = model.schedule().steps();
    let manifest = load_manifest(&args.data, Split::Test)?;
    let images: Vec<Image> = manifest.images()?;
    let dim = manifest.dim;
    let plan = plan(ctx, &args.modes);
    for &t in &plan.single {
        if !(1..=steps).contains(&t) {
            return Err(Error::Parameter(format!("single-step t = {t} outside 1..={steps}")));
        }
    }

    let dir = ctx.out.path(SCORES_DIR);
    let mut entries = Vec::new();
    let started = Instant::now();
    for &t in &plan.single {
        let maps = score_batch(&model, &images, ScoreMode::SingleStep { t }, workers)?;
        let label = format!("single_step_{t}");
        let file = PathBuf::from(format!("{label}.tensor"));
        save_stack(&dir.join(&file), &stack(maps.iter().map(|m| as_f32(&m.anomaly_score)), dim))?;
        entries.push(ScoreEntry {
            label,
            mode: EntryMode::SingleStep,
            t: Some(t),
            step_size: None,
            file,
        });
    }
    let all_multi: BTreeSet<usize> = plan.multi.union(&plan.cumulative).copied().collect();
    let mut cumulative_entries = Vec::new();
    for &s in &all_multi {
        let traces = if plan.cumulative.contains(&s) {
            heal_batch_traced(&model, &images, s, workers)?
        } else {
            score_batch(&model, &images, ScoreMode::MultiStep { step_size: s }, workers)?
                .into_iter()
                .map(|score| heal_core::HealTrace {
                    score,
                    residuals: Vec::new(),
                })
                .collect()
        };
        if plan.multi.contains(&s) {
            let label = format!("multi_step_{s}");
            let file = PathBuf::from(format!("{label}.tensor"));
            save_stack(&dir.join(&file), &stack(traces.iter().map(|tr| as_f32(&tr.score.anomaly_score)), dim))?;
            let restored = stack(traces.iter().map(|tr| tr.score.restoration.view().clone()), dim);
            save_stack(&dir.join(format!("{label}_restoration.tensor")), &restored)?;
            entries.push(ScoreEntry {
                label,
                mode: EntryMode::MultiStep,
                t: None,
                step_size: Some(s),
                file,
            });
        }
        if plan.cumulative.contains(&s) {
            let sums: Vec<Vec<Array2<f64>>> = traces.iter().map(|tr| tr.cumulative()).collect();
            let visited = traces.first().map(|tr| tr.score.steps_visited.clone()).unwrap_or_default();
            for (k, &t) in visited.iter().enumerate() {
                let label = format!("cumulative_{s}_t{t}");
                let file = PathBuf::from(format!("{label}.tensor"));
                save_stack(&dir.join(&file), &stack(sums.iter().map(|c| as_f32(&c[k])), dim))?;
                cumulative_entries.push(ScoreEntry {
                    label,
                    mode: EntryMode::Cumulative,
                    t: Some(t),
                    step_size: Some(s),
                    file,
                });
            }
        }
    }
    entries.extend(cumulative_entries);
    let index = ScoreIndex {
        dataset: manifest.manifest.name.clone(),
        split: manifest.manifest.split,
        n_images: images.len(),
        checkpoint_seed: checkpoint.seed,
        steps_trained: checkpoint.steps_trained,
        entries,
    };
    ctx.out.write_json(Path::new(SCORES_DIR).join(SCORE_INDEX), &index)?;
    info!(
        "wrote {} score stacks for {} images in {:.1} s",
        index.entries.len(),
        images.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
