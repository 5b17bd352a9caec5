use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use heal_core::datasets_io::load_stack;
use heal_core::metrics::{aggregate_seeds, evaluate, MeanStd};
use heal_core::{Error, EvalResult, Result, Split};
use log::info;
use serde::{Deserialize, Serialize};

use super::load_manifest;
use super::score::{EntryMode, ScoreIndex};
use crate::plot::{save_line_plot, Series, PALETTE};
use crate::Context;

pub const RESULTS_FILE: &str = "results.json";

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of a score run; repeat once per seed.
    #[arg(long = "scores", value_name = "DIR", required = true)]
    scores: Vec<PathBuf>,

    /// Dataset directory (uses `test.json`) or manifest with masks.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub label: String,
    pub mode: EntryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<usize>,
    #[serde(flatten)]
    pub result: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecords {
    pub checkpoint_seed: u64,
    pub records: Vec<ModeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub label: String,
    pub mode: EntryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<usize>,
    pub n_seeds: usize,
    pub ap: MeanStd,
    pub best_dice: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n_images: usize,
    pub prevalence: f64,
    pub dice_thresholds: usize,
    pub seeds: Vec<SeedRecords>,
    pub summary: Vec<SummaryRecord>,
}

impl EvalReport {
    fn rows(&self, mode: EntryMode) -> impl Iterator<Item = &SummaryRecord> {
        self.summary.iter().filter(move |r| r.mode == mode)
    }
}

pub fn run(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let manifest = load_manifest(&args.data, Split::Test)?;
    let labeled = manifest.labeled()?;
    let labels: Vec<bool> = labeled.iter().flat_map(|l| l.gt_mask.iter().copied()).collect();
    let n_images = labeled.len();
    let (h, w) = manifest.dim;
    let n_thresholds = ctx.config.eval.dice_thresholds;

    let mut seeds = Vec::new();
    for dir in &args.scores {
        let (index, root) = ScoreIndex::load(dir)?;
        if index.n_images != n_images {
            return Err(Error::Data(format!(
                "{} scores {} images but the manifest lists {n_images}",
                dir.display(),
                index.n_images
            )));
        }
        let mut records = Vec::new();
        for entry in &index.entries {
            let stack = load_stack(&root.join(&entry.file))?;
            if stack.dim() != (n_images, h, w) {
                return Err(Error::Data(format!(
                    "{}: score stack {:?} does not match {n_images} masks of {h}x{w}",
                    entry.file.display(),
                    stack.dim()
                )));
            }
            let scores: Vec<f64> = stack.iter().map(|&v| v as f64).collect();
            records.push(ModeRecord {
                label: entry.label.clone(),
                mode: entry.mode,
                t: entry.t,
                step_size: entry.step_size,
                result: evaluate(&scores, &labels, n_thresholds)?,
            });
        }
        seeds.push(SeedRecords {
            checkpoint_seed: index.checkpoint_seed,
            records,
        });
    }

    let summary = summarize(&seeds)?;
    let prevalence = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    let report = EvalReport {
        dataset: manifest.manifest.name.clone(),
        n_images,
        prevalence,
        dice_thresholds: n_thresholds,
        seeds,
        summary,
    };
    ctx.out.write_json(RESULTS_FILE, &report)?;
    write_tables(ctx, &report)?;
    write_profile_plot(ctx, &report)?;
    for r in &report.summary {
        info!(
            "{:<24} AP {:.4} ± {:.4}  best Dice {:.4} ± {:.4}",
            r.label, r.ap.mean, r.ap.std, r.best_dice.mean, r.best_dice.std
        );
    }
    Ok(())
}

/// Means over seeds per label. Every seed must score the same labels.
fn summarize(seeds: &[SeedRecords]) -> Result<Vec<SummaryRecord>> {
    let first = &seeds[0];
    let mut by_label: BTreeMap<&str, Vec<EvalResult>> = BTreeMap::new();
    for seed in seeds {
        let same = seed.records.len() == first.records.len()
            && seed.records.iter().zip(&first.records).all(|(a, b)| a.label == b.label);
        if !same {
            return Err(Error::Data("score runs cover different modes".into()));
        }
        for r in &seed.records {
            by_label.entry(&r.label).or_default().push(r.result);
        }
    }
    first
        .records
        .iter()
        .map(|r| {
            let s = aggregate_seeds(&by_label[r.label.as_str()])?;
            Ok(SummaryRecord {
                label: r.label.clone(),
                mode: r.mode,
                t: r.t,
                step_size: r.step_size,
                n_seeds: s.n_seeds,
                ap: s.ap,
                best_dice: s.best_dice,
            })
        })
        .collect()
}

fn write_tables(ctx: &Context, report: &EvalReport) -> Result<()> {
    let metric_cols = "ap_mean,ap_std,best_dice_mean,best_dice_std";
    let cols = |r: &SummaryRecord| format!("{},{},{},{}", r.ap.mean, r.ap.std, r.best_dice.mean, r.best_dice.std);

    let mut single = format!("t,{metric_cols}\n");
    for r in report.rows(EntryMode::SingleStep) {
        writeln!(single, "{},{}", r.t.unwrap_or(0), cols(r)).unwrap();
    }
    let mut multi = format!("step_size,{metric_cols}\n");
    for r in report.rows(EntryMode::MultiStep) {
        writeln!(multi, "{},{}", r.step_size.unwrap_or(0), cols(r)).unwrap();
    }
    let mut cumulative = format!("step_size,t,{metric_cols}\n");
    for r in report.rows(EntryMode::Cumulative) {
        writeln!(cumulative, "{},{},{}", r.step_size.unwrap_or(0), r.t.unwrap_or(0), cols(r)).unwrap();
    }
    ctx.out.write_text("single_step_profile.csv", &single)?;
    ctx.out.write_text("step_size.csv", &multi)?;
    ctx.out.write_text("cumulative_profile.csv", &cumulative)?;

    let n_seeds = report.summary.first().map_or(0, |r| r.n_seeds);
    let mut md = format!(
        "# Evaluation: {}\n\n{} test images, anomaly prevalence {:.4}, {} seed(s).\n\n",
        report.dataset, report.n_images, report.prevalence, n_seeds
    );
    md.push_str("| mode | AP | best Dice |\n|---|---|---|\n");
    for r in &report.summary {
        writeln!(
            md,
            "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
            r.label, r.ap.mean, r.ap.std, r.best_dice.mean, r.best_dice.std
        )
        .unwrap();
    }
    ctx.out.write_text("summary.md", &md)
}

fn write_profile_plot(ctx: &Context, report: &EvalReport) -> Result<()> {
    let mut series = Vec::new();
    let single: Vec<(f64, f64)> = report
        .rows(EntryMode::SingleStep)
        .map(|r| (r.t.unwrap_or(0) as f64, r.ap.mean))
        .collect();
    if !single.is_empty() {
        series.push(Series {
            label: "single step".into(),
            points: single,
            color: PALETTE[0],
            markers: true,
        });
    }
    let mut cumulative: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in report.rows(EntryMode::Cumulative) {
        cumulative
            .entry(r.step_size.unwrap_or(0))
            .or_default()
            .push((r.t.unwrap_or(0) as f64, r.ap.mean));
    }
    for (k, (s, points)) in cumulative.into_iter().enumerate() {
        series.push(Series {
            label: format!("cumulative s={s}"),
            points,
            color: PALETTE[1 + k % (PALETTE.len() - 1)],
            markers: true,
        });
    }
    if series.is_empty() {
        return Ok(());
    }
    save_line_plot(&ctx.out.path("ap_profile.png"), "AP profile over t", "t", "AP", &series)
}
