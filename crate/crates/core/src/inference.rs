//! Iterative healing and residual-based anomaly scores.
//!
//! Starting from the test image at `t = T`, each iteration predicts the
//! healthy image, adds the absolute residual to the score, and re-corrupts
//! the prediction towards the unhealed input at the next, smaller `t`.

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, AnomalyMask};
use crate::error::{ensure, Error, Result};
use crate::image::{check_same_dim, Image};
use crate::restorer::Model;
use crate::schedule::Schedule;

pub const DEFAULT_STEP_SIZE: usize = 25;

/// Images restored in one forward pass by the batched drivers.
pub const INFERENCE_BATCH: usize = 8;

/// Anything that maps `(x_t, t)` to an estimate of the healthy image.
pub trait Restore: Sync {
    fn schedule(&self) -> &Schedule;

    /// Restores `xs[i]` at step `ts[i]`.
    fn restore_batch(&self, xs: &[Image], ts: &[usize]) -> Result<Vec<Image>>;
}

impl Restore for Model {
    fn schedule(&self) -> &Schedule {
        Model::schedule(self)
    }

    fn restore_batch(&self, xs: &[Image], ts: &[usize]) -> Result<Vec<Image>> {
        self.restore_many(xs, ts)
    }
}

/// A perfect restorer that always answers with a fixed healthy image.
#[derive(Debug, Clone)]
pub struct OracleRestorer {
    target: Image,
    schedule: Schedule,
}

impl OracleRestorer {
    pub fn new(target: Image, schedule: Schedule) -> Self {
        OracleRestorer { target, schedule }
    }
}

impl Restore for OracleRestorer {
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn restore_batch(&self, xs: &[Image], ts: &[usize]) -> Result<Vec<Image>> {
        let steps = self.schedule.steps();
        xs.iter()
            .zip(ts)
            .map(|(x, &t)| {
                ensure((1..=steps).contains(&t), || format!("t = {t} outside 1..={steps}"))?;
                check_same_dim(x.view(), self.target.view())?;
                Ok(self.target.clone())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub anomaly_score: Array2<f64>,
    /// The last prediction of the healthy image.
    pub restoration: Image,
    pub steps_visited: Vec<usize>,
}

/// A healing run with every iteration's residual kept.
#[derive(Debug, Clone, PartialEq)]
pub struct HealTrace {
    pub score: ScoreMap,
    /// `residuals[k] = |x̂_0 - x_t|` at `score.steps_visited[k]`.
    pub residuals: Vec<Array2<f64>>,
}

impl HealTrace {
    /// Running sums of the residuals; the last entry is the anomaly score.
    pub fn cumulative(&self) -> Vec<Array2<f64>> {
        let mut acc = Array2::zeros(self.score.anomaly_score.dim());
        self.residuals
            .iter()
            .map(|r| {
                acc += r;
                acc.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    MultiStep { step_size: usize },
    SingleStep { t: usize },
}

impl ScoreMode {
    pub fn label(&self) -> String {
        match self {
            ScoreMode::MultiStep { step_size } => format!("multi_step:{step_size}"),
            ScoreMode::SingleStep { t } => format!("single_step:{t}"),
        }
    }
}

/// `T, T - s, T - 2s, ...` while positive.
pub fn visited_steps(steps: usize, step_size: usize) -> Result<Vec<usize>> {
    ensure((1..=steps).contains(&step_size), || {
        format!("step_size {step_size} outside 1..={steps}")
    })?;
    let mut out = vec![steps];
    let mut t = steps;
    // t_next is formed after the residual at t has been accumulated.
    while let Some(t_next) = t.checked_sub(step_size).filter(|&n| n > 0) {
        out.push(t_next);
        t = t_next;
    }
    Ok(out)
}

pub fn heal<M: Restore + ?Sized>(model: &M, x: &Image, step_size: usize) -> Result<ScoreMap> {
    Ok(heal_traced(model, x, step_size)?.score)
}

pub fn heal_traced<M: Restore + ?Sized>(model: &M, x: &Image, step_size: usize) -> Result<HealTrace> {
    Ok(heal_group(model, std::slice::from_ref(x), step_size, true)?.remove(0))
}

/// `|P(x, t) - x|`.
pub fn score_single_step<M: Restore + ?Sized>(model: &M, x: &Image, t: usize) -> Result<Array2<f64>> {
    Ok(single_group(model, std::slice::from_ref(x), t)?.remove(0).anomaly_score)
}

/// Scores every image, preserving order.
///
/// Images are restored in fixed groups of [`INFERENCE_BATCH`] so the result
/// does not depend on `workers`.
pub fn score_batch<M: Restore + ?Sized>(
    model: &M,
    images: &[Image],
    mode: ScoreMode,
    workers: usize,
) -> Result<Vec<ScoreMap>> {
    let steps = model.schedule().steps();
    match mode {
        ScoreMode::MultiStep { step_size } => visited_steps(steps, step_size).map(drop)?,
        ScoreMode::SingleStep { t } => ensure((1..=steps).contains(&t), || format!("t = {t} outside 1..={steps}"))?,
    }
    let traces = run_grouped(images, workers, |group| match mode {
        ScoreMode::MultiStep { step_size } => heal_group(model, group, step_size, false),
        ScoreMode::SingleStep { t } => Ok(single_group(model, group, t)?
            .into_iter()
            .map(|score| HealTrace {
                score,
                residuals: Vec::new(),
            })
            .collect()),
    })?;
    Ok(traces.into_iter().map(|t| t.score).collect())
}

/// As [`score_batch`] in multi-step mode, keeping per-iteration residuals.
pub fn heal_batch_traced<M: Restore + ?Sized>(
    model: &M,
    images: &[Image],
    step_size: usize,
    workers: usize,
) -> Result<Vec<HealTrace>> {
    run_grouped(images, workers, |group| heal_group(model, group, step_size, true))
}

fn run_grouped<F>(images: &[Image], workers: usize, f: F) -> Result<Vec<HealTrace>>
where
    F: Fn(&[Image]) -> Result<Vec<HealTrace>> + Sync,
{
    if let Some(first) = images.first() {
        for img in images {
            check_same_dim(first.view(), img.view())?;
        }
    }
    let groups: Vec<&[Image]> = images.chunks(INFERENCE_BATCH).collect();
    let results: Vec<Result<Vec<HealTrace>>> = if workers <= 1 {
        groups.into_iter().map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| groups.into_par_iter().map(&f).collect())
    };
    let mut out = Vec::with_capacity(images.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn single_group<M: Restore + ?Sized>(model: &M, xs: &[Image], t: usize) -> Result<Vec<ScoreMap>> {
    let restored = model.restore_batch(xs, &vec![t; xs.len()])?;
    Ok(xs
        .iter()
        .zip(restored)
        .map(|(x, r)| ScoreMap {
            anomaly_score: abs_diff(&r, x),
            restoration: r,
            steps_visited: vec![t],
        })
        .collect())
}

/// Heals a group of images in lockstep, one batched model call per step.
fn heal_group<M: Restore + ?Sized>(model: &M, xs: &[Image], step_size: usize, keep: bool) -> Result<Vec<HealTrace>> {
    let schedule = model.schedule();
    let steps = visited_steps(schedule.steps(), step_size)?;
    let Some(first) = xs.first() else { return Ok(Vec::new()) };
    let (h, w) = first.dim();
    let unit = AnomalyMask::full(h, w);
    let mut x_t: Vec<Image> = xs.to_vec();
    let mut scores = vec![Array2::<f64>::zeros((h, w)); xs.len()];
    let mut residuals: Vec<Vec<Array2<f64>>> = vec![Vec::new(); xs.len()];
    let mut last = Vec::new();
    for (k, &t) in steps.iter().enumerate() {
        let x0 = model.restore_batch(&x_t, &vec![t; xs.len()])?;
        for i in 0..xs.len() {
            let r = abs_diff(&x0[i], &x_t[i]);
            scores[i] += &r;
            if keep {
                residuals[i].push(r);
            }
        }
        match steps.get(k + 1) {
            Some(&t_next) => {
                let alpha = schedule.alpha_at(t_next)?;
                for (xt, pred) in x_t.iter_mut().zip(&x0) {
                    *xt = corrupt(pred, xt, &unit, alpha)?;
                }
            }
            None => last = x0,
        }
    }
    Ok(scores
        .into_iter()
        .zip(last)
        .zip(residuals)
        .map(|((anomaly_score, restoration), residuals)| HealTrace {
            score: ScoreMap {
                anomaly_score,
                restoration,
                steps_visited: steps.clone(),
            },
            residuals,
        })
        .collect())
}

fn abs_diff(a: &Image, b: &Image) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    Zip::from(&mut out)
        .and(a.view())
        .and(b.view())
        .for_each(|o, &p, &q| *o = (p as f64 - q as f64).abs());
    out
}
