//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use heal_core::corruption::{corrupt, generate_mask, AnomalyMask};
use heal_core::inference::{heal, score_single_step, OracleRestorer};
use heal_core::metrics::{average_precision, best_dice};
use heal_core::nn::{ParamStore, Tensor};
use heal_core::restorer::{mse, Restorer};
use heal_core::{Image, MaskConfig, RestorerCheckpoint, RestorerConfig, ScheduleParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const STEP_SIZES: [usize; 5] = [10, 20, 25, 33, 50];
const DESK_SEEDS: [u64; 2] = [0, 1];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::new(Array2::from_shape_fn((h, w), |_| rng.random::<f32>())).unwrap()
}

fn corruption_algebra() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for k in 0..1000 {
        let side = rng.random_range(32..=48);
        let x0 = random_image(&mut rng, side, side);
        let fp = random_image(&mut rng, side, side);
        let mask = if k % 2 == 0 {
            generate_mask(side, side, &mut rng, &MaskConfig::default(), None).unwrap()
        } else {
            let m = Array2::from_shape_fn((side, side), |_| {
                if rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random::<f32>()
                }
            });
            AnomalyMask::new(m).unwrap()
        };
        let alpha = match k % 10 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        };
        let xt = corrupt(&x0, &fp, &mask, alpha).unwrap();
        for (((&v, &a), &b), &m) in xt.view().iter().zip(x0.view()).zip(fp.view()).zip(mask.view()) {
            ok &= (0.0..=1.0).contains(&v);
            if m == 0.0 {
                ok &= v.to_bits() == a.to_bits();
            }
            let lhs = v as f64 - a as f64;
            let rhs = alpha * m as f64 * (b as f64 - a as f64);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        ok && worst <= 1e-7 && secs < 10.0,
        format!("1000 instances, max linearity error {worst:.2e}, {secs:.2} s"),
    )
}

fn schedule_contract() -> Outcome {
    let params = ScheduleParams::default();
    let schedule = params.build().unwrap();
    let a = schedule.alphas();
    let steps = schedule.steps();
    let endpoints = a[0] == 0.0 && a[steps] == 1.0;
    let monotone = a.windows(2).all(|w| w[0] < w[1]);
    let restorer = Restorer::<f32>::new(tiny_restorer(), 0).unwrap();
    let bytes = RestorerCheckpoint::new(&restorer, params, None, 0, 0).to_bytes();
    let back = RestorerCheckpoint::from_bytes(&bytes).unwrap().schedule.build().unwrap();
    let identical = back == schedule && back.alphas().iter().zip(a).all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(
        steps == 100 && endpoints && monotone && identical,
        format!("T = {steps}, endpoints {endpoints}, strictly increasing {monotone}, checkpoint round trip {identical}"),
    )
}

fn oracle_equivalence() -> Outcome {
    let schedule = ScheduleParams::default().build().unwrap();
    let steps = schedule.steps();
    let alphas = schedule.alphas();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for _ in 0..5 {
        let truth = random_image(&mut rng, 32, 32);
        let x = random_image(&mut rng, 32, 32);
        let oracle = OracleRestorer::new(truth.clone(), schedule.clone());
        for s in STEP_SIZES {
            // Residual factors: 1, a(t2), a(t2) a(t3), ... over t = T, T-s, ... > 0.
            let mut factor_sum = 0.0;
            let mut factor = 1.0;
            let mut t = steps;
            loop {
                factor_sum += factor;
                if t <= s {
                    break;
                }
                t -= s;
                factor *= alphas[t];
            }
            let score = heal(&oracle, &x, s).unwrap().anomaly_score;
            for ((&got, &xt), &xv) in score.iter().zip(truth.view()).zip(x.view()) {
                let want = (xt as f64 - xv as f64).abs() * factor_sum;
                worst = worst.max((got - want).abs());
            }
        }
        let full = heal(&oracle, &x, steps).unwrap().anomaly_score;
        let single = score_single_step(&oracle, &x, steps).unwrap();
        exact &= full.iter().zip(&single).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    outcome(
        worst <= 1e-6 && exact,
        format!("max deviation from closed form {worst:.2e} over step sizes {STEP_SIZES:?}, heal(T) == single step: {exact}"),
    )
}

/// Precision at every distinct threshold, summed over recall increments.
fn ap_brute(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut levels: Vec<f64> = scores.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for tau in levels {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= tau).count() as f64;
        let predicted = scores.iter().filter(|&&s| s >= tau).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// Best Dice over every cut of the sorted scores.
fn dice_brute(scores: &[f64], labels: &[bool]) -> f64 {
    let mut best: f64 = 0.0;
    for &tau in scores {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= tau).count() as f64;
        let pred = scores.iter().filter(|&&s| s >= tau).count() as f64;
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        best = best.max(2.0 * tp / (pred + pos));
    }
    best
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut ap_err, mut dice_err, mut transform_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut instances = 0;
    while instances < 600 {
        let n = rng.random_range(1..=12);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if !labels.contains(&true) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=8) as f64 / 8.0).collect();
        instances += 1;
        let ap = average_precision(&scores, &labels).unwrap();
        ap_err = ap_err.max((ap - ap_brute(&scores, &labels)).abs());
        let (dice, _) = best_dice(&scores, &labels, 200).unwrap();
        dice_err = dice_err.max((dice - dice_brute(&scores, &labels)).abs());
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + s * s * s).collect();
        transform_err = transform_err.max((average_precision(&warped, &labels).unwrap() - ap).abs());
    }
    outcome(
        ap_err <= 1e-9 && dice_err <= 1e-9 && transform_err <= 1e-9,
        format!(
            "{instances} instances, AP error {ap_err:.1e}, Dice error {dice_err:.1e}, monotone transform drift {transform_err:.1e}"
        ),
    )
}

fn tiny_restorer() -> RestorerConfig {
    RestorerConfig {
        channels_per_level: vec![8, 8],
        attention_from_level: 2,
        time_embed_dim: 8,
        input_size: 16,
        norm_groups: 4,
    }
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let config = tiny_restorer();
    let restorer = Restorer::<f64>::new(config.clone(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let n = 2;
    let x = Tensor::from_vec([n, 1, 16, 16], (0..n * 256).map(|_| rng.random::<f64>()).collect());
    let y = Tensor::from_vec([n, 1, 16, 16], (0..n * 256).map(|_| rng.random::<f64>()).collect());
    let ts = [3, 88];
    let (_, grads) = restorer.loss_and_grads(&x, &ts, &y);
    let params = restorer.params().clone();
    let loss = |p: ParamStore<f64>| mse(&Restorer::with_params(config.clone(), p).unwrap().forward(&x, &ts), &y).0;
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (pi, p) in params.params().iter().enumerate() {
        for _ in 0..2 {
            let j = rng.random_range(0..p.value.len());
            let mut plus = params.clone();
            plus.params_mut()[pi].value[j] += eps;
            let mut minus = params.clone();
            minus.params_mut()[pi].value[j] -= eps;
            let numeric = (loss(plus) - loss(minus)) / (2.0 * eps);
            let analytic = grads.all()[pi][j];
            // Coordinates with vanishing gradients are compared absolutely.
            let rel = (numeric - analytic).abs() / analytic.abs().max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && secs < 120.0,
        format!("{checked} coordinates, max relative error {worst:.2e}, {secs:.1} s"),
    )
}

struct DeskRun {
    results: Value,
    train_time: Vec<Duration>,
    n_train: usize,
}

fn summary<'a>(results: &'a Value, label: &str) -> Option<&'a Value> {
    results["summary"].as_array()?.iter().find(|r| r["label"] == label)
}

fn seed_ap(record: &Value, label: &str) -> Option<f64> {
    record["records"].as_array()?.iter().find(|r| r["label"] == label)?["ap"].as_f64()
}

fn desk_run(root: &Path) -> DeskRun {
    let data = root.join("data");
    heal_ok(&["phantom", "--out", s(&data)]);
    let n_train = read_json(&data.join("train.json"))["items"].as_array().unwrap().len();
    let mut train_time = Vec::new();
    let mut score_dirs = Vec::new();
    for seed in DESK_SEEDS {
        let seed_s = seed.to_string();
        let train = root.join(format!("train_{seed}"));
        let score = root.join(format!("score_{seed}"));
        let started = Instant::now();
        heal_ok(&["train", "--seed", &seed_s, "--out", s(&train), "--data", s(&data)]);
        train_time.push(started.elapsed());
        println!("  desk seed {seed}: trained in {:.0} s", started.elapsed().as_secs_f64());
        heal_ok(&["score", "--seed", &seed_s, "--out", s(&score), "--checkpoint", s(&train), "--data", s(&data), "--mode", "sweep"]);
        score_dirs.push(score);
    }
    let eval = root.join("eval");
    let mut args = vec!["eval", "--out", s(&eval), "--data", s(&data)];
    for d in &score_dirs {
        args.extend(["--scores", s(d)]);
    }
    heal_ok(&args);
    DeskRun {
        results: read_json(&eval.join("results.json")),
        train_time,
        n_train,
    }
}

fn desk_end_to_end(run: &DeskRun) -> Outcome {
    let prevalence = run.results["prevalence"].as_f64().unwrap();
    let Some(r) = summary(&run.results, "multi_step_25") else {
        return outcome(false, "multi_step_25 missing from results");
    };
    let ap = r["ap"]["mean"].as_f64().unwrap();
    let dice = r["best_dice"]["mean"].as_f64().unwrap();
    let slowest = run.train_time.iter().max().unwrap().as_secs_f64();
    let pass = run.n_train >= 200 && prevalence <= 0.05 && ap >= 10.0 * prevalence && dice >= 0.3 && slowest <= 1800.0;
    outcome(
        pass,
        format!(
            "{} train images, prevalence {prevalence:.4}, mean AP {ap:.4} (need >= {:.4}), mean best Dice {dice:.4} (need >= 0.3), slowest training {slowest:.0} s",
            run.n_train,
            10.0 * prevalence
        ),
    )
}

fn step_size_robustness(run: &DeskRun) -> Outcome {
    let mut spreads = Vec::new();
    for seed in run.results["seeds"].as_array().unwrap() {
        let aps: Option<Vec<f64>> = STEP_SIZES.iter().map(|s| seed_ap(seed, &format!("multi_step_{s}"))).collect();
        let Some(aps) = aps else {
            return outcome(false, "multi-step sweep incomplete");
        };
        let hi = aps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = aps.iter().cloned().fold(f64::INFINITY, f64::min);
        spreads.push(hi - lo);
    }
    let pass = !spreads.is_empty() && spreads.iter().all(|&d| d <= 0.05);
    outcome(pass, format!("AP spread over step sizes {STEP_SIZES:?} per seed: {spreads:.4?}"))
}

fn profile_reproduction(run: &DeskRun) -> Outcome {
    let ts: Vec<usize> = (1..=10).map(|k| 10 * k).collect();
    let curve: Option<Vec<f64>> = ts
        .iter()
        .map(|t| summary(&run.results, &format!("single_step_{t}")).and_then(|r| r["ap"]["mean"].as_f64()))
        .collect();
    let Some(curve) = curve else {
        return outcome(false, "single-step sweep incomplete");
    };
    let hi = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    // The multi-step score is the cumulative residual sum at the last visited step.
    let cumulative = summary(&run.results, "multi_step_25").and_then(|r| r["ap"]["mean"].as_f64());
    let Some(cumulative) = cumulative else {
        return outcome(false, "multi_step_25 missing from results");
    };
    outcome(
        hi - lo >= 0.02 && cumulative >= lo,
        format!(
            "single-step AP over t = 10..100: {curve:.3?} (range {:.4}); cumulative AP {cumulative:.4} vs min {lo:.4}",
            hi - lo
        ),
    )
}

fn reproducibility() -> Outcome {
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(dir.path(), TINY_CONFIG);
        let eval = pipeline(dir.path(), &config, 3);
        bytes.push(std::fs::read(eval.join("results.json")).unwrap());
    }
    let same = bytes[0] == bytes[1];
    outcome(same, format!("two full pipeline runs, results.json identical: {same}"))
}

fn main() {
    let mut all_pass = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        all_pass &= o.pass;
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "corruption algebra", corruption_algebra());
    report(2, "schedule contract", schedule_contract());
    report(3, "oracle equivalence", oracle_equivalence());
    report(4, "metric oracles", metric_oracles());
    report(5, "gradient check", gradient_check());
    let desk_dir = tempfile::tempdir().unwrap();
    let desk = desk_run(desk_dir.path());
    report(6, "desk-scale end to end", desk_end_to_end(&desk));
    report(7, "step size robustness", step_size_robustness(&desk));
    report(8, "profile reproduction", profile_reproduction(&desk));
    report(9, "reproducibility", reproducibility());
    if !all_pass {
        eprintln!("acceptance: some criteria failed");
        std::process::exit(1);
    }
}
