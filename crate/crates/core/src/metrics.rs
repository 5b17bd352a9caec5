//! Pooled pixel-level metrics: average precision and best Dice.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const DEFAULT_DICE_THRESHOLDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub best_dice: f64,
    pub best_dice_threshold: f64,
    pub n_pixels: usize,
    pub n_positive: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub n_seeds: usize,
    pub ap: MeanStd,
    pub best_dice: MeanStd,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: vec![scores.len()],
            actual: vec![labels.len()],
        });
    }
    ensure(scores.iter().all(|s| s.is_finite()), || "scores must be finite".to_string())?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("no positive labels"));
    }
    Ok(positives)
}

/// `sum_k (R_k - R_{k-1}) P_k` over descending score levels. Tied scores
/// form a single step.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let positives = check_inputs(scores, labels)? as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let level = scores[order[i]];
        while i < order.len() && scores[order[i]] == level {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Best dataset-level Dice over `n_thresholds` uniform thresholds spanning
/// `[min, max]` of the scores. A pixel is predicted anomalous when its score
/// is at least the threshold. Returns `(dice, threshold)`; ties keep the
/// lowest threshold.
pub fn best_dice(scores: &[f64], labels: &[bool], n_thresholds: usize) -> Result<(f64, f64)> {
    let positives = check_inputs(scores, labels)?;
    ensure(n_thresholds >= 2, || format!("n_thresholds {n_thresholds} below 2"))?;
    let mut pos: Vec<f64> = Vec::with_capacity(positives);
    let mut neg: Vec<f64> = Vec::with_capacity(scores.len() - positives);
    for (&s, &l) in scores.iter().zip(labels) {
        if l {
            pos.push(s)
        } else {
            neg.push(s)
        }
    }
    pos.sort_unstable_by(f64::total_cmp);
    neg.sort_unstable_by(f64::total_cmp);
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..n_thresholds {
        let tau = if i + 1 == n_thresholds {
            hi
        } else {
            lo + (hi - lo) * (i as f64 / (n_thresholds - 1) as f64)
        };
        let tp = pos.len() - pos.partition_point(|&s| s < tau);
        let fp = neg.len() - neg.partition_point(|&s| s < tau);
        let fn_ = positives - tp;
        let dice = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        if dice > best.0 {
            best = (dice, tau);
        }
    }
    Ok(best)
}

pub fn evaluate(scores: &[f64], labels: &[bool], n_thresholds: usize) -> Result<EvalResult> {
    let ap = average_precision(scores, labels)?;
    let (best_dice, best_dice_threshold) = best_dice(scores, labels, n_thresholds)?;
    Ok(EvalResult {
        ap,
        best_dice,
        best_dice_threshold,
        n_pixels: scores.len(),
        n_positive: labels.iter().filter(|&&l| l).count(),
    })
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    ensure(!values.is_empty(), || "cannot summarize zero values".to_string())?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MeanStd { mean, std: var.sqrt() })
}

pub fn aggregate_seeds(results: &[EvalResult]) -> Result<SeedSummary> {
    let ap: Vec<f64> = results.iter().map(|r| r.ap).collect();
    let dice: Vec<f64> = results.iter().map(|r| r.best_dice).collect();
    Ok(SeedSummary {
        n_seeds: results.len(),
        ap: mean_std(&ap)?,
        best_dice: mean_std(&dice)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// AP by direct counting at every distinct score.
    fn ap_brute(scores: &[f64], labels: &[bool]) -> f64 {
        let mut levels: Vec<f64> = scores.to_vec();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev = 0.0;
        let mut ap = 0.0;
        for tau in levels {
            let sel: Vec<bool> = scores.iter().zip(labels).filter(|(s, _)| **s >= tau).map(|(_, &l)| l).collect();
            let tp = sel.iter().filter(|&&l| l).count() as f64;
            let r = tp / p;
            ap += (r - prev) * tp / sel.len() as f64;
            prev = r;
        }
        ap
    }

    /// Best Dice over every cut that keeps the pixels scoring at least `s`.
    fn dice_brute(scores: &[f64], labels: &[bool]) -> f64 {
        scores
            .iter()
            .map(|&tau| {
                let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
                for (&s, &l) in scores.iter().zip(labels) {
                    match (s >= tau, l) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fneg += 1.0,
                        _ => {}
                    }
                }
                2.0 * tp / (2.0 * tp + fp + fneg)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.1, 0.9], &[true, false]).unwrap(), 0.5);
        let labels = [true, false, false, true, false, false, false, true, false, false];
        let ap = average_precision(&[0.4; 10], &labels).unwrap();
        assert!((ap - 0.3).abs() < 1e-15);
        assert!((ap_brute(&[0.4; 10], &labels) - 0.3).abs() < 1e-15);
        assert!(matches!(average_precision(&[0.3], &[false]), Err(Error::UndefinedMetric(_))));
        assert!(average_precision(&[0.3, 0.2], &[true]).is_err());
    }

    #[test]
    fn dice_examples() {
        let (d, tau) = best_dice(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false], 200).unwrap();
        assert!((d - 0.8).abs() < 1e-15);
        assert!(tau > 0.1 && tau <= 0.7);
        assert_eq!(dice_brute(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]), 0.8);
        let (d, _) = best_dice(&[1.0, 0.0, 1.0], &[true, false, true], 200).unwrap();
        assert_eq!(d, 1.0);
        let (d, tau) = best_dice(&[0.3, 0.7, 0.1], &[true; 3], 200).unwrap();
        assert_eq!((d, tau), (1.0, 0.1));
        assert!(best_dice(&[0.3], &[true], 1).is_err());
        assert!(matches!(best_dice(&[0.3], &[false], 5), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn seed_aggregation() {
        let r = |ap| EvalResult {
            ap,
            best_dice: 0.5,
            best_dice_threshold: 0.0,
            n_pixels: 1,
            n_positive: 1,
        };
        let s = aggregate_seeds(&[r(0.2), r(0.4)]).unwrap();
        assert!((s.ap.mean - 0.3).abs() < 1e-15 && (s.ap.std - 0.1).abs() < 1e-15);
        assert_eq!(s.best_dice, MeanStd { mean: 0.5, std: 0.0 });
        assert_eq!(aggregate_seeds(&[r(0.7)]).unwrap().ap.std, 0.0);
        assert!(aggregate_seeds(&[]).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (1usize..=12)
            .prop_flat_map(|n| (prop::collection::vec(0u32..=8, n), prop::collection::vec(any::<bool>(), n)))
            .prop_filter("needs a positive", |(_, l)| l.iter().any(|&v| v))
            .prop_map(|(s, l)| (s.into_iter().map(|v| v as f64 / 8.0).collect(), l))
    }

    proptest! {
        #[test]
        fn ap_matches_enumeration((scores, labels) in instance()) {
            let ap = average_precision(&scores, &labels).unwrap();
            prop_assert!((ap - ap_brute(&scores, &labels)).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        }

        #[test]
        fn dice_matches_enumeration((scores, labels) in instance()) {
            // Score levels are 1/8 apart, so 200 thresholds hit every cut.
            let (d, _) = best_dice(&scores, &labels, 200).unwrap();
            prop_assert!((d - dice_brute(&scores, &labels)).abs() < 1e-9);
        }

        #[test]
        fn ap_is_rank_invariant((scores, labels) in instance()) {
            let base = average_precision(&scores, &labels).unwrap();
            for f in [|v: f64| v.exp(), |v: f64| 3.0 * v - 7.0, |v: f64| v.powi(3) + v] {
                let moved: Vec<f64> = scores.iter().map(|&v| f(v)).collect();
                prop_assert!((average_precision(&moved, &labels).unwrap() - base).abs() < 1e-12);
            }
        }

        #[test]
        fn dice_is_rank_invariant_at_full_resolution((scores, labels) in instance()) {
            let (base, _) = best_dice(&scores, &labels, 200).unwrap();
            let moved: Vec<f64> = scores.iter().map(|&v| (4.0 * v).exp()).collect();
            let (d, _) = best_dice(&moved, &labels, 10_000).unwrap();
            prop_assert!((d - base).abs() < 1e-12);
        }

        #[test]
        fn nested_refinement_never_lowers_dice(
            scores in prop::collection::vec(0.0f64..1.0, 2..40),
            labels in prop::collection::vec(any::<bool>(), 40),
            n in 2usize..60,
        ) {
            let labels = &labels[..scores.len()];
            prop_assume!(labels.iter().any(|&l| l));
            let (coarse, _) = best_dice(&scores, labels, n).unwrap();
            let (fine, _) = best_dice(&scores, labels, 2 * n - 1).unwrap();
            prop_assert!(fine >= coarse);
            prop_assert!(fine <= dice_brute(&scores, labels) + 1e-12);
        }
    }
}
