//! Evaluation metrics: thresholded macro F1, mean average precision, and
//! the forgetting measure over base classes.
//!
//! Conventions (documented, not universal): a class with an empty
//! confusion (no predicted and no actual positives among the evaluated
//! examples) scores F1 = 0; average precision uses raw precision at
//! positive ranks without interpolation, ties broken by stable example
//! order; forgetting is reported in percentage points.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything measured after one phase. `fr` is absent at phase 0;
/// `lambda` is absent when no output distillation was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: usize,
    /// Evaluated class IDs, in logit order.
    pub classes: Vec<usize>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// Per-class average precision; absent for classes without positives.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub fr: Option<f64>,
    pub lambda: Option<f64>,
    pub weight_norms: Vec<f64>,
    pub labels_hist: BTreeMap<usize, usize>,
    /// True for from-scratch (non-incremental) training at this phase.
    pub non_incremental: bool,
}

/// Averages over a run: macro F1 and mAP over all phases, forgetting over
/// incremental phases only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub avg_macro_f1: f64,
    pub avg_map: f64,
    pub avg_fr: Option<f64>,
}

fn check_shapes(scores: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<usize> {
    if scores.len() != targets.len() {
        return Err(Error::Config(format!(
            "metrics: {} score rows vs {} target rows",
            scores.len(),
            targets.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Config("metrics: no examples".into()));
    }
    let n_classes = scores[0].len();
    for (s, t) in scores.iter().zip(targets) {
        if s.len() != n_classes || t.len() != n_classes {
            return Err(Error::Config("metrics: ragged score/target rows".into()));
        }
    }
    Ok(n_classes)
}

/// Per-class and macro F1 at a fixed threshold: a prediction is positive
/// when `score >= threshold`; `F1 = 2TP / (2TP + FP + FN)`, zero when the
/// denominator is zero.
pub fn macro_f1(
    scores: &[Vec<f64>],
    targets: &[Vec<f64>],
    threshold: f64,
) -> Result<(Vec<f64>, f64)> {
    let n_classes = check_shapes(scores, targets)?;
    let mut per_class = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (s, t) in scores.iter().zip(targets) {
            let predicted = s[k] >= threshold;
            let actual = t[k] > 0.5;
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        per_class.push(if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        });
    }
    let macro_avg = per_class.iter().sum::<f64>() / n_classes as f64;
    Ok((per_class, macro_avg))
}

/// Per-class average precision and mAP. For each class, examples are
/// ranked by descending score (stable order on ties) and
/// `AP = Σ_{positives at rank r} precision@r / n_positives`. Classes with
/// no positive example are reported as `None` and excluded from the mean.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<(Vec<Option<f64>>, f64)> {
    let n_classes = check_shapes(scores, targets)?;
    let mut per_class = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b][k].partial_cmp(&scores[a][k]).expect("finite scores"));
        let mut positives = 0usize;
        let mut ap_sum = 0.0;
        for (rank, &idx) in order.iter().enumerate() {
            if targets[idx][k] > 0.5 {
                positives += 1;
                ap_sum += positives as f64 / (rank + 1) as f64;
            }
        }
        per_class.push(if positives == 0 {
            None
        } else {
            Some(ap_sum / positives as f64)
        });
    }
    let present: Vec<f64> = per_class.iter().filter_map(|a| *a).collect();
    if present.is_empty() {
        return Err(Error::Config("mAP: no class has a positive example".into()));
    }
    let map = present.iter().sum::<f64>() / present.len() as f64;
    Ok((per_class, map))
}

/// Forgetting in percentage points: macro F1 over `base_classes` at phase 0
/// minus the same quantity in the current report. Positive means the
/// learner lost ground on the base classes.
pub fn forgetting(
    base_report: &PhaseReport,
    current: &PhaseReport,
    base_classes: &[usize],
) -> Result<f64> {
    let mean_over = |report: &PhaseReport| -> Result<f64> {
        let mut sum = 0.0;
        for c in base_classes {
            let pos = report.classes.iter().position(|x| x == c).ok_or_else(|| {
                Error::Config(format!(
                    "forgetting: class {c} missing from phase {} report",
                    report.phase
                ))
            })?;
            sum += report.per_class_f1[pos];
        }
        Ok(sum / base_classes.len() as f64)
    };
    if base_classes.is_empty() {
        return Err(Error::Config("forgetting: empty base class set".into()));
    }
    Ok(100.0 * (mean_over(base_report)? - mean_over(current)?))
}

/// Mean macro F1 and mAP over all phases; mean Fr over phases that carry
/// one (incremental phases only).
pub fn average_over_phases(reports: &[PhaseReport]) -> Result<RunSummary> {
    if reports.is_empty() {
        return Err(Error::Config("average_over_phases: no reports".into()));
    }
    let n = reports.len() as f64;
    let avg_macro_f1 = reports.iter().map(|r| r.macro_f1).sum::<f64>() / n;
    let avg_map = reports.iter().map(|r| r.map).sum::<f64>() / n;
    let frs: Vec<f64> = reports.iter().filter_map(|r| r.fr).collect();
    let avg_fr = if frs.is_empty() {
        None
    } else {
        Some(frs.iter().sum::<f64>() / frs.len() as f64)
    };
    Ok(RunSummary {
        avg_macro_f1,
        avg_map,
        avg_fr,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn report_with(classes: Vec<usize>, per_class_f1: Vec<f64>, phase: usize) -> PhaseReport {
        let macro_f1 = per_class_f1.iter().sum::<f64>() / per_class_f1.len() as f64;
        PhaseReport {
            phase,
            classes,
            per_class_f1,
            macro_f1,
            per_class_ap: vec![],
            map: 0.0,
            fr: None,
            lambda: None,
            weight_norms: vec![],
            labels_hist: BTreeMap::new(),
            non_incremental: false,
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let targets = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (per_class, macro_avg) = macro_f1(&scores, &targets, 0.5).unwrap();
        assert_eq!(per_class, vec![1.0, 1.0]);
        assert_eq!(macro_avg, 1.0);
    }

    #[test]
    fn empty_confusion_scores_zero() {
        let scores = vec![vec![0.1], vec![0.2]];
        let targets = vec![vec![0.0], vec![0.0]];
        let (per_class, macro_avg) = macro_f1(&scores, &targets, 0.5).unwrap();
        assert_eq!(per_class, vec![0.0]);
        assert_eq!(macro_avg, 0.0);
    }

    #[test]
    fn hand_built_confusion() {
        // class A: TP=1, FP=1, FN=0 → 2/3; class B: TP=1, FP=0, FN=1 → 2/3
        let scores = vec![vec![0.9, 0.9], vec![0.9, 0.1], vec![0.1, 0.2]];
        let targets = vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 1.0]];
        let (per_class, macro_avg) = macro_f1(&scores, &targets, 0.5).unwrap();
        assert!((per_class[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((per_class[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((macro_avg - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ap_perfect_and_worst_single_positive() {
        let scores = vec![vec![0.9], vec![0.8], vec![0.2]];
        let targets = vec![vec![1.0], vec![1.0], vec![0.0]];
        let (_, map) = mean_average_precision(&scores, &targets).unwrap();
        assert_eq!(map, 1.0);

        // one positive among 4, ranked last → AP = 1/4
        let scores = vec![vec![0.9], vec![0.8], vec![0.7], vec![0.1]];
        let targets = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let (_, map) = mean_average_precision(&scores, &targets).unwrap();
        assert_eq!(map, 0.25);
    }

    #[test]
    fn ap_hand_case() {
        // scores (0.9, 0.8, 0.7, 0.6), targets (1,0,1,0) → (1 + 2/3)/2 = 5/6
        let scores = vec![vec![0.9], vec![0.8], vec![0.7], vec![0.6]];
        let targets = vec![vec![1.0], vec![0.0], vec![1.0], vec![0.0]];
        let (_, map) = mean_average_precision(&scores, &targets).unwrap();
        assert!((map - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn class_without_positives_is_excluded() {
        let scores = vec![vec![0.9, 0.4], vec![0.1, 0.6]];
        let targets = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let (per_class, map) = mean_average_precision(&scores, &targets).unwrap();
        assert_eq!(per_class[0], Some(1.0));
        assert_eq!(per_class[1], None);
        assert_eq!(map, 1.0);
    }

    #[test]
    fn f1_and_map_match_oracles_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..300 {
            let n_classes = rng.random_range(1..=5);
            let n_examples = rng.random_range(1..=20);
            let scores: Vec<Vec<f64>> = (0..n_examples)
                .map(|_| (0..n_classes).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let targets: Vec<Vec<f64>> = (0..n_examples)
                .map(|_| {
                    (0..n_classes)
                        .map(|_| if rng.random_range(0.0..1.0) < 0.4 { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();

            let (got_pc, got_macro) = macro_f1(&scores, &targets, 0.5).unwrap();
            let (want_pc, want_macro) = oracle::macro_f1_by_confusion(&scores, &targets, 0.5);
            assert_eq!(got_pc, want_pc);
            assert_eq!(got_macro, want_macro);

            if targets.iter().any(|t| t.iter().any(|&v| v > 0.5)) {
                let (got_ap, _) = mean_average_precision(&scores, &targets).unwrap();
                for k in 0..n_classes {
                    let col_scores: Vec<f64> = scores.iter().map(|s| s[k]).collect();
                    let col_targets: Vec<f64> = targets.iter().map(|t| t[k]).collect();
                    let want =
                        oracle::average_precision_by_enumeration(&col_scores, &col_targets);
                    assert_eq!(got_ap[k], want);
                }
            }
        }
    }

    #[test]
    fn forgetting_cases() {
        let base = report_with(vec![0, 1], vec![0.452, 0.452], 0);

        let same = report_with(vec![0, 1, 2], vec![0.452, 0.452, 0.3], 1);
        assert_eq!(forgetting(&base, &same, &[0, 1]).unwrap(), 0.0);

        let dropped = report_with(vec![0, 1, 2], vec![0.445, 0.445, 0.3], 1);
        let fr = forgetting(&base, &dropped, &[0, 1]).unwrap();
        assert!((fr - 0.7).abs() < 1e-9, "fr {fr}");

        let collapsed = report_with(vec![0, 1, 2], vec![0.0, 0.0, 0.9], 1);
        let fr = forgetting(&base, &collapsed, &[0, 1]).unwrap();
        assert!((fr - 45.2).abs() < 1e-9, "fr {fr}");

        let missing = report_with(vec![0, 2], vec![0.4, 0.9], 1);
        assert!(forgetting(&base, &missing, &[0, 1]).unwrap_err().is_validation());
    }

    #[test]
    fn phase_averages() {
        let single = vec![report_with(vec![0], vec![0.6], 0)];
        let s = average_over_phases(&single).unwrap();
        assert_eq!(s.avg_macro_f1, 0.6);
        assert_eq!(s.avg_fr, None);

        let mut constant = vec![
            report_with(vec![0], vec![0.4], 0),
            report_with(vec![0, 1], vec![0.4, 0.4], 1),
        ];
        constant[1].fr = Some(2.0);
        let s = average_over_phases(&constant).unwrap();
        assert!((s.avg_macro_f1 - 0.4).abs() < 1e-15);
        assert_eq!(s.avg_fr, Some(2.0));
    }

    proptest! {
        #[test]
        fn macro_f1_is_invariant_under_example_reordering(
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..15);
            let k = rng.random_range(1..4);
            let scores: Vec<Vec<f64>> =
                (0..n).map(|_| (0..k).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let targets: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..k).map(|_| f64::from(rng.random_range(0.0..1.0) < 0.5)).collect())
                .collect();

            let (_, forward) = macro_f1(&scores, &targets, 0.5).unwrap();
            let rev_scores: Vec<Vec<f64>> = scores.iter().rev().cloned().collect();
            let rev_targets: Vec<Vec<f64>> = targets.iter().rev().cloned().collect();
            let (_, reversed) = macro_f1(&rev_scores, &rev_targets, 0.5).unwrap();
            prop_assert_eq!(forward, reversed);
        }

        #[test]
        fn map_is_invariant_under_monotone_transforms(
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..15);
            let scores: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
            let targets: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![f64::from(rng.random_range(0.0..1.0) < 0.5)])
                .collect();
            prop_assume!(targets.iter().any(|t| t[0] > 0.5));

            let (_, base) = mean_average_precision(&scores, &targets).unwrap();
            // strictly monotone: x → exp(3x) + x
            let transformed: Vec<Vec<f64>> =
                scores.iter().map(|s| vec![(3.0 * s[0]).exp() + s[0]]).collect();
            let (_, after) = mean_average_precision(&transformed, &targets).unwrap();
            prop_assert_eq!(base, after);
        }
    }
}
