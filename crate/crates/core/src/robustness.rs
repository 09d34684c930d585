//! Accuracy retention under perturbed input conditions.
//!
//! For each `(dataset, condition)` cell the drop is clean accuracy minus
//! perturbed accuracy. The retention score is
//! `R = clamp(1 - avg_drop / avg_clean, 0, 1)` where `avg_drop` is the
//! unweighted mean over cells and `avg_clean` the unweighted mean of
//! per-dataset clean accuracies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::record::{Condition, EvaluationUnit};
use crate::{Error, Result};

/// Clean/perturbed accuracies and their gap for one `(dataset,
/// condition)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub dataset_id: String,
    pub condition: Condition,
    pub clean_accuracy: f64,
    pub perturbed_accuracy: f64,
    pub drop: f64,
}

/// Per-cell drops plus the aggregated retention score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessBreakdown {
    pub per_cell: Vec<RobustnessCell>,
    pub avg_clean_accuracy: f64,
    pub avg_drop: f64,
    pub r_score: f64,
}

/// Fraction of records with `correct = true`.
pub fn accuracy(unit: &EvaluationUnit) -> f64 {
    let correct = unit.records().iter().filter(|r| r.correct).count();
    correct as f64 / unit.len() as f64
}

/// Clean accuracy minus perturbed accuracy; negative when the
/// perturbation helps.
pub fn accuracy_drop(clean: &EvaluationUnit, perturbed: &EvaluationUnit) -> Result<f64> {
    if clean.model_id() != perturbed.model_id() || clean.dataset_id() != perturbed.dataset_id() {
        return Err(Error::UnitMismatch(format!(
            "drop requires matching model and dataset, got {}/{} vs {}/{}",
            clean.model_id(),
            clean.dataset_id(),
            perturbed.model_id(),
            perturbed.dataset_id()
        )));
    }
    Ok(accuracy(clean) - accuracy(perturbed))
}

/// Aggregates `(clean, perturbed)` cell pairs of one model into the
/// retention breakdown.
pub fn robustness_score(
    cells: &[(EvaluationUnit, EvaluationUnit)],
) -> Result<RobustnessBreakdown> {
    let first = cells
        .first()
        .ok_or_else(|| Error::InsufficientData("no (clean, perturbed) cells".into()))?;
    let model_id = first.0.model_id().to_string();

    let mut per_cell = Vec::with_capacity(cells.len());
    let mut clean_by_dataset: BTreeMap<String, f64> = BTreeMap::new();
    for (clean, perturbed) in cells {
        if clean.model_id() != model_id {
            return Err(Error::UnitMismatch(format!(
                "cells span models {} and {}",
                model_id,
                clean.model_id()
            )));
        }
        let drop = accuracy_drop(clean, perturbed)?;
        let clean_accuracy = accuracy(clean);
        clean_by_dataset
            .entry(clean.dataset_id().to_string())
            .or_insert(clean_accuracy);
        per_cell.push(RobustnessCell {
            dataset_id: clean.dataset_id().to_string(),
            condition: perturbed.condition(),
            clean_accuracy,
            perturbed_accuracy: accuracy(perturbed),
            drop,
        });
    }
    per_cell.sort_by(|a, b| (&a.dataset_id, a.condition).cmp(&(&b.dataset_id, b.condition)));

    let avg_clean_accuracy =
        clean_by_dataset.values().sum::<f64>() / clean_by_dataset.len() as f64;
    let avg_drop = per_cell.iter().map(|c| c.drop).sum::<f64>() / per_cell.len() as f64;
    if avg_clean_accuracy <= 0.0 {
        return Err(Error::ZeroCleanAccuracy);
    }
    let r_score = (1.0 - avg_drop / avg_clean_accuracy).clamp(0.0, 1.0);

    Ok(RobustnessBreakdown {
        per_cell,
        avg_clean_accuracy,
        avg_drop,
        r_score,
    })
}

/// Per-cell table in CSV form.
pub fn breakdown_to_csv(b: &RobustnessBreakdown) -> String {
    let mut out =
        String::from("dataset_id,condition,clean_accuracy,perturbed_accuracy,drop\n");
    for cell in &b.per_cell {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            cell.dataset_id, cell.condition, cell.clean_accuracy, cell.perturbed_accuracy, cell.drop
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{PredictionRecord, Split};
    use approx::assert_abs_diff_eq;

    fn unit(dataset: &str, condition: Condition, outcomes: &[bool]) -> EvaluationUnit {
        let records = outcomes
            .iter()
            .enumerate()
            .map(|(i, &correct)| PredictionRecord {
                item_id: format!("q{i:03}"),
                dataset_id: dataset.into(),
                model_id: "m1".into(),
                condition,
                split: Split::Eval,
                confidence: 0.5,
                correct,
                samples: None,
                sample_source: None,
            })
            .collect();
        EvaluationUnit::new(records).unwrap()
    }

    fn accuracy_unit(dataset: &str, condition: Condition, correct: usize, total: usize) -> EvaluationUnit {
        let outcomes: Vec<bool> = (0..total).map(|i| i < correct).collect();
        unit(dataset, condition, &outcomes)
    }

    #[test]
    fn accuracy_fractions() {
        assert_abs_diff_eq!(
            accuracy(&unit("d", Condition::Clean, &[true, true, true, false])),
            0.75
        );
        assert_abs_diff_eq!(accuracy(&unit("d", Condition::Clean, &[true, true])), 1.0);
        assert_abs_diff_eq!(accuracy(&unit("d", Condition::Clean, &[false])), 0.0);
    }

    #[test]
    fn drop_arithmetic() {
        let clean = accuracy_unit("d", Condition::Clean, 80, 100);
        let perturbed = accuracy_unit("d", Condition::Typo, 72, 100);
        assert_abs_diff_eq!(
            accuracy_drop(&clean, &perturbed).unwrap(),
            0.08,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(accuracy_drop(&clean, &clean).unwrap(), 0.0);
        let better = accuracy_unit("d", Condition::Typo, 85, 100);
        assert_abs_diff_eq!(
            accuracy_drop(&clean, &better).unwrap(),
            -0.05,
            epsilon = 1e-12
        );
    }

    #[test]
    fn drop_rejects_mismatched_cells() {
        let clean = accuracy_unit("d1", Condition::Clean, 8, 10);
        let other = accuracy_unit("d2", Condition::Typo, 8, 10);
        assert!(accuracy_drop(&clean, &other).is_err());
    }

    #[test]
    fn retention_formula() {
        let clean = accuracy_unit("d", Condition::Clean, 80, 100);
        let perturbed = accuracy_unit("d", Condition::Typo, 72, 100);
        let b = robustness_score(&[(clean, perturbed)]).unwrap();
        assert_abs_diff_eq!(b.avg_clean_accuracy, 0.80, epsilon = 1e-12);
        assert_abs_diff_eq!(b.avg_drop, 0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(b.r_score, 0.90, epsilon = 1e-12);
    }

    #[test]
    fn zero_drop_full_retention() {
        let clean = accuracy_unit("d", Condition::Clean, 60, 100);
        let b = robustness_score(&[(clean.clone(), accuracy_unit("d", Condition::Typo, 60, 100))])
            .unwrap();
        assert_abs_diff_eq!(b.r_score, 1.0);
    }

    #[test]
    fn negative_drop_clamps_to_one() {
        let clean = accuracy_unit("d", Condition::Clean, 80, 100);
        let better = accuracy_unit("d", Condition::Paraphrase, 85, 100);
        let b = robustness_score(&[(clean, better)]).unwrap();
        assert!(b.avg_drop < 0.0);
        assert_abs_diff_eq!(b.r_score, 1.0);
    }

    #[test]
    fn adversarial_dominates_average() {
        // per-condition drops shaped like a typical perturbation table:
        // adversarial worst by a wide margin
        let clean = accuracy_unit("d", Condition::Clean, 800, 1000);
        let cells = vec![
            (clean.clone(), accuracy_unit("d", Condition::Typo, 750, 1000)),
            (clean.clone(), accuracy_unit("d", Condition::Paraphrase, 730, 1000)),
            (clean.clone(), accuracy_unit("d", Condition::Adversarial, 688, 1000)),
        ];
        let b = robustness_score(&cells).unwrap();
        let worst = b
            .per_cell
            .iter()
            .max_by(|a, c| a.drop.total_cmp(&c.drop))
            .unwrap();
        assert_eq!(worst.condition, Condition::Adversarial);
        assert_abs_diff_eq!(worst.drop, 0.112, epsilon = 1e-12);
        let expected_avg = (0.05 + 0.07 + 0.112) / 3.0;
        assert_abs_diff_eq!(b.avg_drop, expected_avg, epsilon = 1e-12);
    }

    #[test]
    fn retention_invariant_to_cell_order_and_duplication() {
        let clean1 = accuracy_unit("d1", Condition::Clean, 8, 10);
        let pert1 = accuracy_unit("d1", Condition::Typo, 6, 10);
        let clean2 = accuracy_unit("d2", Condition::Clean, 9, 10);
        let pert2 = accuracy_unit("d2", Condition::Adversarial, 5, 10);
        let forward = robustness_score(&[
            (clean1.clone(), pert1.clone()),
            (clean2.clone(), pert2.clone()),
        ])
        .unwrap();
        let backward =
            robustness_score(&[(clean2, pert2), (clean1.clone(), pert1.clone())]).unwrap();
        assert_abs_diff_eq!(forward.r_score, backward.r_score, epsilon = 1e-15);

        // duplicating every record leaves accuracies, hence R, unchanged
        let doubled_clean = accuracy_unit("d1", Condition::Clean, 16, 20);
        let doubled_pert = accuracy_unit("d1", Condition::Typo, 12, 20);
        let single = robustness_score(&[(clean1, pert1)]).unwrap();
        let doubled = robustness_score(&[(doubled_clean, doubled_pert)]).unwrap();
        assert_abs_diff_eq!(single.r_score, doubled.r_score, epsilon = 1e-15);
    }

    #[test]
    fn zero_clean_accuracy_is_an_error() {
        let clean = accuracy_unit("d", Condition::Clean, 0, 10);
        let pert = accuracy_unit("d", Condition::Typo, 0, 10);
        assert!(matches!(
            robustness_score(&[(clean, pert)]),
            Err(Error::ZeroCleanAccuracy)
        ));
    }
}
