//! Deterministic fixture logs with exact metric targets.
//!
//! Unlike [`crate::synth`], which draws stochastic populations, these
//! builders place every record so the resulting pillar values are exact:
//! single-confidence cells pin ECE, integer correct-counts pin accuracy
//! drops, and hand-laid variance ladders pin AUROC through pair
//! counting. Tests and shipped demo files are produced here.

use crate::record::{Condition, PredictionRecord, SampleSource, Split};
use crate::synth::samples_with_variance;
use crate::{Error, Result};

/// Pillar values one model's fixture log must reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarTarget {
    pub model_id: String,
    pub c: f64,
    pub r: f64,
    pub u: f64,
}

/// Clean accuracy shared by every fixture cell.
pub const FIXTURE_CLEAN_ACC: f64 = 0.75;

fn as_count(x: f64, what: &str) -> Result<usize> {
    let rounded = x.round();
    if (x - rounded).abs() > 1e-6 || rounded < 0.0 {
        return Err(Error::InfeasibleTarget(format!(
            "{what} = {x} is not realizable as an integer count"
        )));
    }
    Ok(rounded as usize)
}

fn record(
    model_id: &str,
    dataset_id: &str,
    condition: Condition,
    item: usize,
    confidence: f64,
    correct: bool,
    variance: Option<f64>,
) -> PredictionRecord {
    PredictionRecord {
        item_id: format!("item-{item:05}"),
        dataset_id: dataset_id.to_string(),
        model_id: model_id.to_string(),
        condition,
        split: Split::Eval,
        confidence,
        correct,
        samples: variance.map(|v| samples_with_variance(v, 2)),
        sample_source: variance.map(|_| SampleSource::Ensemble),
    }
}

/// Variance ladder realizing an exact AUROC: `wins` out of
/// `n_incorrect * n_correct` pairs go to incorrect items (plus one half
/// pair when `tie` is set). Returns per-item variances, incorrect items
/// first.
fn auroc_ladder(n_incorrect: usize, n_correct: usize, wins: usize, tie: bool) -> Result<Vec<f64>> {
    let correct_v = |j: usize| 0.02 + 1e-4 * j as f64;
    if n_correct > 300 {
        return Err(Error::InfeasibleTarget(
            "variance ladder supports at most 300 correct items per cell".into(),
        ));
    }
    let full = wins / n_correct;
    let partial_wins = wins % n_correct;
    let needs_partial = tie || partial_wins > 0;
    if full + usize::from(needs_partial) > n_incorrect {
        return Err(Error::InfeasibleTarget(format!(
            "AUROC needs {wins} wins over {n_incorrect}x{n_correct} pairs"
        )));
    }
    let mut incorrect = Vec::with_capacity(n_incorrect);
    for i in 0..n_incorrect {
        let v = if i < full {
            0.06 + 1e-4 * i as f64 // beats every correct item
        } else if i == full && needs_partial {
            if tie {
                correct_v(partial_wins) // ties one, beats partial_wins
            } else {
                correct_v(partial_wins - 1) + 5e-5 // beats exactly partial_wins
            }
        } else {
            1e-3 + 1e-6 * i as f64 // below every correct item
        };
        incorrect.push(v);
    }
    let mut all = incorrect;
    all.extend((0..n_correct).map(correct_v));
    Ok(all)
}

/// Builds a log whose scored pillars equal `targets` exactly under a
/// fixed ECE anchor of `anchor` (or an auto anchor, provided some model
/// targets `c = 0`): every dataset gets one clean cell with confidence
/// `0.75 + (1 - c) * anchor` and one cell per perturbed condition with
/// the drop implied by `r`; AUROC is laid out to equal `0.5 + u / 2`.
pub fn exact_pillar_log(
    targets: &[PillarTarget],
    anchor: f64,
    datasets: &[&str],
    n_per_cell: usize,
) -> Result<Vec<PredictionRecord>> {
    if !(anchor > 0.0) {
        return Err(Error::InfeasibleTarget("anchor must be positive".into()));
    }
    let n_correct = as_count(FIXTURE_CLEAN_ACC * n_per_cell as f64, "clean correct count")?;
    let n_incorrect = n_per_cell - n_correct;
    let mut records = Vec::new();

    for target in targets {
        for (name, v) in [("c", target.c), ("r", target.r), ("u", target.u)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InfeasibleTarget(format!(
                    "{}: pillar {name} = {v} outside [0, 1]",
                    target.model_id
                )));
            }
        }
        let ece = (1.0 - target.c) * anchor;
        let confidence = FIXTURE_CLEAN_ACC + ece;
        let drop = (1.0 - target.r) * FIXTURE_CLEAN_ACC;
        let perturbed_correct = as_count(
            (FIXTURE_CLEAN_ACC - drop) * n_per_cell as f64,
            "perturbed correct count",
        )?;
        let auroc = 0.5 + target.u / 2.0;
        let half_wins = as_count(
            2.0 * auroc * (n_incorrect * n_correct) as f64,
            "AUROC pair wins",
        )?;
        let (wins, tie) = (half_wins / 2, half_wins % 2 == 1);
        let variances = auroc_ladder(n_incorrect, n_correct, wins, tie)?;

        for dataset_id in datasets {
            for i in 0..n_per_cell {
                // incorrect items occupy the low indices
                let correct = i >= n_incorrect;
                records.push(record(
                    &target.model_id,
                    dataset_id,
                    Condition::Clean,
                    i,
                    confidence,
                    correct,
                    Some(variances[i]),
                ));
            }
            for condition in [Condition::Typo, Condition::Paraphrase, Condition::Adversarial] {
                for i in 0..n_per_cell {
                    records.push(record(
                        &target.model_id,
                        dataset_id,
                        condition,
                        i,
                        confidence,
                        i < perturbed_correct,
                        None,
                    ));
                }
            }
        }
    }
    Ok(records)
}

/// Overconfident multi-bin fixture with an exact baseline ECE per model:
/// equal-count bins at confidences 0.55/0.65/0.75/0.85 whose accuracy
/// sits `ece` below the confidence, mirrored into a validation split so
/// calibration maps can be fit. `n_per_bin * ece` must be an integer
/// (1000 works for three-decimal targets).
pub fn overconfident_log(
    models: &[(String, f64)],
    dataset_id: &str,
    n_per_bin: usize,
) -> Result<Vec<PredictionRecord>> {
    const BIN_CONFS: [f64; 4] = [0.55, 0.65, 0.75, 0.85];
    let mut records = Vec::new();
    for (model_id, ece) in models {
        for (b, &confidence) in BIN_CONFS.iter().enumerate() {
            let n_correct = as_count((confidence - ece) * n_per_bin as f64, "bin correct count")?;
            for split in [Split::Eval, Split::Validation] {
                let prefix = match split {
                    Split::Eval => "item",
                    Split::Validation => "val",
                };
                for i in 0..n_per_bin {
                    records.push(PredictionRecord {
                        item_id: format!("{prefix}-{b}-{i:05}"),
                        dataset_id: dataset_id.to_string(),
                        model_id: model_id.clone(),
                        condition: Condition::Clean,
                        split,
                        confidence,
                        correct: i < n_correct,
                        samples: None,
                        sample_source: None,
                    });
                }
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{compose_crs, normalize_c, PillarScores, Weights};
    use crate::config::{EceAnchor, RunConfig};
    use crate::pipeline::{model_pillar_outcomes, settings_for_run};
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_pillar_log_reproduces_targets() {
        let targets = vec![
            PillarTarget {
                model_id: "strong".into(),
                c: 0.91,
                r: 0.78,
                u: 0.73,
            },
            PillarTarget {
                model_id: "weak".into(),
                c: 0.0,
                r: 0.51,
                u: 0.41,
            },
        ];
        let records = exact_pillar_log(&targets, 0.062, &["d1", "d2"], 400).unwrap();
        let config = RunConfig {
            ece_anchor: EceAnchor::Fixed(0.062),
            ..RunConfig::default()
        };
        let settings = settings_for_run(&records, &config).unwrap();
        for target in &targets {
            let model_records: Vec<PredictionRecord> = records
                .iter()
                .filter(|r| r.model_id == target.model_id)
                .cloned()
                .collect();
            let outcome = model_pillar_outcomes(&model_records, &settings).unwrap();
            assert_abs_diff_eq!(outcome.c.unwrap(), target.c, epsilon = 1e-9);
            assert_abs_diff_eq!(outcome.r.unwrap(), target.r, epsilon = 1e-9);
            assert_abs_diff_eq!(outcome.u.unwrap(), target.u, epsilon = 1e-9);
        }
    }

    #[test]
    fn auto_anchor_matches_fixed_when_a_model_pins_zero() {
        // "weak" targets c = 0, so its ECE equals the anchor and the
        // auto-resolved anchor reproduces the fixed one
        let targets = vec![
            PillarTarget {
                model_id: "mid".into(),
                c: 0.5,
                r: 0.7,
                u: 0.6,
            },
            PillarTarget {
                model_id: "weak".into(),
                c: 0.0,
                r: 0.5,
                u: 0.4,
            },
        ];
        let records = exact_pillar_log(&targets, 0.062, &["d1"], 400).unwrap();
        let settings = settings_for_run(&records, &RunConfig::default()).unwrap();
        assert_abs_diff_eq!(settings.ece_anchor, 0.062, epsilon = 1e-9);
        let weak: Vec<PredictionRecord> = records
            .iter()
            .filter(|r| r.model_id == "weak")
            .cloned()
            .collect();
        let outcome = model_pillar_outcomes(&weak, &settings).unwrap();
        assert_eq!(outcome.c.unwrap(), 0.0);
    }

    #[test]
    fn composed_fixture_scores_round_like_the_targets() {
        let target = PillarTarget {
            model_id: "m".into(),
            c: 0.71,
            r: 0.68,
            u: 0.71,
        };
        let crs = compose_crs(
            "m",
            PillarScores {
                c: normalize_c((1.0 - target.c) * 0.062, 0.062).unwrap(),
                r: target.r,
                u: target.u,
            },
            &Weights::balanced(),
        );
        assert_abs_diff_eq!(crs.crs, 0.70, epsilon = 1e-9);
    }

    #[test]
    fn overconfident_log_has_exact_ece() {
        let records =
            overconfident_log(&[("m1".into(), 0.031)], "d1", 1000).unwrap();
        let settings = settings_for_run(
            &records,
            &RunConfig {
                ece_anchor: EceAnchor::Fixed(0.1),
                ..RunConfig::default()
            },
        )
        .unwrap();
        let outcome = model_pillar_outcomes(&records, &settings).unwrap();
        assert_abs_diff_eq!(outcome.c_ece.unwrap(), 0.031, epsilon = 1e-9);
    }

    #[test]
    fn unrealizable_counts_are_rejected() {
        let target = PillarTarget {
            model_id: "m".into(),
            c: 0.5,
            r: 0.123456, // drop not realizable at n = 40
            u: 0.5,
        };
        assert!(exact_pillar_log(&[target], 0.062, &["d1"], 40).is_err());
    }
}
