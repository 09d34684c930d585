//! Synthetic prediction logs with analytically known properties, used as
//! the statistical oracle for the estimators.
//!
//! Confidences are uniform on [0.05, 0.95] (away from the clamp region),
//! correctness is Bernoulli(confidence^k), perturbed conditions flip
//! correct items at the rate that hits the target accuracy drop in
//! expectation, and per-item sample arrays are constructed to carry an
//! exact target variance. Every draw comes from a per-dataset stream
//! derived from the seed, so a config generates the same log everywhere.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use rand::Rng;

use crate::record::{Condition, PredictionRecord, SampleSource, Split};
use crate::rng::derive_rng;
use crate::{Error, Result};

/// Lower edge of the confidence support.
pub const CONF_LO: f64 = 0.05;
/// Upper edge of the confidence support.
pub const CONF_HI: f64 = 0.95;
/// Width of each class's variance-score distribution.
pub const VAR_WIDTH: f64 = 0.05;
/// Largest separation the sample construction can realize.
pub const MAX_SEPARATION: f64 = 0.1;

fn default_model_id() -> String {
    "synth-model".into()
}

fn default_dataset_ids() -> Vec<String> {
    vec!["synth-ds-0".into()]
}

fn default_sample_source() -> SampleSource {
    SampleSource::Ensemble
}

fn default_samples_per_item() -> usize {
    3
}

/// Generator parameters. `miscalibration_exponent` is the `k` in
/// `correctness ~ Bernoulli(confidence^k)`: 1 is perfectly calibrated,
/// above 1 is overconfident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_dataset_ids")]
    pub dataset_ids: Vec<String>,
    /// Eval items per dataset.
    pub n_items: usize,
    /// Validation items per dataset (clean condition), for fitting
    /// calibration maps.
    #[serde(default)]
    pub n_validation: usize,
    pub miscalibration_exponent: f64,
    /// Target accuracy reduction per perturbed condition, in expectation.
    #[serde(default)]
    pub drop_per_condition: BTreeMap<Condition, f64>,
    /// Gap between the variance distributions of incorrect and correct
    /// items, in [0, 0.1]. At or above 0.05 the ranges are disjoint.
    pub uq_separation: f64,
    #[serde(default = "default_sample_source")]
    pub sample_source: SampleSource,
    #[serde(default = "default_samples_per_item")]
    pub samples_per_item: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 {
            return Err(Error::InvalidParameter("n_items must be at least 1".into()));
        }
        if self.dataset_ids.is_empty() {
            return Err(Error::InvalidParameter("dataset_ids must be non-empty".into()));
        }
        if !(self.miscalibration_exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "miscalibration_exponent must be positive, got {}",
                self.miscalibration_exponent
            )));
        }
        if !(0.0..=MAX_SEPARATION).contains(&self.uq_separation) {
            return Err(Error::InfeasibleTarget(format!(
                "uq_separation must lie in [0, {MAX_SEPARATION}], got {}",
                self.uq_separation
            )));
        }
        if self.samples_per_item < 2 {
            return Err(Error::InvalidParameter(
                "samples_per_item must be at least 2".into(),
            ));
        }
        let accuracy = expected_accuracy(self.miscalibration_exponent);
        for (condition, &drop) in &self.drop_per_condition {
            if condition == &Condition::Clean {
                return Err(Error::InvalidParameter(
                    "drop_per_condition must not target the clean condition".into(),
                ));
            }
            if drop > accuracy || -drop > 1.0 - accuracy {
                return Err(Error::InfeasibleTarget(format!(
                    "condition {condition}: drop {drop} is unreachable from expected accuracy {accuracy:.4}"
                )));
            }
        }
        Ok(())
    }
}

/// Analytic expectations implied by a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormTargets {
    pub expected_accuracy: f64,
    pub expected_ece_limit: f64,
    pub expected_auroc: f64,
}

/// `E[confidence^k]` under the uniform confidence draw.
pub fn expected_accuracy(k: f64) -> f64 {
    (CONF_HI.powf(k + 1.0) - CONF_LO.powf(k + 1.0)) / ((CONF_HI - CONF_LO) * (k + 1.0))
}

/// Large-sample ECE of the generator under equal-width binning: the
/// bin-weighted gap between mean confidence and `E[c^k]` within each
/// bin. Zero exactly when `k = 1`.
pub fn expected_ece_limit(k: f64, num_bins: usize) -> f64 {
    let mut ece = 0.0;
    for b in 0..num_bins {
        let lower = (b as f64 / num_bins as f64).max(CONF_LO);
        let upper = ((b + 1) as f64 / num_bins as f64).min(CONF_HI);
        if upper <= lower {
            continue;
        }
        let weight = (upper - lower) / (CONF_HI - CONF_LO);
        let mean_conf = (lower + upper) / 2.0;
        let mean_acc =
            (upper.powf(k + 1.0) - lower.powf(k + 1.0)) / ((k + 1.0) * (upper - lower));
        ece += weight * (mean_conf - mean_acc).abs();
    }
    ece
}

/// AUROC implied by two uniform variance distributions of width
/// [`VAR_WIDTH`] separated by `sep`: 1 when disjoint, else
/// `1 - (w - sep)^2 / (2 w^2)`.
pub fn expected_auroc(sep: f64) -> f64 {
    let w = VAR_WIDTH;
    if sep >= w {
        1.0
    } else {
        1.0 - (w - sep).powi(2) / (2.0 * w * w)
    }
}

/// Analytic targets for a config (`num_bins` matches the ECE estimator
/// under test).
pub fn closed_form_targets(config: &SynthConfig, num_bins: usize) -> Result<ClosedFormTargets> {
    config.validate()?;
    Ok(ClosedFormTargets {
        expected_accuracy: expected_accuracy(config.miscalibration_exponent),
        expected_ece_limit: expected_ece_limit(config.miscalibration_exponent, num_bins),
        expected_auroc: expected_auroc(config.uq_separation),
    })
}

/// Sample array with exact population variance `v`: half the entries at
/// `0.5 - d`, half at `0.5 + d` (odd lengths add a center point).
pub fn samples_with_variance(v: f64, n: usize) -> Vec<f64> {
    debug_assert!(n >= 2);
    let pairs = n / 2;
    let d = if n % 2 == 0 {
        v.sqrt()
    } else {
        (v * n as f64 / (n - 1) as f64).sqrt()
    };
    let mut samples = Vec::with_capacity(n);
    for _ in 0..pairs {
        samples.push(0.5 - d);
        samples.push(0.5 + d);
    }
    if n % 2 == 1 {
        samples.push(0.5);
    }
    samples
}

/// Generates the full log for a config: clean eval records with samples,
/// one perturbed copy per configured condition, and clean validation
/// records.
pub fn generate_log(config: &SynthConfig) -> Result<Vec<PredictionRecord>> {
    config.validate()?;
    let k = config.miscalibration_exponent;
    let accuracy = expected_accuracy(k);
    let mut records = Vec::new();

    for dataset_id in &config.dataset_ids {
        let mut rng = derive_rng(config.seed, dataset_id, 0);
        let mut clean: Vec<PredictionRecord> = Vec::with_capacity(config.n_items);
        for i in 0..config.n_items {
            let confidence = CONF_LO + (CONF_HI - CONF_LO) * rng.random::<f64>();
            let correct = rng.random::<f64>() < confidence.powf(k);
            let v = if correct {
                VAR_WIDTH * rng.random::<f64>()
            } else {
                config.uq_separation + VAR_WIDTH * rng.random::<f64>()
            };
            clean.push(PredictionRecord {
                item_id: format!("item-{i:06}"),
                dataset_id: dataset_id.clone(),
                model_id: config.model_id.clone(),
                condition: Condition::Clean,
                split: Split::Eval,
                confidence,
                correct,
                samples: Some(samples_with_variance(v, config.samples_per_item)),
                sample_source: Some(config.sample_source),
            });
        }

        for (&condition, &drop) in &config.drop_per_condition {
            let (flip_correct, p) = if drop >= 0.0 {
                (true, drop / accuracy)
            } else {
                (false, -drop / (1.0 - accuracy))
            };
            for base in &clean {
                let flip = rng.random::<f64>() < p;
                let correct = match (base.correct, flip_correct, flip) {
                    (true, true, true) => false,
                    (false, false, true) => true,
                    (c, _, _) => c,
                };
                records.push(PredictionRecord {
                    condition,
                    correct,
                    samples: None,
                    sample_source: None,
                    ..base.clone()
                });
            }
        }

        for i in 0..config.n_validation {
            let confidence = CONF_LO + (CONF_HI - CONF_LO) * rng.random::<f64>();
            let correct = rng.random::<f64>() < confidence.powf(k);
            records.push(PredictionRecord {
                item_id: format!("val-{i:06}"),
                dataset_id: dataset_id.clone(),
                model_id: config.model_id.clone(),
                condition: Condition::Clean,
                split: Split::Validation,
                confidence,
                correct,
                samples: None,
                sample_source: None,
            });
        }

        records.extend(clean);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::variance_score;
    use approx::assert_abs_diff_eq;

    fn config(k: f64, n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            model_id: default_model_id(),
            dataset_ids: default_dataset_ids(),
            n_items: n,
            n_validation: 0,
            miscalibration_exponent: k,
            drop_per_condition: BTreeMap::new(),
            uq_separation: 0.02,
            sample_source: SampleSource::Ensemble,
            samples_per_item: 3,
            seed,
        }
    }

    #[test]
    fn closed_form_accuracy() {
        assert_abs_diff_eq!(expected_accuracy(1.0), 0.5, epsilon = 1e-12);
        // E[c^2] for c ~ U[0.05, 0.95]
        let expect = (0.95_f64.powi(3) - 0.05_f64.powi(3)) / (0.9 * 3.0);
        assert_abs_diff_eq!(expected_accuracy(2.0), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 0.3175, epsilon = 1e-12);
    }

    #[test]
    fn ece_limit_zero_iff_calibrated() {
        assert_abs_diff_eq!(expected_ece_limit(1.0, 10), 0.0, epsilon = 1e-12);
        assert!(expected_ece_limit(2.0, 10) > 0.05);
    }

    #[test]
    fn auroc_overlap_formula() {
        assert_abs_diff_eq!(expected_auroc(0.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_auroc(VAR_WIDTH), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_auroc(0.025), 0.875, epsilon = 1e-12);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate_log(&config(1.0, 200, 42)).unwrap();
        let b = generate_log(&config(1.0, 200, 42)).unwrap();
        assert_eq!(a, b);
        let c = generate_log(&config(1.0, 200, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_arrays_carry_exact_variance() {
        for &n in &[2, 3, 5, 10] {
            for &v in &[0.0, 0.01, 0.08, 0.15] {
                let samples = samples_with_variance(v, n);
                assert_eq!(samples.len(), n);
                assert!(samples.iter().all(|s| (0.0..=1.0).contains(s)));
                assert_abs_diff_eq!(variance_score(&samples).unwrap(), v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_separation_means_perfect_auroc() {
        let mut cfg = config(1.0, 500, 9);
        cfg.uq_separation = 0.08; // above VAR_WIDTH: ranges disjoint
        let records = generate_log(&cfg).unwrap();
        let scores: Vec<(f64, bool)> = records
            .iter()
            .map(|r| {
                (
                    variance_score(r.samples.as_ref().unwrap()).unwrap(),
                    !r.correct,
                )
            })
            .collect();
        assert_abs_diff_eq!(
            crate::uncertainty::auroc(&scores).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn infeasible_drop_is_rejected() {
        let mut cfg = config(1.0, 10, 1);
        cfg.drop_per_condition.insert(Condition::Typo, 0.9); // > expected accuracy 0.5
        assert!(matches!(
            generate_log(&cfg),
            Err(Error::InfeasibleTarget(_))
        ));
        cfg.drop_per_condition.insert(Condition::Typo, -0.6); // > 1 - accuracy
        assert!(generate_log(&cfg).is_err());
    }

    #[test]
    fn drops_hit_target_in_expectation() {
        let mut cfg = config(1.0, 50_000, 3);
        cfg.drop_per_condition.insert(Condition::Adversarial, 0.112);
        let records = generate_log(&cfg).unwrap();
        let acc = |cond: Condition| {
            let (n, c) = records
                .iter()
                .filter(|r| r.condition == cond)
                .fold((0usize, 0usize), |(n, c), r| {
                    (n + 1, c + usize::from(r.correct))
                });
            c as f64 / n as f64
        };
        let drop = acc(Condition::Clean) - acc(Condition::Adversarial);
        assert_abs_diff_eq!(drop, 0.112, epsilon = 0.01);
    }
}
