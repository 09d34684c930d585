//! Full scoring runs: pillar computation per model, composite scores,
//! warnings, and sensitivity analyses assembled into one report.
//!
//! All per-model work is order-independent and runs in parallel; report
//! assembly sorts by model id, so serial and parallel runs emit
//! identical bytes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    bootstrap_crs, compose_crs, leave_one_out, normalize_c, round_display, weight_sensitivity,
    ConsistencyWarning, CrsResult, PillarScores, SensitivityReport, Weights,
};
use crate::calibration::{
    calibration_report, compute_ece, fit_isotonic, fit_temperature, map_unit, pooled_validation,
    CalibrationReport, IsotonicModel, TemperatureModel, DEFAULT_EPSILON,
};
use crate::config::{CSource, EceAnchor, RunConfig};
use crate::record::{
    build_manifest, filter_split, group_records, Condition, EvaluationUnit, LogManifest,
    PredictionRecord, Split,
};
use crate::robustness::{robustness_score, RobustnessBreakdown};
use crate::uncertainty::{model_uq_report, UqReport};
use crate::{Error, Result};

/// Resolved knobs shared by every pillar computation in one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PillarSettings {
    pub num_bins: usize,
    pub epsilon: f64,
    /// Anchor already resolved to a positive value; it stays fixed
    /// across bootstrap resamples and leave-one-out folds.
    pub ece_anchor: f64,
    pub c_source: CSource,
}

/// Per-model pillar values; a missing pillar means the data cannot
/// support it, with the reason recorded in `notes`.
#[derive(Debug, Clone, Default)]
pub struct PillarOutcomes {
    pub c: Option<f64>,
    pub r: Option<f64>,
    pub u: Option<f64>,
    pub c_ece: Option<f64>,
    pub notes: Vec<String>,
}

fn model_ids(records: &[PredictionRecord]) -> Vec<String> {
    let mut ids: Vec<String> = records.iter().map(|r| r.model_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn clean_eval_units(records: &[PredictionRecord], model_id: &str) -> Vec<EvaluationUnit> {
    let eval = filter_split(records, Split::Eval);
    group_records(&eval)
        .into_iter()
        .filter(|u| u.model_id() == model_id && u.condition() == Condition::Clean)
        .collect()
}

/// Mean clean-eval baseline ECE per model; the auto anchor is the
/// largest of these.
fn baseline_avg_ece(
    records: &[PredictionRecord],
    model_id: &str,
    num_bins: usize,
) -> Result<f64> {
    let units = clean_eval_units(records, model_id);
    if units.is_empty() {
        return Err(Error::InsufficientData(format!(
            "model {model_id} has no clean eval records"
        )));
    }
    let mut sum = 0.0;
    for unit in &units {
        sum += compute_ece(unit, num_bins)?.0;
    }
    Ok(sum / units.len() as f64)
}

/// Resolves the anchor policy against the baseline ECEs of the run.
pub fn resolve_anchor(
    records: &[PredictionRecord],
    anchor: EceAnchor,
    num_bins: usize,
) -> Result<f64> {
    match anchor {
        EceAnchor::Fixed(v) => Ok(v),
        EceAnchor::Auto => {
            let mut max: Option<f64> = None;
            for model_id in model_ids(records) {
                if let Ok(ece) = baseline_avg_ece(records, &model_id, num_bins) {
                    max = Some(max.map_or(ece, |m: f64| m.max(ece)));
                }
            }
            let max = max.ok_or_else(|| {
                Error::InsufficientData("no model has clean eval records to anchor on".into())
            })?;
            if max <= 0.0 {
                // every model perfectly calibrated; any positive anchor
                // yields C = 1 for all of them
                Ok(f64::MIN_POSITIVE)
            } else {
                Ok(max)
            }
        }
    }
}

/// Builds run-level settings from a config, resolving the anchor.
pub fn settings_for_run(
    records: &[PredictionRecord],
    config: &RunConfig,
) -> Result<PillarSettings> {
    Ok(PillarSettings {
        num_bins: config.num_bins,
        epsilon: DEFAULT_EPSILON,
        ece_anchor: resolve_anchor(records, config.ece_anchor, config.num_bins)?,
        c_source: config.c_source,
    })
}

/// The fitted calibration map for the configured pillar source, if any.
fn fit_c_source(
    records: &[PredictionRecord],
    model_id: &str,
    c_source: CSource,
) -> Result<(Option<TemperatureModel>, Option<IsotonicModel>)> {
    match c_source {
        CSource::Baseline => Ok((None, None)),
        CSource::Temperature => {
            let validation = pooled_validation(records, model_id).map_err(|_| {
                Error::Config(format!(
                    "c_source = temperature requires clean validation records for model {model_id}"
                ))
            })?;
            Ok((Some(fit_temperature(&validation)?), None))
        }
        CSource::Isotonic => {
            let validation = pooled_validation(records, model_id).map_err(|_| {
                Error::Config(format!(
                    "c_source = isotonic requires clean validation records for model {model_id}"
                ))
            })?;
            Ok((None, Some(fit_isotonic(&validation)?)))
        }
    }
}

fn apply_c_source(
    unit: &EvaluationUnit,
    temperature: &Option<TemperatureModel>,
    isotonic: &Option<IsotonicModel>,
) -> EvaluationUnit {
    if let Some(t) = temperature {
        map_unit(unit, |c| crate::calibration::apply_temperature(t, c))
    } else if let Some(m) = isotonic {
        map_unit(unit, |c| crate::calibration::apply_isotonic(m, c))
    } else {
        unit.clone()
    }
}

/// Robustness cell pairs for one model: each dataset's clean unit paired
/// with every perturbed-condition unit present.
fn robustness_cells(
    records: &[PredictionRecord],
    model_id: &str,
) -> Vec<(EvaluationUnit, EvaluationUnit)> {
    let eval = filter_split(records, Split::Eval);
    let units: Vec<EvaluationUnit> = group_records(&eval)
        .into_iter()
        .filter(|u| u.model_id() == model_id)
        .collect();
    let clean: BTreeMap<String, &EvaluationUnit> = units
        .iter()
        .filter(|u| u.condition() == Condition::Clean)
        .map(|u| (u.dataset_id().to_string(), u))
        .collect();
    let mut cells = Vec::new();
    for unit in &units {
        if unit.condition().is_perturbed() {
            if let Some(clean_unit) = clean.get(unit.dataset_id()) {
                cells.push(((*clean_unit).clone(), unit.clone()));
            }
        }
    }
    cells
}

/// Computes the three pillar values for one model's records.
pub fn model_pillar_outcomes(
    records: &[PredictionRecord],
    settings: &PillarSettings,
) -> Result<PillarOutcomes> {
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("no records for model".into()))?;
    let model_id = first.model_id.clone();
    let mut out = PillarOutcomes::default();

    // calibration pillar
    let clean_units = clean_eval_units(records, &model_id);
    if clean_units.is_empty() {
        out.notes
            .push("calibration: no clean eval records".into());
    } else {
        let (temperature, isotonic) = fit_c_source(records, &model_id, settings.c_source)?;
        let mut sum = 0.0;
        for unit in &clean_units {
            let unit = apply_c_source(unit, &temperature, &isotonic);
            sum += compute_ece(&unit, settings.num_bins)?.0;
        }
        let c_ece = sum / clean_units.len() as f64;
        out.c_ece = Some(c_ece);
        out.c = Some(normalize_c(c_ece, settings.ece_anchor)?);
    }

    // robustness pillar
    let cells = robustness_cells(records, &model_id);
    if cells.is_empty() {
        out.notes
            .push("robustness: no (clean, perturbed) dataset pairs".into());
    } else {
        match robustness_score(&cells) {
            Ok(b) => out.r = Some(b.r_score),
            Err(e) => out.notes.push(format!("robustness: {e}")),
        }
    }

    // uncertainty pillar
    let unit_refs: Vec<&EvaluationUnit> = clean_units.iter().collect();
    match model_uq_report(&unit_refs) {
        Ok(report) => out.u = Some(report.u_score),
        Err(e) => out.notes.push(format!("uncertainty: {e}")),
    }

    Ok(out)
}

/// Pillar scores for every model that supports all three pillars.
pub fn complete_pillars(
    records: &[PredictionRecord],
    settings: &PillarSettings,
) -> Result<Vec<(String, PillarScores)>> {
    let mut result = Vec::new();
    for model_id in model_ids(records) {
        let model_records: Vec<PredictionRecord> = records
            .iter()
            .filter(|r| r.model_id == model_id)
            .cloned()
            .collect();
        let outcome = model_pillar_outcomes(&model_records, settings)?;
        if let (Some(c), Some(r), Some(u)) = (outcome.c, outcome.r, outcome.u) {
            result.push((model_id, PillarScores { c, r, u }));
        }
    }
    if result.is_empty() {
        return Err(Error::InsufficientData(
            "no model has data for all three pillars".into(),
        ));
    }
    Ok(result)
}

/// Calibration section of one model's report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCalibration {
    pub per_dataset: BTreeMap<String, CalibrationReport>,
    pub avg_ece: f64,
    pub avg_brier: f64,
    pub avg_nll: f64,
    pub c_source: CSource,
    /// The ECE that fed the calibration pillar (baseline or
    /// post-intervention, per `c_source`).
    pub pillar_ece: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<TemperatureModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isotonic: Option<IsotonicModel>,
}

/// Everything computed for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<ModelCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UqReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crs: Option<CrsResult>,
    /// Explicit markers for sections the data cannot support.
    pub insufficient: Vec<String>,
}

/// The full output of a scoring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest: LogManifest,
    pub weights: Weights,
    pub ece_anchor: f64,
    pub models: Vec<ModelReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityReport>,
    pub warnings: Vec<ConsistencyWarning>,
}

fn score_model(
    records: &[PredictionRecord],
    model_id: &str,
    settings: &PillarSettings,
    config: &RunConfig,
) -> Result<ModelReport> {
    let mut insufficient = Vec::new();

    // calibration section with the full per-dataset breakdown
    let clean_units = clean_eval_units(records, model_id);
    let calibration = if clean_units.is_empty() {
        insufficient.push("calibration: no clean eval records".into());
        None
    } else {
        let (temperature, isotonic) = fit_c_source(records, model_id, settings.c_source)?;
        let mut per_dataset = BTreeMap::new();
        let (mut ece_sum, mut brier_sum, mut nll_sum, mut pillar_sum) = (0.0, 0.0, 0.0, 0.0);
        for unit in &clean_units {
            let report = calibration_report(unit, settings.num_bins, settings.epsilon)?;
            ece_sum += report.ece;
            brier_sum += report.brier;
            nll_sum += report.nll;
            let mapped = apply_c_source(unit, &temperature, &isotonic);
            pillar_sum += compute_ece(&mapped, settings.num_bins)?.0;
            per_dataset.insert(unit.dataset_id().to_string(), report);
        }
        let n = clean_units.len() as f64;
        Some(ModelCalibration {
            per_dataset,
            avg_ece: ece_sum / n,
            avg_brier: brier_sum / n,
            avg_nll: nll_sum / n,
            c_source: settings.c_source,
            pillar_ece: pillar_sum / n,
            temperature,
            isotonic,
        })
    };

    let cells = robustness_cells(records, model_id);
    let robustness = if cells.is_empty() {
        insufficient.push("robustness: no (clean, perturbed) dataset pairs".into());
        None
    } else {
        match robustness_score(&cells) {
            Ok(b) => Some(b),
            Err(e) => {
                insufficient.push(format!("robustness: {e}"));
                None
            }
        }
    };

    let unit_refs: Vec<&EvaluationUnit> = clean_units.iter().collect();
    let uncertainty = match model_uq_report(&unit_refs) {
        Ok(report) => Some(report),
        Err(e) => {
            insufficient.push(format!("uncertainty: {e}"));
            None
        }
    };

    let crs = match (&calibration, &robustness, &uncertainty) {
        (Some(cal), Some(rob), Some(uq)) => {
            let pillars = PillarScores {
                c: normalize_c(cal.pillar_ece, settings.ece_anchor)?,
                r: rob.r_score,
                u: uq.u_score,
            };
            let mut result = compose_crs(model_id, pillars, &config.weights);
            if let Some(bootstrap) = &config.bootstrap {
                let summary =
                    bootstrap_crs(records, &config.weights, settings, bootstrap.n, bootstrap.seed)?;
                result.ci_low = Some(summary.ci_low);
                result.ci_high = Some(summary.ci_high);
                result.bootstrap_std = Some(summary.std);
            }
            Some(result)
        }
        _ => {
            insufficient.push("composite: missing pillar inputs".into());
            None
        }
    };

    Ok(ModelReport {
        model_id: model_id.to_string(),
        calibration,
        robustness,
        uncertainty,
        crs,
        insufficient,
    })
}

/// Runs the whole pipeline over validated, merged records.
pub fn score_run(records: &[PredictionRecord], config: &RunConfig) -> Result<RunReport> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records ingested".into()));
    }
    config.validate()?;
    let manifest = build_manifest(records);
    let settings = settings_for_run(records, config)?;

    let by_model: Vec<(String, Vec<PredictionRecord>)> = model_ids(records)
        .into_iter()
        .map(|model_id| {
            let recs = records
                .iter()
                .filter(|r| r.model_id == model_id)
                .cloned()
                .collect();
            (model_id, recs)
        })
        .collect();

    let models: Vec<ModelReport> = by_model
        .par_iter()
        .map(|(model_id, recs)| score_model(recs, model_id, &settings, config))
        .collect::<Result<Vec<_>>>()?;

    // sensitivity analyses run when the data supports them
    let scored: Vec<(String, PillarScores)> = models
        .iter()
        .filter_map(|m| m.crs.as_ref().map(|c| (m.model_id.clone(), c.pillars)))
        .collect();
    let sweep = if scored.len() >= 2 {
        weight_sensitivity(&scored, &config.sweep_weightings()).ok()
    } else {
        None
    };
    let loo = if manifest.datasets.len() >= 2 && !scored.is_empty() {
        leave_one_out(records, &config.weights, &settings).ok()
    } else {
        None
    };
    let sensitivity = match (sweep, loo) {
        (Some(a), Some(b)) => Some(a.merge(b)),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };

    let mut warnings = Vec::new();
    for model in &models {
        if let (Some(crs), Some(&supplied)) = (
            model.crs.as_ref(),
            config.expected_crs.get(&model.model_id),
        ) {
            if (round_display(crs.crs, 2) - supplied).abs() > 0.005 {
                warnings.push(ConsistencyWarning {
                    model_id: model.model_id.clone(),
                    supplied,
                    recomputed: crs.crs,
                });
            }
        }
    }

    Ok(RunReport {
        manifest,
        weights: config.weights,
        ece_anchor: settings.ece_anchor,
        models,
        sensitivity,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::SampleSource;
    use approx::assert_abs_diff_eq;

    fn record(
        item: usize,
        dataset: &str,
        model: &str,
        condition: Condition,
        confidence: f64,
        correct: bool,
        with_samples: bool,
    ) -> PredictionRecord {
        let samples = with_samples.then(|| {
            let v = if correct { 0.01 } else { 0.09 } + 1e-4 * (item % 7) as f64;
            let d = v.sqrt();
            vec![0.5 - d, 0.5 + d]
        });
        PredictionRecord {
            item_id: format!("q{item:04}"),
            dataset_id: dataset.into(),
            model_id: model.into(),
            condition,
            split: Split::Eval,
            confidence,
            correct,
            samples,
            sample_source: samples_source(with_samples),
        }
    }

    fn samples_source(with: bool) -> Option<SampleSource> {
        with.then_some(SampleSource::Ensemble)
    }

    /// 20-item cells: clean accuracy 0.8, perturbed 0.7, confidence 0.85.
    fn small_run(model: &str, datasets: &[&str]) -> Vec<PredictionRecord> {
        let mut records = Vec::new();
        for dataset in datasets {
            for i in 0..20 {
                records.push(record(
                    i,
                    dataset,
                    model,
                    Condition::Clean,
                    0.85,
                    i < 16,
                    true,
                ));
                records.push(record(
                    i,
                    dataset,
                    model,
                    Condition::Typo,
                    0.85,
                    i < 14,
                    false,
                ));
            }
        }
        records
    }

    #[test]
    fn score_run_produces_complete_model_report() {
        let records = small_run("m1", &["d1", "d2"]);
        let report = score_run(&records, &RunConfig::default()).unwrap();
        assert_eq!(report.models.len(), 1);
        let model = &report.models[0];
        assert!(model.calibration.is_some());
        assert!(model.robustness.is_some());
        assert!(model.uncertainty.is_some());
        let crs = model.crs.as_ref().unwrap();
        // clean acc 0.8, drop 0.1 -> R = 1 - 0.1/0.8
        assert_abs_diff_eq!(crs.pillars.r, 0.875, epsilon = 1e-12);
        // disjoint variance ranges -> perfect AUROC -> U = 1
        assert_abs_diff_eq!(crs.pillars.u, 1.0, epsilon = 1e-12);
        // single model: auto anchor equals its own ECE -> C = 0
        assert_abs_diff_eq!(crs.pillars.c, 0.0, epsilon = 1e-12);
        // leave-one-out ran (2 datasets), weight sweep did not (1 model)
        let sensitivity = report.sensitivity.as_ref().unwrap();
        assert_eq!(sensitivity.leave_one_out.len(), 2);
        assert!(sensitivity.weightings.is_empty());
    }

    #[test]
    fn missing_sections_get_markers() {
        // clean-only data: robustness impossible, uncertainty absent
        let records: Vec<PredictionRecord> = (0..10)
            .map(|i| record(i, "d1", "m1", Condition::Clean, 0.7, i < 7, false))
            .collect();
        let report = score_run(&records, &RunConfig::default()).unwrap();
        let model = &report.models[0];
        assert!(model.crs.is_none());
        assert!(model.insufficient.iter().any(|s| s.contains("robustness")));
        assert!(model.insufficient.iter().any(|s| s.contains("uncertainty")));
        assert!(model.insufficient.iter().any(|s| s.contains("composite")));
    }

    #[test]
    fn c_source_without_validation_is_config_error() {
        let records = small_run("m1", &["d1"]);
        let config = RunConfig {
            c_source: CSource::Temperature,
            ..RunConfig::default()
        };
        let err = score_run(&records, &config).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn expected_crs_mismatch_warns() {
        let records = small_run("m1", &["d1"]);
        let mut config = RunConfig::default();
        config.expected_crs.insert("m1".into(), 0.99);
        let report = score_run(&records, &config).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].model_id, "m1");
        assert_abs_diff_eq!(report.warnings[0].supplied, 0.99);
    }

    #[test]
    fn fixed_anchor_feeds_calibration_pillar() {
        let records = small_run("m1", &["d1"]);
        let config = RunConfig {
            ece_anchor: EceAnchor::Fixed(0.2),
            ..RunConfig::default()
        };
        let report = score_run(&records, &config).unwrap();
        let crs = report.models[0].crs.as_ref().unwrap();
        // per-dataset ECE = |0.85 - 0.8| = 0.05; C = 1 - 0.05/0.2
        assert_abs_diff_eq!(crs.pillars.c, 0.75, epsilon = 1e-9);
    }
}
