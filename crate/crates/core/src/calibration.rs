//! Calibration metrics and post-hoc calibration maps.
//!
//! ECE uses equal-width bins over [0, 1]: bin `k` covers
//! `[k/B, (k+1)/B)` with the last bin closed at 1.0. Temperature scaling
//! divides the confidence logit by a scalar fit with golden-section
//! search on `ln T ∈ [-5, 5]` minimizing validation NLL. Isotonic
//! regression is a pool-adjacent-violators fit of correctness against
//! confidence, applied as a right-continuous step function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::record::{
    filter_split, group_records, Condition, EvaluationUnit, PredictionRecord, Split,
};
use crate::{Error, Result};

/// Default bin count for ECE and reliability diagrams.
pub const DEFAULT_NUM_BINS: usize = 10;

/// Default clamp applied to confidences before logs and logits.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// One reliability-diagram bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Calibration metrics for one evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub brier: f64,
    pub nll: f64,
    pub bins: Vec<BinStat>,
    pub n: usize,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn clamp_prob(p: f64, epsilon: f64) -> f64 {
    p.clamp(epsilon, 1.0 - epsilon)
}

// ln(1 + e^x) without overflow for large x.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn check_num_bins(num_bins: usize) -> Result<()> {
    if num_bins == 0 {
        return Err(Error::InvalidParameter("num_bins must be at least 1".into()));
    }
    Ok(())
}

fn bin_index(confidence: f64, num_bins: usize) -> usize {
    ((confidence * num_bins as f64) as usize).min(num_bins - 1)
}

/// Expected calibration error with the per-bin breakdown. Empty bins
/// contribute zero and are reported with zeroed statistics.
pub fn compute_ece(unit: &EvaluationUnit, num_bins: usize) -> Result<(f64, Vec<BinStat>)> {
    check_num_bins(num_bins)?;
    let n = unit.len() as f64;
    let mut conf_sum = vec![0.0; num_bins];
    let mut correct_sum = vec![0usize; num_bins];
    let mut count = vec![0usize; num_bins];
    for r in unit.records() {
        let b = bin_index(r.confidence, num_bins);
        conf_sum[b] += r.confidence;
        correct_sum[b] += usize::from(r.correct);
        count[b] += 1;
    }
    let mut ece = 0.0;
    let mut bins = Vec::with_capacity(num_bins);
    for b in 0..num_bins {
        let lower = b as f64 / num_bins as f64;
        let upper = (b + 1) as f64 / num_bins as f64;
        let (mean_confidence, accuracy) = if count[b] > 0 {
            let c = count[b] as f64;
            (conf_sum[b] / c, correct_sum[b] as f64 / c)
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            ece += count[b] as f64 / n * (mean_confidence - accuracy).abs();
        }
        bins.push(BinStat {
            lower,
            upper,
            count: count[b],
            mean_confidence,
            accuracy,
        });
    }
    Ok((ece, bins))
}

/// Mean squared error between confidence and 0/1 correctness.
pub fn compute_brier(unit: &EvaluationUnit) -> f64 {
    let sum: f64 = unit
        .records()
        .iter()
        .map(|r| {
            let target = if r.correct { 1.0 } else { 0.0 };
            (r.confidence - target).powi(2)
        })
        .sum();
    sum / unit.len() as f64
}

/// Mean negative log-likelihood of the correctness outcome, with
/// confidences clamped to `[epsilon, 1 - epsilon]`.
pub fn compute_nll(unit: &EvaluationUnit, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 0.5), got {epsilon}"
        )));
    }
    let sum: f64 = unit
        .records()
        .iter()
        .map(|r| {
            let p = clamp_prob(r.confidence, epsilon);
            if r.correct {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / unit.len() as f64)
}

/// ECE, Brier, and NLL together with the bin table.
pub fn calibration_report(
    unit: &EvaluationUnit,
    num_bins: usize,
    epsilon: f64,
) -> Result<CalibrationReport> {
    let (ece, bins) = compute_ece(unit, num_bins)?;
    Ok(CalibrationReport {
        ece,
        brier: compute_brier(unit),
        nll: compute_nll(unit, epsilon)?,
        bins,
        n: unit.len(),
    })
}

/// Scalar temperature fit on a validation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub temperature: f64,
    pub validation_nll_before: f64,
    pub validation_nll_after: f64,
    /// Set when the fit is not trustworthy: fewer than two validation
    /// records, or the optimum sits on the search boundary.
    pub degenerate: bool,
}

const LN_T_LO: f64 = -5.0;
const LN_T_HI: f64 = 5.0;
const LN_T_TOL: f64 = 1e-4;

/// Fits the temperature minimizing validation NLL of
/// `sigmoid(logit(confidence) / T)` via golden-section search on `ln T`.
pub fn fit_temperature(validation: &EvaluationUnit) -> Result<TemperatureModel> {
    fit_temperature_with(validation, DEFAULT_EPSILON)
}

pub fn fit_temperature_with(validation: &EvaluationUnit, epsilon: f64) -> Result<TemperatureModel> {
    let points: Vec<(f64, bool)> = validation
        .records()
        .iter()
        .map(|r| (logit(clamp_prob(r.confidence, epsilon)), r.correct))
        .collect();
    let n = points.len() as f64;
    // NLL in a numerically stable form: -ln σ(z) = softplus(-z).
    let nll_at = |ln_t: f64| -> f64 {
        let inv_t = (-ln_t).exp();
        let sum: f64 = points
            .iter()
            .map(|&(z, correct)| {
                let scaled = z * inv_t;
                if correct {
                    softplus(-scaled)
                } else {
                    softplus(scaled)
                }
            })
            .sum();
        sum / n
    };

    let ln_t = golden_section_min(nll_at, LN_T_LO, LN_T_HI, LN_T_TOL);
    let before = nll_at(0.0);
    let after = nll_at(ln_t);
    // The search bracket contains T = 1; never return something worse.
    let (temperature, after) = if after <= before {
        (ln_t.exp(), after)
    } else {
        (1.0, before)
    };
    let degenerate = validation.len() < 2
        || ln_t <= LN_T_LO + 1e-2
        || ln_t >= LN_T_HI - 1e-2;
    Ok(TemperatureModel {
        temperature,
        validation_nll_before: before,
        validation_nll_after: after,
        degenerate,
    })
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Rescales one confidence through the fitted temperature. Monotone in
/// the input; `T = 1` is the identity.
pub fn apply_temperature(model: &TemperatureModel, confidence: f64) -> f64 {
    let z = logit(clamp_prob(confidence, DEFAULT_EPSILON));
    sigmoid(z / model.temperature)
}

/// Monotone step calibration map: `breakpoints` ascending, `values`
/// non-decreasing, equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

/// Pool-adjacent-violators fit of 0/1 correctness against confidence.
///
/// Records are sorted by confidence (ties broken by `item_id` for a
/// deterministic walk); records sharing a confidence are merged into one
/// weighted point, so the fit is a function of confidence. Breakpoints
/// are the smallest confidence of each pooled block.
pub fn fit_isotonic(validation: &EvaluationUnit) -> Result<IsotonicModel> {
    let mut sorted: Vec<&PredictionRecord> = validation.records().iter().collect();
    // records() is already item_id-ordered; a stable sort keeps that tie order
    sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));

    // merge duplicate confidences into weighted points
    let mut points: Vec<(f64, f64, f64)> = Vec::new(); // (x, target_sum, weight)
    for r in sorted {
        let y = if r.correct { 1.0 } else { 0.0 };
        match points.last_mut() {
            Some((x, sum, w)) if *x == r.confidence => {
                *sum += y;
                *w += 1.0;
            }
            _ => points.push((r.confidence, y, 1.0)),
        }
    }

    // PAVA: pool while the last two block means violate monotonicity
    let mut blocks: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len()); // (first_x, sum, weight)
    for (x, sum, w) in points {
        blocks.push((x, sum, w));
        while blocks.len() >= 2 {
            let (_, s2, w2) = blocks[blocks.len() - 1];
            let (_, s1, w1) = blocks[blocks.len() - 2];
            if s1 / w1 > s2 / w2 {
                let (x2, s2, w2) = blocks.pop().expect("len checked");
                let last = blocks.last_mut().expect("len checked");
                let _ = x2;
                last.1 += s2;
                last.2 += w2;
            } else {
                break;
            }
        }
    }

    Ok(IsotonicModel {
        breakpoints: blocks.iter().map(|b| b.0).collect(),
        values: blocks.iter().map(|b| b.1 / b.2).collect(),
    })
}

/// Evaluates the step function: the value of the greatest breakpoint at
/// or below the input; inputs below the first breakpoint map to the
/// first value.
pub fn apply_isotonic(model: &IsotonicModel, confidence: f64) -> f64 {
    let idx = model
        .breakpoints
        .partition_point(|bp| *bp <= confidence);
    if idx == 0 {
        model.values[0]
    } else {
        model.values[idx - 1]
    }
}

/// Which post-hoc calibration map to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMethod {
    Temperature,
    Isotonic,
}

impl std::fmt::Display for InterventionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InterventionMethod::Temperature => "temperature",
            InterventionMethod::Isotonic => "isotonic",
        })
    }
}

/// One row of the intervention comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub model_id: String,
    pub ece_before: f64,
    pub ece_after: f64,
}

/// Remaps every confidence in a unit through `map`.
pub fn map_unit(unit: &EvaluationUnit, map: impl Fn(f64) -> f64) -> EvaluationUnit {
    let records = unit
        .records()
        .iter()
        .map(|r| PredictionRecord {
            confidence: map(r.confidence),
            ..r.clone()
        })
        .collect();
    unit.with_records(records)
        .expect("remapping preserves non-emptiness")
}

/// Clean validation records of one model pooled across datasets.
pub(crate) fn pooled_validation(
    records: &[PredictionRecord],
    model_id: &str,
) -> Result<EvaluationUnit> {
    let pooled: Vec<PredictionRecord> = records
        .iter()
        .filter(|r| {
            r.model_id == model_id && r.split == Split::Validation && r.condition == Condition::Clean
        })
        .map(|r| PredictionRecord {
            // keep item ids unique across datasets for the tie order
            item_id: format!("{}/{}", r.dataset_id, r.item_id),
            dataset_id: "pooled".into(),
            ..r.clone()
        })
        .collect();
    if pooled.is_empty() {
        return Err(Error::InsufficientData(format!(
            "model {model_id} has no clean validation records to fit on"
        )));
    }
    EvaluationUnit::new(pooled)
}

/// Mean clean-eval ECE of one model across datasets, before and after an
/// optional confidence remapping.
pub(crate) fn model_avg_ece(
    records: &[PredictionRecord],
    model_id: &str,
    num_bins: usize,
    map: Option<&dyn Fn(f64) -> f64>,
) -> Result<f64> {
    let eval = filter_split(records, Split::Eval);
    let units: Vec<EvaluationUnit> = group_records(&eval)
        .into_iter()
        .filter(|u| u.model_id() == model_id && u.condition() == Condition::Clean)
        .collect();
    if units.is_empty() {
        return Err(Error::InsufficientData(format!(
            "model {model_id} has no clean eval records"
        )));
    }
    let mut sum = 0.0;
    for unit in &units {
        let unit = match map {
            Some(f) => map_unit(unit, f),
            None => unit.clone(),
        };
        sum += compute_ece(&unit, num_bins)?.0;
    }
    Ok(sum / units.len() as f64)
}

/// Fits the given map per model on clean validation records and reports
/// mean clean-eval ECE before and after applying it. Rows are ordered by
/// `model_id`.
pub fn calibration_intervention_report(
    records: &[PredictionRecord],
    method: InterventionMethod,
    num_bins: usize,
) -> Result<Vec<InterventionRow>> {
    let mut models: Vec<String> = records.iter().map(|r| r.model_id.clone()).collect();
    models.sort();
    models.dedup();
    if models.is_empty() {
        return Err(Error::InsufficientData("no records".into()));
    }

    let mut rows = Vec::with_capacity(models.len());
    for model_id in models {
        let validation = pooled_validation(records, &model_id)?;
        let map: Box<dyn Fn(f64) -> f64> = match method {
            InterventionMethod::Temperature => {
                let model = fit_temperature(&validation)?;
                Box::new(move |c| apply_temperature(&model, c))
            }
            InterventionMethod::Isotonic => {
                let model = fit_isotonic(&validation)?;
                Box::new(move |c| apply_isotonic(&model, c))
            }
        };
        let ece_before = model_avg_ece(records, &model_id, num_bins, None)?;
        let ece_after = model_avg_ece(records, &model_id, num_bins, Some(map.as_ref()))?;
        rows.push(InterventionRow {
            model_id,
            ece_before,
            ece_after,
        });
    }
    Ok(rows)
}

/// Grouped validation-fit inputs keyed by model, used by callers that
/// already hold grouped units.
pub fn fit_map(
    validation: &EvaluationUnit,
    method: InterventionMethod,
) -> Result<CalibrationMap> {
    Ok(match method {
        InterventionMethod::Temperature => CalibrationMap::Temperature(fit_temperature(validation)?),
        InterventionMethod::Isotonic => CalibrationMap::Isotonic(fit_isotonic(validation)?),
    })
}

/// A fitted post-hoc calibration map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CalibrationMap {
    Temperature(TemperatureModel),
    Isotonic(IsotonicModel),
}

impl CalibrationMap {
    pub fn apply(&self, confidence: f64) -> f64 {
        match self {
            CalibrationMap::Temperature(m) => apply_temperature(m, confidence),
            CalibrationMap::Isotonic(m) => apply_isotonic(m, confidence),
        }
    }
}

/// CSV rows for the reliability-diagram bin table.
pub fn bins_to_csv(bins: &BTreeMap<String, Vec<BinStat>>) -> String {
    let mut out = String::from("dataset_id,lower,upper,count,mean_confidence,accuracy\n");
    for (dataset, bins) in bins {
        for b in bins {
            out.push_str(&format!(
                "{dataset},{:.6},{:.6},{},{:.6},{:.6}\n",
                b.lower, b.upper, b.count, b.mean_confidence, b.accuracy
            ));
        }
    }
    out
}
