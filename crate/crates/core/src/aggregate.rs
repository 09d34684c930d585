//! Pillar normalization, composite scoring, and sensitivity analyses.
//!
//! The composite score is `alpha*C + beta*R + gamma*U` with weights
//! summing to one. Tiers: >= 0.8 high, [0.6, 0.8) moderate, < 0.6 low,
//! assigned on the full-precision score; display rounding never affects
//! ranking or tiers.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{complete_pillars, model_pillar_outcomes, PillarSettings};
use crate::record::{Condition, PredictionRecord, Split};
use crate::rng::derive_rng;
use crate::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Pillar weights, non-negative and summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct Weights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

#[derive(Deserialize)]
struct RawWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl TryFrom<RawWeights> for Weights {
    type Error = Error;

    fn try_from(raw: RawWeights) -> Result<Self> {
        Weights::new(raw.alpha, raw.beta, raw.gamma)
    }
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, w) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "{name} must be a non-negative real, got {w}"
                )));
            }
        }
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "alpha + beta + gamma must equal 1, got {sum}"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Equal weights of one third each.
    pub fn balanced() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2}, {:.2})", self.alpha, self.beta, self.gamma)
    }
}

/// Normalized pillar scores, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PillarScores {
    pub c: f64,
    pub r: f64,
    pub u: f64,
}

/// Reliability tier assigned from the composite score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Moderate,
    Low,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::High => "high",
            Tier::Moderate => "moderate",
            Tier::Low => "low",
        })
    }
}

/// Composite score for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrsResult {
    pub model_id: String,
    pub weights: Weights,
    pub pillars: PillarScores,
    pub crs: f64,
    pub tier: Tier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_std: Option<f64>,
}

/// Calibration pillar: `max(0, 1 - ece / ece_max)`.
pub fn normalize_c(ece_model: f64, ece_max: f64) -> Result<f64> {
    if !(ece_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ECE anchor must be positive, got {ece_max}"
        )));
    }
    if ece_model < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "ECE must be non-negative, got {ece_model}"
        )));
    }
    Ok((1.0 - ece_model / ece_max).max(0.0))
}

/// Lower edges are inclusive: 0.8 is high and 0.6 is moderate.
pub fn assign_tier(crs: f64) -> Tier {
    if crs >= 0.8 {
        Tier::High
    } else if crs >= 0.6 {
        Tier::Moderate
    } else {
        Tier::Low
    }
}

/// Weighted pillar combination with tier assignment. The stored score
/// keeps full precision; rounding happens only at display time.
pub fn compose_crs(model_id: &str, pillars: PillarScores, weights: &Weights) -> CrsResult {
    let crs = weights.alpha * pillars.c + weights.beta * pillars.r + weights.gamma * pillars.u;
    CrsResult {
        model_id: model_id.to_string(),
        weights: *weights,
        pillars,
        crs,
        tier: assign_tier(crs),
        ci_low: None,
        ci_high: None,
        bootstrap_std: None,
    }
}

/// Rounds for table display (`decimals` fractional digits).
pub fn round_display(x: f64, decimals: u32) -> f64 {
    let scale = 10_f64.powi(decimals as i32);
    (x * scale).round() / scale
}

/// A pillar-table row: externally supplied per-model pillar scores with
/// an optional stated composite for cross-checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PillarRow {
    pub model_id: String,
    pub c: f64,
    pub r: f64,
    pub u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crs: Option<f64>,
}

/// Emitted when a supplied composite disagrees with the recomputed one
/// beyond display rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyWarning {
    pub model_id: String,
    pub supplied: f64,
    pub recomputed: f64,
}

impl fmt::Display for ConsistencyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model {}: supplied composite {:.2} disagrees with recomputed {:.4}",
            self.model_id, self.supplied, self.recomputed
        )
    }
}

/// Reads a line-delimited pillar table; lines starting with `#` are
/// skipped.
pub fn read_pillar_table(path: &Path) -> Result<Vec<PillarRow>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let row: PillarRow = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        for (name, v) in [("c", row.c), ("r", row.r), ("u", row.u)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: format!("field `{name}`: {v} is outside [0, 1]"),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Composes every row and cross-checks supplied composites. Results are
/// ordered by descending score, ties broken by model id.
pub fn compose_table(
    rows: &[PillarRow],
    weights: &Weights,
) -> (Vec<CrsResult>, Vec<ConsistencyWarning>) {
    let mut results: Vec<CrsResult> = rows
        .iter()
        .map(|row| {
            compose_crs(
                &row.model_id,
                PillarScores {
                    c: row.c,
                    r: row.r,
                    u: row.u,
                },
                weights,
            )
        })
        .collect();
    let mut warnings = Vec::new();
    for row in rows {
        if let Some(supplied) = row.crs {
            let recomputed = results
                .iter()
                .find(|r| r.model_id == row.model_id)
                .expect("row was just composed")
                .crs;
            if (round_display(recomputed, 2) - supplied).abs() > 0.005 {
                warnings.push(ConsistencyWarning {
                    model_id: row.model_id.clone(),
                    supplied,
                    recomputed,
                });
            }
        }
    }
    sort_ranking(&mut results);
    (results, warnings)
}

fn sort_ranking(results: &mut [CrsResult]) {
    results.sort_by(|a, b| {
        b.crs
            .total_cmp(&a.crs)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
}

/// One model's position under one weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub model_id: String,
    pub crs: f64,
    pub tier: Tier,
}

/// Full ranking under one weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingRanking {
    pub weights: Weights,
    pub ranking: Vec<RankedModel>,
}

/// A model whose tier moved when a dataset was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierChange {
    pub model_id: String,
    pub dataset_removed: String,
    pub from: Tier,
    pub to: Tier,
}

/// Weight-sweep and leave-one-dataset-out results. Either half may be
/// empty depending on which analyses ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub weightings: Vec<WeightingRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_rank_invariant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottom_rank_invariant: Option<bool>,
    /// dataset removed -> model -> |CRS deviation from the full run|
    pub leave_one_out: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_deviation: Option<f64>,
    pub tier_changes: Vec<TierChange>,
}

impl SensitivityReport {
    /// Combines a weight-sweep half with a leave-one-out half.
    pub fn merge(mut self, other: SensitivityReport) -> SensitivityReport {
        if self.weightings.is_empty() {
            self.weightings = other.weightings;
            self.top_rank_invariant = other.top_rank_invariant;
            self.bottom_rank_invariant = other.bottom_rank_invariant;
        }
        if self.leave_one_out.is_empty() {
            self.leave_one_out = other.leave_one_out;
            self.avg_deviation = other.avg_deviation;
            self.max_deviation = other.max_deviation;
            self.tier_changes = other.tier_changes;
        }
        self
    }
}

/// Ranks every model under each weighting and records whether the top
/// and bottom positions hold across all of them.
pub fn weight_sensitivity(
    pillars: &[(String, PillarScores)],
    weightings: &[Weights],
) -> Result<SensitivityReport> {
    if pillars.len() < 2 {
        return Err(Error::InsufficientData(
            "weight sensitivity needs at least 2 models".into(),
        ));
    }
    if weightings.is_empty() {
        return Err(Error::InsufficientData(
            "weight sensitivity needs at least one weighting".into(),
        ));
    }
    let mut rankings = Vec::with_capacity(weightings.len());
    for weights in weightings {
        let mut results: Vec<CrsResult> = pillars
            .iter()
            .map(|(model_id, p)| compose_crs(model_id, *p, weights))
            .collect();
        sort_ranking(&mut results);
        rankings.push(WeightingRanking {
            weights: *weights,
            ranking: results
                .into_iter()
                .map(|r| RankedModel {
                    model_id: r.model_id,
                    crs: r.crs,
                    tier: r.tier,
                })
                .collect(),
        });
    }
    let top = &rankings[0].ranking.first().expect(">=2 models").model_id;
    let bottom = &rankings[0].ranking.last().expect(">=2 models").model_id;
    let top_rank_invariant = rankings
        .iter()
        .all(|w| &w.ranking.first().expect(">=2 models").model_id == top);
    let bottom_rank_invariant = rankings
        .iter()
        .all(|w| &w.ranking.last().expect(">=2 models").model_id == bottom);
    Ok(SensitivityReport {
        weightings: rankings,
        top_rank_invariant: Some(top_rank_invariant),
        bottom_rank_invariant: Some(bottom_rank_invariant),
        ..SensitivityReport::default()
    })
}

/// Bootstrap distribution summary for one model's composite score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_resamples: usize,
    /// Pillar evaluations that fell back to the point estimate because a
    /// resample was degenerate (e.g. a single AUROC class).
    pub degenerate_fallbacks: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Resamples one model's eval items with replacement within each
/// `(dataset, condition)` cell and recomputes all pillars per resample.
/// Validation records pass through unchanged. Resample `i` draws from an
/// independent stream derived from `(seed, i)`, so parallel and serial
/// execution agree bit for bit.
pub fn bootstrap_crs(
    records: &[PredictionRecord],
    weights: &Weights,
    settings: &PillarSettings,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if n_resamples == 0 {
        return Err(Error::InvalidParameter(
            "bootstrap needs at least one resample".into(),
        ));
    }
    let point = model_pillar_outcomes(records, settings)?;
    let (Some(point_c), Some(point_r), Some(point_u)) = (point.c, point.r, point.u) else {
        return Err(Error::InsufficientData(
            "bootstrap requires a complete point estimate for all three pillars".into(),
        ));
    };

    let mut cells: BTreeMap<(String, Condition), Vec<&PredictionRecord>> = BTreeMap::new();
    let mut validation: Vec<PredictionRecord> = Vec::new();
    for r in records {
        if r.split == Split::Validation {
            validation.push(r.clone());
        } else {
            cells
                .entry((r.dataset_id.clone(), r.condition))
                .or_default()
                .push(r);
        }
    }

    let draws: Vec<(f64, usize)> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "bootstrap", i as u64);
            let mut resampled: Vec<PredictionRecord> = Vec::with_capacity(records.len());
            for members in cells.values() {
                for _ in 0..members.len() {
                    let pick = rng.random_range(0..members.len());
                    resampled.push(members[pick].clone());
                }
            }
            resampled.extend(validation.iter().cloned());
            let mut fallbacks = 0;
            let outcome = model_pillar_outcomes(&resampled, settings);
            let (c, r, u) = match outcome {
                Ok(o) => {
                    let c = o.c.unwrap_or_else(|| {
                        fallbacks += 1;
                        point_c
                    });
                    let r = o.r.unwrap_or_else(|| {
                        fallbacks += 1;
                        point_r
                    });
                    let u = o.u.unwrap_or_else(|| {
                        fallbacks += 1;
                        point_u
                    });
                    (c, r, u)
                }
                Err(_) => {
                    fallbacks += 3;
                    (point_c, point_r, point_u)
                }
            };
            let crs = weights.alpha * c + weights.beta * r + weights.gamma * u;
            (crs, fallbacks)
        })
        .collect();

    let values: Vec<f64> = draws.iter().map(|(v, _)| *v).collect();
    let degenerate_fallbacks = draws.iter().map(|(_, f)| f).sum();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        mean,
        std,
        ci_low: percentile(&sorted, 0.025),
        ci_high: percentile(&sorted, 0.975),
        n_resamples,
        degenerate_fallbacks,
    })
}

/// Recomputes every model's composite with each dataset excluded in turn
/// and reports absolute deviations from the full-data score plus any
/// tier changes.
pub fn leave_one_out(
    records: &[PredictionRecord],
    weights: &Weights,
    settings: &PillarSettings,
) -> Result<SensitivityReport> {
    let mut datasets: Vec<String> = records.iter().map(|r| r.dataset_id.clone()).collect();
    datasets.sort();
    datasets.dedup();
    if datasets.len() < 2 {
        return Err(Error::InsufficientData(
            "leave-one-out needs at least 2 datasets".into(),
        ));
    }

    let full = complete_pillars(records, settings)?;
    let full_crs: BTreeMap<String, f64> = full
        .iter()
        .map(|(m, p)| (m.clone(), compose_crs(m, *p, weights).crs))
        .collect();

    let folds: Vec<(String, BTreeMap<String, f64>)> = datasets
        .par_iter()
        .map(|dataset| {
            let subset: Vec<PredictionRecord> = records
                .iter()
                .filter(|r| &r.dataset_id != dataset)
                .cloned()
                .collect();
            let crs = match complete_pillars(&subset, settings) {
                Ok(pillars) => pillars
                    .iter()
                    .map(|(m, p)| (m.clone(), compose_crs(m, *p, weights).crs))
                    .collect(),
                Err(_) => BTreeMap::new(),
            };
            (dataset.clone(), crs)
        })
        .collect();

    let mut leave_one_out = BTreeMap::new();
    let mut tier_changes = Vec::new();
    let mut deviations = Vec::new();
    for (dataset, fold_crs) in folds {
        let mut per_model = BTreeMap::new();
        for (model, crs) in &fold_crs {
            if let Some(full_value) = full_crs.get(model) {
                let dev = (crs - full_value).abs();
                deviations.push(dev);
                per_model.insert(model.clone(), dev);
                let (from, to) = (assign_tier(*full_value), assign_tier(*crs));
                if from != to {
                    tier_changes.push(TierChange {
                        model_id: model.clone(),
                        dataset_removed: dataset.clone(),
                        from,
                        to,
                    });
                }
            }
        }
        leave_one_out.insert(dataset, per_model);
    }

    let (avg_deviation, max_deviation) = if deviations.is_empty() {
        (None, None)
    } else {
        let avg = deviations.iter().sum::<f64>() / deviations.len() as f64;
        let max = deviations.iter().cloned().fold(0.0, f64::max);
        (Some(avg), Some(max))
    };
    Ok(SensitivityReport {
        leave_one_out,
        avg_deviation,
        max_deviation,
        tier_changes,
        ..SensitivityReport::default()
    })
}
