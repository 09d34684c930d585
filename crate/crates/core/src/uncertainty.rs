//! Variance-based uncertainty scores and error-detection AUROC.
//!
//! Each item's uncertainty is the population variance of its per-pass
//! predicted probabilities. AUROC is the probability that a random
//! incorrect item carries higher uncertainty than a random correct one,
//! ties counted half (the rank form of the Mann-Whitney statistic), and
//! normalizes to the U pillar via `(AUROC - 0.5) / 0.5`, clamped at 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::record::{EvaluationUnit, SampleSource};
use crate::{Error, Result};

/// Per-item uncertainty score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub item_id: String,
    pub score: f64,
    pub source: SampleSource,
}

/// AUROC and class counts for one sample source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStat {
    pub auroc: f64,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

/// Error-detection quality per source plus the normalized pillar score.
/// Sources whose AUROC is undefined (single class) are absent from
/// `per_source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqReport {
    pub per_source: BTreeMap<SampleSource, SourceStat>,
    pub best_source: SampleSource,
    pub best_auroc: f64,
    pub u_score: f64,
}

/// Population variance (divide by n) of per-pass probabilities.
pub fn variance_score(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    Ok(samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n)
}

/// Rank-based AUROC over `(uncertainty, incorrect)` pairs: the fraction
/// of (incorrect, correct) pairs where the incorrect item scores higher,
/// ties counted 0.5.
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    let n_incorrect = scores.iter().filter(|(_, inc)| *inc).count();
    let n_correct = scores.len() - n_incorrect;
    if n_incorrect == 0 {
        return Err(Error::DegenerateClasses("correct"));
    }
    if n_correct == 0 {
        return Err(Error::DegenerateClasses("incorrect"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));

    // average ranks over tie runs, then the Mann-Whitney identity
    let mut rank_sum_incorrect = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the average rank
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if scores[idx].1 {
                rank_sum_incorrect += avg_rank;
            }
        }
        i = j;
    }
    let n_inc = n_incorrect as f64;
    let u = rank_sum_incorrect - n_inc * (n_inc + 1.0) / 2.0;
    Ok(u / (n_inc * n_correct as f64))
}

/// Maps AUROC to the U pillar: `(auroc - 0.5) / 0.5`, clamped to [0, 1].
pub fn normalize_u(auroc: f64) -> f64 {
    ((auroc - 0.5) / 0.5).clamp(0.0, 1.0)
}

/// Per-item variance scores of one unit, keyed by source.
pub fn unit_scores(unit: &EvaluationUnit) -> Result<BTreeMap<SampleSource, Vec<(f64, bool)>>> {
    let mut by_source: BTreeMap<SampleSource, Vec<(f64, bool)>> = BTreeMap::new();
    for r in unit.records() {
        if let (Some(samples), Some(source)) = (&r.samples, r.sample_source) {
            let score = variance_score(samples)?;
            by_source.entry(source).or_default().push((score, !r.correct));
        }
    }
    if by_source.is_empty() {
        return Err(Error::InsufficientData(format!(
            "unit {}/{} carries no stochastic samples",
            unit.model_id(),
            unit.dataset_id()
        )));
    }
    Ok(by_source)
}

fn best_of(per_source: &BTreeMap<SampleSource, SourceStat>) -> Result<(SampleSource, f64)> {
    // ties resolve toward ensemble
    let mut best: Option<(SampleSource, f64)> = None;
    for (&source, stat) in per_source {
        best = match best {
            None => Some((source, stat.auroc)),
            Some((_, a)) if stat.auroc > a => Some((source, stat.auroc)),
            Some((_, a)) if stat.auroc == a && source == SampleSource::Ensemble => {
                Some((source, stat.auroc))
            }
            keep => keep,
        };
    }
    best.ok_or(Error::InsufficientData(
        "AUROC undefined for every sample source".into(),
    ))
}

/// Error-detection report for one unit. Callers pass the clean-condition
/// eval unit; sources with a degenerate class are omitted.
pub fn uq_report(unit: &EvaluationUnit) -> Result<UqReport> {
    let by_source = unit_scores(unit)?;
    let mut per_source = BTreeMap::new();
    for (source, scores) in by_source {
        let n_incorrect = scores.iter().filter(|(_, inc)| *inc).count();
        let n_correct = scores.len() - n_incorrect;
        if let Ok(a) = auroc(&scores) {
            per_source.insert(
                source,
                SourceStat {
                    auroc: a,
                    n_correct,
                    n_incorrect,
                },
            );
        }
    }
    let (best_source, best_auroc) = best_of(&per_source)?;
    Ok(UqReport {
        per_source,
        best_source,
        best_auroc,
        u_score: normalize_u(best_auroc),
    })
}

/// Model-level report over several datasets' clean eval units: per-source
/// AUROC is the unweighted mean across units where it is defined, and
/// the best source is chosen on those means.
pub fn model_uq_report(units: &[&EvaluationUnit]) -> Result<UqReport> {
    let mut auroc_sums: BTreeMap<SampleSource, (f64, usize)> = BTreeMap::new();
    let mut counts: BTreeMap<SampleSource, (usize, usize)> = BTreeMap::new();
    let mut any_samples = false;
    for unit in units {
        let Ok(by_source) = unit_scores(unit) else {
            continue;
        };
        any_samples = true;
        for (source, scores) in by_source {
            let n_incorrect = scores.iter().filter(|(_, inc)| *inc).count();
            let n_correct = scores.len() - n_incorrect;
            let c = counts.entry(source).or_insert((0, 0));
            c.0 += n_correct;
            c.1 += n_incorrect;
            if let Ok(a) = auroc(&scores) {
                let s = auroc_sums.entry(source).or_insert((0.0, 0));
                s.0 += a;
                s.1 += 1;
            }
        }
    }
    if !any_samples {
        return Err(Error::InsufficientData(
            "no clean eval records carry stochastic samples".into(),
        ));
    }
    let mut per_source = BTreeMap::new();
    for (source, (sum, n)) in auroc_sums {
        let (n_correct, n_incorrect) = counts[&source];
        per_source.insert(
            source,
            SourceStat {
                auroc: sum / n as f64,
                n_correct,
                n_incorrect,
            },
        );
    }
    let (best_source, best_auroc) = best_of(&per_source)?;
    Ok(UqReport {
        per_source,
        best_source,
        best_auroc,
        u_score: normalize_u(best_auroc),
    })
}
