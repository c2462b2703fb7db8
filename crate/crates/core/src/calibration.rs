//! ROC analysis and threshold selection for pair verification.
//!
//! AUC is the Mann-Whitney statistic: the fraction of (positive, negative)
//! score pairs ordered correctly, ties counting one half. The trapezoidal
//! area under [`compute_roc`] gives the same number by a different route.
//!
//! A pair is declared kin when `score >= threshold`. Thresholds are chosen
//! among the observed scores plus `max + 1` (the "admit nothing" threshold).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding_store::KinType;
use crate::pair_sampler::PairSet;
use crate::{Error, Result};

/// Key used in reports for pairs without a kin type.
pub const UNTYPED_KEY: &str = "ALL";

fn check_finite(scores: impl IntoIterator<Item = f64>) -> Result<()> {
    if scores.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFiniteScore)
    }
}

fn check_rate(target: f64) -> Result<()> {
    if (0.0..=1.0).contains(&target) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("target rate must be in [0, 1], got {target}")))
    }
}

fn split_labels(scores: &[(f64, bool)]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_finite(scores.iter().map(|s| s.0))?;
    let (pos, neg): (Vec<&(f64, bool)>, Vec<_>) = scores.iter().partition(|s| s.1);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos.into_iter().map(|s| s.0).collect(), neg.into_iter().map(|s| s.0).collect()))
}

/// Tie-aware Mann-Whitney AUC over `(score, is_kin)` pairs.
pub fn compute_auc(scores: &[(f64, bool)]) -> Result<f64> {
    let (pos, mut neg) = split_labels(scores)?;
    neg.sort_by(f64::total_cmp);
    // Twice the U statistic keeps every tie contribution integral.
    let twice_u: u64 = pos
        .iter()
        .map(|&p| {
            let below = neg.partition_point(|&n| n < p) as u64;
            let at_or_below = neg.partition_point(|&n| n <= p) as u64;
            below + at_or_below
        })
        .sum();
    Ok(twice_u as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve with one point per distinct score, preceded by `(0, 0)` at
/// threshold `max + 1`. The area is the trapezoidal rule over the points.
pub fn compute_roc(scores: &[(f64, bool)]) -> Result<RocCurve> {
    let (pos, neg) = split_labels(scores)?;
    let (np, nn) = (pos.len() as u64, neg.len() as u64);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: sorted[0].0 + 1.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        let (prev_tp, prev_fp) = (tp, fp);
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - prev_fp) * (tp + prev_tp);
        points.push(RocPoint {
            fpr: fp as f64 / nn as f64,
            tpr: tp as f64 / np as f64,
            threshold,
        });
    }
    Ok(RocCurve {
        points,
        auc: twice_area as f64 / (2.0 * np as f64 * nn as f64),
    })
}

/// CSV with header `fpr,tpr,threshold` and a trailing `# auc=<value>` line.
pub fn write_roc_to<W: Write>(curve: &RocCurve, mut out: W) -> std::io::Result<()> {
    writeln!(out, "fpr,tpr,threshold")?;
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
    }
    writeln!(out, "# auc={}", curve.auc)?;
    out.flush()
}

pub fn write_roc(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_roc_to(curve, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Distinct scores in descending order, each with the number of scores at
/// or above it.
fn descending_levels(scores: &[f64]) -> Vec<(f64, usize)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut levels: Vec<(f64, usize)> = Vec::new();
    for (i, &s) in sorted.iter().enumerate() {
        match levels.last_mut() {
            Some(last) if last.0 == s => last.1 = i + 1,
            _ => levels.push((s, i + 1)),
        }
    }
    levels
}

/// Smallest candidate threshold whose false positive rate on `negatives`
/// does not exceed `target_fpr`.
pub fn threshold_at_fpr(negatives: &[f64], target_fpr: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::EmptyScores);
    }
    check_finite(negatives.iter().copied())?;
    check_rate(target_fpr)?;
    let levels = descending_levels(negatives);
    let n = negatives.len() as f64;
    let mut best = levels[0].0 + 1.0;
    for (score, count) in levels {
        if count as f64 / n <= target_fpr {
            best = score;
        } else {
            break;
        }
    }
    Ok(best)
}

/// Largest candidate threshold whose true positive rate on `positives`
/// reaches `target_tpr`.
pub fn threshold_at_tpr(positives: &[f64], target_tpr: f64) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptyScores);
    }
    check_finite(positives.iter().copied())?;
    check_rate(target_tpr)?;
    let levels = descending_levels(positives);
    if target_tpr <= 0.0 {
        return Ok(levels[0].0 + 1.0);
    }
    let n = positives.len() as f64;
    let (score, _) = levels
        .into_iter()
        .find(|&(_, count)| count as f64 / n >= target_tpr)
        .expect("the lowest level admits every positive");
    Ok(score)
}

/// Global threshold with optional per-kin-type overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    #[serde(rename = "default")]
    pub default_threshold: f64,
    #[serde(default)]
    pub per_type: BTreeMap<KinType, f64>,
}

impl ThresholdPolicy {
    pub fn global(threshold: f64) -> Self {
        Self {
            default_threshold: threshold,
            per_type: BTreeMap::new(),
        }
    }

    pub fn threshold_for(&self, kin_type: Option<KinType>) -> f64 {
        kin_type
            .and_then(|k| self.per_type.get(&k).copied())
            .unwrap_or(self.default_threshold)
    }

    pub fn decide(&self, score: f64, kin_type: Option<KinType>) -> bool {
        score >= self.threshold_for(kin_type)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            detail: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("policy serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypedScore {
    pub score: f64,
    pub kin: bool,
    pub kin_type: Option<KinType>,
}

/// Default minimum number of negatives a kin type needs for its own threshold.
pub const DEFAULT_MIN_COUNT: usize = 30;

/// Global FPR threshold over all negatives, plus an override for every kin
/// type with at least `min_count` negatives.
pub fn per_type_thresholds(
    scores: &[TypedScore],
    target_fpr: f64,
    min_count: usize,
) -> Result<ThresholdPolicy> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let negatives: Vec<f64> = scores.iter().filter(|s| !s.kin).map(|s| s.score).collect();
    let mut policy = ThresholdPolicy::global(threshold_at_fpr(&negatives, target_fpr)?);

    let mut by_type: BTreeMap<KinType, Vec<f64>> = BTreeMap::new();
    for s in scores.iter().filter(|s| !s.kin) {
        if let Some(k) = s.kin_type {
            by_type.entry(k).or_default().push(s.score);
        }
    }
    for (k, negs) in by_type {
        if negs.len() >= min_count.max(1) {
            policy.per_type.insert(k, threshold_at_fpr(&negs, target_fpr)?);
        }
    }
    Ok(policy)
}

/// Accuracy per kin type and overall, in the shape of a results-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub by_type: BTreeMap<String, f64>,
    /// Correct decisions over all pairs.
    pub average: f64,
    /// Unweighted mean of the per-type accuracies.
    pub macro_average: f64,
    pub counts: BTreeMap<String, usize>,
}

pub fn evaluate_verification(
    pairs: &PairSet,
    scores: &[f64],
    policy: &ThresholdPolicy,
) -> Result<VerificationReport> {
    if pairs.len() != scores.len() {
        return Err(Error::LengthMismatch {
            left: pairs.len(),
            right: scores.len(),
        });
    }
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, &s) in pairs.pairs.iter().zip(scores) {
        let key = p.kin_type.map_or(UNTYPED_KEY, KinType::as_str).to_string();
        let correct = policy.decide(s, p.kin_type) == p.label.is_kin();
        let entry = tally.entry(key).or_default();
        entry.0 += usize::from(correct);
        entry.1 += 1;
    }
    let total_correct: usize = tally.values().map(|t| t.0).sum();
    let by_type: BTreeMap<String, f64> = tally
        .iter()
        .map(|(k, &(c, n))| (k.clone(), c as f64 / n as f64))
        .collect();
    let macro_average = if by_type.is_empty() {
        0.0
    } else {
        by_type.values().sum::<f64>() / by_type.len() as f64
    };
    Ok(VerificationReport {
        average: if pairs.is_empty() {
            0.0
        } else {
            total_correct as f64 / pairs.len() as f64
        },
        macro_average,
        counts: tally.into_iter().map(|(k, (_, n))| (k, n)).collect(),
        by_type,
    })
}
