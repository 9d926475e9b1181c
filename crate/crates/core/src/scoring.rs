//! Membership scores: likelihood baselines and their positionally
//! reweighted variants.
//!
//! Every score is oriented so that higher means more member-like. Weighted
//! variants multiply each token-level term by `w(t)` before aggregating;
//! with `w ≡ 1` they reduce exactly to the unweighted baseline.
//!
//! For the outlier-based scores (Min-k% and Min-k%++) the order of
//! selection and weighting matters. [`SelectionStage::After`] selects the
//! lowest-k% positions from the *unweighted* values and then averages the
//! weighted values at those positions. [`SelectionStage::Before`] weights the
//! whole sequence first and selects among the weighted values.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::records::{ScoredSample, SequenceRecord};
use crate::weights::{entropy_weights_dataset, truncation_prefix, WeightFamily, WeightSpec};

/// Standard deviations below this are clamped when forming z-scores.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Default Min-k% fraction, in percent.
pub const DEFAULT_K_PERCENT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Loss,
    Ref,
    Zlib,
    Lowercase,
    MinK,
    MinKPp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Loss,
        Method::Ref,
        Method::Zlib,
        Method::Lowercase,
        Method::MinK,
        Method::MinKPp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Loss => "loss",
            Method::Ref => "ref",
            Method::Zlib => "zlib",
            Method::Lowercase => "lowercase",
            Method::MinK => "min_k",
            Method::MinKPp => "min_k_pp",
        }
    }

    /// Whether positional weights can be applied to this method.
    pub fn supports_weights(self) -> bool {
        !matches!(self, Method::Zlib | Method::Lowercase)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| {
                format!("unknown method {s:?} (expected loss, ref, zlib, lowercase, min_k, min_k_pp)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStage {
    #[default]
    After,
    Before,
}

impl FromStr for SelectionStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "after" => Ok(SelectionStage::After),
            "before" => Ok(SelectionStage::Before),
            _ => Err(format!("unknown selection stage {s:?} (expected after, before)")),
        }
    }
}

/// A base method plus optional reweighting and truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub method: Method,
    pub k_percent: f64,
    pub weights: Option<WeightSpec>,
    pub selection_stage: SelectionStage,
    pub truncation_rho: Option<f64>,
}

impl ScoreSpec {
    pub fn new(method: Method) -> Self {
        ScoreSpec {
            method,
            k_percent: DEFAULT_K_PERCENT,
            weights: None,
            selection_stage: SelectionStage::After,
            truncation_rho: None,
        }
    }

    pub fn with_weights(mut self, weights: WeightSpec) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_k(mut self, k_percent: f64) -> Self {
        self.k_percent = k_percent;
        self
    }

    pub fn with_stage(mut self, stage: SelectionStage) -> Self {
        self.selection_stage = stage;
        self
    }

    pub fn with_truncation(mut self, rho: f64) -> Self {
        self.truncation_rho = Some(rho);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            return Err(Error::Parameter(format!(
                "k must be in (0, 100], got {}",
                self.k_percent
            )));
        }
        if let Some(w) = &self.weights {
            if !self.method.supports_weights() {
                return Err(Error::Parameter(format!(
                    "positional weights are defined for loss, ref, min_k and min_k_pp only; \
                     {} has no token-level decomposition to reweight",
                    self.method
                )));
            }
            w.validate()?;
        }
        if let Some(rho) = self.truncation_rho {
            truncation_prefix(rho, 1)?;
        }
        Ok(())
    }
}

/// Corpus-level state some weight families need.
#[derive(Debug, Clone, Default)]
pub struct ScoringContext {
    pub dataset_entropy_weights: Option<Vec<f64>>,
}

impl ScoringContext {
    /// Precomputes whatever `spec` needs from the whole corpus.
    pub fn for_corpus(spec: &ScoreSpec, records: &[SequenceRecord]) -> Result<Self> {
        let needs_dataset = spec
            .weights
            .as_ref()
            .is_some_and(|w| w.family == WeightFamily::EntropyDataset);
        if !needs_dataset {
            return Ok(Self::default());
        }
        let t_max = records.iter().map(SequenceRecord::len).max().unwrap_or(0);
        Ok(ScoringContext {
            dataset_entropy_weights: Some(entropy_weights_dataset(records, t_max)?),
        })
    }
}

fn check_weights(record: &SequenceRecord, w: Option<&[f64]>) -> Result<()> {
    match w {
        Some(w) if w.len() != record.len() => Err(Error::LengthMismatch(format!(
            "record {:?} has {} tokens but {} weights",
            record.id,
            record.len(),
            w.len()
        ))),
        _ => Ok(()),
    }
}

fn weighted_mean(values: impl Iterator<Item = f64>, w: Option<&[f64]>, t: usize) -> f64 {
    let sum: f64 = match w {
        Some(w) => values.zip(w).map(|(x, &wt)| wt * x).sum(),
        None => values.sum(),
    };
    sum / t as f64
}

/// Mean (optionally weighted) token log-probability.
pub fn score_loss(record: &SequenceRecord, w: Option<&[f64]>) -> Result<f64> {
    check_weights(record, w)?;
    Ok(weighted_mean(record.logp.iter().copied(), w, record.len()))
}

/// Mean (optionally weighted) target-minus-reference log-probability.
pub fn score_ref(record: &SequenceRecord, w: Option<&[f64]>) -> Result<f64> {
    check_weights(record, w)?;
    let reference = record.logp_ref.as_deref().ok_or_else(|| Error::MissingField {
        id: record.id.clone(),
        field: "logp_ref",
        reason: "reference statistics required",
    })?;
    let diffs = record.logp.iter().zip(reference).map(|(a, b)| a - b);
    Ok(weighted_mean(diffs, w, record.len()))
}

/// Total log-likelihood per compressed byte.
pub fn score_zlib(record: &SequenceRecord) -> Result<f64> {
    let zlib_len = record.zlib_len.ok_or_else(|| Error::MissingField {
        id: record.id.clone(),
        field: "zlib_len",
        reason: "compressed length required",
    })?;
    Ok(record.logp.iter().sum::<f64>() / zlib_len as f64)
}

/// Mean log-probability minus the lowercased text's mean log-probability.
pub fn score_lowercase(record: &SequenceRecord) -> Result<f64> {
    let lower = record.mean_logp_lower.ok_or_else(|| Error::MissingField {
        id: record.id.clone(),
        field: "mean_logp_lower",
        reason: "lowercase statistics required",
    })?;
    Ok(score_loss(record, None)? - lower)
}

/// Per-position `(logp - mu) / max(sigma, SIGMA_FLOOR)`.
pub fn zscores(record: &SequenceRecord) -> Result<Vec<f64>> {
    let missing = |field| Error::MissingField {
        id: record.id.clone(),
        field,
        reason: "next-token distribution statistics required",
    };
    let mu = record.mu.as_deref().ok_or_else(|| missing("mu"))?;
    let sigma = record.sigma.as_deref().ok_or_else(|| missing("sigma"))?;
    Ok(record
        .logp
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&lp, &m), &s)| (lp - m) / s.max(SIGMA_FLOOR))
        .collect())
}

/// Number of positions Min-k% keeps: `max(1, floor(k/100 * T))`.
pub fn min_k_count(k_percent: f64, t: usize) -> usize {
    // k * T / 100 rather than (k / 100) * T: 29 * 100 / 100 is exact,
    // 0.29 * 100 is not.
    ((k_percent * t as f64 / 100.0).floor() as usize).clamp(1, t.max(1))
}

/// Zero-based positions of the `min_k_count` smallest values, ties going
/// to the earlier position, returned in ascending order.
pub fn select_min_k(values: &[f64], k_percent: f64) -> Vec<usize> {
    if values.is_empty() {
        return Vec::new();
    }
    let m = min_k_count(k_percent, values.len());
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let by_value = |&a: &usize, &b: &usize| values[a].total_cmp(&values[b]).then(a.cmp(&b));
    if m < idx.len() {
        idx.select_nth_unstable_by(m, by_value);
        idx.truncate(m);
    }
    idx.sort_unstable();
    idx
}

/// Positions Min-k% averages over. `After` ignores `w`; `Before` ranks
/// the weighted values.
pub fn min_k_selection(
    values: &[f64],
    k_percent: f64,
    w: Option<&[f64]>,
    stage: SelectionStage,
) -> Vec<usize> {
    match (stage, w) {
        (SelectionStage::Before, Some(w)) => {
            let weighted: Vec<f64> = values.iter().zip(w).map(|(x, wt)| wt * x).collect();
            select_min_k(&weighted, k_percent)
        }
        _ => select_min_k(values, k_percent),
    }
}

/// Min-k% aggregation over arbitrary token values (log-probs or z-scores).
pub fn min_k_aggregate(
    values: &[f64],
    k_percent: f64,
    w: Option<&[f64]>,
    stage: SelectionStage,
) -> f64 {
    let weighted: Cow<[f64]> = match w {
        Some(w) => Cow::Owned(values.iter().zip(w).map(|(x, wt)| wt * x).collect()),
        None => Cow::Borrowed(values),
    };
    let selected = match stage {
        SelectionStage::After => select_min_k(values, k_percent),
        SelectionStage::Before => select_min_k(&weighted, k_percent),
    };
    let sum: f64 = selected.iter().map(|&i| weighted[i]).sum();
    sum / selected.len() as f64
}

pub fn score_min_k(
    record: &SequenceRecord,
    k_percent: f64,
    w: Option<&[f64]>,
    stage: SelectionStage,
) -> Result<f64> {
    check_weights(record, w)?;
    Ok(min_k_aggregate(&record.logp, k_percent, w, stage))
}

pub fn score_min_k_pp(
    record: &SequenceRecord,
    k_percent: f64,
    w: Option<&[f64]>,
    stage: SelectionStage,
) -> Result<f64> {
    check_weights(record, w)?;
    let z = zscores(record)?;
    Ok(min_k_aggregate(&z, k_percent, w, stage))
}

/// Raw score value for `record` under `spec`.
pub fn score_value(spec: &ScoreSpec, record: &SequenceRecord, ctx: &ScoringContext) -> Result<f64> {
    spec.validate()?;
    let record: Cow<SequenceRecord> = match spec.truncation_rho {
        Some(rho) => {
            let len = truncation_prefix(rho, record.len())?;
            if len < record.len() {
                Cow::Owned(record.truncated(len))
            } else {
                Cow::Borrowed(record)
            }
        }
        None => Cow::Borrowed(record),
    };
    let weights = spec
        .weights
        .as_ref()
        .map(|ws| ws.weights_for(&record, ctx.dataset_entropy_weights.as_deref()))
        .transpose()?;
    let w = weights.as_deref();
    match spec.method {
        Method::Loss => score_loss(&record, w),
        Method::Ref => score_ref(&record, w),
        Method::Zlib => score_zlib(&record),
        Method::Lowercase => score_lowercase(&record),
        Method::MinK => score_min_k(&record, spec.k_percent, w, spec.selection_stage),
        Method::MinKPp => score_min_k_pp(&record, spec.k_percent, w, spec.selection_stage),
    }
}

/// Scores one record.
pub fn score(spec: &ScoreSpec, record: &SequenceRecord, ctx: &ScoringContext) -> Result<ScoredSample> {
    let value = score_value(spec, record, ctx)?;
    Ok(ScoredSample::new(record.id.clone(), record.label, value))
}

/// Score under the original model minus score under a model fine-tuned on
/// non-members. `base` and `finetuned` describe the same text.
pub fn fsd_score(
    base: &SequenceRecord,
    finetuned: &SequenceRecord,
    spec: &ScoreSpec,
    ctx: &ScoringContext,
) -> Result<f64> {
    if base.id != finetuned.id {
        return Err(Error::Join(format!(
            "base record {:?} paired with fine-tuned record {:?}",
            base.id, finetuned.id
        )));
    }
    if base.len() != finetuned.len() {
        return Err(Error::LengthMismatch(format!(
            "record {:?} has {} tokens under the base model but {} under the fine-tuned model",
            base.id,
            base.len(),
            finetuned.len()
        )));
    }
    Ok(score_value(spec, base, ctx)? - score_value(spec, finetuned, ctx)?)
}

/// Scores a corpus in input order.
pub fn score_corpus(
    spec: &ScoreSpec,
    records: &[SequenceRecord],
    ctx: &ScoringContext,
    exec: Execution,
) -> Result<Vec<ScoredSample>> {
    spec.validate()?;
    exec.try_map(records, |r| score(spec, r, ctx))
}

/// FSD scores for every record of `base`, joined by id against `finetuned`.
pub fn fsd_corpus(
    spec: &ScoreSpec,
    base: &[SequenceRecord],
    finetuned: &[SequenceRecord],
    ctx: &ScoringContext,
    exec: Execution,
) -> Result<Vec<ScoredSample>> {
    spec.validate()?;
    let by_id: std::collections::HashMap<&str, &SequenceRecord> =
        finetuned.iter().map(|r| (r.id.as_str(), r)).collect();
    exec.try_map(base, |r| {
        let ft = by_id.get(r.id.as_str()).ok_or_else(|| {
            Error::Join(format!("record {:?} missing from the fine-tuned corpus", r.id))
        })?;
        Ok(ScoredSample::new(r.id.clone(), r.label, fsd_score(r, ft, spec, ctx)?))
    })
}
