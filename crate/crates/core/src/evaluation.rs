//! Detection metrics and the bootstrap protocol.
//!
//! AUROC uses the Mann–Whitney convention: the probability that a random
//! member outscores a random non-member, with ties worth one half.
//! TPR at a target FPR is conservative: the best TPR over thresholds whose
//! empirical FPR does not exceed the target, with no interpolation.
//!
//! # Bootstrap generator
//!
//! Replicate `r` draws its indices from ChaCha8 seeded with
//! `seed_from_u64(seed)` on stream `r`; each index is the high 64 bits of
//! `next_u64() * n`. Replicates are therefore independent of how they are
//! scheduled, and the whole report is a pure function of `(inputs, n, seed)`.
//! Replicates holding a single class are discarded; `n_valid` counts the
//! rest and is the denominator for every bootstrap statistic.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::records::ScoredSample;

/// The low-FPR operating point reported alongside AUROC.
pub const DEFAULT_TARGET_FPR: f64 = 0.005;

/// Samples sorted by descending score, keeping their original indices so
/// bootstrap multiplicities can be applied without re-sorting.
#[derive(Debug, Clone)]
struct Ranked {
    order: Vec<usize>,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

/// Counts from one pass over the ranked samples.
#[derive(Debug, Clone)]
struct Sweep {
    positives: u64,
    negatives: u64,
    /// Twice the number of (member, non-member) pairs won, ties counting 1.
    twice_wins: u128,
    /// Cumulative (fp, tp) after each distinct-score group, highest first.
    steps: Vec<(u64, u64)>,
}

impl Ranked {
    fn new(samples: &[ScoredSample]) -> Self {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[b].score.total_cmp(&samples[a].score).then(a.cmp(&b)));
        let scores = order.iter().map(|&i| samples[i].score).collect();
        let labels = order.iter().map(|&i| samples[i].label).collect();
        Ranked { order, scores, labels }
    }

    /// Sweeps thresholds from high to low. `weight(i)` is the multiplicity
    /// of original sample `i` (1 for the plain metric).
    fn sweep(&self, weight: impl Fn(usize) -> u64, keep_steps: bool) -> Sweep {
        let (mut positives, mut negatives) = (0u64, 0u64);
        for (k, &i) in self.order.iter().enumerate() {
            if self.labels[k] {
                positives += weight(i);
            } else {
                negatives += weight(i);
            }
        }

        let mut steps = Vec::new();
        let (mut fp, mut tp) = (0u64, 0u64);
        let mut twice_wins = 0u128;
        let n = self.order.len();
        let mut start = 0;
        while start < n {
            let mut end = start;
            let (mut gp, mut gn) = (0u64, 0u64);
            while end < n && self.scores[end] == self.scores[start] {
                let w = weight(self.order[end]);
                if self.labels[end] {
                    gp += w;
                } else {
                    gn += w;
                }
                end += 1;
            }
            let below = negatives - fp - gn;
            twice_wins += 2 * gp as u128 * below as u128 + gp as u128 * gn as u128;
            fp += gn;
            tp += gp;
            if keep_steps && (gp > 0 || gn > 0) {
                steps.push((fp, tp));
            }
            start = end;
        }
        Sweep {
            positives,
            negatives,
            twice_wins,
            steps,
        }
    }
}

impl Sweep {
    fn is_two_class(&self) -> bool {
        self.positives > 0 && self.negatives > 0
    }

    fn auroc(&self) -> f64 {
        self.twice_wins as f64 / (2.0 * self.positives as f64 * self.negatives as f64)
    }

    fn tpr_at(&self, target_fpr: f64) -> f64 {
        let (p, n) = (self.positives as f64, self.negatives as f64);
        self.steps
            .iter()
            .filter(|&&(fp, _)| fp as f64 / n <= target_fpr)
            .map(|&(_, tp)| tp as f64 / p)
            .fold(0.0, f64::max)
    }

    fn points(&self) -> Vec<(f64, f64)> {
        let (p, n) = (self.positives as f64, self.negatives as f64);
        std::iter::once((0.0, 0.0))
            .chain(self.steps.iter().map(|&(fp, tp)| (fp as f64 / n, tp as f64 / p)))
            .collect()
    }
}

fn class_counts(samples: &[ScoredSample]) -> (usize, usize) {
    let members = samples.iter().filter(|s| s.label).count();
    (members, samples.len() - members)
}

fn require_two_classes(samples: &[ScoredSample]) -> Result<()> {
    match class_counts(samples) {
        (0, nonmembers) => Err(Error::SingleClass { members: 0, nonmembers }),
        (members, 0) => Err(Error::SingleClass { members, nonmembers: 0 }),
        _ => Ok(()),
    }
}

fn check_target_fpr(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("target FPR must be in (0, 1), got {f}")))
    }
}

fn plain_sweep(samples: &[ScoredSample], keep_steps: bool) -> Result<Sweep> {
    require_two_classes(samples)?;
    Ok(Ranked::new(samples).sweep(|_| 1, keep_steps))
}

pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    Ok(plain_sweep(samples, false)?.auroc())
}

/// Empirical ROC curve from `(0, 0)` to `(1, 1)`, one point per distinct
/// score threshold, as `(fpr, tpr)`.
pub fn roc_points(samples: &[ScoredSample]) -> Result<Vec<(f64, f64)>> {
    Ok(plain_sweep(samples, true)?.points())
}

pub fn tpr_at_fpr(samples: &[ScoredSample], target_fpr: f64) -> Result<f64> {
    check_target_fpr(target_fpr)?;
    Ok(plain_sweep(samples, true)?.tpr_at(target_fpr))
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Summary of one metric over the valid bootstrap replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Nearest-rank 2.5th percentile.
    pub ci_low: f64,
    /// Nearest-rank 97.5th percentile.
    pub ci_high: f64,
}

impl MetricSummary {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        MetricSummary {
            mean,
            std: var.sqrt(),
            ci_low: nearest_rank(&sorted, 2.5),
            ci_high: nearest_rank(&sorted, 97.5),
        }
    }
}

/// Nearest-rank percentile of an ascending, non-empty slice.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_replicates: usize,
    pub n_valid: usize,
    pub seed: u64,
    pub auroc: MetricSummary,
    pub tpr_at_fpr: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub tpr_at_fpr: f64,
    pub target_fpr: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
}

impl EvalReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let pct = self.target_fpr * 100.0;
        let _ = writeln!(out, "members      {}", self.n_members);
        let _ = writeln!(out, "non-members  {}", self.n_nonmembers);
        match &self.bootstrap {
            None => {
                let _ = writeln!(out, "AUROC        {:.4}", self.auroc);
                let _ = writeln!(out, "TPR@{pct}%FPR  {:.4}", self.tpr_at_fpr);
            }
            Some(b) => {
                let _ = writeln!(
                    out,
                    "bootstrap    {} replicates ({} valid), seed {}",
                    b.n_replicates, b.n_valid, b.seed
                );
                let _ = writeln!(out, "metric          point    mean     std      95% CI");
                for (name, point, m) in [
                    ("AUROC", self.auroc, &b.auroc),
                    ("TPR@FPR", self.tpr_at_fpr, &b.tpr_at_fpr),
                ] {
                    let _ = writeln!(
                        out,
                        "{name:<14}  {point:.4}   {:.4}   {:.4}   [{:.4}, {:.4}]",
                        m.mean, m.std, m.ci_low, m.ci_high
                    );
                }
            }
        }
        out
    }
}

/// Point metrics without resampling.
pub fn evaluate(samples: &[ScoredSample], target_fpr: f64) -> Result<EvalReport> {
    check_target_fpr(target_fpr)?;
    let sweep = plain_sweep(samples, true)?;
    let (n_members, n_nonmembers) = class_counts(samples);
    Ok(EvalReport {
        auroc: sweep.auroc(),
        tpr_at_fpr: sweep.tpr_at(target_fpr),
        target_fpr,
        n_members,
        n_nonmembers,
        bootstrap: None,
    })
}

/// Indices drawn with replacement for replicate `replicate`.
pub fn bootstrap_indices(seed: u64, replicate: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    (0..n)
        .map(|_| ((rng.next_u64() as u128 * n as u128) >> 64) as usize)
        .collect()
}

fn multiplicities(seed: u64, replicate: u64, n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    for i in bootstrap_indices(seed, replicate, n) {
        counts[i] += 1;
    }
    counts
}

fn check_replicates(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::Parameter("bootstrap needs at least one replicate".into()))
    } else {
        Ok(())
    }
}

/// Point metrics plus bootstrap mean, std and 95% percentile intervals.
pub fn bootstrap_eval(
    samples: &[ScoredSample],
    n_replicates: usize,
    seed: u64,
    target_fpr: f64,
    exec: Execution,
) -> Result<EvalReport> {
    check_replicates(n_replicates)?;
    let mut report = evaluate(samples, target_fpr)?;
    let ranked = Ranked::new(samples);
    let per_replicate = exec.map_range(n_replicates, |r| {
        let counts = multiplicities(seed, r as u64, samples.len());
        let sweep = ranked.sweep(|i| counts[i], true);
        sweep
            .is_two_class()
            .then(|| (sweep.auroc(), sweep.tpr_at(target_fpr)))
    });
    let (aurocs, tprs): (Vec<f64>, Vec<f64>) = per_replicate.into_iter().flatten().unzip();
    if aurocs.is_empty() {
        return Err(Error::NoValidReplicates(n_replicates));
    }
    report.bootstrap = Some(BootstrapSummary {
        n_replicates,
        n_valid: aurocs.len(),
        seed,
        auroc: MetricSummary::from_values(&aurocs),
        tpr_at_fpr: MetricSummary::from_values(&tprs),
    });
    Ok(report)
}

/// Outcome of the paired bootstrap test of `AUROC_a > AUROC_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub auroc_a: f64,
    pub auroc_b: f64,
    pub n_replicates: usize,
    pub n_valid: usize,
    pub seed: u64,
    /// Mean of `AUROC_a - AUROC_b` over valid replicates.
    pub delta_mean: f64,
    pub delta_std: f64,
    pub delta_ci_low: f64,
    pub delta_ci_high: f64,
    /// Fraction of valid replicates with `delta <= 0`.
    pub p_value: f64,
}

impl PairedReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "AUROC a      {:.4}", self.auroc_a);
        let _ = writeln!(out, "AUROC b      {:.4}", self.auroc_b);
        let _ = writeln!(
            out,
            "bootstrap    {} replicates ({} valid), seed {}",
            self.n_replicates, self.n_valid, self.seed
        );
        let _ = writeln!(
            out,
            "delta        {:.4} ± {:.4}  95% CI [{:.4}, {:.4}]",
            self.delta_mean, self.delta_std, self.delta_ci_low, self.delta_ci_high
        );
        let _ = writeln!(out, "p (a <= b)   {:.4}", self.p_value);
        out
    }
}

/// Reorders `b` to follow `a`'s id order, checking ids and labels agree.
pub fn align_by_id(a: &[ScoredSample], b: &[ScoredSample]) -> Result<Vec<ScoredSample>> {
    if a.len() != b.len() {
        return Err(Error::Join(format!(
            "score sets differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let by_id: HashMap<&str, &ScoredSample> = b.iter().map(|s| (s.id.as_str(), s)).collect();
    if by_id.len() != b.len() {
        return Err(Error::Join("duplicate ids in second score set".into()));
    }
    a.iter()
        .map(|s| {
            let other = by_id
                .get(s.id.as_str())
                .ok_or_else(|| Error::Join(format!("id {:?} missing from second score set", s.id)))?;
            if other.label != s.label {
                return Err(Error::Join(format!("id {:?} has conflicting labels", s.id)));
            }
            Ok((*other).clone())
        })
        .collect()
}

/// Paired bootstrap: both methods are evaluated on the same resampled
/// indices in every replicate.
pub fn paired_bootstrap(
    a: &[ScoredSample],
    b: &[ScoredSample],
    n_replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<PairedReport> {
    check_replicates(n_replicates)?;
    let b = align_by_id(a, b)?;
    let auroc_a = auroc(a)?;
    let auroc_b = auroc(&b)?;
    let (ranked_a, ranked_b) = (Ranked::new(a), Ranked::new(&b));
    let deltas: Vec<f64> = exec
        .map_range(n_replicates, |r| {
            let counts = multiplicities(seed, r as u64, a.len());
            let sa = ranked_a.sweep(|i| counts[i], false);
            sa.is_two_class().then(|| {
                let sb = ranked_b.sweep(|i| counts[i], false);
                sa.auroc() - sb.auroc()
            })
        })
        .into_iter()
        .flatten()
        .collect();
    if deltas.is_empty() {
        return Err(Error::NoValidReplicates(n_replicates));
    }
    let summary = MetricSummary::from_values(&deltas);
    let non_positive = deltas.iter().filter(|&&d| d <= 0.0).count();
    Ok(PairedReport {
        auroc_a,
        auroc_b,
        n_replicates,
        n_valid: deltas.len(),
        seed,
        delta_mean: summary.mean,
        delta_std: summary.std,
        delta_ci_low: summary.ci_low,
        delta_ci_high: summary.ci_high,
        p_value: non_positive as f64 / deltas.len() as f64,
    })
}
