//! Positional weight vectors.
//!
//! The three decay families all start at `w(1) = 1` and decrease with
//! position `t = 1..=T`:
//!
//! | family      | `w(t)`                         | valid `alpha` |
//! |-------------|--------------------------------|---------------|
//! | linear      | `1 - alpha * (t-1)/(T-1)`      | `[0, 1]`      |
//! | exponential | `exp(-alpha * (t-1))`          | `>= 0`        |
//! | polynomial  | `(1 - (t-1)/(T-1))^alpha`      | `> 0`         |
//!
//! For `T = 1` every family yields `[1]`.
//!
//! Besides the decay families this module builds the ablation variants:
//! reversed and randomly permuted orderings, entropy-derived weights, the
//! loss-slope decay parameter, and truncation prefix lengths.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::records::SequenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFamily {
    Constant,
    Linear,
    Exponential,
    Polynomial,
    /// `entropy(t) / max entropy` of the record being scored.
    EntropySample,
    /// Position-wise mean entropy over a corpus, normalized by its maximum.
    EntropyDataset,
}

impl WeightFamily {
    pub fn is_decay(self) -> bool {
        matches!(
            self,
            WeightFamily::Constant
                | WeightFamily::Linear
                | WeightFamily::Exponential
                | WeightFamily::Polynomial
        )
    }

    /// Rejects `alpha` outside the family's domain.
    pub fn check_alpha(self, alpha: f64) -> Result<()> {
        let ok = match self {
            WeightFamily::Linear => (0.0..=1.0).contains(&alpha),
            WeightFamily::Exponential => alpha.is_finite() && alpha >= 0.0,
            WeightFamily::Polynomial => alpha.is_finite() && alpha > 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            let range = match self {
                WeightFamily::Linear => "0 ≤ alpha ≤ 1",
                WeightFamily::Exponential => "alpha ≥ 0",
                _ => "alpha > 0",
            };
            Err(Error::Parameter(format!(
                "{self:?} decay requires {range}, got {alpha}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightOrder {
    #[default]
    Forward,
    Reverse,
    /// A per-sample permutation seeded from `(ordering_seed, sample id)`.
    Random,
}

impl WeightFamily {
    pub const ALL: [WeightFamily; 6] = [
        WeightFamily::Constant,
        WeightFamily::Linear,
        WeightFamily::Exponential,
        WeightFamily::Polynomial,
        WeightFamily::EntropySample,
        WeightFamily::EntropyDataset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightFamily::Constant => "constant",
            WeightFamily::Linear => "linear",
            WeightFamily::Exponential => "exponential",
            WeightFamily::Polynomial => "polynomial",
            WeightFamily::EntropySample => "entropy_sample",
            WeightFamily::EntropyDataset => "entropy_dataset",
        }
    }

    /// Decay parameter grid used for sensitivity sweeps.
    pub fn default_alpha_grid(self) -> &'static [f64] {
        match self {
            WeightFamily::Linear => &[0.1, 0.3, 0.5, 0.7, 1.0],
            WeightFamily::Exponential => &[0.002, 0.004, 0.006, 0.008, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1],
            WeightFamily::Polynomial => &[0.1, 0.3, 0.5, 0.7, 1.0, 1.2, 1.5, 1.8, 2.0],
            _ => &[0.0],
        }
    }
}

impl fmt::Display for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.replace('-', "_");
        WeightFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown weight family {s:?} (expected constant, linear, exponential, \
                     polynomial, entropy_sample, entropy_dataset)"
                )
            })
    }
}

impl FromStr for WeightOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forward" => Ok(WeightOrder::Forward),
            "reverse" => Ok(WeightOrder::Reverse),
            "random" => Ok(WeightOrder::Random),
            _ => Err(format!("unknown ordering {s:?} (expected forward, reverse, random)")),
        }
    }
}

/// Fully determines the weight vector for any record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub family: WeightFamily,
    pub alpha: f64,
    pub ordering: WeightOrder,
    pub ordering_seed: u64,
    /// Replace `alpha` per record by the least-squares slope of its token
    /// losses. Only meaningful for the linear family; the slope is used
    /// as-is, so negative slopes give increasing weights.
    pub alpha_from_slope: bool,
}

impl WeightSpec {
    pub fn new(family: WeightFamily, alpha: f64) -> Self {
        WeightSpec {
            family,
            alpha,
            ordering: WeightOrder::Forward,
            ordering_seed: 0,
            alpha_from_slope: false,
        }
    }

    pub fn constant() -> Self {
        Self::new(WeightFamily::Constant, 0.0)
    }

    pub fn linear(alpha: f64) -> Self {
        Self::new(WeightFamily::Linear, alpha)
    }

    pub fn exponential(alpha: f64) -> Self {
        Self::new(WeightFamily::Exponential, alpha)
    }

    pub fn polynomial(alpha: f64) -> Self {
        Self::new(WeightFamily::Polynomial, alpha)
    }

    pub fn with_ordering(mut self, ordering: WeightOrder, seed: u64) -> Self {
        self.ordering = ordering;
        self.ordering_seed = seed;
        self
    }

    pub fn with_slope_alpha(mut self) -> Self {
        self.alpha_from_slope = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_from_slope {
            if self.family != WeightFamily::Linear {
                return Err(Error::Parameter(format!(
                    "slope-derived alpha is only defined for linear decay, not {:?}",
                    self.family
                )));
            }
            return Ok(());
        }
        self.family.check_alpha(self.alpha)
    }

    /// Builds the weight vector for `record`.
    ///
    /// `dataset` supplies the corpus-level entropy weights required by
    /// [`WeightFamily::EntropyDataset`]; it must cover the record's length.
    pub fn weights_for(&self, record: &SequenceRecord, dataset: Option<&[f64]>) -> Result<Vec<f64>> {
        self.validate()?;
        let t = record.len();
        let base = match self.family {
            WeightFamily::EntropySample => {
                let entropy = record.entropy.as_deref().ok_or_else(|| Error::MissingField {
                    id: record.id.clone(),
                    field: "entropy",
                    reason: "entropy weights need per-token entropy",
                })?;
                entropy_weights_sample(entropy).map_err(|e| Error::Invalid {
                    id: record.id.clone(),
                    message: e.to_string(),
                })?
            }
            WeightFamily::EntropyDataset => {
                let dataset = dataset.ok_or_else(|| {
                    Error::Parameter("dataset entropy weights were not computed".into())
                })?;
                if dataset.len() < t {
                    return Err(Error::LengthMismatch(format!(
                        "dataset weights cover {} positions, record {:?} has {t}",
                        dataset.len(),
                        record.id
                    )));
                }
                dataset[..t].to_vec()
            }
            WeightFamily::Linear if self.alpha_from_slope => {
                if t < 2 {
                    vec![1.0]
                } else {
                    let losses: Vec<f64> = record.logp.iter().map(|&lp| -lp).collect();
                    linear_decay(camia_slope(&losses)?, t)
                }
            }
            family => decay_weights(family, self.alpha, t)?,
        };
        Ok(apply_ordering(base, self.ordering, self.ordering_seed, &record.id))
    }
}

/// Decay weights of length `t` for one of the decay families.
pub fn decay_weights(family: WeightFamily, alpha: f64, t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::Parameter("weight vector length must be ≥ 1".into()));
    }
    family.check_alpha(alpha)?;
    let w = match family {
        WeightFamily::Constant => vec![1.0; t],
        WeightFamily::Linear => linear_decay(alpha, t),
        WeightFamily::Exponential => (0..t).map(|i| (-alpha * i as f64).exp()).collect(),
        WeightFamily::Polynomial => {
            if t == 1 {
                vec![1.0]
            } else {
                let span = (t - 1) as f64;
                (0..t).map(|i| ((t - 1 - i) as f64 / span).powf(alpha)).collect()
            }
        }
        other => {
            return Err(Error::Parameter(format!(
                "{other:?} weights are data-derived, not a decay family"
            )))
        }
    };
    Ok(w)
}

// No range check: the slope-derived path feeds arbitrary real alphas.
fn linear_decay(alpha: f64, t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![1.0];
    }
    let span = (t - 1) as f64;
    (0..t).map(|i| 1.0 - alpha * (i as f64 / span)).collect()
}

/// Reorders `w`. Random permutations are a pure function of
/// `(seed, sample_id)`, independent of iteration order.
pub fn apply_ordering(mut w: Vec<f64>, ordering: WeightOrder, seed: u64, sample_id: &str) -> Vec<f64> {
    match ordering {
        WeightOrder::Forward => {}
        WeightOrder::Reverse => w.reverse(),
        WeightOrder::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(xxh3_64_with_seed(sample_id.as_bytes(), seed));
            w.shuffle(&mut rng);
        }
    }
    w
}

/// Least-squares slope of per-token losses against position.
pub fn camia_slope(losses: &[f64]) -> Result<f64> {
    let t = losses.len();
    if t < 2 {
        return Err(Error::Parameter(format!(
            "loss slope needs at least 2 tokens, got {t}"
        )));
    }
    let t_bar = (t as f64 + 1.0) / 2.0;
    let l_bar = losses.iter().sum::<f64>() / t as f64;
    let (num, den) = losses
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(num, den), (i, &l)| {
            let dt = (i + 1) as f64 - t_bar;
            (num + dt * (l - l_bar), den + dt * dt)
        });
    Ok(num / den)
}

/// Per-sample entropy weights, `entropy(t) / max entropy`.
pub fn entropy_weights_sample(entropy: &[f64]) -> Result<Vec<f64>> {
    normalize_by_max(entropy)
}

fn normalize_by_max(values: &[f64]) -> Result<Vec<f64>> {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if values.is_empty() || max <= 0.0 || values.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Parameter(
            "entropy weights need non-negative entropies with a positive maximum".into(),
        ));
    }
    Ok(values.iter().map(|&h| h / max).collect())
}

/// Mean entropy at each position over the records reaching it.
///
/// Records without entropy are ignored. Returns `(means, counts)` of
/// length `t_max`; positions no record reaches have count 0 and mean NaN.
pub fn mean_entropy_profile(records: &[SequenceRecord], t_max: usize) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0; t_max];
    let mut counts = vec![0usize; t_max];
    for h in records.iter().filter_map(|r| r.entropy.as_deref()) {
        for (i, &x) in h.iter().take(t_max).enumerate() {
            sums[i] += x;
            counts[i] += 1;
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    (means, counts)
}

/// Corpus-level entropy weights of length `t_max`.
pub fn entropy_weights_dataset(records: &[SequenceRecord], t_max: usize) -> Result<Vec<f64>> {
    if t_max == 0 {
        return Err(Error::Parameter("t_max must be ≥ 1".into()));
    }
    let (means, counts) = mean_entropy_profile(records, t_max);
    if counts[0] == 0 {
        return Err(Error::Parameter("no record carries entropy statistics".into()));
    }
    if let Some(p) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Parameter(format!(
            "no record with entropy reaches position {} (t_max = {t_max})",
            p + 1
        )));
    }
    normalize_by_max(&means)
}

/// Retained prefix length `max(1, ceil(rho * T))`.
pub fn truncation_prefix(rho: f64, t: usize) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Parameter(format!(
            "truncation fraction must be in (0, 1], got {rho}"
        )));
    }
    if t == 0 {
        return Err(Error::Parameter("sequence length must be ≥ 1".into()));
    }
    let exact = rho * t as f64;
    // 0.3 * 10 evaluates to 3.0000000000000004; snap near-integers before ceil.
    let nearest = exact.round();
    let len = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok((len as usize).clamp(1, t))
}
