//! Naive reference implementations and random corpora shared by the
//! integration tests. Everything here is written as plainly as possible,
//! with explicit loops, and never calls the scoring code under test.

#![allow(dead_code)]

use pdr_core::weights::apply_ordering;
use pdr_core::{Method, SelectionStage, SequenceRecord, WeightFamily, WeightOrder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Record with every optional field populated. A third of the records get
/// log-probs rounded to a coarse grid so that ties are common.
pub fn random_record(rng: &mut ChaCha8Rng, id: &str, t: usize) -> SequenceRecord {
    let coarse = rng.random_bool(1.0 / 3.0);
    let draw = |rng: &mut ChaCha8Rng| {
        let x: f64 = -rng.random_range(0.0..12.0);
        if coarse {
            (x * 2.0).round() / 2.0
        } else {
            x
        }
    };
    let logp: Vec<f64> = (0..t).map(|_| draw(rng)).collect();
    let mut r = SequenceRecord::new(id, rng.random_bool(0.5), logp);
    r.logp_ref = Some((0..t).map(|_| draw(rng)).collect());
    r.mu = Some((0..t).map(|_| -rng.random_range(0.0..8.0)).collect());
    // sigma stays away from the 1e-12 floor: z-scores near 1e12 have an
    // ulp far above any absolute tolerance
    r.sigma = Some((0..t).map(|_| rng.random_range(0.01..3.0)).collect());
    r.entropy = Some((0..t).map(|_| rng.random_range(0.05..7.0)).collect());
    r.mean_logp_lower = Some(-rng.random_range(0.0..10.0));
    r.byte_len = Some(rng.random_range(1..4000));
    r.zlib_len = Some(rng.random_range(1..2000));
    r
}

pub fn random_corpus(seed: u64, n: usize, t_range: std::ops::RangeInclusive<usize>) -> Vec<SequenceRecord> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let t = rng.random_range(t_range.clone());
            random_record(&mut rng, &format!("r{i}"), t)
        })
        .collect()
}

pub fn naive_decay(family: WeightFamily, alpha: f64, t: usize) -> Vec<f64> {
    let mut w = Vec::new();
    for pos in 1..=t {
        let frac = if t == 1 {
            0.0
        } else {
            (pos - 1) as f64 / (t - 1) as f64
        };
        let v = match family {
            WeightFamily::Constant => 1.0,
            WeightFamily::Linear => 1.0 - alpha * frac,
            WeightFamily::Exponential => (-alpha * (pos - 1) as f64).exp(),
            WeightFamily::Polynomial => (1.0 - frac).powf(alpha),
            other => panic!("{other:?} is not a decay family"),
        };
        w.push(v);
    }
    w
}

/// Slope via the textbook normal-equation form.
pub fn naive_slope(losses: &[f64]) -> f64 {
    let n = losses.len() as f64;
    let (mut st, mut sl, mut stt, mut stl) = (0.0, 0.0, 0.0, 0.0);
    for (i, &l) in losses.iter().enumerate() {
        let t = (i + 1) as f64;
        st += t;
        sl += l;
        stt += t * t;
        stl += t * l;
    }
    (n * stl - st * sl) / (n * stt - st * st)
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let mut max = 0.0;
    for &x in v {
        if x > max {
            max = x;
        }
    }
    v.iter().map(|x| x / max).collect()
}

pub fn naive_dataset_entropy(records: &[SequenceRecord]) -> Vec<f64> {
    let t_max = records.iter().map(|r| r.logp.len()).max().unwrap();
    let mut means = Vec::new();
    for pos in 0..t_max {
        let (mut sum, mut count) = (0.0, 0.0);
        for r in records {
            if let Some(h) = &r.entropy {
                if pos < h.len() {
                    sum += h[pos];
                    count += 1.0;
                }
            }
        }
        means.push(sum / count);
    }
    normalize(&means)
}

/// Selection by explicit rank counting. `k` is an integer percentage.
pub fn naive_select(values: &[f64], k: usize) -> Vec<usize> {
    let t = values.len();
    let m = (k * t / 100).max(1);
    let mut out = Vec::new();
    for i in 0..t {
        let mut rank = 0;
        for j in 0..t {
            if values[j] < values[i] || (values[j] == values[i] && j < i) {
                rank += 1;
            }
        }
        if rank < m {
            out.push(i);
        }
    }
    out
}

pub fn naive_prefix(rho: f64, t: usize) -> usize {
    let target = rho * t as f64;
    let mut n = 1;
    while (n as f64) < target - 1e-9 {
        n += 1;
    }
    n
}

#[derive(Debug, Clone)]
pub struct NaiveWeights {
    pub family: WeightFamily,
    pub alpha: f64,
    pub ordering: WeightOrder,
    pub seed: u64,
    pub from_slope: bool,
}

#[derive(Debug, Clone)]
pub struct NaiveSpec {
    pub method: Method,
    pub k: usize,
    pub stage: SelectionStage,
    pub weights: Option<NaiveWeights>,
    pub rho: Option<f64>,
}

fn prefix(v: &[f64], n: usize) -> Vec<f64> {
    v[..n].to_vec()
}

fn naive_weight_vector(nw: &NaiveWeights, logp: &[f64], entropy: &[f64], dataset: &[f64], id: &str) -> Vec<f64> {
    let t = logp.len();
    let base = match nw.family {
        WeightFamily::EntropySample => normalize(entropy),
        WeightFamily::EntropyDataset => dataset[..t].to_vec(),
        WeightFamily::Linear if nw.from_slope => {
            if t == 1 {
                vec![1.0]
            } else {
                let losses: Vec<f64> = logp.iter().map(|x| -x).collect();
                naive_decay(WeightFamily::Linear, naive_slope(&losses), t)
            }
        }
        f => naive_decay(f, nw.alpha, t),
    };
    match nw.ordering {
        WeightOrder::Forward => base,
        WeightOrder::Reverse => base.into_iter().rev().collect(),
        WeightOrder::Random => {
            // the permutation itself comes from the library; the oracle
            // only checks that it is applied consistently
            let perm = apply_ordering((0..t).map(|i| i as f64).collect(), WeightOrder::Random, nw.seed, id);
            perm.iter().map(|&i| base[i as usize]).collect()
        }
    }
}

fn mean_weighted(values: &[f64], w: Option<&[f64]>) -> f64 {
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += w.map_or(1.0, |w| w[i]) * values[i];
    }
    sum / values.len() as f64
}

fn naive_min_k(values: &[f64], k: usize, w: Option<&[f64]>, stage: SelectionStage) -> f64 {
    let weighted: Vec<f64> = (0..values.len()).map(|i| w.map_or(1.0, |w| w[i]) * values[i]).collect();
    let sel = match stage {
        SelectionStage::After => naive_select(values, k),
        SelectionStage::Before => naive_select(&weighted, k),
    };
    let mut sum = 0.0;
    for &i in &sel {
        sum += weighted[i];
    }
    sum / sel.len() as f64
}

pub fn naive_score(spec: &NaiveSpec, r: &SequenceRecord, dataset: &[f64]) -> f64 {
    let t_full = r.logp.len();
    let n = spec.rho.map_or(t_full, |rho| naive_prefix(rho, t_full));
    let logp = prefix(&r.logp, n);
    let entropy = r.entropy.as_deref().map(|e| prefix(e, n)).unwrap_or_default();
    let w = spec
        .weights
        .as_ref()
        .map(|nw| naive_weight_vector(nw, &logp, &entropy, dataset, &r.id));
    let w = w.as_deref();
    match spec.method {
        Method::Loss => mean_weighted(&logp, w),
        Method::Ref => {
            let reference = prefix(r.logp_ref.as_ref().unwrap(), n);
            let diff: Vec<f64> = (0..n).map(|i| logp[i] - reference[i]).collect();
            mean_weighted(&diff, w)
        }
        Method::Zlib => {
            let mut sum = 0.0;
            for x in &logp {
                sum += x;
            }
            sum / r.zlib_len.unwrap() as f64
        }
        Method::Lowercase => mean_weighted(&logp, None) - r.mean_logp_lower.unwrap(),
        Method::MinK => naive_min_k(&logp, spec.k, w, spec.stage),
        Method::MinKPp => {
            let mu = r.mu.as_ref().unwrap();
            let sigma = r.sigma.as_ref().unwrap();
            let z: Vec<f64> = (0..n)
                .map(|i| {
                    let s = if sigma[i] > 1e-12 { sigma[i] } else { 1e-12 };
                    (logp[i] - mu[i]) / s
                })
                .collect();
            naive_min_k(&z, spec.k, w, spec.stage)
        }
    }
}

/// AUROC by counting every member/non-member pair, ties worth one half.
pub fn naive_auroc(samples: &[pdr_core::ScoredSample]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for a in samples.iter().filter(|s| s.label) {
        for b in samples.iter().filter(|s| !s.label) {
            pairs += 1.0;
            if a.score > b.score {
                wins += 1.0;
            } else if a.score == b.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
