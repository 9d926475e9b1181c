//! Token-statistics data model and its line-delimited file format.
//!
//! A corpus file holds one JSON object per line, each describing a single
//! text sample by the per-token statistics a causal language model assigned
//! to it. Files may be gzip-compressed; compression is detected from the
//! leading magic bytes, not the file name.
//!
//! ```text
//! {"id":"m-0","label":true,"logp":[-1.25,-0.5],"entropy":[3.1,2.4]}
//! ```
//!
//! Score files use the same framing with the keys `id`, `label`, `score`.
//! Floats are written in shortest round-trip form, so `write → parse`
//! reproduces every value bit for bit.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One text sample's token-level statistics plus its membership label.
///
/// All per-token vectors are indexed by predicted-token position (position
/// `t` in the math is index `t - 1` here) and share the length of `logp`.
/// Log-probabilities are natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// `log p(x_t | x_<t)` under the target model.
    pub logp: Vec<f64>,
    /// Same tokens under a reference model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
    /// Expected log-probability of the next-token distribution at each position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    /// Standard deviation of log-probability under the next-token distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    /// Shannon entropy (nats) of the next-token distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<Vec<f64>>,
    /// Mean token log-probability of the lowercased text. Lowercasing
    /// re-tokenizes, so this is a scalar rather than a per-position vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_logp_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_len: Option<u64>,
    /// Deflate-compressed size of the raw text at the default level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zlib_len: Option<u64>,
}

impl SequenceRecord {
    /// A record carrying only target-model log-probabilities.
    pub fn new(id: impl Into<String>, label: bool, logp: Vec<f64>) -> Self {
        SequenceRecord {
            id: id.into(),
            label,
            source: None,
            logp,
            logp_ref: None,
            mu: None,
            sigma: None,
            entropy: None,
            mean_logp_lower: None,
            byte_len: None,
            zlib_len: None,
        }
    }

    /// Number of scored token positions.
    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    /// Checks every structural invariant, returning a human-readable reason
    /// for the first violation found.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id must be non-empty".into());
        }
        let t = self.logp.len();
        if t == 0 {
            return Err("logp must contain at least one value".into());
        }

        let optional = [
            ("logp_ref", &self.logp_ref),
            ("mu", &self.mu),
            ("sigma", &self.sigma),
            ("entropy", &self.entropy),
        ];
        let mismatched: Vec<String> = optional
            .iter()
            .filter_map(|(name, v)| v.as_ref().map(|v| (name, v.len())))
            .filter(|&(_, len)| len != t)
            .map(|(name, len)| format!("{name} has {len} values"))
            .collect();
        if !mismatched.is_empty() {
            return Err(format!(
                "length mismatch: logp has {t} values but {}",
                mismatched.join(", ")
            ));
        }

        check_each("logp", &self.logp, |x| x <= 0.0, "≤ 0")?;
        if let Some(v) = &self.logp_ref {
            check_each("logp_ref", v, |x| x <= 0.0, "≤ 0")?;
        }
        if let Some(v) = &self.mu {
            check_each("mu", v, |_| true, "finite")?;
        }
        if let Some(v) = &self.sigma {
            check_each("sigma", v, |x| x >= 0.0, "≥ 0")?;
        }
        if let Some(v) = &self.entropy {
            check_each("entropy", v, |x| x >= 0.0, "≥ 0")?;
        }
        if let Some(x) = self.mean_logp_lower {
            if !x.is_finite() || x > 0.0 {
                return Err(format!("mean_logp_lower must be finite and ≤ 0 (got {x})"));
            }
        }
        if self.byte_len == Some(0) {
            return Err("byte_len must be ≥ 1".into());
        }
        if self.zlib_len == Some(0) {
            return Err("zlib_len must be ≥ 1".into());
        }
        Ok(())
    }

    /// Copy of this record with every per-token sequence cut to its first
    /// `len` positions. Scalar fields describe the whole text and are kept.
    pub fn truncated(&self, len: usize) -> SequenceRecord {
        let cut = |v: &Vec<f64>| v[..len.min(v.len())].to_vec();
        SequenceRecord {
            id: self.id.clone(),
            label: self.label,
            source: self.source.clone(),
            logp: cut(&self.logp),
            logp_ref: self.logp_ref.as_ref().map(cut),
            mu: self.mu.as_ref().map(cut),
            sigma: self.sigma.as_ref().map(cut),
            entropy: self.entropy.as_ref().map(cut),
            mean_logp_lower: self.mean_logp_lower,
            byte_len: self.byte_len,
            zlib_len: self.zlib_len,
        }
    }
}

fn check_each(
    field: &str,
    values: &[f64],
    ok: impl Fn(f64) -> bool,
    requirement: &str,
) -> Result<(), String> {
    for (i, &x) in values.iter().enumerate() {
        if !x.is_finite() {
            return Err(format!("{field}[{i}] is not finite"));
        }
        if !ok(x) {
            return Err(format!("{field} must be {requirement} (position {}: {x})", i + 1));
        }
    }
    Ok(())
}

/// A membership score for one sample. Higher means more member-like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub label: bool,
    pub score: f64,
}

impl ScoredSample {
    pub fn new(id: impl Into<String>, label: bool, score: f64) -> Self {
        ScoredSample {
            id: id.into(),
            label,
            score,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id must be non-empty".into());
        }
        if !self.score.is_finite() {
            return Err(format!("score for {:?} is not finite", self.id));
        }
        Ok(())
    }
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Wraps `input` in a gzip decoder when it starts with the gzip magic bytes.
pub fn decompressing_reader<'a, R: Read + 'a>(input: R) -> Result<Box<dyn BufRead + 'a>> {
    let mut buffered = BufReader::new(input);
    let head = buffered.fill_buf()?;
    if head.starts_with(&GZIP_MAGIC) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buffered))))
    } else {
        Ok(Box::new(buffered))
    }
}

/// Streams validated records from a line-delimited corpus.
///
/// Blank lines are skipped. Line numbers in errors are 1-based.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(input: R) -> Self {
        RecordReader {
            lines: input.lines(),
            line_no: 0,
            seen: HashSet::new(),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<SequenceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let record: SequenceRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => return Some(Err(parse_err(e.to_string()))),
            };
            if let Err(msg) = record.validate() {
                return Some(Err(parse_err(format!("record {:?}: {msg}", record.id))));
            }
            if !self.seen.insert(record.id.clone()) {
                return Some(Err(parse_err(format!("duplicate id {:?}", record.id))));
            }
            return Some(Ok(record));
        }
    }
}

/// Reads a whole corpus, plain or gzip-compressed, validating every record.
pub fn parse_records<R: Read>(input: R) -> Result<Vec<SequenceRecord>> {
    RecordReader::new(decompressing_reader(input)?).collect()
}

/// Writes records one per line in input order.
pub fn write_records<W: Write>(mut out: W, records: &[SequenceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a score file, plain or gzip-compressed.
pub fn parse_scores<R: Read>(input: R) -> Result<Vec<ScoredSample>> {
    let reader = decompressing_reader(input)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let sample: ScoredSample =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        sample.validate().map_err(parse_err)?;
        out.push(sample);
    }
    Ok(out)
}

/// Writes scores one per line. Fails before writing anything if a score is
/// not finite.
pub fn write_scores<W: Write>(mut out: W, samples: &[ScoredSample]) -> Result<()> {
    for s in samples {
        s.validate().map_err(|message| Error::Invalid {
            id: s.id.clone(),
            message,
        })?;
    }
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use proptest::prelude::*;

    fn parse_str(s: &str) -> Result<Vec<SequenceRecord>> {
        parse_records(s.as_bytes())
    }

    #[test]
    fn minimal_record() {
        let recs = parse_str(r#"{"id":"a","label":true,"logp":[-1.0,-2.0]}"#).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].len(), 2);
        assert!(recs[0].label);
        assert_eq!(recs[0].logp, vec![-1.0, -2.0]);
    }

    #[test]
    fn negative_sigma_rejected() {
        let err = parse_str(r#"{"id":"a","label":false,"logp":[-1.0],"sigma":[-0.5]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("sigma must be ≥ 0"), "{err}");
    }

    #[test]
    fn length_mismatch_names_fields() {
        let err = parse_str(r#"{"id":"a","label":false,"logp":[-1,-2,-3],"mu":[-1,-2]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("length mismatch"), "{err}");
        assert!(err.contains("mu has 2"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "{\"id\":\"a\",\"label\":true,\"logp\":[-1]}\n\n{\"id\":\"b\",\"label\":true}\n";
        let err = parse_str(input).unwrap_err().to_string();
        assert!(err.starts_with("line 3"), "{err}");
        assert!(err.contains("logp"), "{err}");
    }

    #[test]
    fn positive_logp_and_empty_logp_rejected() {
        assert!(parse_str(r#"{"id":"a","label":true,"logp":[0.5]}"#).is_err());
        assert!(parse_str(r#"{"id":"a","label":true,"logp":[]}"#).is_err());
        assert!(parse_str(r#"{"id":"a","label":true,"logp":[-1],"zlib_len":0}"#).is_err());
        assert!(parse_str(r#"{"id":"a","label":true,"logp":[-1],"entropy":[-0.1]}"#).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        // serde_json refuses out-of-range literals outright
        assert!(parse_str(r#"{"id":"a","label":true,"logp":[-1e400]}"#).is_err());
        let mut r = SequenceRecord::new("a", true, vec![f64::NEG_INFINITY]);
        assert!(r.validate().unwrap_err().contains("not finite"));
        r.logp = vec![-1.0];
        r.mu = Some(vec![f64::NAN]);
        assert!(r.validate().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = "{\"id\":\"a\",\"label\":true,\"logp\":[-1]}\n{\"id\":\"a\",\"label\":false,\"logp\":[-1]}\n";
        let err = parse_str(input).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn gzip_detected_by_magic() {
        let plain = "{\"id\":\"a\",\"label\":true,\"logp\":[-1.5]}\n";
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(plain.as_bytes()).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_records(&gz[..]).unwrap(), parse_str(plain).unwrap());
    }

    #[test]
    fn empty_scores_write_nothing() {
        let mut buf = Vec::new();
        write_scores(&mut buf, &[]).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn single_score_round_trip() {
        let s = vec![ScoredSample::new("a", true, 0.5)];
        let mut buf = Vec::new();
        write_scores(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1);
        assert_eq!(parse_scores(&buf[..]).unwrap(), s);
    }

    #[test]
    fn non_finite_score_rejected_without_output() {
        let s = vec![ScoredSample::new("a", true, 0.5), ScoredSample::new("b", false, f64::NAN)];
        let mut buf = Vec::new();
        assert!(write_scores(&mut buf, &s).is_err());
        assert!(buf.is_empty());
    }

    #[test]
    fn truncation_keeps_scalars() {
        let mut r = SequenceRecord::new("a", true, vec![-1.0, -2.0, -3.0]);
        r.entropy = Some(vec![3.0, 2.0, 1.0]);
        r.zlib_len = Some(7);
        let t = r.truncated(2);
        assert_eq!(t.logp, vec![-1.0, -2.0]);
        assert_eq!(t.entropy, Some(vec![3.0, 2.0]));
        assert_eq!(t.zlib_len, Some(7));
    }

    #[test]
    fn thousand_random_scores_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let samples: Vec<ScoredSample> = (0..1000)
            .map(|i| {
                let mag: f64 = rng.random_range(-30.0..30.0);
                let score = rng.random::<f64>() * 10f64.powf(mag) * if rng.random() { 1.0 } else { -1.0 };
                ScoredSample::new(format!("s{i}"), rng.random(), score)
            })
            .collect();
        let mut buf = Vec::new();
        write_scores(&mut buf, &samples).unwrap();
        let back = parse_scores(&buf[..]).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!((&a.id, a.label), (&b.id, b.label));
        }
    }

    fn arb_record() -> impl Strategy<Value = SequenceRecord> {
        (1usize..20).prop_flat_map(|t| {
            (
                "[a-z0-9-]{1,12}",
                any::<bool>(),
                prop::collection::vec(-50.0f64..=0.0, t),
                prop::option::of(prop::collection::vec(-50.0f64..=0.0, t)),
                prop::option::of(prop::collection::vec(-20.0f64..5.0, t)),
                prop::option::of(prop::collection::vec(0.0f64..10.0, t)),
                prop::option::of(prop::collection::vec(0.0f64..12.0, t)),
                prop::option::of(-20.0f64..=0.0),
                prop::option::of(1u64..100_000),
            )
                .prop_map(|(id, label, logp, logp_ref, mu, sigma, entropy, lower, zlib)| {
                    SequenceRecord {
                        id,
                        label,
                        source: Some("synthetic".into()),
                        logp,
                        logp_ref,
                        mu,
                        sigma,
                        entropy,
                        mean_logp_lower: lower,
                        byte_len: zlib.map(|z| z * 3),
                        zlib_len: zlib,
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn corpus_round_trip(records in prop::collection::vec(arb_record(), 0..8)) {
            let mut records = records;
            for (i, r) in records.iter_mut().enumerate() {
                r.id = format!("{}-{i}", r.id);
            }
            let mut buf = Vec::new();
            write_records(&mut buf, &records).unwrap();
            let back = parse_records(&buf[..]).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
