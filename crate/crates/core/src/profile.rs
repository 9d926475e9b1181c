//! Per-position mean profiles of token statistics.

use std::io::Write;

use crate::error::{Error, Result};
use crate::records::SequenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileStat {
    Logp,
    Entropy,
}

impl ProfileStat {
    fn values(self, record: &SequenceRecord) -> Option<&[f64]> {
        match self {
            ProfileStat::Logp => Some(&record.logp),
            ProfileStat::Entropy => record.entropy.as_deref(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileStat::Logp => "logp",
            ProfileStat::Entropy => "entropy",
        }
    }
}

impl std::str::FromStr for ProfileStat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logp" => Ok(ProfileStat::Logp),
            "entropy" => Ok(ProfileStat::Entropy),
            _ => Err(format!("unknown statistic {s:?} (expected logp, entropy)")),
        }
    }
}

/// Mean of one statistic at each position over the records reaching it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSeries {
    pub group: String,
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ProfileSeries {
    fn build(group: &str, rows: &[&[f64]]) -> Self {
        let len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut sums = vec![0.0; len];
        let mut counts = vec![0usize; len];
        for row in rows {
            for (i, &x) in row.iter().enumerate() {
                sums[i] += x;
                counts[i] += 1;
            }
        }
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| s / c as f64)
            .collect();
        ProfileSeries {
            group: group.to_string(),
            means,
            counts,
        }
    }
}

/// Builds the profile, either over all records (`group = "all"`) or split
/// into `member` and `nonmember` series. Records lacking the statistic are
/// skipped; it is an error if none carry it.
pub fn position_profile(
    records: &[SequenceRecord],
    stat: ProfileStat,
    by_label: bool,
) -> Result<Vec<ProfileSeries>> {
    let with_stat: Vec<(bool, &[f64])> = records
        .iter()
        .filter_map(|r| stat.values(r).map(|v| (r.label, v)))
        .collect();
    if with_stat.is_empty() {
        return Err(Error::MissingField {
            id: records.first().map(|r| r.id.clone()).unwrap_or_default(),
            field: match stat {
                ProfileStat::Logp => "logp",
                ProfileStat::Entropy => "entropy",
            },
            reason: "no record in the corpus carries this statistic",
        });
    }
    let rows = |keep: &dyn Fn(bool) -> bool| -> Vec<&[f64]> {
        with_stat.iter().filter(|(l, _)| keep(*l)).map(|&(_, v)| v).collect()
    };
    let series = if by_label {
        [("member", true), ("nonmember", false)]
            .into_iter()
            .map(|(name, label)| ProfileSeries::build(name, &rows(&|l| l == label)))
            .filter(|s| !s.counts.is_empty())
            .collect()
    } else {
        vec![ProfileSeries::build("all", &rows(&|_| true))]
    };
    Ok(series)
}

/// Long-format CSV: `group,position,mean,count`, positions 1-based.
pub fn write_profile_csv<W: Write>(mut out: W, series: &[ProfileSeries]) -> Result<()> {
    writeln!(out, "group,position,mean,count")?;
    for s in series {
        for (i, (m, c)) in s.means.iter().zip(&s.counts).enumerate() {
            writeln!(out, "{},{},{},{}", s.group, i + 1, m, c)?;
        }
    }
    out.flush()?;
    Ok(())
}
