//! Sensitivity sweeps over the decay parameter or the truncation fraction.

use std::io::Write;

use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::exec::Execution;
use crate::records::SequenceRecord;
use crate::scoring::{score_corpus, Method, ScoreSpec, ScoringContext};
use crate::weights::WeightSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Rho,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Rho => "rho",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    /// Weight family name, or `none` for unweighted scoring.
    pub weights: String,
    pub param: SweepParam,
    pub value: f64,
    pub auroc: f64,
    pub tpr_at_fpr: f64,
}

fn run(
    records: &[SequenceRecord],
    spec: &ScoreSpec,
    target_fpr: f64,
    exec: Execution,
) -> Result<(f64, f64)> {
    let ctx = ScoringContext::for_corpus(spec, records)?;
    let scores = score_corpus(spec, records, &ctx, exec)?;
    let report = evaluate(&scores, target_fpr)?;
    Ok((report.auroc, report.tpr_at_fpr))
}

/// One row per `(method, alpha)`: `template` supplies k, stage and
/// truncation; `weights` supplies the family and ordering.
pub fn alpha_sweep(
    records: &[SequenceRecord],
    methods: &[Method],
    template: &ScoreSpec,
    weights: &WeightSpec,
    alphas: &[f64],
    target_fpr: f64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::Parameter("alpha sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(methods.len() * alphas.len());
    for &method in methods {
        for &alpha in alphas {
            let spec = ScoreSpec {
                method,
                weights: Some(WeightSpec {
                    alpha,
                    ..weights.clone()
                }),
                ..template.clone()
            };
            let (auroc, tpr_at_fpr) = run(records, &spec, target_fpr, exec)?;
            rows.push(SweepRow {
                method,
                weights: weights.family.to_string(),
                param: SweepParam::Alpha,
                value: alpha,
                auroc,
                tpr_at_fpr,
            });
        }
    }
    Ok(rows)
}

/// One row per `(method, rho)`, keeping the template's weights (if any) so
/// hard truncation and soft reweighting can be compared on one table.
pub fn truncation_sweep(
    records: &[SequenceRecord],
    methods: &[Method],
    template: &ScoreSpec,
    rhos: &[f64],
    target_fpr: f64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if rhos.is_empty() {
        return Err(Error::Parameter("truncation sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(methods.len() * rhos.len());
    for &method in methods {
        for &rho in rhos {
            let spec = ScoreSpec {
                method,
                truncation_rho: Some(rho),
                ..template.clone()
            };
            let (auroc, tpr_at_fpr) = run(records, &spec, target_fpr, exec)?;
            rows.push(SweepRow {
                method,
                weights: template
                    .weights
                    .as_ref()
                    .map_or_else(|| "none".to_string(), |w| w.family.to_string()),
                param: SweepParam::Rho,
                value: rho,
                auroc,
                tpr_at_fpr,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "method,weights,param,value,auroc,tpr_at_fpr")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method,
            r.weights,
            r.param.as_str(),
            r.value,
            r.auroc,
            r.tpr_at_fpr
        )?;
    }
    out.flush()?;
    Ok(())
}
