//! Positional decay reweighting for likelihood-based membership inference.
//!
//! Given per-token statistics of text samples under a language model
//! ([`SequenceRecord`]), this crate computes membership scores (Loss, Ref,
//! zlib, lowercase, Min-k%, Min-k%++ and FSD differencing), optionally
//! reweighting token positions so that early tokens count more, and
//! evaluates them with AUROC, TPR at low FPR and a paired bootstrap test.
//!
//! ```
//! use pdr_core::{score, Method, ScoreSpec, ScoringContext, SequenceRecord, WeightSpec};
//!
//! let record = SequenceRecord::new("doc-1", true, vec![-1.0, -2.0, -3.0]);
//! let spec = ScoreSpec::new(Method::Loss).with_weights(WeightSpec::linear(1.0));
//! let scored = score(&spec, &record, &ScoringContext::default()).unwrap();
//! assert!((scored.score - (-2.0 / 3.0)).abs() < 1e-12);
//! ```
//!
//! Corpus-level work (scoring, bootstrap replicates, synthetic generation)
//! runs on rayon when the `parallel` feature is enabled. Results do not
//! depend on the number of threads.

pub mod error;
pub mod evaluation;
pub mod exec;
pub mod profile;
pub mod records;
pub mod scoring;
pub mod sweep;
pub mod synthgen;
pub mod weights;

pub use error::{Error, Result};
pub use evaluation::{
    auroc, bootstrap_eval, evaluate, paired_bootstrap, roc_points, tpr_at_fpr, EvalReport,
    PairedReport, DEFAULT_TARGET_FPR,
};
pub use exec::Execution;
pub use profile::{position_profile, ProfileSeries, ProfileStat};
pub use records::{parse_records, parse_scores, write_records, write_scores, ScoredSample, SequenceRecord};
pub use scoring::{
    fsd_corpus, fsd_score, score, score_corpus, Method, ScoreSpec, ScoringContext, SelectionStage,
};
pub use sweep::{alpha_sweep, truncation_sweep, SweepRow};
pub use synthgen::{generate_corpus, SynthParams};
pub use weights::{WeightFamily, WeightOrder, WeightSpec};
