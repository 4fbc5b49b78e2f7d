//! Top-k and RAPS conformal prediction sets built from precomputed logits.
//!
//! Everything here is a pure function of its inputs and an explicit seed.
//! The randomized RAPS term draws a single `u` per example from a keyed hash
//! of `(seed, example_id)`, so calibration and prediction agree regardless of
//! processing order.

mod calibrate;
mod evaluate;
mod labels;
mod logits;
mod prob;
mod scores;
mod sets;

pub use calibrate::{
    calibrate, calibration_scores, conformal_quantile, conformal_set, conformal_set_from_logits,
    label_scores, match_coverage, quantile_index, topk_sets, CalibrationResult, ScoreMethod,
};
pub use evaluate::{evaluate_sets, CoverageReport, SetBuilder};
pub use labels::{ClassId, LabelManifest, LabelSpace};
pub use logits::{LogitExample, LogitTable};
pub use prob::{
    rank_distribution, temperature_softmax, ProbabilityVector, RankedDistribution, PROB_TOLERANCE,
};
pub use scores::{canonical_score, keyed_uniform, raps_score, RapsParams};
pub use sets::{empirical_risk, topk_set, PredictionSet, Treatment};
