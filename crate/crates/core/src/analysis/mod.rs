//! Per-participant observations, hypothesis tests and descriptive tables
//! computed from exported trial records.

mod observe;
mod report;

pub use observe::{
    adoption_rate, conditional_by_set_size, observations, per_class_accuracy, set_size_histogram,
    validate_records, Adoption, ClassRow, HistogramBin, Observation, ObservationSet,
    PerClassAccuracy, SizeBucket,
};
pub use report::{
    report, ArmSummary, Counts, Metadata, Metric, PairTest, Report, SIGNIFICANCE_LEVEL,
};
