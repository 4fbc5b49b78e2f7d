//! Dataset preparation: class-subset selection, exact class balancing,
//! calibration/test splitting and per-participant stimulus sampling.

mod manifest;
mod sampling;

pub use manifest::{Asset, DatasetManifest, LoadedDataset, StimulusKind};
pub use sampling::{
    sample_participant_stimuli, select_practice, select_top_classes, split_cal_test,
    stratified_balance, ClassSubset, Labeled, SplitSpec,
};
