use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::calibrate::{conformal_set, CalibrationResult};
use super::logits::{LogitExample, LogitTable};
use super::prob::temperature_softmax;
use super::sets::{topk_set, PredictionSet, Treatment};
use crate::error::{Error, Result};

/// How one experimental arm turns an example's logits into a shown set.
#[derive(Debug, Clone, PartialEq)]
pub enum SetBuilder {
    Control,
    TopK {
        k: usize,
        temperature: f64,
        stated_coverage: Option<f64>,
    },
    Conformal(CalibrationResult),
}

impl SetBuilder {
    pub fn treatment(&self) -> Treatment {
        match self {
            SetBuilder::Control => Treatment::Control,
            SetBuilder::TopK { .. } => Treatment::Topk,
            SetBuilder::Conformal(_) => Treatment::Conformal,
        }
    }

    pub fn temperature(&self) -> f64 {
        match self {
            SetBuilder::Control => 1.0,
            SetBuilder::TopK { temperature, .. } => *temperature,
            SetBuilder::Conformal(c) => c.params.temperature,
        }
    }

    pub fn stated_coverage(&self) -> Option<f64> {
        match self {
            SetBuilder::Control => None,
            SetBuilder::TopK {
                stated_coverage, ..
            } => *stated_coverage,
            SetBuilder::Conformal(c) => Some(c.stated_coverage()),
        }
    }

    pub fn build(&self, example: &LogitExample) -> Result<PredictionSet> {
        match self {
            SetBuilder::Control => Ok(PredictionSet::control(example.example_id.as_str())),
            SetBuilder::TopK {
                k,
                temperature,
                stated_coverage,
            } => {
                let p = temperature_softmax(&example.logits, *temperature)?;
                let mut set = topk_set(&p, *k, example.example_id.as_str())?;
                set.stated_coverage = *stated_coverage;
                Ok(set)
            }
            SetBuilder::Conformal(calib) => {
                let p = temperature_softmax(&example.logits, calib.params.temperature)?;
                conformal_set(&p, calib, &example.example_id)
            }
        }
    }
}

/// Coverage and size statistics of one set family on a labelled table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub treatment: Treatment,
    pub n: usize,
    pub coverage: f64,
    pub avg_size: f64,
    /// set size -> number of examples
    pub size_histogram: BTreeMap<usize, usize>,
    pub top1_accuracy: f64,
    pub accuracy_k: usize,
    pub topk_accuracy: f64,
}

/// Evaluates `builder` on every example of `test`.
///
/// Top-1 and top-`accuracy_k` accuracies are measured on the builder's
/// temperature-scaled probabilities.
pub fn evaluate_sets(
    test: &LogitTable,
    builder: &SetBuilder,
    accuracy_k: usize,
) -> Result<CoverageReport> {
    if test.is_empty() {
        return Err(Error::invalid("test table is empty"));
    }
    let m = test.label_space().len();
    if accuracy_k < 1 || accuracy_k > m {
        return Err(Error::invalid(format!("accuracy k must be in 1..={m}")));
    }
    let mut covered = 0usize;
    let mut total_size = 0usize;
    let mut top1 = 0usize;
    let mut topk = 0usize;
    let mut size_histogram = BTreeMap::new();
    for ex in test.examples() {
        let set = builder.build(ex)?;
        covered += usize::from(set.contains(ex.true_label));
        total_size += set.len();
        *size_histogram.entry(set.len()).or_insert(0) += 1;

        let rd = temperature_softmax(&ex.logits, builder.temperature())?.rank();
        let rank = rd.rank(ex.true_label);
        top1 += usize::from(rank == 1);
        topk += usize::from(rank <= accuracy_k);
    }
    let n = test.len() as f64;
    Ok(CoverageReport {
        treatment: builder.treatment(),
        n: test.len(),
        coverage: covered as f64 / n,
        avg_size: total_size as f64 / n,
        size_histogram,
        top1_accuracy: top1 as f64 / n,
        accuracy_k,
        topk_accuracy: topk as f64 / n,
    })
}
