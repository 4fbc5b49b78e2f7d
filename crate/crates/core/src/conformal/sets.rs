use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::labels::ClassId;
use super::prob::ProbabilityVector;
use crate::error::{Error, Result};

/// Experimental arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    Control,
    Topk,
    Conformal,
}

impl Treatment {
    pub const ALL: [Treatment; 3] = [Treatment::Control, Treatment::Topk, Treatment::Conformal];

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Control => "control",
            Treatment::Topk => "topk",
            Treatment::Conformal => "conformal",
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" => Ok(Treatment::Control),
            "topk" | "top-k" => Ok(Treatment::Topk),
            "conformal" => Ok(Treatment::Conformal),
            other => Err(Error::invalid(format!("unknown treatment {other:?}"))),
        }
    }
}

/// The labels shown to a decision maker for one stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// Most probable first.
    pub members: Vec<ClassId>,
    pub treatment: Treatment,
    /// Coverage communicated alongside the set; absent for control.
    pub stated_coverage: Option<f64>,
    pub source_example: String,
}

impl PredictionSet {
    pub fn control(source_example: impl Into<String>) -> Self {
        Self {
            members: Vec::new(),
            treatment: Treatment::Control,
            stated_coverage: None,
            source_example: source_example.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.members.contains(&class)
    }

    pub fn with_stated_coverage(mut self, coverage: f64) -> Self {
        self.stated_coverage = Some(coverage);
        self
    }
}

/// The `k` most probable classes.
pub fn topk_set(
    p: &ProbabilityVector,
    k: usize,
    source_example: impl Into<String>,
) -> Result<PredictionSet> {
    if k < 1 || k > p.len() {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            p.len()
        )));
    }
    Ok(PredictionSet {
        members: p.rank().order()[..k].to_vec(),
        treatment: Treatment::Topk,
        stated_coverage: None,
        source_example: source_example.into(),
    })
}

/// Fraction of sets that miss their true label.
pub fn empirical_risk(sets: &[PredictionSet], truths: &[ClassId]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::invalid("empirical risk needs at least one set"));
    }
    if sets.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} sets but {} truths",
            sets.len(),
            truths.len()
        )));
    }
    let covered = sets
        .iter()
        .zip(truths)
        .filter(|(s, &y)| s.contains(y))
        .count();
    Ok(1.0 - covered as f64 / sets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(members: &[ClassId]) -> PredictionSet {
        PredictionSet {
            members: members.to_vec(),
            treatment: Treatment::Topk,
            stated_coverage: None,
            source_example: String::new(),
        }
    }

    #[test]
    fn topk_examples() {
        let p = ProbabilityVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(topk_set(&p, 2, "x").unwrap().members, vec![0, 1]);
        assert_eq!(topk_set(&p, 3, "x").unwrap().members, vec![0, 1, 2]);
        assert!(topk_set(&p, 0, "x").is_err());
        assert!(topk_set(&p, 4, "x").is_err());

        let q = ProbabilityVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(topk_set(&q, 3, "x").unwrap().members, vec![3, 2, 1]);
    }

    #[test]
    fn risk_examples() {
        let sets = [set(&[0]), set(&[1, 2]), set(&[2]), set(&[0, 1])];
        assert_eq!(empirical_risk(&sets, &[0, 2, 1, 1]).unwrap(), 0.25);
        assert_eq!(empirical_risk(&sets, &[0, 1, 2, 0]).unwrap(), 0.0);
        assert!(empirical_risk(&sets, &[0, 1]).is_err());
        assert!(empirical_risk(&[], &[]).is_err());
    }

    #[test]
    fn treatment_parsing() {
        assert_eq!("Top-K".parse::<Treatment>().unwrap(), Treatment::Topk);
        assert_eq!(
            serde_json::to_string(&Treatment::Conformal).unwrap(),
            "\"conformal\""
        );
        assert!("placebo".parse::<Treatment>().is_err());
    }
}
