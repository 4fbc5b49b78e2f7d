use serde::{Deserialize, Serialize};

use super::labels::ClassId;
use crate::error::{Error, Result};

/// Absolute tolerance on probability sums and score comparisons.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex over `M` classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid(
                "probability vector needs at least 2 entries",
            ));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probability entries must lie in [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: ClassId) -> Result<f64> {
        self.0.get(class).copied().ok_or_else(|| {
            Error::invalid(format!(
                "class {class} outside vector of length {}",
                self.len()
            ))
        })
    }

    /// Sorts classes by descending probability, ties by ascending class id.
    pub fn rank(&self) -> RankedDistribution {
        rank_distribution(self)
    }
}

impl<'de> Deserialize<'de> for ProbabilityVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ProbabilityVector::new(v).map_err(serde::de::Error::custom)
    }
}

/// Softmax of `logits / temperature`, shifted by the max logit for stability.
pub fn temperature_softmax(logits: &[f64], temperature: f64) -> Result<ProbabilityVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("logits must be finite"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    ProbabilityVector::new(exps.into_iter().map(|e| e / total).collect())
}

/// Classes ordered by model preference, with cumulative mass and rank per class.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDistribution {
    order: Vec<ClassId>,
    rho: Vec<f64>,
    rank: Vec<usize>,
}

impl RankedDistribution {
    /// Class ids, most probable first.
    pub fn order(&self) -> &[ClassId] {
        &self.order
    }

    /// Probability mass of the classes ranked strictly ahead of `class`.
    pub fn rho(&self, class: ClassId) -> f64 {
        self.rho[class]
    }

    /// 1-based rank of `class`.
    pub fn rank(&self, class: ClassId) -> usize {
        self.rank[class]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn rank_distribution(p: &ProbabilityVector) -> RankedDistribution {
    let probs = p.as_slice();
    let mut order: Vec<ClassId> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    let mut rho = vec![0.0; probs.len()];
    let mut rank = vec![0; probs.len()];
    let mut mass = 0.0;
    for (j, &class) in order.iter().enumerate() {
        rho[class] = mass;
        rank[class] = j + 1;
        mass += probs[class];
    }
    RankedDistribution { order, rho, rank }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let p = temperature_softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for &v in p.as_slice() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn log_two_gap_gives_one_third_two_thirds() {
        for &(c, t) in &[(0.0, 1.0), (-7.5, 0.3), (120.0, 2.5), (3.0, 0.002)] {
            let p = temperature_softmax(&[c, c + t * std::f64::consts::LN_2], t).unwrap();
            assert_abs_diff_eq!(p.as_slice()[0], 1.0 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.as_slice()[1], 2.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tiny_temperature_with_clip_scale_logits_does_not_overflow() {
        // Cosine-similarity logits scaled by 100, sharpened by T = 0.002.
        let logits = [28.1, 31.7, 24.0, 31.69, 19.3];
        let p = temperature_softmax(&logits, 0.002).unwrap();
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(p.rank().order()[0], 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(temperature_softmax(&[0.0, 1.0], 0.0).is_err());
        assert!(temperature_softmax(&[0.0, 1.0], -1.0).is_err());
        assert!(temperature_softmax(&[0.0, f64::INFINITY], 1.0).is_err());
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn ranks_hand_example() {
        let p = ProbabilityVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        let rd = p.rank();
        assert_eq!(rd.order(), &[0, 1, 2]);
        assert_eq!((rd.rho(0), rd.rho(1)), (0.0, 0.6));
        assert_abs_diff_eq!(rd.rho(2), 0.9, epsilon = 1e-15);
        assert_eq!((rd.rank(0), rd.rank(1), rd.rank(2)), (1, 2, 3));
    }

    #[test]
    fn ties_broken_by_class_id() {
        let third = 1.0 / 3.0;
        let rd = ProbabilityVector::new(vec![third; 3]).unwrap().rank();
        assert_eq!(rd.order(), &[0, 1, 2]);
        assert_eq!(rd.rho(0), 0.0);
        assert_abs_diff_eq!(rd.rho(1), third, epsilon = 1e-15);
        assert_abs_diff_eq!(rd.rho(2), 2.0 * third, epsilon = 1e-15);

        let rd = ProbabilityVector::new(vec![0.2, 0.4, 0.4]).unwrap().rank();
        assert_eq!(rd.order(), &[1, 2, 0]);
    }
}
