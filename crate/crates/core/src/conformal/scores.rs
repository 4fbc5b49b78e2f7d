use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::labels::ClassId;
use super::prob::{ProbabilityVector, RankedDistribution};
use crate::error::{Error, Result};

/// RAPS hyperparameters plus the seed of the randomization stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RapsParams {
    /// Regularization weight.
    pub lambda: f64,
    /// Number of classes admitted before the rank penalty applies.
    pub k_reg: usize,
    /// Logit temperature.
    pub temperature: f64,
    pub seed: u64,
    /// When false the own-probability term is weighted by 1 instead of a uniform draw.
    pub randomized: bool,
}

impl Default for RapsParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            k_reg: 1,
            temperature: 1.0,
            seed: 0,
            randomized: true,
        }
    }
}

impl RapsParams {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.k_reg < 1 || self.k_reg > num_classes {
            return Err(Error::invalid(format!(
                "k_reg must be in 1..={num_classes}, got {}",
                self.k_reg
            )));
        }
        Ok(())
    }

    /// The uniform weight used for every label of `example_id`.
    ///
    /// Derived from SHA-256 over `(seed, example_id)`, so it does not depend on
    /// the order in which examples are processed.
    pub fn uniform_for(&self, example_id: &str) -> f64 {
        if self.randomized {
            keyed_uniform(self.seed, example_id)
        } else {
            1.0
        }
    }
}

/// Uniform draw in `[0, 1)` keyed by `(seed, key)`: the top 53 bits of
/// `SHA-256("raps-u" || seed_le || key)` read as little-endian.
pub fn keyed_uniform(seed: u64, key: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(b"raps-u");
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `1 - p[y]`.
pub fn canonical_score(p: &ProbabilityVector, y: ClassId) -> Result<f64> {
    Ok(1.0 - p.get(y)?)
}

/// `rho(y) + u * p[y] + lambda * max(rank(y) - k_reg, 0)`.
///
/// Evaluated left to right so that, with rounding being monotone, scores are
/// non-decreasing along the ranked order.
pub fn raps_score(
    rd: &RankedDistribution,
    p: &ProbabilityVector,
    y: ClassId,
    u: f64,
    params: &RapsParams,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("u must lie in [0, 1], got {u}")));
    }
    let py = p.get(y)?;
    let excess = rd.rank(y).saturating_sub(params.k_reg);
    Ok(rd.rho(y) + u * py + params.lambda * excess as f64)
}
