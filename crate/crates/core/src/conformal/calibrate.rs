use serde::{Deserialize, Serialize};

use super::labels::ClassId;
use super::logits::LogitTable;
use super::prob::{temperature_softmax, ProbabilityVector, PROB_TOLERANCE};
use super::scores::{canonical_score, raps_score, RapsParams};
use super::sets::{empirical_risk, topk_set, PredictionSet, Treatment};
use crate::error::{Error, Result};

/// Conformal score function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    /// `1 - p[y]`
    Canonical,
    /// Regularized adaptive prediction sets.
    Raps,
}

/// A frozen conformal threshold and everything needed to reproduce sets from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(with = "q_hat_format")]
    pub q_hat: f64,
    pub alpha: f64,
    pub n: usize,
    pub method: ScoreMethod,
    /// The canonical method only reads `temperature`.
    pub params: RapsParams,
    pub num_classes: usize,
    pub fingerprint: String,
}

impl CalibrationResult {
    pub fn stated_coverage(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `q_hat` is a JSON number, or the string `"inf"` when unbounded.
mod q_hat_format {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Sentinel(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            Repr::Sentinel("inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Sentinel(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Sentinel(s) => Err(serde::de::Error::custom(format!("bad q_hat {s:?}"))),
        }
    }
}

/// 1-based order-statistic index `ceil((n + 1)(1 - alpha))`, clamped below at 1.
///
/// Products within 1e-9 of an integer are snapped to it before the ceiling.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let nearest = x.round();
    let j = if (x - nearest).abs() <= PROB_TOLERANCE {
        nearest
    } else {
        x.ceil()
    };
    (j.max(1.0)) as usize
}

/// The `quantile_index(n, alpha)`-th smallest score, or `+inf` past the end.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid(
            "conformal quantile needs at least one score",
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let j = quantile_index(scores.len(), alpha);
    if j > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[j - 1])
}

/// Scores of every label of one example, indexed by class id.
pub fn label_scores(
    p: &ProbabilityVector,
    method: ScoreMethod,
    params: &RapsParams,
    example_id: &str,
) -> Result<Vec<f64>> {
    match method {
        ScoreMethod::Canonical => (0..p.len()).map(|y| canonical_score(p, y)).collect(),
        ScoreMethod::Raps => {
            let rd = p.rank();
            let u = params.uniform_for(example_id);
            (0..p.len())
                .map(|y| raps_score(&rd, p, y, u, params))
                .collect()
        }
    }
}

fn true_label_score(
    p: &ProbabilityVector,
    y: ClassId,
    method: ScoreMethod,
    params: &RapsParams,
    id: &str,
) -> Result<f64> {
    match method {
        ScoreMethod::Canonical => canonical_score(p, y),
        ScoreMethod::Raps => raps_score(&p.rank(), p, y, params.uniform_for(id), params),
    }
}

/// Calibration scores of the true labels, in table order.
pub fn calibration_scores(
    cal: &LogitTable,
    method: ScoreMethod,
    params: &RapsParams,
) -> Result<Vec<f64>> {
    cal.examples()
        .iter()
        .map(|ex| {
            let p = temperature_softmax(&ex.logits, params.temperature)?;
            true_label_score(&p, ex.true_label, method, params, &ex.example_id)
        })
        .collect()
}

/// Split-conformal calibration on `cal` at miscoverage `alpha`.
pub fn calibrate(
    cal: &LogitTable,
    alpha: f64,
    method: ScoreMethod,
    params: RapsParams,
) -> Result<CalibrationResult> {
    if cal.is_empty() {
        return Err(Error::invalid("calibration table is empty"));
    }
    params.validate(cal.label_space().len())?;
    let scores = calibration_scores(cal, method, &params)?;
    let q_hat = conformal_quantile(&scores, alpha)?;
    Ok(CalibrationResult {
        q_hat,
        alpha,
        n: cal.len(),
        method,
        params,
        num_classes: cal.label_space().len(),
        fingerprint: cal.fingerprint(),
    })
}

/// All labels whose score is at most `q_hat`, most probable first.
pub fn conformal_set(
    p: &ProbabilityVector,
    calib: &CalibrationResult,
    example_id: &str,
) -> Result<PredictionSet> {
    if p.len() != calib.num_classes {
        return Err(Error::invalid(format!(
            "probability vector has {} classes, calibration has {}",
            p.len(),
            calib.num_classes
        )));
    }
    let rd = p.rank();
    let members = if calib.q_hat == f64::INFINITY {
        rd.order().to_vec()
    } else {
        let scores = label_scores(p, calib.method, &calib.params, example_id)?;
        rd.order()
            .iter()
            .copied()
            .filter(|&y| scores[y] <= calib.q_hat)
            .collect()
    };
    Ok(PredictionSet {
        members,
        treatment: Treatment::Conformal,
        stated_coverage: Some(calib.stated_coverage()),
        source_example: example_id.to_owned(),
    })
}

/// [`conformal_set`] on raw logits, using the calibration temperature.
pub fn conformal_set_from_logits(
    logits: &[f64],
    calib: &CalibrationResult,
    example_id: &str,
) -> Result<PredictionSet> {
    let p = temperature_softmax(logits, calib.params.temperature)?;
    conformal_set(&p, calib, example_id)
}

/// Top-k sets of every calibration example.
pub fn topk_sets(table: &LogitTable, k: usize, temperature: f64) -> Result<Vec<PredictionSet>> {
    table
        .examples()
        .iter()
        .map(|ex| {
            topk_set(
                &temperature_softmax(&ex.logits, temperature)?,
                k,
                ex.example_id.as_str(),
            )
        })
        .collect()
}

/// Calibrates RAPS at the empirical risk of top-k on the same table.
///
/// Returns `(alpha_hat, calibration)`; `calibration.alpha` is `alpha_hat`.
pub fn match_coverage(
    cal: &LogitTable,
    k: usize,
    params: RapsParams,
) -> Result<(f64, CalibrationResult)> {
    let sets = topk_sets(cal, k, params.temperature)?;
    let truths: Vec<ClassId> = cal.examples().iter().map(|ex| ex.true_label).collect();
    let alpha_hat = empirical_risk(&sets, &truths)?;
    let calib = calibrate(cal, alpha_hat, ScoreMethod::Raps, params)?;
    Ok((alpha_hat, calib))
}
