use serde::{Deserialize, Serialize};

use super::student_t::{student_t_sf, student_t_two_sided};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// H1: mean of group 1 exceeds mean of group 2.
    OneSidedGreater,
    TwoSided,
}

/// Outcome of comparing two independent groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_stat: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    pub p_value: f64,
    pub tail: Tail,
    pub effect_size_d: f64,
    pub n1: usize,
    pub n2: usize,
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (`n - 1`) sample variance; NaN for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// `sqrt(s² / n)`; `None` for fewer than two values.
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    (xs.len() >= 2).then(|| (sample_variance(xs) / xs.len() as f64).sqrt())
}

fn check_group(name: &str, xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::invalid(format!(
            "{name} needs at least 2 values, got {}",
            xs.len()
        )));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "{name} contains a non-finite value"
        )));
    }
    Ok(())
}

/// `(x̄1 − x̄2) / sqrt((s1² + s2²) / 2)` with unbiased variances.
pub fn cohens_d(group1: &[f64], group2: &[f64]) -> Result<f64> {
    check_group("group1", group1)?;
    check_group("group2", group2)?;
    let pooled = (sample_variance(group1) + sample_variance(group2)) / 2.0;
    if pooled == 0.0 {
        return Err(Error::UndefinedStatistic(
            "both groups have zero variance".into(),
        ));
    }
    Ok((mean(group1) - mean(group2)) / pooled.sqrt())
}

/// Welch's unequal-variance t-test.
pub fn welch_t_test(group1: &[f64], group2: &[f64], tail: Tail) -> Result<TestResult> {
    check_group("group1", group1)?;
    check_group("group2", group2)?;
    let (n1, n2) = (group1.len() as f64, group2.len() as f64);
    let (mean1, mean2) = (mean(group1), mean(group2));
    let (var1, var2) = (sample_variance(group1), sample_variance(group2));
    let (a, b) = (var1 / n1, var2 / n2);
    let se2 = a + b;
    if se2 == 0.0 {
        return Err(Error::UndefinedStatistic(
            "both groups have zero variance".into(),
        ));
    }
    let t_stat = (mean1 - mean2) / se2.sqrt();
    let dof = se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    let p_value = match tail {
        Tail::OneSidedGreater => student_t_sf(t_stat, dof),
        Tail::TwoSided => student_t_two_sided(t_stat, dof),
    };
    let effect_size_d = (mean1 - mean2) / ((var1 + var2) / 2.0).sqrt();
    Ok(TestResult {
        t_stat,
        dof,
        p_value,
        tail,
        effect_size_d,
        n1: group1.len(),
        n2: group2.len(),
        mean1,
        mean2,
        var1,
        var2,
    })
}
