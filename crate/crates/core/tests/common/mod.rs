//! Independent oracles shared by the integration tests. Nothing in here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

/// Tanh-sinh (double exponential) quadrature of `f` over `[a, b]`.
///
/// `f` receives `(x, dist_to_a, dist_to_b)` so integrands with endpoint
/// behaviour can be evaluated without cancellation.
pub fn tanh_sinh(f: impl Fn(f64, f64, f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let half = 0.5 * (b - a);
    let mut h = 0.5;
    let mut prev = f64::NAN;
    for _level in 0..12 {
        let mut sum = 0.0;
        let kmax = (4.5 / h) as i64;
        for k in -kmax..=kmax {
            let t = k as f64 * h;
            let s = FRAC_PI_2 * t.sinh();
            let cosh_s = s.cosh();
            // 1 - tanh(s) and 1 + tanh(s) evaluated without cancellation.
            let e = (-2.0 * s.abs()).exp();
            let one_minus = if s >= 0.0 {
                2.0 * e / (1.0 + e)
            } else {
                2.0 / (1.0 + e)
            };
            let one_plus = if s >= 0.0 {
                2.0 / (1.0 + e)
            } else {
                2.0 * e / (1.0 + e)
            };
            let da = half * one_plus;
            let db = half * one_minus;
            if da <= 0.0 || db <= 0.0 {
                continue;
            }
            let w = FRAC_PI_2 * t.cosh() / (cosh_s * cosh_s);
            let x = a + da;
            let v = f(x, da, db);
            if v.is_finite() {
                sum += w * v;
            }
        }
        let est = half * h * sum;
        if (est - prev).abs() <= 1e-15 * est.abs().max(1e-300) {
            return est;
        }
        prev = est;
        h *= 0.5;
    }
    prev
}

/// `P(T > t)` for Student's t by integrating `sin^(ν-1)` after the
/// substitution `x = sqrt(ν) cot φ`.
pub fn t_upper_tail(t: f64, dof: f64) -> f64 {
    if t < 0.0 {
        return 1.0 - t_upper_tail(-t, dof);
    }
    let power = dof - 1.0;
    let g = |_x: f64, da: f64, _db: f64| da.sin().powf(power);
    let total = tanh_sinh(g, 0.0, FRAC_PI_2);
    let upper = (dof.sqrt() / t).atan();
    let part = tanh_sinh(g, 0.0, upper);
    0.5 * part / total
}

pub fn t_two_sided(t: f64, dof: f64) -> f64 {
    2.0 * t_upper_tail(t.abs(), dof)
}

/// `P(Z > z)` for the standard normal by quadrature of the density on `[0, |z|]`.
pub fn normal_upper_tail(z: f64) -> f64 {
    let inner = tanh_sinh(
        |x, _, _| (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
        0.0,
        z.abs(),
    );
    if z >= 0.0 {
        0.5 - inner
    } else {
        0.5 + inner
    }
}

/// Welch statistic and Welch–Satterthwaite dof computed from scratch.
pub fn welch_reference(g1: &[f64], g2: &[f64]) -> (f64, f64) {
    let stats = |g: &[f64]| {
        let n = g.len() as f64;
        let m = g.iter().sum::<f64>() / n;
        let v = g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (n1, m1, v1) = stats(g1);
    let (n2, m2, v2) = stats(g2);
    let se2 = v1 / n1 + v2 / n2;
    let t = (m1 - m2) / se2.sqrt();
    let dof = se2.powi(2) / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    (t, dof)
}

/// RAPS uniform recomputed from its definition: top 53 bits of
/// `SHA-256("raps-u" || seed_le || example_id)` read little-endian.
pub fn reference_uniform(seed: u64, example_id: &str) -> f64 {
    use sha2::{Digest, Sha256};
    let mut bytes = b"raps-u".to_vec();
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(example_id.as_bytes());
    let d = Sha256::digest(&bytes);
    let mut x = 0u64;
    for (i, b) in d[..8].iter().enumerate() {
        x |= (*b as u64) << (8 * i);
    }
    (x >> 11) as f64 / 9_007_199_254_740_992.0
}

#[derive(Clone, Copy, Debug)]
pub enum OracleMethod {
    Canonical,
    Raps {
        lambda: f64,
        k_reg: usize,
        seed: u64,
        randomized: bool,
    },
}

/// Score of label `y` by direct scan: the labels ahead of `y` are those with
/// higher probability, or equal probability and a smaller id.
pub fn oracle_score(p: &[f64], y: usize, method: OracleMethod, example_id: &str) -> f64 {
    match method {
        OracleMethod::Canonical => 1.0 - p[y],
        OracleMethod::Raps {
            lambda,
            k_reg,
            seed,
            randomized,
        } => {
            let ahead = |z: usize| p[z] > p[y] || (p[z] == p[y] && z < y);
            let mut before: Vec<usize> = (0..p.len()).filter(|&z| ahead(z)).collect();
            // Accumulate most-probable first.
            before.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
            let mut rho = 0.0;
            for z in &before {
                rho += p[*z];
            }
            let rank = before.len() + 1;
            let u = if randomized {
                reference_uniform(seed, example_id)
            } else {
                1.0
            };
            let penalty = rank.saturating_sub(k_reg) as f64;
            rho + u * p[y] + lambda * penalty
        }
    }
}

/// Threshold by scanning every candidate: the smallest calibration score `t`
/// with at least `j` scores `<= t`, where `j = ceil((n+1)(den-num)/den)`
/// computed in integers for `alpha = num/den`. `+inf` when no candidate works.
pub fn oracle_threshold(cal_scores: &[f64], alpha_num: u64, alpha_den: u64) -> f64 {
    let n = cal_scores.len() as u64;
    let j = ((n + 1) * (alpha_den - alpha_num))
        .div_ceil(alpha_den)
        .max(1);
    let mut candidates = cal_scores.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &candidates {
        let count = cal_scores.iter().filter(|&&s| s <= t).count() as u64;
        if count >= j {
            return t;
        }
    }
    f64::INFINITY
}

/// Every label whose oracle score is `<= q`, ordered by probability then id.
pub fn oracle_set(p: &[f64], q: f64, method: OracleMethod, example_id: &str) -> Vec<usize> {
    let mut members: Vec<usize> = (0..p.len())
        .filter(|&y| q == f64::INFINITY || oracle_score(p, y, method, example_id) <= q)
        .collect();
    members.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    members
}
