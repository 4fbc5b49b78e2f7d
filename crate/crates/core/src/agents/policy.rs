use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{ClassId, Treatment};
use crate::error::{Error, Result};
use crate::rng;
use crate::service::{ResolvedExperiment, TrialPayload};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThinkTime {
    pub base_ms: f64,
    /// Per label shown plus per prediction-set member.
    pub per_option_ms: f64,
    /// Half-width of the uniform jitter added to each response time.
    pub jitter_ms: f64,
}

impl Default for ThinkTime {
    fn default() -> Self {
        Self {
            base_ms: 1500.0,
            per_option_ms: 120.0,
            jitter_ms: 400.0,
        }
    }
}

fn default_one() -> f64 {
    1.0
}

/// A memoryless simulated participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPolicy {
    /// Probability of answering from the shown set when it is non-empty.
    pub adopt_prob: f64,
    /// Probability of picking the true label when adopting a set that
    /// contains it; otherwise uniform over the set.
    pub in_set_skill: f64,
    /// Probability of picking the true label when not adopting; otherwise
    /// uniform over all labels.
    pub base_skill: f64,
    #[serde(default)]
    pub think_time: ThinkTime,
    /// Probability of answering an attention check as instructed.
    #[serde(default = "default_one")]
    pub attention_pass: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub response: ClassId,
    pub response_ms: u64,
    pub adopted: bool,
}

impl AgentPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("adopt_prob", self.adopt_prob),
            ("in_set_skill", self.in_set_skill),
            ("base_skill", self.base_skill),
            ("attention_pass", self.attention_pass),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let t = self.think_time;
        if !(t.base_ms >= 0.0 && t.per_option_ms >= 0.0 && t.jitter_ms >= 0.0) {
            return Err(Error::invalid("think times must be non-negative"));
        }
        Ok(())
    }

    /// Chooses a response. Deterministic in `(seed, agent_id, phase, trial_index)`.
    ///
    /// `truth` is the simulation's label oracle; attention checks are
    /// answered from the prompt instead.
    pub fn act(&self, agent_id: &str, payload: &TrialPayload, truth: ClassId) -> Action {
        let key = format!("{agent_id}/{:?}/{}", payload.phase, payload.trial_index);
        let mut rng = rng::stream("agent-act", self.seed, &key);
        let labels: Vec<ClassId> = payload.labels.iter().map(|l| l.id).collect();
        let set = payload.prediction_set.as_deref().unwrap_or(&[]);

        let pick_other = |rng: &mut rand_chacha::ChaCha8Rng, avoid: ClassId| {
            let others: Vec<ClassId> = labels.iter().copied().filter(|&c| c != avoid).collect();
            *others.choose(rng).unwrap_or(&avoid)
        };

        let (response, adopted) = if let Some(check) = &payload.attention_check {
            let r = if rng.random::<f64>() < self.attention_pass {
                check.expected_response
            } else {
                pick_other(&mut rng, check.expected_response)
            };
            (r, false)
        } else if !set.is_empty() && rng.random::<f64>() < self.adopt_prob {
            let r = if set.contains(&truth) && rng.random::<f64>() < self.in_set_skill {
                truth
            } else {
                *set.choose(&mut rng).expect("non-empty set")
            };
            (r, true)
        } else {
            let r = if rng.random::<f64>() < self.base_skill {
                truth
            } else {
                *labels.choose(&mut rng).unwrap_or(&truth)
            };
            (r, false)
        };

        let t = self.think_time;
        let jitter = if t.jitter_ms > 0.0 {
            rng.random_range(-t.jitter_ms..=t.jitter_ms)
        } else {
            0.0
        };
        let ms = t.base_ms + t.per_option_ms * (labels.len() + set.len()) as f64 + jitter;
        Action {
            response,
            response_ms: ms.round().max(1.0) as u64,
            adopted,
        }
    }
}

/// Set statistics of one arm over the stimuli a participant can draw,
/// weighted by the sampling design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMoments {
    /// P(set is non-empty).
    pub nonempty: f64,
    /// E[1{y in C}].
    pub covered: f64,
    /// E[1{y in C} / |C|], with empty sets contributing zero.
    pub covered_over_size: f64,
    pub num_classes: usize,
}

impl ArmMoments {
    pub fn decline_accuracy(&self, base_skill: f64) -> f64 {
        base_skill + (1.0 - base_skill) / self.num_classes as f64
    }

    /// Expected test accuracy of a policy, excluding attention checks.
    pub fn expected_accuracy(&self, p: &AgentPolicy) -> f64 {
        let adopt = p.adopt_prob * self.nonempty;
        let in_set =
            p.in_set_skill * self.covered + (1.0 - p.in_set_skill) * self.covered_over_size;
        p.adopt_prob * in_set + (1.0 - adopt) * self.decline_accuracy(p.base_skill)
    }

    /// The `in_set_skill` that gives `target` accuracy, all else fixed.
    pub fn solve_in_set_skill(&self, target: f64, adopt_prob: f64, base_skill: f64) -> Result<f64> {
        let slope = adopt_prob * (self.covered - self.covered_over_size);
        let at_zero = adopt_prob * self.covered_over_size
            + (1.0 - adopt_prob * self.nonempty) * self.decline_accuracy(base_skill);
        if slope <= 0.0 {
            return Err(Error::invalid("in_set_skill has no effect for this arm"));
        }
        let s = (target - at_zero) / slope;
        if !(-1e-12..=1.0 + 1e-12).contains(&s) {
            return Err(Error::invalid(format!(
                "target accuracy {target} unreachable: range is [{at_zero}, {}]",
                at_zero + slope
            )));
        }
        Ok(s.clamp(0.0, 1.0))
    }
}

/// Class weights of a single participant draw under the configured sampling.
fn class_weights(exp: &ResolvedExperiment, eligible_counts: &[usize]) -> Vec<f64> {
    let m_classes = eligible_counts.len();
    let total: usize = eligible_counts.iter().sum();
    if !exp.config.stratify {
        return eligible_counts
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect();
    }
    let m = exp.config.m_trials;
    let base = m / m_classes;
    let extra = m % m_classes;
    let candidates = eligible_counts.iter().filter(|&&n| n > base).count();
    eligible_counts
        .iter()
        .map(|&n| {
            let bump = if n > base && candidates > 0 {
                extra as f64 / candidates as f64
            } else {
                0.0
            };
            (base as f64 + bump) / m as f64
        })
        .collect()
}

/// Computes [`ArmMoments`] by enumerating the sets shown for every
/// non-practice test example.
pub fn arm_moments(exp: &ResolvedExperiment, arm: Treatment) -> Result<ArmMoments> {
    let builder = exp
        .builders
        .get(&arm)
        .ok_or_else(|| Error::invalid(format!("arm {} not configured", arm.as_str())))?;
    let m_classes = exp.dataset.label_space().len();
    let practice: HashSet<&str> = exp.practice_ids.iter().map(String::as_str).collect();
    let mut counts = vec![0usize; m_classes];
    let mut sums = vec![[0.0f64; 3]; m_classes];
    for ex in exp.dataset.test.examples() {
        if practice.contains(ex.example_id.as_str()) {
            continue;
        }
        counts[ex.true_label] += 1;
        if arm == Treatment::Control {
            continue;
        }
        let set = builder.build(ex)?;
        if set.is_empty() {
            continue;
        }
        let acc = &mut sums[ex.true_label];
        acc[0] += 1.0;
        if set.contains(ex.true_label) {
            acc[1] += 1.0;
            acc[2] += 1.0 / set.len() as f64;
        }
    }
    let weights = class_weights(exp, &counts);
    let mut out = [0.0; 3];
    for ((w, n), s) in weights.iter().zip(&counts).zip(&sums) {
        if *n > 0 {
            for i in 0..3 {
                out[i] += w * s[i] / *n as f64;
            }
        }
    }
    Ok(ArmMoments {
        nonempty: out[0],
        covered: out[1],
        covered_over_size: out[2],
        num_classes: m_classes,
    })
}

/// Builds one policy per arm: explicit policies win, otherwise arms with a
/// target accuracy get `adopt_prob` = stated coverage, a shared `base_skill`
/// fixed by the control target, and a solved `in_set_skill`.
pub fn resolve_policies(
    exp: &ResolvedExperiment,
    arms: &[Treatment],
) -> Result<BTreeMap<Treatment, AgentPolicy>> {
    let agents = &exp.config.agents;
    let m = exp.dataset.label_space().len() as f64;
    let base_skill = agents
        .target_accuracy
        .get(&Treatment::Control)
        .map(|&t| {
            let b = (t - 1.0 / m) / (1.0 - 1.0 / m);
            if (0.0..=1.0).contains(&b) {
                Ok(b)
            } else {
                Err(Error::invalid(format!(
                    "control target {t} unreachable with {m} classes"
                )))
            }
        })
        .transpose()?;
    let mut out = BTreeMap::new();
    for &arm in arms {
        let policy = if let Some(p) = agents.policies.get(&arm) {
            *p
        } else if let Some(&target) = agents.target_accuracy.get(&arm) {
            let b = base_skill.ok_or_else(|| {
                Error::invalid("target accuracies need a control target to fix base_skill")
            })?;
            let adopt = exp.stated_coverage;
            let s = if arm == Treatment::Control {
                b
            } else {
                arm_moments(exp, arm)?.solve_in_set_skill(target, adopt, b)?
            };
            AgentPolicy {
                adopt_prob: adopt,
                in_set_skill: s,
                base_skill: b,
                think_time: agents.think_time,
                attention_pass: agents.attention_pass,
                seed: agents.seed,
            }
        } else {
            return Err(Error::invalid(format!(
                "no agent policy or target for arm {}",
                arm.as_str()
            )));
        };
        policy.validate()?;
        out.insert(arm, policy);
    }
    Ok(out)
}
