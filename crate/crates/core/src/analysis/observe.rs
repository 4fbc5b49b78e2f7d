use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::conformal::{ClassId, LabelSpace, LogitTable, Treatment};
use crate::error::{Error, Result};
use crate::service::{ExportLine, SessionSummary, TrialPhase, TrialRecord};
use crate::stats::{mean, sample_variance, standard_error};

/// One participant's test-phase outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub participant_id: String,
    pub session_id: String,
    pub arm: Treatment,
    pub accuracy: f64,
    pub correct: usize,
    pub total_time_ms: u64,
    pub m: usize,
}

/// Observations plus the test trials they were computed from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub observations: Vec<Observation>,
    /// Test-phase, non-attention trials of the observed sessions.
    pub trials: Vec<TrialRecord>,
    pub sessions: usize,
    pub excluded: usize,
    pub consent_declined: usize,
    /// Sessions without a summary or whose records disagree with it.
    pub partial_skipped: usize,
}

/// Checks record-level invariants against the label space.
pub fn validate_records(lines: &[ExportLine], labels: &LabelSpace, task_id: &str) -> Result<()> {
    for line in lines {
        let (task, session) = match line {
            ExportLine::Trial(r) => (&r.task_id, &r.session_id),
            ExportLine::Session(s) => (&s.task_id, &s.session_id),
        };
        if task != task_id {
            return Err(Error::invalid(format!(
                "session {session} belongs to task {task:?}, expected {task_id:?}"
            )));
        }
        let ExportLine::Trial(r) = line else { continue };
        let at = format!(
            "session {} {:?} trial {}",
            r.session_id, r.phase, r.trial_index
        );
        labels
            .check(r.response)
            .map_err(|e| Error::invalid(format!("{at}: response: {e}")))?;
        labels
            .check(r.true_label)
            .map_err(|e| Error::invalid(format!("{at}: true_label: {e}")))?;
        if r.correct != (r.response == r.true_label) {
            return Err(Error::invalid(format!(
                "{at}: correct flag disagrees with labels"
            )));
        }
        if r.response_ms == 0 {
            return Err(Error::invalid(format!(
                "{at}: response_ms must be positive"
            )));
        }
        if r.answered_at < r.served_at {
            return Err(Error::invalid(format!("{at}: answered before served")));
        }
        if let Some(&c) = r.shown_set.iter().find(|&&c| !labels.contains(c)) {
            return Err(Error::invalid(format!(
                "{at}: shown set contains unknown class {c}"
            )));
        }
    }
    Ok(())
}

/// One observation per completed, non-excluded session.
///
/// Accuracy and time are recounted from the test trials and must agree with
/// the session summary; sessions that do not are skipped and counted.
pub fn observations(lines: &[ExportLine]) -> ObservationSet {
    let mut order: Vec<&str> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut trials: HashMap<&str, Vec<&TrialRecord>> = HashMap::new();
    let mut summaries: HashMap<&str, &SessionSummary> = HashMap::new();
    for line in lines {
        let id = match line {
            ExportLine::Trial(r) => {
                trials.entry(&r.session_id).or_default().push(r);
                r.session_id.as_str()
            }
            ExportLine::Session(s) => {
                summaries.insert(&s.session_id, s);
                s.session_id.as_str()
            }
        };
        if seen.insert(id) {
            order.push(id);
        }
    }

    let mut out = ObservationSet {
        sessions: order.len(),
        ..Default::default()
    };
    for id in order {
        let Some(summary) = summaries.get(id) else {
            tracing::warn!(session = id, "skipping session without summary");
            out.partial_skipped += 1;
            continue;
        };
        if summary.consent_declined {
            out.consent_declined += 1;
            continue;
        }
        if summary.excluded {
            out.excluded += 1;
            continue;
        }
        let test: Vec<&TrialRecord> = trials
            .get(id)
            .into_iter()
            .flatten()
            .copied()
            .filter(|r| r.phase == TrialPhase::Test && !r.is_attention_check)
            .collect();
        let m = test.len();
        let correct = test.iter().filter(|r| r.correct).count();
        let total_time_ms: u64 = test.iter().map(|r| r.response_ms).sum();
        if m == 0
            || m != summary.m
            || correct != summary.correct
            || total_time_ms != summary.total_time_ms
        {
            tracing::warn!(
                session = id,
                "skipping session whose records disagree with its summary"
            );
            out.partial_skipped += 1;
            continue;
        }
        out.observations.push(Observation {
            participant_id: summary.participant_id.clone(),
            session_id: summary.session_id.clone(),
            arm: summary.treatment,
            accuracy: correct as f64 / m as f64,
            correct,
            total_time_ms,
            m,
        });
        out.trials.extend(test.into_iter().cloned());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adoption {
    pub arm: Treatment,
    /// Trials with a non-empty shown set.
    pub trials: usize,
    pub adopted: usize,
    pub rate: f64,
}

/// Fraction of trials whose response lies in the shown set; trials with an
/// empty set are left out of the denominator.
pub fn adoption_rate(trials: &[TrialRecord], arm: Treatment) -> Result<Adoption> {
    if arm == Treatment::Control {
        return Err(Error::invalid("the control arm shows no set to adopt"));
    }
    let (mut n, mut adopted) = (0, 0);
    for r in trials
        .iter()
        .filter(|r| r.treatment == arm && !r.shown_set.is_empty())
    {
        n += 1;
        adopted += usize::from(r.shown_set.contains(&r.response));
    }
    if n == 0 {
        return Err(Error::invalid(format!(
            "no {} trials with a non-empty set",
            arm.as_str()
        )));
    }
    Ok(Adoption {
        arm,
        trials: n,
        adopted,
        rate: adopted as f64 / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucket {
    pub arm: Treatment,
    pub set_size: usize,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_se: Option<f64>,
    pub time_mean_ms: f64,
    pub time_se_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub arm: Treatment,
    pub set_size: usize,
    pub count: usize,
}

/// Trial-level accuracy and time per (arm, set size).
///
/// Conformal trials use the size of the set shown. Other arms are keyed by
/// the conformal set size of the same example when `conformal_sizes` is
/// given, otherwise by the size of their own shown set.
pub fn conditional_by_set_size(
    trials: &[TrialRecord],
    conformal_sizes: Option<&HashMap<String, usize>>,
) -> Vec<SizeBucket> {
    let mut groups: BTreeMap<(Treatment, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in trials {
        let size = match (r.treatment, conformal_sizes) {
            (Treatment::Conformal, _) | (_, None) => Some(r.shown_set.len()),
            (_, Some(sizes)) => sizes.get(&r.example_id).copied(),
        };
        let Some(size) = size else { continue };
        let g = groups.entry((r.treatment, size)).or_default();
        g.0.push(if r.correct { 1.0 } else { 0.0 });
        g.1.push(r.response_ms as f64);
    }
    groups
        .into_iter()
        .map(|((arm, set_size), (acc, time))| SizeBucket {
            arm,
            set_size,
            n: acc.len(),
            accuracy_mean: mean(&acc),
            accuracy_se: standard_error(&acc),
            time_mean_ms: mean(&time),
            time_se_ms: standard_error(&time),
        })
        .collect()
}

/// Counts of shown-set sizes per arm.
pub fn set_size_histogram(trials: &[TrialRecord]) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<(Treatment, usize), usize> = BTreeMap::new();
    for r in trials {
        *counts.entry((r.treatment, r.shown_set.len())).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((arm, set_size), count)| HistogramBin {
            arm,
            set_size,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_id: ClassId,
    pub name: String,
    /// Pooled trial accuracy per arm, for arms with trials of this class.
    pub arms: BTreeMap<Treatment, f64>,
    pub trials: BTreeMap<Treatment, usize>,
    pub model_top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub rows: Vec<ClassRow>,
    /// Sample standard deviation across classes of each arm's accuracy.
    pub arm_std: BTreeMap<Treatment, f64>,
    pub model_top1_std: Option<f64>,
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    (xs.len() >= 2).then(|| sample_variance(xs).sqrt())
}

/// Per-class accuracy of each arm and, when `model` is given, of the model's
/// top-1 prediction on that table. Classes with no trials are omitted.
pub fn per_class_accuracy(
    trials: &[TrialRecord],
    labels: &LabelSpace,
    model: Option<(&LogitTable, f64)>,
) -> Result<PerClassAccuracy> {
    let mut counts: BTreeMap<ClassId, BTreeMap<Treatment, (usize, usize)>> = BTreeMap::new();
    for r in trials {
        let c = counts
            .entry(r.true_label)
            .or_default()
            .entry(r.treatment)
            .or_default();
        c.0 += usize::from(r.correct);
        c.1 += 1;
    }
    let mut model_acc: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    if let Some((table, temperature)) = model {
        for ex in table.examples() {
            let p = crate::conformal::temperature_softmax(&ex.logits, temperature)?;
            let top = p.rank().order()[0];
            let c = model_acc.entry(ex.true_label).or_default();
            c.0 += usize::from(top == ex.true_label);
            c.1 += 1;
        }
    }
    let rows: Vec<ClassRow> = counts
        .into_iter()
        .map(|(class_id, arms)| ClassRow {
            class_id,
            name: labels.name(class_id).unwrap_or_default().to_owned(),
            trials: arms.iter().map(|(&a, &(_, n))| (a, n)).collect(),
            arms: arms
                .iter()
                .map(|(&a, &(k, n))| (a, k as f64 / n as f64))
                .collect(),
            model_top1: model_acc.get(&class_id).map(|&(k, n)| k as f64 / n as f64),
        })
        .collect();
    let mut by_arm: BTreeMap<Treatment, Vec<f64>> = BTreeMap::new();
    for row in &rows {
        for (&a, &acc) in &row.arms {
            by_arm.entry(a).or_default().push(acc);
        }
    }
    let model_col: Vec<f64> = rows.iter().filter_map(|r| r.model_top1).collect();
    Ok(PerClassAccuracy {
        arm_std: by_arm
            .iter()
            .filter_map(|(&a, xs)| sample_std(xs).map(|s| (a, s)))
            .collect(),
        model_top1_std: if model.is_some() {
            sample_std(&model_col)
        } else {
            None
        },
        rows,
    })
}
