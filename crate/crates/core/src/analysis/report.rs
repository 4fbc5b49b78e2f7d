use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::observe::*;
use crate::conformal::{evaluate_sets, CoverageReport, Treatment};
use crate::error::{Error, Result};
use crate::service::{ExportLine, ResolvedExperiment};
use crate::stats::{mean, standard_error, welch_t_test, Tail, TestResult};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Compared pairs, first group hypothesized larger for accuracy.
const PAIRS: [(Treatment, Treatment); 3] = [
    (Treatment::Topk, Treatment::Control),
    (Treatment::Conformal, Treatment::Control),
    (Treatment::Conformal, Treatment::Topk),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    TotalTimeMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub task_id: String,
    pub num_classes: usize,
    pub k: usize,
    pub alpha_hat: f64,
    pub stated_coverage: f64,
    pub significance_level: f64,
    pub accuracy_tests: String,
    pub time_tests: String,
    pub multiple_comparison_correction: String,
    pub outlier_trimming: String,
    pub time_measure: String,
    pub standard_error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub sessions: usize,
    pub observations: usize,
    pub excluded: usize,
    pub consent_declined: usize,
    pub partial_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Treatment,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_se: Option<f64>,
    pub time_mean_ms: f64,
    pub time_se_ms: Option<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub metric: Metric,
    pub group1: Treatment,
    pub group2: Treatment,
    pub tail: Tail,
    pub result: Option<TestResult>,
    pub significant: Option<bool>,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: Metadata,
    pub counts: Counts,
    pub arms: Vec<ArmSummary>,
    pub tests: Vec<PairTest>,
    pub adoption: Vec<Adoption>,
    pub set_size_histogram: Vec<HistogramBin>,
    pub conditional_by_set_size: Vec<SizeBucket>,
    pub per_class_accuracy: PerClassAccuracy,
    /// Set coverage and size on the full test split, without humans.
    pub model_performance: Vec<CoverageReport>,
    pub notices: Vec<String>,
}

fn metadata(exp: &ResolvedExperiment) -> Metadata {
    Metadata {
        task_id: exp.config.task_id.clone(),
        num_classes: exp.dataset.label_space().len(),
        k: exp.config.k,
        alpha_hat: exp.alpha_hat,
        stated_coverage: exp.stated_coverage,
        significance_level: SIGNIFICANCE_LEVEL,
        accuracy_tests: "Welch t-test, one-sided, H1: mean(group1) > mean(group2)".into(),
        time_tests: "Welch t-test, two-sided".into(),
        multiple_comparison_correction: "none".into(),
        outlier_trimming: "none".into(),
        time_measure:
            "sum of test-phase response_ms per participant; practice and attention checks excluded"
                .into(),
        standard_error: "sample standard deviation (n-1) / sqrt(n)".into(),
    }
}

fn pair_test(
    metric: Metric,
    g1: Treatment,
    g2: Treatment,
    by_arm: &BTreeMap<Treatment, Vec<&Observation>>,
) -> PairTest {
    let tail = match metric {
        Metric::Accuracy => Tail::OneSidedGreater,
        Metric::TotalTimeMs => Tail::TwoSided,
    };
    let values = |arm: Treatment| -> Vec<f64> {
        by_arm
            .get(&arm)
            .into_iter()
            .flatten()
            .map(|o| match metric {
                Metric::Accuracy => o.accuracy,
                Metric::TotalTimeMs => o.total_time_ms as f64,
            })
            .collect()
    };
    let (x1, x2) = (values(g1), values(g2));
    let mut test = PairTest {
        metric,
        group1: g1,
        group2: g2,
        tail,
        result: None,
        significant: None,
        notice: None,
    };
    if x1.len() < 2 || x2.len() < 2 {
        test.notice = Some(format!(
            "skipped: {} has {} and {} has {} observations; at least 2 each are needed",
            g1.as_str(),
            x1.len(),
            g2.as_str(),
            x2.len()
        ));
        return test;
    }
    match welch_t_test(&x1, &x2, tail) {
        Ok(r) => {
            test.significant = Some(r.p_value < SIGNIFICANCE_LEVEL);
            test.result = Some(r);
        }
        Err(e) => test.notice = Some(format!("skipped: {e}")),
    }
    test
}

/// Builds the full analysis from exported records.
///
/// Fails when records violate invariants or belong to another task; sessions
/// that are merely incomplete are skipped and counted.
pub fn report(lines: &[ExportLine], exp: &ResolvedExperiment) -> Result<Report> {
    let labels = exp.dataset.label_space();
    validate_records(lines, labels, &exp.config.task_id)?;
    let obs = observations(lines);
    let mut notices = Vec::new();
    if obs.partial_skipped > 0 {
        notices.push(format!(
            "{} incomplete session(s) skipped",
            obs.partial_skipped
        ));
    }

    let mut by_arm: BTreeMap<Treatment, Vec<&Observation>> = BTreeMap::new();
    for o in &obs.observations {
        by_arm.entry(o.arm).or_default().push(o);
    }
    let arms = by_arm
        .iter()
        .map(|(&arm, os)| {
            let acc: Vec<f64> = os.iter().map(|o| o.accuracy).collect();
            let time: Vec<f64> = os.iter().map(|o| o.total_time_ms as f64).collect();
            ArmSummary {
                arm,
                n: os.len(),
                accuracy_mean: mean(&acc),
                accuracy_se: standard_error(&acc),
                time_mean_ms: mean(&time),
                time_se_ms: standard_error(&time),
                trials: os.iter().map(|o| o.m).sum(),
            }
        })
        .collect();

    let present: Vec<Treatment> = exp.config.treatments.clone();
    let mut tests = Vec::new();
    for metric in [Metric::Accuracy, Metric::TotalTimeMs] {
        for (g1, g2) in PAIRS {
            if present.contains(&g1) && present.contains(&g2) {
                let t = pair_test(metric, g1, g2, &by_arm);
                if let Some(n) = &t.notice {
                    notices.push(format!(
                        "{metric:?} {} vs {}: {n}",
                        g1.as_str(),
                        g2.as_str()
                    ));
                }
                tests.push(t);
            }
        }
    }

    let mut adoption = Vec::new();
    for &arm in &present {
        if arm == Treatment::Control {
            continue;
        }
        match adoption_rate(&obs.trials, arm) {
            Ok(a) => adoption.push(a),
            Err(e) => notices.push(format!("adoption {}: {e}", arm.as_str())),
        }
    }

    let conformal_sizes: HashMap<String, usize> = exp
        .dataset
        .test
        .examples()
        .iter()
        .map(|ex| {
            crate::conformal::conformal_set_from_logits(
                &ex.logits,
                &exp.calibration,
                &ex.example_id,
            )
            .map(|s| (ex.example_id.clone(), s.len()))
        })
        .collect::<Result<_>>()?;

    let mut model_performance = Vec::new();
    for &arm in &present {
        if let Some(b) = exp.builders.get(&arm).filter(|_| arm != Treatment::Control) {
            model_performance.push(evaluate_sets(&exp.dataset.test, b, exp.config.k)?);
        }
    }

    Ok(Report {
        metadata: metadata(exp),
        counts: Counts {
            sessions: obs.sessions,
            observations: obs.observations.len(),
            excluded: obs.excluded,
            consent_declined: obs.consent_declined,
            partial_skipped: obs.partial_skipped,
        },
        arms,
        tests,
        adoption,
        set_size_histogram: set_size_histogram(&obs.trials),
        conditional_by_set_size: conditional_by_set_size(&obs.trials, Some(&conformal_sizes)),
        per_class_accuracy: per_class_accuracy(
            &obs.trials,
            labels,
            Some((&exp.dataset.test, exp.config.raps_params.temperature)),
        )?,
        model_performance,
        notices,
    })
}

impl Report {
    pub fn test(&self, metric: Metric, g1: Treatment, g2: Treatment) -> Option<&PairTest> {
        self.tests
            .iter()
            .find(|t| t.metric == metric && t.group1 == g1 && t.group2 == g2)
    }

    pub fn arm(&self, arm: Treatment) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the plot-ready CSV files described in `schema/report_schema.md`.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_csv(dir.join("arm_summary.csv"), &self.arms)?;
        write_csv(
            dir.join("tests.csv"),
            &self.tests.iter().map(TestRow::from).collect::<Vec<_>>(),
        )?;
        write_csv(dir.join("adoption.csv"), &self.adoption)?;
        write_csv(dir.join("set_size_histogram.csv"), &self.set_size_histogram)?;
        write_csv(
            dir.join("conditional_by_set_size.csv"),
            &self.conditional_by_set_size,
        )?;
        let arms: Vec<Treatment> = self.arms.iter().map(|a| a.arm).collect();
        let class_rows: Vec<ClassCsvRow> = self
            .per_class_accuracy
            .rows
            .iter()
            .flat_map(|row| {
                let model = row.model_top1.map(|acc| ClassCsvRow {
                    class_id: row.class_id,
                    name: row.name.clone(),
                    source: "model_top1".into(),
                    accuracy: acc,
                    trials: None,
                });
                arms.iter()
                    .filter_map(|a| {
                        row.arms.get(a).map(|&acc| ClassCsvRow {
                            class_id: row.class_id,
                            name: row.name.clone(),
                            source: a.as_str().into(),
                            accuracy: acc,
                            trials: row.trials.get(a).copied(),
                        })
                    })
                    .chain(model)
                    .collect::<Vec<_>>()
            })
            .collect();
        write_csv(dir.join("per_class_accuracy.csv"), &class_rows)?;
        let perf: Vec<ModelRow> = self.model_performance.iter().map(ModelRow::from).collect();
        write_csv(dir.join("model_performance.csv"), &perf)?;
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Io(std::io::Error::other(format!("{}: {e}", path.display())));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TestRow {
    metric: Metric,
    group1: Treatment,
    group2: Treatment,
    tail: Tail,
    n1: Option<usize>,
    n2: Option<usize>,
    mean1: Option<f64>,
    mean2: Option<f64>,
    var1: Option<f64>,
    var2: Option<f64>,
    t_stat: Option<f64>,
    dof: Option<f64>,
    p_value: Option<f64>,
    effect_size_d: Option<f64>,
    significant: Option<bool>,
    notice: Option<String>,
}

impl From<&PairTest> for TestRow {
    fn from(t: &PairTest) -> Self {
        let r = t.result.as_ref();
        TestRow {
            metric: t.metric,
            group1: t.group1,
            group2: t.group2,
            tail: t.tail,
            n1: r.map(|r| r.n1),
            n2: r.map(|r| r.n2),
            mean1: r.map(|r| r.mean1),
            mean2: r.map(|r| r.mean2),
            var1: r.map(|r| r.var1),
            var2: r.map(|r| r.var2),
            t_stat: r.map(|r| r.t_stat),
            dof: r.map(|r| r.dof),
            p_value: r.map(|r| r.p_value),
            effect_size_d: r.map(|r| r.effect_size_d),
            significant: t.significant,
            notice: t.notice.clone(),
        }
    }
}

#[derive(Serialize)]
struct ClassCsvRow {
    class_id: usize,
    name: String,
    source: String,
    accuracy: f64,
    trials: Option<usize>,
}

#[derive(Serialize)]
struct ModelRow {
    arm: Treatment,
    n: usize,
    coverage: f64,
    avg_size: f64,
    top1_accuracy: f64,
    accuracy_k: usize,
    topk_accuracy: f64,
}

impl From<&CoverageReport> for ModelRow {
    fn from(c: &CoverageReport) -> Self {
        ModelRow {
            arm: c.treatment,
            n: c.n,
            coverage: c.coverage,
            avg_size: c.avg_size,
            top1_accuracy: c.top1_accuracy,
            accuracy_k: c.accuracy_k,
            topk_accuracy: c.topk_accuracy,
        }
    }
}
