//! Synthetic classifiers for tests, examples and simulated cohorts.
//!
//! Each example gets i.i.d. Gaussian logits plus a per-example boost on the
//! true class drawn uniformly from `[signal_low, signal_high]`, so difficulty
//! varies across examples the way real model confidence does.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::conformal::{ClassId, LabelSpace, LogitExample, LogitTable, RapsParams, Treatment};
use crate::data::{Asset, DatasetManifest, StimulusKind};
use crate::error::Result;
use crate::rng;
use crate::service::{
    AgentsConfig, AttentionCheck, DatasetConfig, ExperimentConfig, ServiceConfig,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticModel {
    pub num_classes: usize,
    pub signal_low: f64,
    pub signal_high: f64,
    pub noise_sd: f64,
}

impl SyntheticModel {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            signal_low: 0.0,
            signal_high: 4.0,
            noise_sd: 1.0,
        }
    }

    pub fn with_signal(mut self, low: f64, high: f64) -> Self {
        self.signal_low = low;
        self.signal_high = high;
        self
    }

    pub fn with_noise(mut self, sd: f64) -> Self {
        self.noise_sd = sd;
        self
    }

    pub fn logits(&self, rng: &mut impl Rng, label: ClassId) -> Vec<f64> {
        let noise = Normal::new(0.0, self.noise_sd).expect("noise sd is finite and non-negative");
        let mut logits: Vec<f64> = (0..self.num_classes).map(|_| noise.sample(rng)).collect();
        logits[label] += rng.random_range(self.signal_low..=self.signal_high);
        logits
    }

    /// `n` examples with labels drawn uniformly at random.
    pub fn iid_table(&self, n: usize, seed: u64, prefix: &str) -> Result<LogitTable> {
        let mut rng = rng::stream("synth-iid", seed, prefix);
        let examples = (0..n)
            .map(|i| {
                let label = rng.random_range(0..self.num_classes);
                LogitExample {
                    example_id: format!("{prefix}{i:06}"),
                    true_label: label,
                    logits: self.logits(&mut rng, label),
                }
            })
            .collect();
        LogitTable::new(LabelSpace::numbered(self.num_classes)?, examples)
    }

    /// Exactly `per_class` examples of every class, in shuffled order.
    pub fn balanced_table(&self, per_class: usize, seed: u64, prefix: &str) -> Result<LogitTable> {
        let mut rng = rng::stream("synth-balanced", seed, prefix);
        let mut labels: Vec<ClassId> = (0..self.num_classes)
            .flat_map(|c| std::iter::repeat_n(c, per_class))
            .collect();
        labels.shuffle(&mut rng);
        let examples = labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| LogitExample {
                example_id: format!("{prefix}{i:06}"),
                true_label: label,
                logits: self.logits(&mut rng, label),
            })
            .collect();
        LogitTable::new(LabelSpace::numbered(self.num_classes)?, examples)
    }
}

/// Writes a complete text task (manifest, calibration and test tables) into `dir`.
///
/// Returns the manifest path.
pub fn write_task(
    dir: &Path,
    task_id: &str,
    model: &SyntheticModel,
    cal_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let cal = model.balanced_table(cal_per_class, seed, "cal-")?;
    let test = model.balanced_table(test_per_class, seed, "test-")?;
    let label_space = cal.label_space().clone();
    cal.write_ndjson(std::fs::File::create(dir.join("cal.ndjson"))?)?;
    test.write_ndjson(std::fs::File::create(dir.join("test.ndjson"))?)?;
    let assets: BTreeMap<String, Asset> = cal
        .examples()
        .iter()
        .chain(test.examples())
        .map(|ex| {
            (
                ex.example_id.clone(),
                Asset::Text {
                    text: format!("Synthetic stimulus {}", ex.example_id),
                    highlight: None,
                },
            )
        })
        .collect();
    let manifest = DatasetManifest {
        task_id: task_id.to_owned(),
        label_space,
        cal_path: "cal.ndjson".into(),
        test_path: "test.ndjson".into(),
        stimulus_kind: StimulusKind::Text,
        assets,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

/// A three-arm experiment over a task written by [`write_task`], with agent
/// accuracy targets of 0.40, 0.55 and 0.65. Paths are relative to the
/// config file.
pub fn demo_config(task_id: &str) -> ExperimentConfig {
    ExperimentConfig {
        task_id: task_id.to_owned(),
        treatments: Treatment::ALL.to_vec(),
        k: 3,
        raps_params: RapsParams {
            lambda: 0.01,
            k_reg: 2,
            temperature: 1.0,
            seed: 7,
            randomized: true,
        },
        m_trials: 50,
        practice_count: 20,
        stimulus_display_ms: None,
        stated_coverage: None,
        attention_checks: vec![
            AttentionCheck {
                position: 12,
                expected_response: 0,
            },
            AttentionCheck {
                position: 37,
                expected_response: 1,
            },
        ],
        participants_per_arm: 50,
        seed: 1,
        stratify: true,
        coverage_template:
            "The correct answer is among the highlighted options {coverage}% of the time.".into(),
        dataset: DatasetConfig {
            manifest: "manifest.json".into(),
            calibration: None,
        },
        service: ServiceConfig {
            log_dir: "trial-log".into(),
            ..ServiceConfig::default()
        },
        agents: AgentsConfig {
            target_accuracy: [
                (Treatment::Control, 0.40),
                (Treatment::Topk, 0.55),
                (Treatment::Conformal, 0.65),
            ]
            .into(),
            seed: 11,
            ..AgentsConfig::default()
        },
    }
}

/// Writes a 10-class synthetic task (200 calibration and 100 test examples
/// per class) and [`demo_config`] as `experiment.toml` into `dir`.
///
/// Returns the config path.
pub fn write_demo_experiment(dir: &Path, seed: u64) -> Result<PathBuf> {
    write_task(
        dir,
        "synthetic-10",
        &SyntheticModel::new(10),
        200,
        100,
        seed,
    )?;
    let path = dir.join("experiment.toml");
    std::fs::write(&path, demo_config("synthetic-10").to_toml()?)?;
    Ok(path)
}
