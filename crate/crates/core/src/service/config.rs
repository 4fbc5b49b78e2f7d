use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentPolicy, ThinkTime};
use crate::conformal::{
    empirical_risk, match_coverage, topk_sets, CalibrationResult, ClassId, RapsParams, ScoreMethod,
    SetBuilder, Treatment,
};
use crate::data::{select_practice, DatasetManifest, LoadedDataset};
use crate::error::{Error, Result};

fn default_practice_count() -> usize {
    20
}

fn default_true() -> bool {
    true
}

fn default_coverage_template() -> String {
    "The correct answer is among the highlighted options {coverage}% of the time.".into()
}

/// A trial at a fixed test-phase position whose correct answer is given in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionCheck {
    /// 0-based index into the test phase, counting attention checks.
    pub position: usize,
    pub expected_response: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: PathBuf,
    /// Frozen calibration; recomputed from the calibration split when absent.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub log_dir: PathBuf,
    pub assets_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    /// Maximum amount by which a client-reported response time may exceed
    /// the server's serve-to-answer window.
    pub timing_guard_ms: u64,
    /// Simulated cohorts report think times far longer than the wall-clock
    /// window and turn this off.
    pub enforce_timing: bool,
    /// Unfinished sessions idle this long stop counting toward arm balance.
    pub stale_after_secs: Option<u64>,
    pub checkpoint_every: u64,
    pub fsync: bool,
    pub consent_text: String,
    pub instructions_text: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            log_dir: PathBuf::from("trial-log"),
            assets_dir: None,
            ui_dir: None,
            timing_guard_ms: 2000,
            enforce_timing: true,
            stale_after_secs: None,
            checkpoint_every: 1000,
            fsync: true,
            consent_text: "Your responses and response times will be recorded for research.".into(),
            instructions_text: "Select the label that best describes each stimulus.".into(),
        }
    }
}

/// Simulated-participant settings. Each arm uses its explicit policy when
/// given, otherwise one solved from `target_accuracy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsConfig {
    pub policies: BTreeMap<Treatment, AgentPolicy>,
    pub target_accuracy: BTreeMap<Treatment, f64>,
    pub think_time: ThinkTime,
    pub attention_pass: f64,
    pub seed: u64,
    /// Sessions driven at once.
    pub concurrency: usize,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            policies: BTreeMap::new(),
            target_accuracy: BTreeMap::new(),
            think_time: ThinkTime::default(),
            attention_pass: 1.0,
            seed: 0,
            concurrency: 16,
        }
    }
}

/// One task's experiment, as read from the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task_id: String,
    pub treatments: Vec<Treatment>,
    pub k: usize,
    pub raps_params: RapsParams,
    pub m_trials: usize,
    #[serde(default = "default_practice_count")]
    pub practice_count: usize,
    #[serde(default)]
    pub stimulus_display_ms: Option<u64>,
    /// Must equal `1 - alpha_hat` when given.
    #[serde(default)]
    pub stated_coverage: Option<f64>,
    #[serde(default)]
    pub attention_checks: Vec<AttentionCheck>,
    pub participants_per_arm: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub stratify: bool,
    /// `{coverage}` is replaced by the stated coverage in percent.
    #[serde(default = "default_coverage_template")]
    pub coverage_template: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub service: ServiceConfig,
    #[serde(default)]
    pub agents: AgentsConfig,
}

impl ExperimentConfig {
    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.manifest);
        if let Some(p) = self.dataset.calibration.as_mut() {
            fix(p);
        }
        fix(&mut self.service.log_dir);
        if let Some(p) = self.service.assets_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.service.ui_dir.as_mut() {
            fix(p);
        }
    }

    pub fn test_trials(&self) -> usize {
        self.m_trials + self.attention_checks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.m_trials < 1 {
            return bad("m_trials must be at least 1".into());
        }
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        let unique: HashSet<_> = self.treatments.iter().collect();
        if unique.len() != self.treatments.len() {
            return bad("treatments must not repeat".into());
        }
        if let Some(c) = self.stated_coverage {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("stated_coverage {c} outside [0, 1]"));
            }
        }
        let mut positions = HashSet::new();
        for check in &self.attention_checks {
            if check.position >= self.test_trials() {
                return bad(format!(
                    "attention check position {} outside {} test trials",
                    check.position,
                    self.test_trials()
                ));
            }
            if !positions.insert(check.position) {
                return bad(format!(
                    "two attention checks at position {}",
                    check.position
                ));
            }
        }
        Ok(())
    }

    /// Loads the dataset, freezes the calibration and precomputes everything
    /// the trial service needs.
    pub fn resolve(self) -> Result<ResolvedExperiment> {
        let dataset = DatasetManifest::load(&self.dataset.manifest)?;
        ResolvedExperiment::new(self, dataset)
    }
}

/// A validated config with its dataset, frozen calibration and set builders.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub dataset: LoadedDataset,
    /// Top-k empirical risk on the calibration split.
    pub alpha_hat: f64,
    pub calibration: CalibrationResult,
    pub stated_coverage: f64,
    pub builders: BTreeMap<Treatment, SetBuilder>,
    /// Shared by every participant and never used as a test stimulus.
    pub practice_ids: Vec<String>,
}

impl ResolvedExperiment {
    pub fn new(config: ExperimentConfig, dataset: LoadedDataset) -> Result<Self> {
        config.validate()?;
        if dataset.manifest.task_id != config.task_id {
            return Err(Error::Config(format!(
                "config task {:?} but manifest task {:?}",
                config.task_id, dataset.manifest.task_id
            )));
        }
        let m = dataset.label_space().len();
        if config.k > m {
            return Err(Error::Config(format!(
                "k = {} exceeds {m} classes",
                config.k
            )));
        }
        config
            .raps_params
            .validate(m)
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(c) = config
            .attention_checks
            .iter()
            .find(|c| c.expected_response >= m)
        {
            return Err(Error::Config(format!(
                "attention check expects class {} of {m}",
                c.expected_response
            )));
        }

        let (alpha_hat, calibration) = match &config.dataset.calibration {
            None => match_coverage(&dataset.cal, config.k, config.raps_params)?,
            Some(path) => {
                let calib = CalibrationResult::read(path)?;
                let sets = topk_sets(&dataset.cal, config.k, config.raps_params.temperature)?;
                let truths: Vec<ClassId> = dataset
                    .cal
                    .examples()
                    .iter()
                    .map(|e| e.true_label)
                    .collect();
                let alpha_hat = empirical_risk(&sets, &truths)?;
                if calib.fingerprint != dataset.cal.fingerprint() {
                    return Err(Error::Config(
                        "calibration fingerprint does not match the calibration split".into(),
                    ));
                }
                if calib.method != ScoreMethod::Raps
                    || calib.params != config.raps_params
                    || calib.num_classes != m
                {
                    return Err(Error::Config(
                        "calibration was made with different settings".into(),
                    ));
                }
                if calib.alpha != alpha_hat {
                    return Err(Error::Config(format!(
                        "calibration alpha {} differs from top-{} empirical risk {alpha_hat}",
                        calib.alpha, config.k
                    )));
                }
                (alpha_hat, calib)
            }
        };
        let stated_coverage = calibration.stated_coverage();
        if let Some(c) = config.stated_coverage {
            if (c - stated_coverage).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "stated_coverage {c} differs from 1 - alpha_hat = {stated_coverage}"
                )));
            }
        }

        let builders = config
            .treatments
            .iter()
            .map(|&t| {
                let b = match t {
                    Treatment::Control => SetBuilder::Control,
                    Treatment::Topk => SetBuilder::TopK {
                        k: config.k,
                        temperature: config.raps_params.temperature,
                        stated_coverage: Some(stated_coverage),
                    },
                    Treatment::Conformal => SetBuilder::Conformal(calibration.clone()),
                };
                (t, b)
            })
            .collect();

        let practice_ids = select_practice(
            dataset.test.examples(),
            config.practice_count,
            m,
            config.seed,
        )?;
        let eligible = dataset.test.len() - practice_ids.len();
        if eligible < config.m_trials {
            return Err(Error::Config(format!(
                "{} test trials requested but only {eligible} test examples remain after practice",
                config.m_trials
            )));
        }
        Ok(Self {
            config,
            dataset,
            alpha_hat,
            calibration,
            stated_coverage,
            builders,
            practice_ids,
        })
    }

    pub fn coverage_text(&self) -> String {
        self.config.coverage_template.replace(
            "{coverage}",
            &format!("{:.1}", self.stated_coverage * 100.0),
        )
    }
}
