//! Small experiments built through the public API for integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use hitl_conformal::conformal::ClassId;
use hitl_conformal::service::{
    Clock, ExperimentConfig, ResolvedExperiment, SubmitResponse, TrialPayload, TrialService,
};
use hitl_conformal::synth::{demo_config, write_task, SyntheticModel};

/// 4 classes, 30 calibration and 20 test examples per class, 8 test trials,
/// 4 practice trials, 3 participants per arm, no attention checks.
pub fn small_config(dir: &Path) -> ExperimentConfig {
    let manifest = write_task(dir, "small", &SyntheticModel::new(4), 30, 20, 5).unwrap();
    let mut cfg = demo_config("small");
    cfg.m_trials = 8;
    cfg.practice_count = 4;
    cfg.participants_per_arm = 3;
    cfg.attention_checks.clear();
    cfg.dataset.manifest = manifest;
    cfg.service.log_dir = dir.join("log");
    cfg.service.fsync = false;
    cfg
}

pub fn small_experiment(dir: &Path) -> ResolvedExperiment {
    small_config(dir).resolve().unwrap()
}

/// A clock that only moves when told to.
#[derive(Clone)]
pub struct ManualClock(Arc<Mutex<DateTime<Utc>>>);

impl ManualClock {
    pub fn new() -> Self {
        ManualClock(Arc::new(Mutex::new(
            DateTime::parse_from_rfc3339("2026-03-01T12:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
        )))
    }

    pub fn advance_ms(&self, ms: i64) {
        *self.0.lock().unwrap() += Duration::milliseconds(ms);
    }

    pub fn advance_secs(&self, s: i64) {
        self.advance_ms(s * 1000);
    }

    pub fn clock(&self) -> Clock {
        let inner = self.0.clone();
        Arc::new(move || *inner.lock().unwrap())
    }
}

/// Consents, skips instructions and answers every trial with `answer`.
pub fn run_through(svc: &TrialService, id: &str, answer: impl Fn(&TrialPayload) -> ClassId) {
    svc.consent(id, true).unwrap();
    svc.complete_instructions(id).unwrap();
    while let Ok(p) = svc.next_trial(id) {
        let req = SubmitResponse {
            trial_index: p.trial_index,
            response: answer(&p),
            response_ms: 1,
            phase: None,
        };
        svc.submit_response(id, &req).unwrap();
    }
}
