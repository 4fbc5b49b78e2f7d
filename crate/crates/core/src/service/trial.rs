use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;

use super::config::ResolvedExperiment;
use super::log::{LogEvent, RecordLog, StoreState};
use super::model::*;
use crate::conformal::{ClassId, PredictionSet, Treatment};
use crate::data::{sample_participant_stimuli, Asset};
use crate::error::{Error, Result};
use crate::rng;

/// Message of the enrollment rejection returned once every arm is full.
pub const STUDY_FULL: &str = "study full";

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, Clone, Copy)]
enum TestSlot {
    Stimulus(usize),
    Attention(usize),
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    phase: TrialPhase,
    trial_index: usize,
    served_at: DateTime<Utc>,
}

struct Inner {
    store: StoreState,
    log: RecordLog,
    pending: HashMap<String, Pending>,
}

struct Trial {
    example_id: String,
    stimulus: Asset,
    true_label: ClassId,
    set: Option<PredictionSet>,
    attention: Option<AttentionPrompt>,
}

/// Session lifecycle, arm assignment and durable trial recording.
///
/// All mutations go through one lock: append to the log, then apply.
pub struct TrialService {
    exp: Arc<ResolvedExperiment>,
    practice_set: HashSet<String>,
    test_layout: Vec<TestSlot>,
    labels: Vec<LabelOption>,
    clock: Clock,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for TrialService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrialService")
            .field("task_id", &self.exp.config.task_id)
            .finish()
    }
}

impl TrialService {
    /// Opens (or recovers) the log under `config.service.log_dir`.
    pub fn open(exp: ResolvedExperiment) -> Result<Self> {
        Self::with_clock(exp, Arc::new(Utc::now))
    }

    pub fn with_clock(exp: ResolvedExperiment, clock: Clock) -> Result<Self> {
        let svc = &exp.config.service;
        let (log, store) = RecordLog::open(&svc.log_dir, svc.fsync, svc.checkpoint_every)?;
        let checks: BTreeMap<usize, usize> = exp
            .config
            .attention_checks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.position, i))
            .collect();
        let mut next_stimulus = 0;
        let test_layout = (0..exp.config.test_trials())
            .map(|pos| match checks.get(&pos) {
                Some(&c) => TestSlot::Attention(c),
                None => {
                    next_stimulus += 1;
                    TestSlot::Stimulus(next_stimulus - 1)
                }
            })
            .collect();
        let labels = exp
            .dataset
            .label_space()
            .display_names()
            .iter()
            .enumerate()
            .map(|(id, name)| LabelOption {
                id,
                name: name.clone(),
            })
            .collect();
        Ok(Self {
            practice_set: exp.practice_ids.iter().cloned().collect(),
            test_layout,
            labels,
            clock,
            inner: Mutex::new(Inner {
                store,
                log,
                pending: HashMap::new(),
            }),
            exp: Arc::new(exp),
        })
    }

    pub fn experiment(&self) -> &ResolvedExperiment {
        &self.exp
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn commit(inner: &mut Inner, event: LogEvent) -> Result<()> {
        inner.log.append(&event)?;
        inner.store.apply(event)?;
        if inner.log.checkpoint_due() {
            inner.log.checkpoint(&inner.store)?;
        }
        Ok(())
    }

    pub fn bootstrap(&self) -> Bootstrap {
        let cfg = &self.exp.config;
        Bootstrap {
            task_id: cfg.task_id.clone(),
            stimulus_kind: self.exp.dataset.manifest.stimulus_kind,
            labels: self.labels.clone(),
            practice_trials: self.exp.practice_ids.len(),
            test_trials: cfg.test_trials(),
            stimulus_display_ms: cfg.stimulus_display_ms,
            consent_text: cfg.service.consent_text.clone(),
            instructions_text: cfg.service.instructions_text.clone(),
        }
    }

    fn is_stale(&self, s: &SessionState, now: DateTime<Utc>) -> bool {
        match self.exp.config.service.stale_after_secs {
            Some(secs) => {
                s.phase != Phase::Done && (now - s.last_activity).num_seconds() >= secs as i64
            }
            None => false,
        }
    }

    /// Sessions currently holding a slot in each arm.
    fn arm_counts(&self, store: &StoreState, now: DateTime<Utc>) -> BTreeMap<Treatment, usize> {
        let mut counts: BTreeMap<Treatment, usize> =
            self.exp.config.treatments.iter().map(|&t| (t, 0)).collect();
        for s in store.sessions() {
            let excluded = store.summary(&s.session_id).is_some_and(|sum| sum.excluded);
            if s.consent_declined || excluded || self.is_stale(s, now) {
                continue;
            }
            if let Some(c) = counts.get_mut(&s.treatment) {
                *c += 1;
            }
        }
        counts
    }

    pub fn arm_occupancy(&self) -> BTreeMap<Treatment, usize> {
        let inner = self.lock();
        self.arm_counts(&inner.store, (self.clock)())
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<SessionState> {
        let cfg = &self.exp.config;
        if req.task_id != cfg.task_id {
            return Err(Error::NotFound(format!("task {:?}", req.task_id)));
        }
        let pid = req.participant_id.trim();
        if pid.is_empty() || pid.len() > 256 || pid != req.participant_id {
            return Err(Error::invalid(
                "participant_id must be 1-256 characters without surrounding whitespace",
            ));
        }
        let mut inner = self.lock();
        if inner.store.session_for_participant(pid).is_some() {
            return Err(Error::EnrollmentRejected(format!(
                "participant {pid:?} already enrolled"
            )));
        }
        let now = (self.clock)();
        let enrollment_index = inner.store.sessions().len() as u64;
        let counts = self.arm_counts(&inner.store, now);
        let open: Vec<(Treatment, usize)> = counts
            .into_iter()
            .filter(|&(_, n)| n < cfg.participants_per_arm)
            .collect();
        let fewest = open
            .iter()
            .map(|&(_, n)| n)
            .min()
            .ok_or_else(|| Error::EnrollmentRejected(STUDY_FULL.into()))?;
        let tied: Vec<Treatment> = open
            .iter()
            .filter(|&&(_, n)| n == fewest)
            .map(|&(t, _)| t)
            .collect();
        let mut arm_rng = rng::stream("arm-assignment", cfg.seed, &enrollment_index.to_string());
        let treatment = *tied.choose(&mut arm_rng).expect("non-empty");

        let seed = rng::derive_u64("session", cfg.seed, pid);
        let stimulus_sequence = sample_participant_stimuli(
            self.exp.dataset.test.examples(),
            self.exp.dataset.label_space().len(),
            cfg.m_trials,
            cfg.stratify,
            &self.practice_set,
            seed,
        )?;
        let tag = hex::encode(&rng::derive_seed("session-id", cfg.seed, pid)[..6]);
        let session = SessionState {
            session_id: format!("s{enrollment_index:05}-{tag}"),
            participant_id: pid.to_owned(),
            task_id: cfg.task_id.clone(),
            treatment,
            phase: Phase::Consent,
            trial_index: 0,
            stimulus_sequence,
            seed,
            enrollment_index,
            created_at: now,
            last_activity: now,
            consent_declined: false,
        };
        Self::commit(
            &mut inner,
            LogEvent::SessionCreated {
                session: session.clone(),
            },
        )?;
        tracing::info!(session = %session.session_id, arm = treatment.as_str(), "session created");
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<SessionState> {
        self.lock()
            .store
            .session(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id:?}")))
    }

    pub fn sessions(&self) -> Vec<SessionState> {
        self.lock().store.sessions().to_vec()
    }

    pub fn records(&self) -> Vec<TrialRecord> {
        self.lock().store.records().to_vec()
    }

    fn change_phase(
        &self,
        id: &str,
        from: Phase,
        to: Phase,
        declined: bool,
    ) -> Result<SessionState> {
        let mut inner = self.lock();
        let s = inner
            .store
            .session(id)
            .ok_or_else(|| Error::NotFound(format!("session {id:?}")))?;
        if s.phase != from {
            return Err(Error::Phase(format!(
                "session is in {} phase, expected {}",
                s.phase.as_str(),
                from.as_str()
            )));
        }
        let event = LogEvent::PhaseChanged {
            session_id: id.to_owned(),
            phase: to,
            consent_declined: declined,
            at: (self.clock)(),
        };
        Self::commit(&mut inner, event)?;
        Ok(inner.store.session(id).expect("just updated").clone())
    }

    /// Records the consent decision; declining ends the session without data.
    pub fn consent(&self, id: &str, accepted: bool) -> Result<SessionState> {
        if accepted {
            self.change_phase(id, Phase::Consent, Phase::Instructions, false)
        } else {
            self.change_phase(id, Phase::Consent, Phase::Done, true)
        }
    }

    pub fn complete_instructions(&self, id: &str) -> Result<SessionState> {
        let next = if self.exp.practice_ids.is_empty() {
            Phase::Test
        } else {
            Phase::Practice
        };
        self.change_phase(id, Phase::Instructions, next, false)
    }

    fn phase_len(&self, phase: TrialPhase) -> usize {
        match phase {
            TrialPhase::Practice => self.exp.practice_ids.len(),
            TrialPhase::Test => self.test_layout.len(),
        }
    }

    fn trial(&self, s: &SessionState, phase: TrialPhase, index: usize) -> Result<Trial> {
        let example_id = match phase {
            TrialPhase::Practice => self.exp.practice_ids[index].as_str(),
            TrialPhase::Test => match self.test_layout[index] {
                TestSlot::Stimulus(j) => s.stimulus_sequence[j].as_str(),
                TestSlot::Attention(c) => {
                    let expected = self.exp.config.attention_checks[c].expected_response;
                    let name = &self.labels[expected].name;
                    let prompt = format!("Attention check: select \"{name}\" for this trial.");
                    return Ok(Trial {
                        example_id: format!("attention-check-{c}"),
                        stimulus: Asset::Text {
                            text: prompt.clone(),
                            highlight: None,
                        },
                        true_label: expected,
                        set: None,
                        attention: Some(AttentionPrompt {
                            prompt,
                            expected_response: expected,
                        }),
                    });
                }
            },
        };
        let example = self.exp.dataset.test.get(example_id).ok_or_else(|| {
            Error::Corrupt(format!("example {example_id:?} missing from test split"))
        })?;
        let stimulus = self
            .exp
            .dataset
            .asset(example_id)
            .cloned()
            .ok_or_else(|| Error::Corrupt(format!("example {example_id:?} has no asset")))?;
        let builder = self.exp.builders.get(&s.treatment).ok_or_else(|| {
            Error::Corrupt(format!("arm {} not configured", s.treatment.as_str()))
        })?;
        let set = match s.treatment {
            Treatment::Control => None,
            _ => Some(builder.build(example)?),
        };
        Ok(Trial {
            example_id: example_id.to_owned(),
            stimulus,
            true_label: example.true_label,
            set,
            attention: None,
        })
    }

    /// Serves the current trial. Repeated calls before answering return the
    /// same trial with the same `served_at`.
    pub fn next_trial(&self, id: &str) -> Result<TrialPayload> {
        let mut inner = self.lock();
        let s = inner
            .store
            .session(id)
            .ok_or_else(|| Error::NotFound(format!("session {id:?}")))?
            .clone();
        let phase = s
            .phase
            .trial_phase()
            .ok_or_else(|| Error::Phase(format!("no trials in {} phase", s.phase.as_str())))?;
        let served_at = match inner.pending.get(id) {
            Some(p) if p.phase == phase && p.trial_index == s.trial_index => p.served_at,
            _ => {
                let at = (self.clock)();
                inner.pending.insert(
                    id.to_owned(),
                    Pending {
                        phase,
                        trial_index: s.trial_index,
                        served_at: at,
                    },
                );
                at
            }
        };
        drop(inner);
        let trial = self.trial(&s, phase, s.trial_index)?;
        let coverage_text = trial.set.as_ref().map(|_| self.exp.coverage_text());
        Ok(TrialPayload {
            session_id: s.session_id.clone(),
            phase,
            trial_index: s.trial_index,
            trials_in_phase: self.phase_len(phase),
            example_id: trial.example_id,
            stimulus: trial.stimulus,
            labels: self.labels.clone(),
            prediction_set: trial.set.map(|set| set.members),
            coverage_text,
            attention_check: trial.attention,
            stimulus_display_ms: self.exp.config.stimulus_display_ms,
            served_at,
        })
    }

    pub fn submit_response(&self, id: &str, req: &SubmitResponse) -> Result<Feedback> {
        let mut inner = self.lock();
        let s = inner
            .store
            .session(id)
            .ok_or_else(|| Error::NotFound(format!("session {id:?}")))?
            .clone();
        let phase = match (s.phase, req.phase) {
            (Phase::Done, _) => return Err(Error::Idempotency("session already completed".into())),
            (Phase::Practice, None | Some(TrialPhase::Practice)) => TrialPhase::Practice,
            (Phase::Practice, Some(TrialPhase::Test)) => {
                return Err(Error::Sequencing("practice phase not finished".into()))
            }
            (Phase::Test, None | Some(TrialPhase::Test)) => TrialPhase::Test,
            (Phase::Test, Some(TrialPhase::Practice)) => {
                return Err(Error::Idempotency("practice phase already recorded".into()))
            }
            (other, _) => {
                return Err(Error::Phase(format!(
                    "no trials in {} phase",
                    other.as_str()
                )))
            }
        };
        if req.trial_index < s.trial_index {
            return Err(Error::Idempotency(format!(
                "trial {} already recorded",
                req.trial_index
            )));
        }
        if req.trial_index > s.trial_index {
            return Err(Error::Sequencing(format!(
                "trial {} submitted but trial {} is current",
                req.trial_index, s.trial_index
            )));
        }
        let pending = match inner.pending.get(id) {
            Some(p) if p.phase == phase && p.trial_index == req.trial_index => *p,
            _ => {
                return Err(Error::Sequencing(format!(
                    "trial {} has not been served",
                    req.trial_index
                )))
            }
        };
        if req.response >= self.labels.len() {
            return Err(Error::invalid(format!(
                "response {} is not a class id",
                req.response
            )));
        }
        if req.response_ms == 0 {
            return Err(Error::invalid("response_ms must be positive"));
        }
        let answered_at = (self.clock)();
        let window = (answered_at - pending.served_at).num_milliseconds().max(0) as u64;
        let guard = self.exp.config.service.timing_guard_ms;
        if self.exp.config.service.enforce_timing && req.response_ms > window.saturating_add(guard)
        {
            return Err(Error::Timing(format!(
                    "response_ms {} exceeds the {window} ms serve-to-answer window by more than {guard} ms",
                    req.response_ms
                )));
        }

        let trial = self.trial(&s, phase, req.trial_index)?;
        let (next_phase, next_trial_index) = if req.trial_index + 1 < self.phase_len(phase) {
            (s.phase, req.trial_index + 1)
        } else {
            match phase {
                TrialPhase::Practice => (Phase::Test, 0),
                TrialPhase::Test => (Phase::Done, 0),
            }
        };
        let correct = req.response == trial.true_label;
        let record = TrialRecord {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            task_id: s.task_id.clone(),
            treatment: s.treatment,
            phase,
            trial_index: req.trial_index,
            example_id: trial.example_id,
            shown_set: trial.set.map(|set| set.members).unwrap_or_default(),
            response: req.response,
            true_label: trial.true_label,
            correct,
            response_ms: req.response_ms,
            is_attention_check: trial.attention.is_some(),
            served_at: pending.served_at,
            answered_at,
        };
        Self::commit(
            &mut inner,
            LogEvent::TrialRecorded {
                record,
                next_phase,
                next_trial_index,
            },
        )?;
        inner.pending.remove(id);
        Ok(Feedback {
            correct,
            true_label: trial.true_label,
            next_phase,
            next_trial_index,
        })
    }

    /// Computes and stores the session summary. Idempotent once stored.
    pub fn finalize(&self, id: &str) -> Result<SessionSummary> {
        let mut inner = self.lock();
        let s = inner
            .store
            .session(id)
            .ok_or_else(|| Error::NotFound(format!("session {id:?}")))?
            .clone();
        if let Some(summary) = inner.store.summary(id) {
            return Ok(summary.clone());
        }
        if s.phase != Phase::Done {
            return Err(Error::Phase(format!(
                "session is in {} phase; all test trials must be answered first",
                s.phase.as_str()
            )));
        }
        let (mut m, mut correct, mut total_time_ms, mut checks, mut passed) = (0, 0, 0, 0, 0);
        for r in inner
            .store
            .session_records(id)
            .filter(|r| r.phase == TrialPhase::Test)
        {
            if r.is_attention_check {
                checks += 1;
                passed += usize::from(r.correct);
            } else {
                m += 1;
                correct += usize::from(r.correct);
                total_time_ms += r.response_ms;
            }
        }
        let summary = SessionSummary {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            task_id: s.task_id.clone(),
            treatment: s.treatment,
            m,
            correct,
            accuracy: (m > 0).then(|| correct as f64 / m as f64),
            total_time_ms,
            attention_checks: checks,
            attention_passed: passed,
            excluded: checks > 0 && passed == 0,
            consent_declined: s.consent_declined,
            created_at: s.created_at,
            finalized_at: (self.clock)(),
        };
        Self::commit(
            &mut inner,
            LogEvent::SessionFinalized {
                summary: summary.clone(),
            },
        )?;
        Ok(summary)
    }

    /// Records then summary for each matching session, in creation order.
    pub fn export(&self, filter: &ExportFilter) -> Vec<ExportLine> {
        let inner = self.lock();
        let mut out = Vec::new();
        for s in inner.store.sessions() {
            if filter.task.as_ref().is_some_and(|t| t != &s.task_id)
                || filter.arm.is_some_and(|a| a != s.treatment)
                || filter.from.is_some_and(|f| s.created_at < f)
                || filter.to.is_some_and(|t| s.created_at > t)
            {
                continue;
            }
            out.extend(
                inner
                    .store
                    .session_records(&s.session_id)
                    .filter(|r| filter.phase.is_none_or(|p| p == r.phase))
                    .cloned()
                    .map(ExportLine::Trial),
            );
            if let Some(summary) = inner.store.summary(&s.session_id) {
                out.push(ExportLine::Session(summary.clone()));
            }
        }
        out
    }

    /// Forces a checkpoint of the current state.
    pub fn checkpoint(&self) -> Result<()> {
        let mut inner = self.lock();
        let Inner { store, log, .. } = &mut *inner;
        log.checkpoint(store)
    }
}
