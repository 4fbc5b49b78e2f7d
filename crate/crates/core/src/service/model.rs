use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::conformal::{ClassId, Treatment};
use crate::data::{Asset, StimulusKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Consent,
    Instructions,
    Practice,
    Test,
    Done,
}

impl Phase {
    pub fn trial_phase(self) -> Option<TrialPhase> {
        match self {
            Phase::Practice => Some(TrialPhase::Practice),
            Phase::Test => Some(TrialPhase::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Consent => "consent",
            Phase::Instructions => "instructions",
            Phase::Practice => "practice",
            Phase::Test => "test",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialPhase {
    Practice,
    Test,
}

impl std::str::FromStr for TrialPhase {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "practice" => Ok(TrialPhase::Practice),
            "test" => Ok(TrialPhase::Test),
            _ => Err(crate::Error::invalid(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    pub task_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentRequest {
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub trial_index: usize,
    pub response: ClassId,
    pub response_ms: u64,
    /// Defaults to the session's current phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<TrialPhase>,
}

/// Server-side state of one participant session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub participant_id: String,
    pub task_id: String,
    pub treatment: Treatment,
    pub phase: Phase,
    /// Index of the next unanswered trial within the current phase.
    pub trial_index: usize,
    pub stimulus_sequence: Vec<String>,
    pub seed: u64,
    pub enrollment_index: u64,
    pub created_at: DateTime<Utc>,
    pub last_activity: DateTime<Utc>,
    #[serde(default)]
    pub consent_declined: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPrompt {
    pub prompt: String,
    pub expected_response: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOption {
    pub id: ClassId,
    pub name: String,
}

/// Everything the participant UI needs to render one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPayload {
    pub session_id: String,
    pub phase: TrialPhase,
    pub trial_index: usize,
    pub trials_in_phase: usize,
    pub example_id: String,
    pub stimulus: Asset,
    pub labels: Vec<LabelOption>,
    /// Absent for the control arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_set: Option<Vec<ClassId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_check: Option<AttentionPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stimulus_display_ms: Option<u64>,
    pub served_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub correct: bool,
    pub true_label: ClassId,
    pub next_phase: Phase,
    pub next_trial_index: usize,
}

/// One answered trial. Appended once and never modified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub session_id: String,
    pub participant_id: String,
    pub task_id: String,
    pub treatment: Treatment,
    pub phase: TrialPhase,
    pub trial_index: usize,
    pub example_id: String,
    pub shown_set: Vec<ClassId>,
    pub response: ClassId,
    pub true_label: ClassId,
    pub correct: bool,
    pub response_ms: u64,
    pub is_attention_check: bool,
    pub served_at: DateTime<Utc>,
    pub answered_at: DateTime<Utc>,
}

/// Per-session outcome; `m` and `correct` cover test trials excluding
/// attention checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub participant_id: String,
    pub task_id: String,
    pub treatment: Treatment,
    pub m: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub total_time_ms: u64,
    pub attention_checks: usize,
    pub attention_passed: usize,
    pub excluded: bool,
    pub consent_declined: bool,
    pub created_at: DateTime<Utc>,
    pub finalized_at: DateTime<Utc>,
}

/// One line of the NDJSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExportLine {
    Trial(TrialRecord),
    Session(SessionSummary),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<Treatment>,
    /// Inclusive bounds on session creation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<TrialPhase>,
}

/// Static experiment description served to the participant UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub task_id: String,
    pub stimulus_kind: StimulusKind,
    pub labels: Vec<LabelOption>,
    pub practice_trials: usize,
    pub test_trials: usize,
    pub stimulus_display_ms: Option<u64>,
    pub consent_text: String,
    pub instructions_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
