use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::model::{Phase, SessionState, SessionSummary, TrialRecord};
use crate::error::{Error, Result};

const EVENTS_FILE: &str = "events.ndjson";
const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Every state change the trial service makes, in log order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    SessionCreated {
        session: SessionState,
    },
    PhaseChanged {
        session_id: String,
        phase: Phase,
        consent_declined: bool,
        at: DateTime<Utc>,
    },
    TrialRecorded {
        record: TrialRecord,
        next_phase: Phase,
        next_trial_index: usize,
    },
    SessionFinalized {
        summary: SessionSummary,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Snapshot {
    sessions: Vec<SessionState>,
    records: Vec<TrialRecord>,
    summaries: Vec<SessionSummary>,
}

/// In-memory fold of the event log.
#[derive(Debug, Clone, Default)]
pub struct StoreState {
    sessions: Vec<SessionState>,
    by_id: HashMap<String, usize>,
    by_participant: HashMap<String, usize>,
    records: Vec<TrialRecord>,
    records_by_session: HashMap<String, Vec<usize>>,
    summaries: HashMap<String, SessionSummary>,
}

impl StoreState {
    /// Sessions in creation order.
    pub fn sessions(&self) -> &[SessionState] {
        &self.sessions
    }

    pub fn session(&self, id: &str) -> Option<&SessionState> {
        self.by_id.get(id).map(|&i| &self.sessions[i])
    }

    pub fn session_for_participant(&self, participant_id: &str) -> Option<&SessionState> {
        self.by_participant
            .get(participant_id)
            .map(|&i| &self.sessions[i])
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn session_records(&self, id: &str) -> impl Iterator<Item = &TrialRecord> {
        self.records_by_session
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn summary(&self, id: &str) -> Option<&SessionSummary> {
        self.summaries.get(id)
    }

    fn session_mut(&mut self, id: &str) -> Result<&mut SessionState> {
        let i = *self
            .by_id
            .get(id)
            .ok_or_else(|| Error::Corrupt(format!("event for unknown session {id:?}")))?;
        Ok(&mut self.sessions[i])
    }

    pub fn apply(&mut self, event: LogEvent) -> Result<()> {
        match event {
            LogEvent::SessionCreated { session } => {
                if self.by_id.contains_key(&session.session_id)
                    || self.by_participant.contains_key(&session.participant_id)
                {
                    return Err(Error::Corrupt(format!(
                        "session {:?} created twice",
                        session.session_id
                    )));
                }
                let i = self.sessions.len();
                self.by_id.insert(session.session_id.clone(), i);
                self.by_participant
                    .insert(session.participant_id.clone(), i);
                self.sessions.push(session);
            }
            LogEvent::PhaseChanged {
                session_id,
                phase,
                consent_declined,
                at,
            } => {
                let s = self.session_mut(&session_id)?;
                s.phase = phase;
                s.trial_index = 0;
                s.consent_declined = consent_declined;
                s.last_activity = at;
            }
            LogEvent::TrialRecorded {
                record,
                next_phase,
                next_trial_index,
            } => {
                let s = self.session_mut(&record.session_id)?;
                s.phase = next_phase;
                s.trial_index = next_trial_index;
                s.last_activity = record.answered_at;
                self.records_by_session
                    .entry(record.session_id.clone())
                    .or_default()
                    .push(self.records.len());
                self.records.push(record);
            }
            LogEvent::SessionFinalized { summary } => {
                let s = self.session_mut(&summary.session_id)?;
                s.last_activity = summary.finalized_at;
                self.summaries.insert(summary.session_id.clone(), summary);
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> Snapshot {
        let summaries = self
            .sessions
            .iter()
            .filter_map(|s| self.summaries.get(&s.session_id).cloned())
            .collect();
        Snapshot {
            sessions: self.sessions.clone(),
            records: self.records.clone(),
            summaries,
        }
    }

    fn from_snapshot(snap: Snapshot) -> Result<Self> {
        let mut state = StoreState::default();
        for session in snap.sessions {
            state.apply(LogEvent::SessionCreated { session })?;
        }
        for record in snap.records {
            let i = state.records.len();
            if !state.by_id.contains_key(&record.session_id) {
                return Err(Error::Corrupt(format!(
                    "checkpoint record for unknown session {:?}",
                    record.session_id
                )));
            }
            state
                .records_by_session
                .entry(record.session_id.clone())
                .or_default()
                .push(i);
            state.records.push(record);
        }
        for summary in snap.summaries {
            state.summaries.insert(summary.session_id.clone(), summary);
        }
        Ok(state)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    log_offset: u64,
    state: Snapshot,
}

/// Append-only NDJSON event log with periodic state checkpoints.
///
/// An event is acknowledged only after its line has been written (and synced
/// when `fsync` is on). On open, the checkpoint is loaded and the log tail
/// after its offset is replayed; an unterminated final line is the remnant of
/// an interrupted write and is truncated away.
#[derive(Debug)]
pub struct RecordLog {
    dir: PathBuf,
    file: File,
    offset: u64,
    fsync: bool,
    checkpoint_every: u64,
    since_checkpoint: u64,
}

impl RecordLog {
    pub fn open(
        dir: impl AsRef<Path>,
        fsync: bool,
        checkpoint_every: u64,
    ) -> Result<(Self, StoreState)> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let (mut state, start) = match std::fs::read(dir.join(CHECKPOINT_FILE)) {
            Ok(bytes) => {
                let cp: Checkpoint = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::Corrupt(format!("unreadable checkpoint: {e}")))?;
                (StoreState::from_snapshot(cp.state)?, cp.log_offset)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (StoreState::default(), 0),
            Err(e) => return Err(e.into()),
        };

        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(dir.join(EVENTS_FILE))?;
        let len = file.metadata()?.len();
        if start > len {
            return Err(Error::Corrupt(format!(
                "checkpoint offset {start} beyond log length {len}"
            )));
        }
        file.seek(SeekFrom::Start(start))?;
        let mut tail = Vec::with_capacity((len - start) as usize);
        file.read_to_end(&mut tail)?;

        let mut offset = start;
        let mut replayed = 0;
        let mut rest = &tail[..];
        while let Some(nl) = rest.iter().position(|&b| b == b'\n') {
            let line = &rest[..nl];
            let event: LogEvent = serde_json::from_slice(line)
                .map_err(|e| Error::Corrupt(format!("bad event at byte {offset}: {e}")))?;
            state.apply(event)?;
            offset += nl as u64 + 1;
            rest = &rest[nl + 1..];
            replayed += 1;
        }
        if !rest.is_empty() {
            tracing::warn!(bytes = rest.len(), "truncating partial event at end of log");
            file.set_len(offset)?;
            file.sync_all()?;
        }
        tracing::info!(
            replayed,
            sessions = state.sessions.len(),
            records = state.records.len(),
            "event log opened"
        );
        Ok((
            Self {
                dir,
                file,
                offset,
                fsync,
                checkpoint_every,
                since_checkpoint: replayed,
            },
            state,
        ))
    }

    pub fn append(&mut self, event: &LogEvent) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        self.offset += line.len() as u64;
        self.since_checkpoint += 1;
        Ok(())
    }

    pub fn checkpoint_due(&self) -> bool {
        self.checkpoint_every > 0 && self.since_checkpoint >= self.checkpoint_every
    }

    /// Atomically replaces the checkpoint with `state` at the current offset.
    pub fn checkpoint(&mut self, state: &StoreState) -> Result<()> {
        let cp = Checkpoint {
            log_offset: self.offset,
            state: state.snapshot(),
        };
        let tmp = self.dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(&cp)?)?;
        f.sync_all()?;
        std::fs::rename(&tmp, self.dir.join(CHECKPOINT_FILE))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        self.since_checkpoint = 0;
        Ok(())
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join(EVENTS_FILE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::Treatment;
    use crate::service::model::TrialPhase;

    fn ts(s: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000 + s, 0).unwrap()
    }

    fn session(id: &str) -> SessionState {
        SessionState {
            session_id: id.into(),
            participant_id: format!("p-{id}"),
            task_id: "t".into(),
            treatment: Treatment::Control,
            phase: Phase::Test,
            trial_index: 0,
            stimulus_sequence: vec!["a".into(), "b".into()],
            seed: 1,
            enrollment_index: 0,
            created_at: ts(0),
            last_activity: ts(0),
            consent_declined: false,
        }
    }

    fn record(id: &str, i: usize) -> LogEvent {
        LogEvent::TrialRecorded {
            record: TrialRecord {
                session_id: id.into(),
                participant_id: format!("p-{id}"),
                task_id: "t".into(),
                treatment: Treatment::Control,
                phase: TrialPhase::Test,
                trial_index: i,
                example_id: format!("ex{i}"),
                shown_set: vec![],
                response: 0,
                true_label: 0,
                correct: true,
                response_ms: 100,
                is_attention_check: false,
                served_at: ts(i as i64),
                answered_at: ts(i as i64 + 1),
            },
            next_phase: Phase::Test,
            next_trial_index: i + 1,
        }
    }

    fn write_all(log: &mut RecordLog, state: &mut StoreState, events: Vec<LogEvent>) {
        for e in events {
            log.append(&e).unwrap();
            state.apply(e).unwrap();
        }
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let (mut log, mut state) = RecordLog::open(dir.path(), false, 0).unwrap();
        write_all(
            &mut log,
            &mut state,
            vec![
                LogEvent::SessionCreated {
                    session: session("s1"),
                },
                record("s1", 0),
                record("s1", 1),
            ],
        );
        drop(log);
        let (_, replayed) = RecordLog::open(dir.path(), false, 0).unwrap();
        assert_eq!(replayed.records(), state.records());
        assert_eq!(replayed.session("s1").unwrap().trial_index, 2);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let (mut log, mut state) = RecordLog::open(dir.path(), false, 0).unwrap();
        write_all(
            &mut log,
            &mut state,
            vec![
                LogEvent::SessionCreated {
                    session: session("s1"),
                },
                record("s1", 0),
            ],
        );
        let path = log.events_path();
        drop(log);
        let good_len = std::fs::metadata(&path).unwrap().len();
        let mut partial = serde_json::to_vec(&record("s1", 1)).unwrap();
        partial.truncate(partial.len() / 2);
        OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(&partial)
            .unwrap();

        let (mut log, mut replayed) = RecordLog::open(dir.path(), false, 0).unwrap();
        assert_eq!(replayed.records().len(), 1);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good_len);
        write_all(&mut log, &mut replayed, vec![record("s1", 1)]);
        drop(log);
        let (_, again) = RecordLog::open(dir.path(), false, 0).unwrap();
        assert_eq!(again.records().len(), 2);
    }

    #[test]
    fn corrupt_complete_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(EVENTS_FILE), b"{\"event\":\"nonsense\"}\n").unwrap();
        assert!(matches!(
            RecordLog::open(dir.path(), false, 0),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn checkpoint_plus_tail_matches_full_replay() {
        let dir = tempfile::tempdir().unwrap();
        let (mut log, mut state) = RecordLog::open(dir.path(), true, 2).unwrap();
        let mut events = vec![LogEvent::SessionCreated {
            session: session("s1"),
        }];
        events.extend((0..5).map(|i| record("s1", i)));
        for e in events {
            log.append(&e).unwrap();
            state.apply(e).unwrap();
            if log.checkpoint_due() {
                log.checkpoint(&state).unwrap();
            }
        }
        drop(log);
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
        let (_, replayed) = RecordLog::open(dir.path(), true, 2).unwrap();
        assert_eq!(replayed.records(), state.records());
        assert_eq!(replayed.sessions(), state.sessions());
    }

    #[test]
    fn event_for_unknown_session_is_corrupt() {
        let mut state = StoreState::default();
        assert!(matches!(
            state.apply(record("nope", 0)),
            Err(Error::Corrupt(_))
        ));
    }
}
