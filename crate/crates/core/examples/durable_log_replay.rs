//! Records trials, simulates a crash that leaves a torn line at the end of
//! the event log, and reopens the service from the log.
//!
//!     cargo run --example durable_log_replay

use std::io::Write;

use hitl_conformal::service::{
    CreateSession, ExperimentConfig, ExportFilter, RecordLog, SubmitResponse, TrialService,
};
use hitl_conformal::synth::write_demo_experiment;

fn main() -> hitl_conformal::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::load(write_demo_experiment(dir.path(), 4)?)?;
    cfg.service.enforce_timing = false;
    cfg.service.checkpoint_every = 25;
    let exp = cfg.resolve()?;
    let log_dir = exp.config.service.log_dir.clone();

    let id = {
        let svc = TrialService::open(exp.clone())?;
        let s = svc.create_session(&CreateSession {
            participant_id: "crash-test".into(),
            task_id: exp.config.task_id.clone(),
        })?;
        svc.consent(&s.session_id, true)?;
        svc.complete_instructions(&s.session_id)?;
        for _ in 0..30 {
            let p = svc.next_trial(&s.session_id)?;
            let req = SubmitResponse {
                trial_index: p.trial_index,
                response: 0,
                response_ms: 900,
                phase: Some(p.phase),
            };
            svc.submit_response(&s.session_id, &req)?;
        }
        println!("before crash: {} records", svc.records().len());
        s.session_id
    };

    let (log, _) = RecordLog::open(&log_dir, true, 25)?;
    let events = log.events_path();
    drop(log);
    let mut f = std::fs::OpenOptions::new().append(true).open(&events)?;
    f.write_all(br#"{"event":"trial_recorded","record":{"session_id":"#)?;
    println!("appended a torn line to {}", events.display());

    let svc = TrialService::open(exp)?;
    let state = svc.session(&id)?;
    println!(
        "after replay: {} records, session {} in {:?} at trial {}",
        svc.records().len(),
        id,
        state.phase,
        state.trial_index
    );
    let p = svc.next_trial(&id)?;
    println!("next trial resumes at {:?} #{}", p.phase, p.trial_index);
    let exported = svc.export(&ExportFilter::default());
    println!("export holds {} lines", exported.len());
    Ok(())
}
