//! Trial service: session lifecycle, arm balancing, durable recording and
//! the HTTP API consumed by the participant UI and by simulated agents.

use std::io::{BufRead, Write};

mod config;
mod http;
mod log;
mod model;
mod trial;

pub use config::{
    AgentsConfig, AttentionCheck, DatasetConfig, ExperimentConfig, ResolvedExperiment,
    ServiceConfig,
};
pub use http::{router, spawn, status_for, ApiError, RunningServer};
pub use log::{LogEvent, RecordLog, StoreState};
pub use model::*;

/// Writes export lines as NDJSON.
pub fn write_export(mut w: impl Write, lines: &[ExportLine]) -> crate::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads NDJSON export lines, skipping blank lines.
pub fn read_export(r: impl BufRead) -> crate::Result<Vec<ExportLine>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| crate::Error::InvalidInput(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
pub use trial::{Clock, TrialService, STUDY_FULL};
