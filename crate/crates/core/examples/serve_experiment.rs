//! Starts the trial service over HTTP, walks one participant through consent,
//! instructions, practice and test, then prints the session summary.
//!
//!     cargo run --example serve_experiment -- [experiment.toml]
//!
//! Without a config a demo experiment is written to a temporary directory.

use std::net::SocketAddr;
use std::sync::Arc;

use hitl_conformal::agents::{truth_oracle, HttpApi};
use hitl_conformal::service::{spawn, ExperimentConfig, Phase, SubmitResponse, TrialService};
use hitl_conformal::synth::write_demo_experiment;

#[tokio::main]
async fn main() -> hitl_conformal::Result<()> {
    let tmp = tempfile::tempdir()?;
    let config = match std::env::args().nth(1) {
        Some(path) => path.into(),
        None => write_demo_experiment(tmp.path(), 9)?,
    };
    let mut cfg = ExperimentConfig::load(&config)?;
    cfg.service.log_dir = tmp.path().join("example-log");
    cfg.service.enforce_timing = false;
    let exp = cfg.resolve()?;
    let truth = truth_oracle(&exp);

    let svc = Arc::new(TrialService::open(exp)?);
    let server = spawn(svc, SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    println!("serving {}", server.base_url());
    let api = HttpApi::new(server.base_url());

    let boot = api.bootstrap().await?;
    println!("bootstrap: {}", serde_json::to_string(&boot)?);
    let session = api
        .create_session("example-participant", &boot.task_id)
        .await?;
    println!(
        "enrolled {} in arm {}",
        session.session_id,
        session.treatment.as_str()
    );
    api.consent(&session.session_id, true).await?;
    api.complete_instructions(&session.session_id).await?;

    let mut phase = Phase::Practice;
    let mut shown = false;
    while phase != Phase::Done {
        let payload = api.next_trial(&session.session_id).await?;
        if !shown && payload.phase == hitl_conformal::service::TrialPhase::Test {
            println!(
                "first test payload: {}",
                serde_json::to_string_pretty(&payload)?
            );
            shown = true;
        }
        let response = match &payload.attention_check {
            Some(check) => check.expected_response,
            None => payload
                .prediction_set
                .as_ref()
                .and_then(|s| s.first().copied())
                .unwrap_or(truth[&payload.example_id]),
        };
        let req = SubmitResponse {
            trial_index: payload.trial_index,
            response,
            response_ms: 1200,
            phase: Some(payload.phase),
        };
        phase = api
            .submit_response(&session.session_id, &req)
            .await?
            .next_phase;
    }
    let summary = api.finalize(&session.session_id).await?;
    println!("summary: {}", serde_json::to_string_pretty(&summary)?);
    server.shutdown().await
}
