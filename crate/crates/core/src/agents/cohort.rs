use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;

use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use super::client::HttpApi;
use super::policy::{resolve_policies, AgentPolicy};
use crate::conformal::{ClassId, Treatment};
use crate::error::{Error, Result};
use crate::service::{
    spawn, ExportFilter, ExportLine, Phase, ResolvedExperiment, SessionState, SessionSummary,
    SubmitResponse, TrialService, STUDY_FULL,
};

/// True labels of the test split, the simulation's only knowledge of the task.
pub type TruthOracle = Arc<HashMap<String, ClassId>>;

pub fn truth_oracle(exp: &ResolvedExperiment) -> TruthOracle {
    Arc::new(
        exp.dataset
            .test
            .examples()
            .iter()
            .map(|e| (e.example_id.clone(), e.true_label))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct CohortOptions {
    pub task_id: String,
    pub participant_prefix: String,
    pub concurrency: usize,
    /// Stop enrolling after this many attempts even if the study is not full.
    pub max_enrollments: Option<usize>,
}

impl CohortOptions {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            participant_prefix: "agent-".into(),
            concurrency: 16,
            max_enrollments: None,
        }
    }
}

fn is_study_full(e: &Error) -> bool {
    matches!(e, Error::Service { kind, message, .. } if kind == "enrollment_rejected" && message.contains(STUDY_FULL))
}

/// Drives one enrolled session to completion and finalizes it.
pub async fn run_session(
    api: &HttpApi,
    session: SessionState,
    policy: AgentPolicy,
    truth: &HashMap<String, ClassId>,
) -> Result<SessionSummary> {
    let id = session.session_id.clone();
    let agent = session.participant_id.clone();
    let ctx = |e: Error| e.in_session(id.as_str());
    let mut phase = session.phase;
    if phase == Phase::Consent {
        phase = api.consent(&id, true).await.map_err(ctx)?.phase;
    }
    if phase == Phase::Instructions {
        phase = api.complete_instructions(&id).await.map_err(ctx)?.phase;
    }
    while phase != Phase::Done {
        let payload = api.next_trial(&id).await.map_err(ctx)?;
        let truth_label = match &payload.attention_check {
            Some(check) => check.expected_response,
            None => *truth.get(&payload.example_id).ok_or_else(|| {
                ctx(Error::InvalidInput(format!(
                    "no label for {:?}",
                    payload.example_id
                )))
            })?,
        };
        let action = policy.act(&agent, &payload, truth_label);
        let req = SubmitResponse {
            trial_index: payload.trial_index,
            response: action.response,
            response_ms: action.response_ms,
            phase: Some(payload.phase),
        };
        phase = api
            .submit_response(&id, &req)
            .await
            .map_err(ctx)?
            .next_phase;
    }
    api.finalize(&id).await.map_err(ctx)
}

/// Enrolls agents until the service reports the study full, runs every
/// session through the HTTP API and returns the service's export.
///
/// Enrollment is sequential so arm assignment is reproducible; sessions run
/// concurrently. Sessions excluded for failed attention checks free their
/// slot, so enrollment repeats until no slot reopens.
pub async fn run_cohort(
    api: &HttpApi,
    policies: &BTreeMap<Treatment, AgentPolicy>,
    truth: TruthOracle,
    opts: &CohortOptions,
) -> Result<Vec<ExportLine>> {
    let limit = Arc::new(Semaphore::new(opts.concurrency.max(1)));
    let mut attempts = 0usize;
    loop {
        let mut batch = Vec::new();
        while opts.max_enrollments.is_none_or(|m| attempts < m) {
            let pid = format!("{}{attempts:05}", opts.participant_prefix);
            attempts += 1;
            match api.create_session(&pid, &opts.task_id).await {
                Ok(s) => batch.push(s),
                Err(e) if is_study_full(&e) => break,
                Err(Error::Service { kind, .. }) if kind == "enrollment_rejected" => continue,
                Err(e) => return Err(e),
            }
        }
        if batch.is_empty() {
            break;
        }
        tracing::info!(sessions = batch.len(), "running enrolled agents");
        let mut tasks = JoinSet::new();
        for session in batch {
            let policy = *policies.get(&session.treatment).ok_or_else(|| {
                Error::Config(format!(
                    "no agent policy for arm {}",
                    session.treatment.as_str()
                ))
                .in_session(session.session_id.as_str())
            })?;
            let (api, truth, limit) = (api.clone(), truth.clone(), limit.clone());
            tasks.spawn(async move {
                let _permit = limit.acquire_owned().await.expect("semaphore open");
                run_session(&api, session, policy, &truth).await
            });
        }
        while let Some(joined) = tasks.join_next().await {
            joined.map_err(|e| Error::Io(std::io::Error::other(e)))??;
        }
    }
    api.export(&ExportFilter {
        task: Some(opts.task_id.clone()),
        ..Default::default()
    })
    .await
}

/// Starts an in-process service on a loopback port, runs a cohort against
/// it over HTTP and shuts it down.
pub async fn simulate(exp: ResolvedExperiment, opts: &CohortOptions) -> Result<Vec<ExportLine>> {
    let policies = resolve_policies(&exp, &exp.config.treatments)?;
    let truth = truth_oracle(&exp);
    let svc = Arc::new(
        tokio::task::spawn_blocking(move || TrialService::open(exp))
            .await
            .map_err(|e| Error::Io(std::io::Error::other(e)))??,
    );
    let server = spawn(svc, SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let api = HttpApi::new(server.base_url());
    let result = run_cohort(&api, &policies, truth, opts).await;
    server.shutdown().await?;
    result
}
