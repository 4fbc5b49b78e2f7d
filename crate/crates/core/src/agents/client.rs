use reqwest::{Client, Method, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::service::*;

/// Typed client for the trial service's HTTP API.
#[derive(Debug, Clone)]
pub struct HttpApi {
    base: String,
    client: Client,
}

impl HttpApi {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_owned(),
            client: Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.client.request(method, format!("{}{path}", self.base))
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let bytes = resp.bytes().await?;
        Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Error::Service {
                status: status.as_u16(),
                kind: body.error,
                message: body.message,
            },
            Err(_) => Error::Service {
                status: status.as_u16(),
                kind: "http".into(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            },
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.request(Method::POST, path).json(body)).await
    }

    pub async fn bootstrap(&self) -> Result<Bootstrap> {
        self.send(self.request(Method::GET, "/bootstrap")).await
    }

    pub async fn create_session(
        &self,
        participant_id: &str,
        task_id: &str,
    ) -> Result<SessionState> {
        let body = CreateSession {
            participant_id: participant_id.into(),
            task_id: task_id.into(),
        };
        self.post("/sessions", &body).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionState> {
        self.send(self.request(Method::GET, &format!("/sessions/{id}")))
            .await
    }

    pub async fn consent(&self, id: &str, accepted: bool) -> Result<SessionState> {
        self.post(
            &format!("/sessions/{id}/consent"),
            &ConsentRequest { accepted },
        )
        .await
    }

    pub async fn complete_instructions(&self, id: &str) -> Result<SessionState> {
        self.send(self.request(Method::POST, &format!("/sessions/{id}/instructions")))
            .await
    }

    pub async fn next_trial(&self, id: &str) -> Result<TrialPayload> {
        self.send(self.request(Method::GET, &format!("/sessions/{id}/next")))
            .await
    }

    pub async fn submit_response(&self, id: &str, req: &SubmitResponse) -> Result<Feedback> {
        self.post(&format!("/sessions/{id}/responses"), req).await
    }

    pub async fn finalize(&self, id: &str) -> Result<SessionSummary> {
        self.send(self.request(Method::POST, &format!("/sessions/{id}/finalize")))
            .await
    }

    pub async fn export(&self, filter: &ExportFilter) -> Result<Vec<ExportLine>> {
        let resp = self
            .request(Method::GET, "/export")
            .query(filter)
            .send()
            .await?;
        let status = resp.status();
        let text = resp.text().await?;
        if !status.is_success() {
            let body: ErrorBody = serde_json::from_str(&text).unwrap_or(ErrorBody {
                error: "http".into(),
                message: text.clone(),
            });
            return Err(Error::Service {
                status: status.as_u16(),
                kind: body.error,
                message: body.message,
            });
        }
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}
