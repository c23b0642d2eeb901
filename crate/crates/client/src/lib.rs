//! Thin async client for the met3r scoring service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use met3r_core::api::{ApiError, Health, JobAccepted, JobRequest, JobState, JobStatus, PairRequest, SelftestRequest};
use met3r_core::selftest::SelftestReport;
use met3r_core::PairScore;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    /// The service answered with an error body.
    #[error("{message} (HTTP {status})")]
    Api { status: u16, kind: String, message: String },
}

impl ClientError {
    pub fn kind(&self) -> &str {
        match self {
            ClientError::Http(_) => "http",
            ClientError::Api { kind, .. } => kind,
        }
    }

    fn from_api(status: u16, e: ApiError) -> Self {
        ClientError::Api { status, kind: e.kind, message: e.message }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    poll: Duration,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new(), poll: Duration::from_millis(50) }
    }

    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let code = status.as_u16();
        let body = resp.text().await?;
        Err(match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => ClientError::from_api(code, e),
            Err(_) => ClientError::Api { status: code, kind: "http".into(), message: body },
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn pair(&self, req: &PairRequest) -> Result<PairScore> {
        self.post("/v1/pair", req).await
    }

    pub async fn submit_job(&self, req: &JobRequest) -> Result<String> {
        let accepted: JobAccepted = self.post("/v1/jobs", req).await?;
        Ok(accepted.id)
    }

    pub async fn job_status(&self, id: &str) -> Result<JobStatus> {
        self.get(&format!("/v1/jobs/{id}")).await
    }

    /// Polls until the job leaves the running state.
    pub async fn wait_job(&self, id: &str) -> Result<JobStatus> {
        loop {
            let status = self.job_status(id).await?;
            if status.state != JobState::Running {
                return Ok(status);
            }
            tokio::time::sleep(self.poll).await;
        }
    }

    pub async fn selftest(&self, req: &SelftestRequest) -> Result<SelftestReport> {
        self.post("/v1/selftest", req).await
    }
}
