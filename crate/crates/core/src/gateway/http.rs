use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;

use super::protocol::{BackendInfo, ScoreRequest, ScoreResponse};
use super::Backend;
use crate::error::{Error, Result};

/// Remote scorer speaking protocol v1 over HTTP.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    client: Client,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<HttpBackend> {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpBackend { endpoint, client })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn classify(status: StatusCode, body: String) -> Error {
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Error::Transport(format!("HTTP {status}: {body}"))
        } else {
            Error::Rejected(format!("HTTP {status}: {body}"))
        }
    }

    fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        let body = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Self::classify(status, body));
        }
        serde_json::from_str(&body).map_err(|e| Error::BadResponse(format!("{e}: {body}")))
    }
}

impl Backend for HttpBackend {
    fn info(&self) -> Result<BackendInfo> {
        let resp = self
            .client
            .get(format!("{}/v1/info", self.endpoint))
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::decode(resp)
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        let resp = self
            .client
            .post(format!("{}/v1/score", self.endpoint))
            .json(request)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::decode(resp)
    }
}
