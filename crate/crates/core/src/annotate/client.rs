use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::LlmWorkerProfile;

/// A failed call. `retryable` failures are retried with backoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallError {
    pub retryable: bool,
    pub message: String,
}

impl CallError {
    fn retry(message: impl Into<String>) -> Self {
        CallError { retryable: true, message: message.into() }
    }

    fn fatal(message: impl Into<String>) -> Self {
        CallError { retryable: false, message: message.into() }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client.
pub struct HttpClient {
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpClient {
    pub fn new(api_key: Option<String>) -> Result<Self, CallError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| CallError::fatal(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpClient { client, api_key })
    }

    pub fn complete(&self, profile: &LlmWorkerProfile, prompt: &str) -> Result<String, CallError> {
        let url = format!("{}/chat/completions", profile.endpoint.trim_end_matches('/'));
        let body = ChatRequest {
            model: &profile.model,
            temperature: profile.temperature,
            messages: [ChatMessage { role: "user", content: prompt }],
        };
        let mut req = self.client.post(&url).timeout(Duration::from_secs(profile.timeout_secs)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                CallError::retry(format!("timeout after {}s: {url}", profile.timeout_secs))
            } else {
                CallError::retry(format!("request to {url} failed: {e}"))
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| CallError::retry(format!("reading response from {url}: {e}")))?;
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408;
            let snippet: String = text.chars().take(200).collect();
            return Err(CallError { retryable, message: format!("HTTP {status} from {url}: {snippet}") });
        }
        parse_response(&text)
    }
}

/// Extracts `choices[0].message.content`; a null content counts as empty.
pub fn parse_response(body: &str) -> Result<String, CallError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| CallError::fatal(format!("malformed endpoint response: {e}")))?;
    let first = parsed.choices.into_iter().next().ok_or_else(|| CallError::fatal("malformed endpoint response: no choices"))?;
    Ok(first.message.content.unwrap_or_default())
}

/// Canned responses read from `<dir>/<instance_id>.txt`. A subdirectory
/// named after the worker (`llm_<model>_<t>`) takes precedence, so one
/// fixture root can serve several profiles.
pub struct FixtureClient {
    dir: PathBuf,
}

impl FixtureClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureClient { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn complete(&self, worker_slug: &str, instance_id: &str) -> Result<String, CallError> {
        let file = format!("{instance_id}.txt");
        let specific = self.dir.join(worker_slug).join(&file);
        let path = if specific.is_file() { specific } else { self.dir.join(&file) };
        fs::read_to_string(&path).map_err(|e| CallError::fatal(format!("{}: {e}", path.display())))
    }
}
