//! Blocking JSON client for an external scoring server.
//!
//! `POST {endpoint}/v1/score` with the task description, demonstrations and
//! input; the server answers `{"p": {"Yes": x, "No": y}}` and the client
//! renormalizes.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabelDistribution, ScoreRequest, ScorerBackend};
use crate::error::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://127.0.0.1:8080".into(),
            timeout_ms: 30_000,
            max_attempts: 3,
            backoff_base_ms: 200,
            max_in_flight: 8,
        }
    }
}

#[derive(Serialize)]
struct WireDemo<'a> {
    query: &'a str,
    passage: &'a str,
    label: &'a str,
}

#[derive(Serialize)]
struct WireInput<'a> {
    query: &'a str,
    passage: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    task_description: &'a str,
    demonstrations: Vec<WireDemo<'a>>,
    input: WireInput<'a>,
    label_space: [&'a str; 2],
}

#[derive(Deserialize)]
struct WireProbs {
    #[serde(rename = "Yes")]
    yes: f64,
    #[serde(rename = "No")]
    no: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    p: WireProbs,
}

pub(crate) fn request_body(request: &ScoreRequest<'_>) -> String {
    let [a, b] = request.label_space();
    let body = WireRequest {
        task_description: &request.template.task_description,
        demonstrations: request
            .demos
            .iter()
            .map(|d| WireDemo {
                query: &d.query.text,
                passage: &d.passage.text,
                label: d.label.as_str(),
            })
            .collect(),
        input: WireInput {
            query: request.input_query,
            passage: request.input_passage,
        },
        label_space: [a.as_str(), b.as_str()],
    };
    serde_json::to_string(&body).expect("serializable request")
}

pub(crate) fn parse_body(body: &str) -> Result<LabelDistribution, BackendError> {
    let resp: WireResponse = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    LabelDistribution::normalize(resp.p.yes, resp.p.no)
        .ok_or_else(|| BackendError::Malformed(format!("unusable masses Yes={} No={}", resp.p.yes, resp.p.no)))
}

struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpScorer {
    config: HttpConfig,
    url: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpScorer {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/v1/score", config.endpoint.trim_end_matches('/'));
        let gate = Gate {
            limit: config.max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        };
        HttpScorer {
            config,
            url,
            agent,
            gate,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn attempt(&self, body: &str) -> Result<LabelDistribution, BackendError> {
        let _permit = self.gate.acquire();
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(classify)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status(status));
        }
        let text = resp.body_mut().read_to_string().map_err(classify)?;
        parse_body(&text)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let jitter = rand::rng().random_range(0.5..1.5);
        Duration::from_millis((base * jitter) as u64)
    }
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(code) => BackendError::Status(code),
        ureq::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            BackendError::Timeout
        }
        other => BackendError::Transport(other.to_string()),
    }
}

fn retryable(err: &BackendError) -> bool {
    match err {
        BackendError::Timeout | BackendError::Transport(_) => true,
        BackendError::Status(code) => *code == 429 || *code >= 500,
        BackendError::Malformed(_) | BackendError::Unavailable { .. } => false,
    }
}

impl ScorerBackend for HttpScorer {
    fn distribution(&self, request: &ScoreRequest<'_>) -> Result<LabelDistribution, BackendError> {
        let body = request_body(request);
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match self.attempt(&body) {
                Ok(d) => return Ok(d),
                Err(e) if retryable(&e) => {
                    log::debug!("scorer attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.backoff(attempt));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(BackendError::Unavailable {
            attempts,
            last: Box::new(last.expect("at least one attempt")),
        })
    }
}
