//! Deterministic scripted backend driven by a transcript of
//! `(matcher, response)` records.
//!
//! Each request consumes the first record that still has uses left and whose
//! matcher accepts the request text. For chat the text is every message
//! joined by newlines; for vision it is the prompt.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, GatewayError, VisionBackend, VisionRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    #[default]
    Any,
    Contains(String),
    NotContains(String),
    /// Lowercase hex SHA-256 of the full request text.
    Sha256(String),
    AllOf(Vec<Matcher>),
}

impl Matcher {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => text.contains(s.as_str()),
            Matcher::NotContains(s) => !text.contains(s.as_str()),
            Matcher::Sha256(h) => hex::encode(Sha256::digest(text.as_bytes())) == h.to_ascii_lowercase(),
            Matcher::AllOf(ms) => ms.iter().all(|m| m.matches(text)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailKind {
    Transport,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ScriptResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<FailKind>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delay_ms: u64,
}

fn is_zero(x: &u64) -> bool {
    *x == 0
}

fn one() -> u32 {
    1
}

fn is_one(x: &u32) -> bool {
    *x == 1
}

fn is_false(x: &bool) -> bool {
    !*x
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRecord {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub response: ScriptResponse,
    /// How many requests this record answers.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub times: u32,
    /// Answers any number of requests.
    #[serde(default, skip_serializing_if = "is_false")]
    pub repeat: bool,
}

impl ScriptRecord {
    pub fn reply(matcher: Matcher, text: impl Into<String>) -> Self {
        Self {
            matcher,
            response: ScriptResponse { text: Some(text.into()), ..Default::default() },
            times: 1,
            repeat: false,
        }
    }

    pub fn fail(matcher: Matcher, kind: FailKind, times: u32) -> Self {
        Self {
            matcher,
            response: ScriptResponse { fail: Some(kind), ..Default::default() },
            times,
            repeat: false,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.response.delay_ms = delay.as_millis() as u64;
        self
    }
}

#[derive(Debug)]
pub struct ScriptedBackend {
    records: Vec<ScriptRecord>,
    used: Mutex<Vec<u32>>,
    log: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(records: Vec<ScriptRecord>) -> Self {
        let used = Mutex::new(vec![0; records.len()]);
        Self { records, used, log: Mutex::new(Vec::new()) }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(json)?))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn records(&self) -> &[ScriptRecord] {
        &self.records
    }

    /// Same script with every record's use count reset.
    pub fn fresh(&self) -> Self {
        Self::new(self.records.clone())
    }

    /// Request texts seen so far, in arrival order.
    pub fn calls(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    async fn respond(&self, text: &str) -> Result<String, GatewayError> {
        self.log.lock().unwrap().push(text.to_string());
        let record = {
            let mut used = self.used.lock().unwrap();
            let pick = self.records.iter().enumerate().position(|(i, r)| {
                (r.repeat || used[i] < r.times) && r.matcher.matches(text)
            });
            match pick {
                Some(i) => {
                    used[i] += 1;
                    &self.records[i]
                }
                None => {
                    let head: String = text.chars().take(120).collect();
                    return Err(GatewayError::ScriptExhausted(head));
                }
            }
        };
        if record.response.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(record.response.delay_ms)).await;
        }
        match (record.response.fail, &record.response.text) {
            (Some(FailKind::Transport), _) => Err(GatewayError::Transport("scripted transport failure".into())),
            (Some(FailKind::Malformed), _) => Err(GatewayError::Malformed("scripted malformed response".into())),
            (None, Some(t)) => Ok(t.clone()),
            (None, None) => Err(GatewayError::Malformed("scripted record without text".into())),
        }
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        self.respond(&req.transcript()).await
    }
}

#[async_trait]
impl VisionBackend for ScriptedBackend {
    async fn analyze(&self, req: &VisionRequest) -> Result<String, GatewayError> {
        self.respond(&req.prompt).await
    }
}
