use serde_json::{Map, Value};
use thiserror::Error;

use super::prompts::repair_message;
use crate::gateway::{Gateway, GatewayError, Message};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AskError {
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("unusable reply after repair: {0}")]
    Invalid(String),
}

/// Asks the chat backend and parses the reply; on a parse failure, sends one
/// repair turn carrying the error, then gives up.
pub async fn ask_with_repair<T>(
    gateway: &Gateway,
    mut messages: Vec<Message>,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, AskError> {
    let reply = gateway.chat(messages.clone()).await?;
    let error = match parse(&reply) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    tracing::debug!(%error, "structured reply rejected, reprompting once");
    messages.push(Message::assistant(reply));
    messages.push(Message::user(repair_message(&error)));
    let reply = gateway.chat(messages).await?;
    parse(&reply).map_err(AskError::Invalid)
}

/// Pulls a single JSON object out of a model reply, tolerating code fences
/// and prose around it.
pub fn extract_json_object(reply: &str) -> Result<Map<String, Value>, String> {
    let start = reply.find('{').ok_or_else(|| "reply contains no JSON object".to_string())?;
    let end = reply.rfind('}').ok_or_else(|| "reply contains no JSON object".to_string())?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    match serde_json::from_str::<Value>(&reply[start..=end]) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err("reply is not a JSON object".into()),
        Err(e) => Err(format!("invalid JSON: {e}")),
    }
}

pub(crate) fn string_field(map: &Map<String, Value>, key: &str) -> Result<String, String> {
    match map.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(format!("field {key:?} is empty")),
        Some(_) => Err(format!("field {key:?} must be a string")),
        None => Err(format!("missing field {key:?}")),
    }
}
