use serde_json::Value;

use super::parse::{ask_with_repair, extract_json_object, string_field};
use super::prompts::{guideline_prompt, plan_prompt, verify_prompt, SYSTEM};
use super::{AgentError, CaseTrace, Memory, PlannedAction, Query, ToolRegistry};
use crate::gateway::{Gateway, Message};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    Stop { report_key: String },
}

/// Produces the high-level guideline that later planning prompts carry.
pub async fn analyze_query(gateway: &Gateway, query: &Query, tools: &ToolRegistry) -> Result<String, AgentError> {
    if tools.is_empty() {
        return Err(AgentError::EmptyRegistry);
    }
    let messages = vec![Message::system(SYSTEM), Message::user(guideline_prompt(query, tools))];
    let guideline = gateway.chat(messages).await?;
    if guideline.trim().is_empty() {
        return Err(AgentError::EmptyGuideline);
    }
    Ok(guideline)
}

fn parse_plan(reply: &str, tools: &ToolRegistry) -> Result<PlannedAction, String> {
    let obj = extract_json_object(reply)?;
    let tool = string_field(&obj, "tool")?;
    if tools.get(&tool).is_none() {
        return Err(format!("unknown tool {tool:?}; choose one of: {}", tools.names().join(", ")));
    }
    let intermediate_goal = string_field(&obj, "intermediate_goal")?;
    let rationale = match obj.get("rationale") {
        Some(Value::String(s)) => s.clone(),
        None | Some(Value::Null) => String::new(),
        Some(_) => return Err("field \"rationale\" must be a string".into()),
    };
    Ok(PlannedAction { intermediate_goal, tool, rationale })
}

/// Asks for the next action; one repair turn on an unusable reply.
pub async fn plan_next_action(
    gateway: &Gateway,
    trace: &CaseTrace,
    memory: &Memory,
    tools: &ToolRegistry,
) -> Result<PlannedAction, String> {
    let messages = vec![Message::system(SYSTEM), Message::user(plan_prompt(trace, memory, tools))];
    ask_with_repair(gateway, messages, |r| parse_plan(r, tools))
        .await
        .map_err(|e| format!("planning failed: {e}"))
}

/// Checks memory for a finished report.
///
/// Any problem (backend failure, unparseable verdict, a stop naming a key that
/// does not hold a qualified report) becomes `Continue` plus a warning.
pub async fn verify_completion(gateway: &Gateway, trace: &CaseTrace, memory: &Memory) -> (Verdict, Option<String>) {
    if trace.records().is_empty() || trace.records().iter().all(|r| r.outcome.artifacts.is_empty()) {
        return (Verdict::Continue, None);
    }
    let messages = vec![Message::system(SYSTEM), Message::user(verify_prompt(trace, memory))];
    let reply = match gateway.chat(messages).await {
        Ok(r) => r,
        Err(e) => return (Verdict::Continue, Some(format!("verification backend failed: {e}"))),
    };
    let obj = match extract_json_object(&reply) {
        Ok(o) => o,
        Err(e) => return (Verdict::Continue, Some(format!("unparseable verification reply: {e}"))),
    };
    match obj.get("verdict").and_then(Value::as_str) {
        Some("continue") => (Verdict::Continue, None),
        Some("stop") => {
            let key = obj.get("report_key").and_then(Value::as_str).unwrap_or_default().trim_start_matches('@');
            if memory.qualified_report(key).is_some() {
                (Verdict::Stop { report_key: key.to_string() }, None)
            } else {
                (
                    Verdict::Continue,
                    Some(format!("stop verdict named {key:?}, which holds no qualified report; continuing")),
                )
            }
        }
        other => (Verdict::Continue, Some(format!("unrecognized verdict {other:?}; continuing"))),
    }
}
