use std::fmt::Write;

use super::{Memory, PlannedAction, Query, ToolRegistry, ToolSpec};
use super::trace::{ActionRecord, CaseTrace, Status};

/// How many trailing records appear in full; earlier ones get one-line digests.
const FULL_RECORDS: usize = 5;

pub(crate) const SYSTEM: &str = "You coordinate a radiology reporting assistant for volumetric CT. \
You read a user request, choose among the available tools one step at a time, issue their commands, \
and check the recorded outcomes until a quality-controlled report exists. Answer exactly in the \
requested format.";

pub(crate) const TASK_GUIDELINE: &str = "TASK: ANALYZE_QUERY";
pub(crate) const TASK_PLAN: &str = "TASK: PLAN_NEXT_ACTION";
pub(crate) const TASK_COMMAND: &str = "TASK: GENERATE_COMMAND";
pub(crate) const TASK_VERIFY: &str = "TASK: VERIFY_COMPLETION";

fn tool_listing(tools: &ToolRegistry) -> String {
    let mut out = String::new();
    for spec in tools.specs() {
        let _ = writeln!(out, "- {}: {}", spec.name, spec.description);
        let _ = writeln!(out, "  parameters: {}", spec.signature());
    }
    out
}

fn query_block(q: &Query) -> String {
    format!("Request: {}\nCase: {}\nTarget organ: {}\n", q.text, q.case_id, q.organ)
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Ok => "ok",
        Status::Error => "error",
    }
}

fn digest_line(r: &ActionRecord) -> String {
    let tool = r.tool().unwrap_or("-");
    let arts = if r.outcome.artifacts.is_empty() { "none".to_string() } else { r.outcome.artifacts.join(", ") };
    format!("step {} [{}] {} -> {}", r.step, status_word(r.status), tool, arts)
}

fn full_record(r: &ActionRecord) -> String {
    let mut out = format!("Step {} [{}]\n", r.step, status_word(r.status));
    if let Some(p) = &r.planned {
        let _ = writeln!(out, "  goal: {}\n  tool: {}", p.intermediate_goal, p.tool);
    }
    if let Some(c) = &r.command {
        let _ = writeln!(out, "  arguments: {}", serde_json::Value::Object(c.arguments.clone()));
    }
    let _ = writeln!(out, "  outcome: {}", r.outcome.text);
    if !r.outcome.artifacts.is_empty() {
        let _ = writeln!(out, "  stored: {}", r.outcome.artifacts.join(", "));
    }
    out
}

/// Bounded view of the trace and memory for prompts.
pub fn memory_summary(trace: &CaseTrace, memory: &Memory) -> String {
    let records = trace.records();
    if records.is_empty() {
        return "Memory: no actions yet.\n".to_string();
    }
    let mut out = format!("Memory: {} action(s) so far.\n", records.len());
    let split = records.len().saturating_sub(FULL_RECORDS);
    for r in &records[..split] {
        let _ = writeln!(out, "{}", digest_line(r));
    }
    for r in &records[split..] {
        out.push_str(&full_record(r));
    }
    if !memory.is_empty() {
        out.push_str("Stored artifacts (reference with @key):\n");
        for (key, a) in memory.iter() {
            let _ = writeln!(out, "- {key}: {}", a.kind());
        }
    }
    out
}

pub(crate) fn guideline_prompt(q: &Query, tools: &ToolRegistry) -> String {
    format!(
        "{TASK_GUIDELINE}\n{}\nAvailable tools:\n{}\nWrite a short high-level guideline: which capabilities are needed, \
in what order, and what a finished answer must contain. Reply in plain text.",
        query_block(q),
        tool_listing(tools)
    )
}

pub(crate) fn plan_prompt(trace: &CaseTrace, memory: &Memory, tools: &ToolRegistry) -> String {
    format!(
        "{TASK_PLAN}\n{}Guideline: {}\n\nAvailable tools:\n{}\n{}\nDecide the next intermediate goal and the single \
tool that achieves it. Reply with one JSON object: \
{{\"intermediate_goal\": string, \"tool\": string, \"rationale\": string}}.",
        query_block(trace.query()),
        trace.guideline(),
        tool_listing(tools),
        memory_summary(trace, memory)
    )
}

pub(crate) fn command_prompt(action: &PlannedAction, spec: &ToolSpec, trace: &CaseTrace, memory: &Memory) -> String {
    format!(
        "{TASK_COMMAND}\n{}Goal: {}\nTool: {}\nParameters: {}\n\n{}\nWrite the command for this tool. Refer to stored \
artifacts as \"@<key>\". Reply with one JSON object: {{\"arguments\": {{...}}}}.",
        query_block(trace.query()),
        action.intermediate_goal,
        spec.name,
        spec.signature(),
        memory_summary(trace, memory)
    )
}

pub(crate) fn verify_prompt(trace: &CaseTrace, memory: &Memory) -> String {
    format!(
        "{TASK_VERIFY}\n{}\n{}\nIs the request fulfilled by a quality-controlled report in memory? Reply with one JSON \
object: {{\"verdict\": \"continue\"}} or {{\"verdict\": \"stop\", \"report_key\": \"<key>\"}}.",
        query_block(trace.query()),
        memory_summary(trace, memory)
    )
}

pub(crate) fn repair_message(error: &str) -> String {
    format!("TASK: REPAIR\nYour previous reply could not be used: {error}\nReply again with a single corrected JSON object.")
}
