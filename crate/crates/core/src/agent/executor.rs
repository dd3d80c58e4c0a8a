use std::panic::AssertUnwindSafe;

use futures::FutureExt;
use serde_json::{Map, Value};
use tokio::time::Instant;

use super::parse::{ask_with_repair, extract_json_object};
use super::prompts::{command_prompt, SYSTEM};
use super::run::ClockMode;
use super::trace::{ActionRecord, Outcome, Status};
use super::{
    Artifact, CaseTrace, Memory, PlannedAction, ResolvedArgs, ToolCommand, ToolContext, ToolRegistry, ToolSpec,
    MEMORY_REF_PREFIX,
};
use crate::gateway::{Gateway, Message};

fn memory_key(v: &Value) -> Option<&str> {
    v.as_str().and_then(|s| s.strip_prefix(MEMORY_REF_PREFIX))
}

/// Checks `args` against the tool schema and that every `@key` resolves.
pub fn validate_arguments(spec: &ToolSpec, args: &Map<String, Value>, memory: &Memory) -> Result<(), String> {
    if let Some(unknown) = args.keys().find(|k| spec.param(k).is_none()) {
        return Err(format!("tool {} has no parameter {unknown:?}", spec.name));
    }
    for p in &spec.params {
        match args.get(&p.name) {
            None | Some(Value::Null) if p.required => {
                return Err(format!("missing required argument {:?}", p.name));
            }
            None | Some(Value::Null) => {}
            Some(v) if !p.kind.accepts(v) => {
                return Err(format!("argument {:?} must be of kind {:?}", p.name, p.kind));
            }
            Some(v) => {
                let refs: Vec<&Value> = match v {
                    Value::Array(items) => items.iter().collect(),
                    other => vec![other],
                };
                for key in refs.into_iter().filter_map(memory_key) {
                    if !memory.contains(key) {
                        return Err(format!("argument {:?} references unknown memory key {key:?}", p.name));
                    }
                }
            }
        }
    }
    Ok(())
}

fn parse_command(reply: &str, spec: &ToolSpec, memory: &Memory) -> Result<ToolCommand, String> {
    let obj = extract_json_object(reply)?;
    if let Some(tool) = obj.get("tool").and_then(Value::as_str) {
        if tool != spec.name {
            return Err(format!("command names tool {tool:?}, expected {:?}", spec.name));
        }
    }
    let arguments = match obj.get("arguments") {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err("\"arguments\" must be an object".into()),
        None => return Err("missing field \"arguments\"".into()),
    };
    validate_arguments(spec, &arguments, memory)?;
    Ok(ToolCommand { tool: spec.name.clone(), arguments })
}

/// Asks for schema-valid arguments for the planned tool; one repair turn.
pub async fn generate_command(
    gateway: &Gateway,
    action: &PlannedAction,
    spec: &ToolSpec,
    trace: &CaseTrace,
    memory: &Memory,
) -> Result<ToolCommand, String> {
    if action.tool != spec.name {
        return Err(format!("planned tool {:?} does not match spec {:?}", action.tool, spec.name));
    }
    let messages = vec![Message::system(SYSTEM), Message::user(command_prompt(action, spec, trace, memory))];
    ask_with_repair(gateway, messages, |r| parse_command(r, spec, memory))
        .await
        .map_err(|e| format!("command generation failed: {e}"))
}

fn resolve(cmd: &ToolCommand, memory: &Memory) -> Result<ResolvedArgs, String> {
    let mut refs = Vec::new();
    for (name, v) in &cmd.arguments {
        if let Some(key) = memory_key(v) {
            let artifact = memory.get(key).ok_or_else(|| format!("unknown memory key {key:?}"))?;
            refs.push((name.clone(), artifact.clone()));
        }
    }
    Ok(ResolvedArgs::new(cmd.arguments.clone(), refs))
}

/// Runs the command and records the outcome. Tool failures, including
/// panics, become `Status::Error` records; nothing escapes.
pub async fn execute_command(
    step: usize,
    planned: PlannedAction,
    cmd: ToolCommand,
    registry: &ToolRegistry,
    ctx: &ToolContext,
    memory: &Memory,
    clock: ClockMode,
) -> (ActionRecord, Vec<(String, Artifact)>) {
    let started = Instant::now();
    let result = match (registry.get(&cmd.tool), resolve(&cmd, memory)) {
        (None, _) => Err(format!("tool {:?} is not registered", cmd.tool)),
        (_, Err(e)) => Err(e),
        (Some((_, tool)), Ok(args)) => match AssertUnwindSafe(tool.run(ctx, &args)).catch_unwind().await {
            Ok(Ok(out)) => Ok(out),
            Ok(Err(e)) => Err(e.to_string()),
            Err(_) => Err(format!("tool {:?} panicked", cmd.tool)),
        },
    };
    let wall_time_s = clock.seconds_since(started);

    let (status, outcome, stored) = match result {
        Ok(out) => {
            let stored: Vec<(String, Artifact)> = out
                .artifacts
                .into_iter()
                .map(|(name, a)| (format!("s{step}.{name}"), a))
                .collect();
            let keys = stored.iter().map(|(k, _)| k.clone()).collect();
            (Status::Ok, Outcome { text: out.summary, artifacts: keys }, stored)
        }
        Err(e) => {
            tracing::warn!(step, tool = %cmd.tool, error = %e, "tool call failed");
            (Status::Error, Outcome { text: format!("error: {e}"), artifacts: Vec::new() }, Vec::new())
        }
    };
    let record = ActionRecord { step, planned: Some(planned), command: Some(cmd), status, outcome, wall_time_s };
    (record, stored)
}
