//! The planner / executor / memory loop.
//!
//! Each step plans an action, turns it into a schema-checked command, runs
//! the tool, appends an [`ActionRecord`], and asks the planner whether a
//! qualified report is in memory. The run ends on a stop verdict, the step
//! cap, or the wall-clock budget.

mod executor;
mod memory;
mod parse;
mod planner;
mod prompts;
mod run;
mod trace;

pub use executor::{execute_command, generate_command, validate_arguments};
pub use memory::{Artifact, Memory};
pub use parse::{ask_with_repair, extract_json_object, AskError};
pub use planner::{analyze_query, plan_next_action, verify_completion, Verdict};
pub use prompts::memory_summary;
pub use run::{run_case, AgentConfig, CaseRun, ClockMode};
pub use trace::{ActionRecord, CaseTrace, Outcome, Status, TerminalStatus, TraceError, TraceHeader, Warning};

use std::collections::BTreeSet;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, SegmentationMasks};
use crate::tools::{AnalysisItem, AnalysisResult, Report, ToolSettings};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub case_id: String,
    pub organ: String,
}

impl Query {
    pub fn new(text: impl Into<String>, case_id: impl Into<String>, organ: impl Into<String>) -> Self {
        Self { text: text.into(), case_id: case_id.into(), organ: organ.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Integer,
    Real,
    Boolean,
    List,
    Object,
}

impl ParamKind {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            ParamKind::String => v.is_string(),
            ParamKind::Integer => v.is_i64() || v.is_u64(),
            ParamKind::Real => v.is_number(),
            ParamKind::Boolean => v.is_boolean(),
            ParamKind::List => v.is_array(),
            ParamKind::Object => v.is_object(),
        }
    }

    fn label(self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Integer => "integer",
            ParamKind::Real => "real",
            ParamKind::Boolean => "boolean",
            ParamKind::List => "list",
            ParamKind::Object => "object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub description: String,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind, description: &str) -> Self {
        Self { name: name.into(), kind, required: true, description: description.into() }
    }

    pub fn optional(name: &str, kind: ParamKind, description: &str) -> Self {
        Self { name: name.into(), kind, required: false, description: description.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// One-line parameter listing used in prompts.
    pub fn signature(&self) -> String {
        self.params
            .iter()
            .map(|p| {
                format!(
                    "{} ({}, {}): {}",
                    p.name,
                    p.kind.label(),
                    if p.required { "required" } else { "optional" },
                    p.description
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub intermediate_goal: String,
    pub tool: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCommand {
    pub tool: String,
    pub arguments: Map<String, Value>,
}

/// Prefix marking a string argument as a reference to a memory key.
pub const MEMORY_REF_PREFIX: char = '@';

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("invalid argument {name:?}: {reason}")]
    InvalidArgument { name: String, reason: String },
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl ToolError {
    pub fn arg(name: &str, reason: impl Into<String>) -> Self {
        ToolError::InvalidArgument { name: name.into(), reason: reason.into() }
    }
}

impl From<crate::volume::VolumeError> for ToolError {
    fn from(e: crate::volume::VolumeError) -> Self {
        ToolError::Failed(e.to_string())
    }
}

/// What a tool hands back: a one-paragraph summary for the trace, plus named
/// artifacts the executor stores under `s<step>.<name>`.
#[derive(Debug, Clone)]
pub struct ToolOutput {
    pub summary: String,
    pub artifacts: Vec<(String, Artifact)>,
}

impl ToolOutput {
    pub fn text(summary: impl Into<String>) -> Self {
        Self { summary: summary.into(), artifacts: Vec::new() }
    }

    pub fn with(mut self, name: &str, artifact: Artifact) -> Self {
        self.artifacts.push((name.to_string(), artifact));
        self
    }
}

/// Per-case inputs shared by every tool call.
#[derive(Clone)]
pub struct ToolContext {
    pub query: Query,
    pub volume: Arc<Volume>,
    /// How the volume was addressed (a path or URI); used for crop references.
    pub volume_ref: String,
    pub gateway: Gateway,
    pub settings: Arc<ToolSettings>,
}

/// Command arguments with memory references resolved.
#[derive(Debug)]
pub struct ResolvedArgs {
    raw: Map<String, Value>,
    refs: Vec<(String, Artifact)>,
}

impl ResolvedArgs {
    pub fn new(raw: Map<String, Value>, refs: Vec<(String, Artifact)>) -> Self {
        Self { raw, refs }
    }

    pub fn raw(&self) -> &Map<String, Value> {
        &self.raw
    }

    pub fn string(&self, name: &str) -> Result<&str, ToolError> {
        self.opt_string(name)?.ok_or_else(|| ToolError::arg(name, "missing"))
    }

    pub fn opt_string(&self, name: &str) -> Result<Option<&str>, ToolError> {
        match self.raw.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ToolError::arg(name, "expected a string")),
        }
    }

    pub fn opt_integer(&self, name: &str) -> Result<Option<i64>, ToolError> {
        match self.raw.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_i64().map(Some).ok_or_else(|| ToolError::arg(name, "expected an integer")),
        }
    }

    pub fn string_list(&self, name: &str) -> Result<Vec<String>, ToolError> {
        let arr = self
            .raw
            .get(name)
            .and_then(Value::as_array)
            .ok_or_else(|| ToolError::arg(name, "expected a list"))?;
        arr.iter()
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| ToolError::arg(name, "expected strings")))
            .collect()
    }

    fn artifact(&self, name: &str) -> Result<&Artifact, ToolError> {
        self.refs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| ToolError::arg(name, "expected a memory reference such as \"@s1.masks\""))
    }

    pub fn masks(&self, name: &str) -> Result<&SegmentationMasks, ToolError> {
        match self.artifact(name)? {
            Artifact::Masks(m) => Ok(m),
            other => Err(ToolError::arg(name, format!("references {}, not masks", other.kind()))),
        }
    }

    pub fn items(&self, name: &str) -> Result<&[AnalysisItem], ToolError> {
        match self.artifact(name)? {
            Artifact::Items(i) => Ok(i),
            other => Err(ToolError::arg(name, format!("references {}, not analysis items", other.kind()))),
        }
    }

    pub fn analysis(&self, name: &str) -> Result<&AnalysisResult, ToolError> {
        match self.artifact(name)? {
            Artifact::Analysis(a) => Ok(a),
            other => Err(ToolError::arg(name, format!("references {}, not an analysis", other.kind()))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str, ToolError> {
        match self.artifact(name)? {
            Artifact::Text(t) => Ok(t),
            other => Err(ToolError::arg(name, format!("references {}, not text", other.kind()))),
        }
    }

    pub fn report(&self, name: &str) -> Result<&Report, ToolError> {
        match self.artifact(name)? {
            Artifact::Report(r) => Ok(r),
            other => Err(ToolError::arg(name, format!("references {}, not a report", other.kind()))),
        }
    }
}

#[async_trait]
pub trait Tool: Send + Sync {
    fn spec(&self) -> ToolSpec;

    async fn run(&self, ctx: &ToolContext, args: &ResolvedArgs) -> Result<ToolOutput, ToolError>;
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("duplicate tool name {0:?}")]
    DuplicateTool(String),
    #[error("tool {tool:?} declares parameter {param:?} twice")]
    DuplicateParam { tool: String, param: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("backend returned an empty guideline")]
    EmptyGuideline,
}

/// Immutable set of tools available to a case.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<(ToolSpec, Arc<dyn Tool>)>,
}

impl ToolRegistry {
    pub fn new(tools: Vec<Arc<dyn Tool>>) -> Result<Self, AgentError> {
        let mut names = BTreeSet::new();
        let mut entries = Vec::with_capacity(tools.len());
        for tool in tools {
            let spec = tool.spec();
            if !names.insert(spec.name.clone()) {
                return Err(AgentError::DuplicateTool(spec.name));
            }
            let mut params = BTreeSet::new();
            for p in &spec.params {
                if !params.insert(p.name.as_str()) {
                    return Err(AgentError::DuplicateParam { tool: spec.name.clone(), param: p.name.clone() });
                }
            }
            entries.push((spec, tool));
        }
        Ok(Self { tools: entries })
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter().map(|(s, _)| s)
    }

    pub fn names(&self) -> Vec<String> {
        self.specs().map(|s| s.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<(&ToolSpec, &Arc<dyn Tool>)> {
        self.tools.iter().find(|(s, _)| s.name == name).map(|(s, t)| (s, t))
    }
}
