use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::time::{timeout_at, Instant};

use super::executor::{execute_command, generate_command};
use super::planner::{analyze_query, plan_next_action, verify_completion, Verdict};
use super::trace::{ActionRecord, CaseTrace, Outcome, Status, TerminalStatus, TraceHeader};
use super::{Artifact, Memory, PlannedAction, ToolCommand, ToolContext, ToolRegistry};
use crate::tools::Report;

/// How step wall time is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    System,
    /// Records every duration as zero so traces are reproducible byte for byte.
    Frozen,
}

impl ClockMode {
    pub fn seconds_since(self, start: Instant) -> f64 {
        match self {
            ClockMode::System => (start.elapsed().as_micros() as f64) / 1e6,
            ClockMode::Frozen => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub time_budget: Duration,
    pub clock: ClockMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { max_steps: 10, time_budget: Duration::from_secs(500), clock: ClockMode::System }
    }
}

pub struct CaseRun {
    pub trace: CaseTrace,
    pub memory: Memory,
    /// The qualified report named by the stop verdict, when completed.
    pub report: Option<Report>,
}

impl CaseRun {
    pub fn status(&self) -> TerminalStatus {
        self.trace.terminal().unwrap_or(TerminalStatus::Aborted)
    }
}

/// What a step had settled before it finished or was cancelled.
#[derive(Default)]
struct StepProgress {
    planned: Option<PlannedAction>,
    command: Option<ToolCommand>,
}

fn error_record(step: usize, progress: StepProgress, text: String, wall_time_s: f64) -> ActionRecord {
    ActionRecord {
        step,
        planned: progress.planned,
        command: progress.command,
        status: Status::Error,
        outcome: Outcome { text, artifacts: Vec::new() },
        wall_time_s,
    }
}

async fn run_step(
    step: usize,
    ctx: &ToolContext,
    registry: &ToolRegistry,
    trace: &CaseTrace,
    memory: &Memory,
    clock: ClockMode,
    progress: &mut StepProgress,
) -> Result<(ActionRecord, Vec<(String, Artifact)>), String> {
    let planned = plan_next_action(&ctx.gateway, trace, memory, registry).await?;
    progress.planned = Some(planned.clone());
    let (spec, _) = registry.get(&planned.tool).ok_or_else(|| format!("tool {:?} is not registered", planned.tool))?;
    let cmd = generate_command(&ctx.gateway, &planned, spec, trace, memory).await?;
    progress.command = Some(cmd.clone());
    Ok(execute_command(step, planned, cmd, registry, ctx, memory, clock).await)
}

/// Runs one case from query to terminal status.
///
/// The time budget is checked between steps and also bounds every in-flight
/// backend or tool call: at the deadline the pending step is cancelled and
/// recorded as an error.
pub async fn run_case(
    ctx: ToolContext,
    registry: Arc<ToolRegistry>,
    config: &AgentConfig,
    config_digest: impl Into<String>,
) -> CaseRun {
    let started = Instant::now();
    let deadline = started + config.time_budget;
    let mut header = TraceHeader {
        query: ctx.query.clone(),
        guideline: String::new(),
        tools: registry.names(),
        config_digest: config_digest.into(),
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mut memory = Memory::default();

    let guideline = timeout_at(deadline, analyze_query(&ctx.gateway, &ctx.query, &registry)).await;
    let guideline = match guideline {
        Ok(Ok(g)) => g,
        Ok(Err(e)) => {
            let mut trace = CaseTrace::new(header);
            trace.warn(format!("query analysis failed: {e}"));
            trace.finish(TerminalStatus::Aborted, None);
            return CaseRun { trace, memory, report: None };
        }
        Err(_) => {
            let mut trace = CaseTrace::new(header);
            trace.finish(TerminalStatus::TimeBudget, None);
            return CaseRun { trace, memory, report: None };
        }
    };
    header.guideline = guideline;
    let mut trace = CaseTrace::new(header);

    let status = loop {
        if trace.records().len() >= config.max_steps {
            break TerminalStatus::StepCap;
        }
        if Instant::now() >= deadline {
            break TerminalStatus::TimeBudget;
        }
        let step = trace.next_step();
        let step_started = Instant::now();
        let mut progress = StepProgress::default();
        let outcome = timeout_at(
            deadline,
            run_step(step, &ctx, &registry, &trace, &memory, config.clock, &mut progress),
        )
        .await;
        let wall = config.clock.seconds_since(step_started);
        let (record, stored, timed_out) = match outcome {
            Ok(Ok((record, stored))) => (record, stored, false),
            Ok(Err(message)) => (error_record(step, progress, message, wall), Vec::new(), false),
            Err(_) => (
                error_record(step, progress, "cancelled: case time budget exhausted".into(), wall),
                Vec::new(),
                true,
            ),
        };
        trace.push(record).expect("step index follows trace length");
        for (key, artifact) in stored {
            if !memory.insert(key.clone(), artifact) {
                trace.warn(format!("memory key {key:?} already present; new value discarded"));
            }
        }
        if timed_out {
            break TerminalStatus::TimeBudget;
        }

        match timeout_at(deadline, verify_completion(&ctx.gateway, &trace, &memory)).await {
            Err(_) => break TerminalStatus::TimeBudget,
            Ok((verdict, warning)) => {
                if let Some(w) = warning {
                    trace.warn(w);
                }
                if let Verdict::Stop { report_key } = verdict {
                    let report = memory.qualified_report(&report_key).cloned();
                    trace.finish(TerminalStatus::Completed, Some(report_key));
                    return CaseRun { trace, memory, report };
                }
            }
        }
    };
    trace.finish(status, None);
    CaseRun { trace, memory, report: None }
}
