//! Append-only case trace and its JSON-lines form.
//!
//! File layout: one `header` line, then each `record` line followed by any
//! `warning` lines raised during that step, then one `terminal` line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PlannedAction, Query, ToolCommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalStatus {
    Completed,
    StepCap,
    TimeBudget,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub text: String,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step: usize,
    pub planned: Option<PlannedAction>,
    pub command: Option<ToolCommand>,
    pub status: Status,
    pub outcome: Outcome,
    pub wall_time_s: f64,
}

impl ActionRecord {
    pub fn tool(&self) -> Option<&str> {
        self.planned.as_ref().map(|p| p.tool.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub query: Query,
    pub guideline: String,
    pub tools: Vec<String>,
    pub config_digest: String,
    pub engine_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseTrace {
    pub header: TraceHeader,
    records: Vec<ActionRecord>,
    warnings: Vec<Warning>,
    terminal: Option<TerminalStatus>,
    final_report_key: Option<String>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace has no header line")]
    MissingHeader,
    #[error("line {line}: unexpected {what}")]
    Unexpected { line: usize, what: &'static str },
    #[error("record step {found} out of sequence, expected {expected}")]
    StepOrder { expected: usize, found: usize },
    #[error("trace is already terminal")]
    Terminal,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Record(ActionRecord),
    Warning(Warning),
    Terminal {
        status: TerminalStatus,
        final_report_key: Option<String>,
    },
}

impl CaseTrace {
    pub fn new(header: TraceHeader) -> Self {
        Self { header, records: Vec::new(), warnings: Vec::new(), terminal: None, final_report_key: None }
    }

    pub fn query(&self) -> &Query {
        &self.header.query
    }

    pub fn guideline(&self) -> &str {
        &self.header.guideline
    }

    pub fn records(&self) -> &[ActionRecord] {
        &self.records
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn terminal(&self) -> Option<TerminalStatus> {
        self.terminal
    }

    pub fn final_report_key(&self) -> Option<&str> {
        self.final_report_key.as_deref()
    }

    pub fn next_step(&self) -> usize {
        self.records.len() + 1
    }

    /// Appends a record; its step must be exactly `len + 1`.
    pub fn push(&mut self, record: ActionRecord) -> Result<(), TraceError> {
        if self.terminal.is_some() {
            return Err(TraceError::Terminal);
        }
        if record.step != self.next_step() {
            return Err(TraceError::StepOrder { expected: self.next_step(), found: record.step });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let step = self.records.len();
        self.warnings.push(Warning { step, message: message.into() });
    }

    pub fn finish(&mut self, status: TerminalStatus, final_report_key: Option<String>) {
        if self.terminal.is_none() {
            self.terminal = Some(status);
            self.final_report_key = final_report_key;
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |l: &Line| {
            out.push_str(&serde_json::to_string(l).expect("trace line serializes"));
            out.push('\n');
        };
        line(&Line::Header(self.header.clone()));
        for w in self.warnings.iter().filter(|w| w.step == 0) {
            line(&Line::Warning(w.clone()));
        }
        for r in &self.records {
            line(&Line::Record(r.clone()));
            for w in self.warnings.iter().filter(|w| w.step == r.step) {
                line(&Line::Warning(w.clone()));
            }
        }
        if let Some(status) = self.terminal {
            line(&Line::Terminal { status, final_report_key: self.final_report_key.clone() });
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut trace: Option<CaseTrace> = None;
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line_no = i + 1;
            let parsed: Line = serde_json::from_str(raw).map_err(|source| TraceError::Json { line: line_no, source })?;
            match (parsed, trace.as_mut()) {
                (Line::Header(h), None) => trace = Some(CaseTrace::new(h)),
                (Line::Header(_), Some(_)) => return Err(TraceError::Unexpected { line: line_no, what: "second header" }),
                (_, None) => return Err(TraceError::MissingHeader),
                (Line::Record(r), Some(t)) => t.push(r)?,
                (Line::Warning(w), Some(t)) => t.warnings.push(w),
                (Line::Terminal { status, final_report_key }, Some(t)) => {
                    if t.terminal.is_some() {
                        return Err(TraceError::Unexpected { line: line_no, what: "second terminal line" });
                    }
                    t.finish(status, final_report_key)
                }
            }
        }
        trace.ok_or(TraceError::MissingHeader)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Map;

    fn header() -> TraceHeader {
        TraceHeader {
            query: Query::new("Write a liver report", "c1", "liver"),
            guideline: "segment first".into(),
            tools: vec!["segmentator".into()],
            config_digest: "abc".into(),
            engine_version: "0.1.0".into(),
        }
    }

    fn record(step: usize) -> ActionRecord {
        ActionRecord {
            step,
            planned: Some(PlannedAction {
                intermediate_goal: "g".into(),
                tool: "segmentator".into(),
                rationale: "r".into(),
            }),
            command: Some(ToolCommand { tool: "segmentator".into(), arguments: Map::new() }),
            status: Status::Ok,
            outcome: Outcome { text: "done".into(), artifacts: vec![format!("s{step}.masks")] },
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn steps_must_be_consecutive() {
        let mut t = CaseTrace::new(header());
        t.push(record(1)).unwrap();
        assert!(matches!(t.push(record(3)), Err(TraceError::StepOrder { expected: 2, found: 3 })));
    }

    #[test]
    fn jsonl_round_trip_and_prefix_stability() {
        let mut t = CaseTrace::new(header());
        t.push(record(1)).unwrap();
        t.warn("stop named a missing key");
        let prefix = t.to_jsonl();
        t.push(record(2)).unwrap();
        t.finish(TerminalStatus::StepCap, None);
        let full = t.to_jsonl();
        assert!(full.starts_with(&prefix));
        assert_eq!(CaseTrace::from_jsonl(&full).unwrap(), t);
        assert!(full.lines().next().unwrap().starts_with(r#"{"type":"header","query":"#));
        assert!(full.lines().last().unwrap().contains(r#""status":"step-cap""#));
    }
}
