use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{extract_json_object, CaseTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    AnalysisProcess,
    ToolSelection,
    ActionPlanning,
    ActionExecution,
}

impl Dimension {
    pub const ALL: [Dimension; 4] =
        [Dimension::AnalysisProcess, Dimension::ToolSelection, Dimension::ActionPlanning, Dimension::ActionExecution];

    /// Display name used in judge prompts.
    pub fn title(self) -> &'static str {
        match self {
            Dimension::AnalysisProcess => "Analysis Process",
            Dimension::ToolSelection => "Tool Selection",
            Dimension::ActionPlanning => "Action Planning",
            Dimension::ActionExecution => "Action Execution",
        }
    }

    /// JSON key expected in judge replies.
    pub fn key(self) -> &'static str {
        match self {
            Dimension::AnalysisProcess => "analysis_process",
            Dimension::ToolSelection => "tool_selection",
            Dimension::ActionPlanning => "action_planning",
            Dimension::ActionExecution => "action_execution",
        }
    }

    fn definition(self) -> &'static str {
        match self {
            Dimension::AnalysisProcess => "how well the agent understood the request and broke it into sub-goals",
            Dimension::ToolSelection => "whether each step used an appropriate tool for its goal",
            Dimension::ActionPlanning => "whether the order of steps was sensible and free of wasted actions",
            Dimension::ActionExecution => "whether commands had correct arguments and outcomes were used correctly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub dimension: Dimension,
    pub score: u8,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("trace has no terminal status")]
    NotTerminal,
    #[error("judge reply: {0}")]
    Reply(String),
    #[error("score {score} for {dimension:?} is outside 1..5")]
    OutOfRange { dimension: Dimension, score: i64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub case_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub case_id: String,
    pub reply: String,
}

/// Builds the judging prompt for a finished trace.
pub fn export_judge_prompt(trace: &CaseTrace) -> Result<JudgeRequest, JudgeError> {
    if trace.terminal().is_none() {
        return Err(JudgeError::NotTerminal);
    }
    let mut prompt = String::from(
        "TASK: JUDGE_TRACE\nYou are evaluating the execution trace of a radiology reporting agent. \
Score each dimension from 1 (poor) to 5 (excellent).\n\nDimensions:\n",
    );
    for d in Dimension::ALL {
        prompt.push_str(&format!("- {} ({}): {}.\n", d.title(), d.key(), d.definition()));
    }
    prompt.push_str("\nTrace (JSON lines):\n");
    prompt.push_str(&trace.to_jsonl());
    let keys: Vec<String> = Dimension::ALL.iter().map(|d| format!("\"{}\": int", d.key())).collect();
    prompt.push_str(&format!("\nReply with one JSON object of integer scores: {{{}}}.", keys.join(", ")));
    Ok(JudgeRequest { case_id: trace.query().case_id.clone(), prompt })
}

/// Parses the four integer scores; every score must lie in 1..5.
pub fn parse_judge_reply(reply: &str) -> Result<Vec<JudgeScore>, JudgeError> {
    let obj = extract_json_object(reply).map_err(JudgeError::Reply)?;
    Dimension::ALL
        .iter()
        .map(|&d| {
            let score = match obj.get(d.key()) {
                Some(Value::Number(n)) => n.as_i64().ok_or_else(|| JudgeError::Reply(format!("{} is not an integer", d.key())))?,
                Some(_) => return Err(JudgeError::Reply(format!("{} must be an integer", d.key()))),
                None => return Err(JudgeError::Reply(format!("missing score {}", d.key()))),
            };
            if !(1..=5).contains(&score) {
                return Err(JudgeError::OutOfRange { dimension: d, score });
            }
            Ok(JudgeScore { dimension: d, score: score as u8 })
        })
        .collect()
}

/// Counts of scores 1..5 per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeHistogram {
    pub counts: BTreeMap<Dimension, [usize; 5]>,
}

impl JudgeHistogram {
    pub fn count(&self, d: Dimension, score: u8) -> usize {
        self.counts[&d][score as usize - 1]
    }

    pub fn total(&self, d: Dimension) -> usize {
        self.counts[&d].iter().sum()
    }
}

pub fn aggregate_judge_scores(cases: &[Vec<JudgeScore>]) -> JudgeHistogram {
    let mut counts: BTreeMap<Dimension, [usize; 5]> = Dimension::ALL.iter().map(|&d| (d, [0; 5])).collect();
    for scores in cases {
        for s in scores {
            if (1..=5).contains(&s.score) {
                counts.get_mut(&s.dimension).expect("all dimensions present")[s.score as usize - 1] += 1;
            }
        }
    }
    JudgeHistogram { counts }
}
