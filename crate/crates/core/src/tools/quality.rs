use serde_json::Value;

use super::report::{generate_report, select_template, Revision};
use super::{AnalysisResult, Assessment, QcSummary, Report, RubricScores, RubricVerdict};
use crate::agent::{ask_with_repair, extract_json_object, AskError, ToolError};
use crate::gateway::{Gateway, Message, SegmentationMasks};
use crate::templates::Template;
use crate::volume::{Volume, Window};

const QC_SYSTEM: &str = "You review radiology reports for quality. Judge only the text you are given.";

fn assessment_prompt(r: &Report) -> String {
    format!(
        "TASK: ASSESS_QUALITY\nCriteria:\n\
- format: the findings give an objective description of imaging manifestations and the impression states conclusions.\n\
- content: anatomy is correct, lesions are characterized, and the impression agrees with the findings.\n\
- language_expression: standard radiological terminology and correct spelling.\n\n\
Report under review:\nFindings: {}\nImpression: {}\n\n\
Reply with one JSON object: {{\"qualified\": bool, \"rubric\": {{\"format\": \"pass\"|\"fail\", \"content\": \"pass\"|\"fail\", \
\"language_expression\": \"pass\"|\"fail\"}}, \"comments\": string, \"feedback\": string or null}}. \
Feedback is required when the report is not qualified and must name each defect.",
        r.findings, r.impression
    )
}

fn verdict(rubric: &serde_json::Map<String, Value>, key: &str) -> Result<RubricVerdict, String> {
    match rubric.get(key).and_then(Value::as_str) {
        Some("pass") => Ok(RubricVerdict::Pass),
        Some("fail") => Ok(RubricVerdict::Fail),
        Some(other) => Err(format!("rubric {key:?} must be \"pass\" or \"fail\", not {other:?}")),
        None => Err(format!("rubric is missing {key:?}")),
    }
}

pub(crate) fn parse_assessment(reply: &str) -> Result<Assessment, String> {
    let obj = extract_json_object(reply)?;
    let qualified = obj.get("qualified").and_then(Value::as_bool).ok_or("missing boolean field \"qualified\"")?;
    let rubric = match obj.get("rubric") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err("field \"rubric\" must be an object".into()),
        None => return Err("missing field \"rubric\"".into()),
    };
    let rubric = RubricScores {
        format: verdict(rubric, "format")?,
        content: verdict(rubric, "content")?,
        language_expression: verdict(rubric, "language_expression")?,
    };
    let comments = obj.get("comments").and_then(Value::as_str).unwrap_or_default().trim().to_string();
    let feedback = obj
        .get("feedback")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    let feedback = match (qualified, feedback) {
        (true, _) => None,
        (false, Some(f)) => Some(f),
        (false, None) => return Err("an unqualified verdict must include feedback".into()),
    };
    Ok(Assessment { qualified, comments, feedback, rubric })
}

/// Structured quality verdict on the report text; one reprompt on a bad reply.
pub async fn assess_quality(gateway: &Gateway, r: &Report) -> Result<Assessment, ToolError> {
    let messages = vec![Message::system(QC_SYSTEM), Message::user(assessment_prompt(r))];
    ask_with_repair(gateway, messages, parse_assessment).await.map_err(|e| match e {
        AskError::Backend(g) => ToolError::Gateway(g),
        AskError::Invalid(msg) => ToolError::Failed(format!("quality assessment: {msg}")),
    })
}

/// Inputs needed to regenerate a report.
pub struct RefineInputs<'a> {
    pub analysis: &'a AnalysisResult,
    pub template: &'a Template,
    pub masks: &'a SegmentationMasks,
    pub volume: &'a Volume,
    pub window: Window,
}

/// Assesses `draft`, then regenerates with feedback while it is unqualified
/// and rounds remain. Each round is one assessment; every round after the
/// first is preceded by exactly one regeneration.
pub async fn refine_report(
    gateway: &Gateway,
    draft: Report,
    inputs: &RefineInputs<'_>,
    max_rounds: usize,
) -> Result<(Report, Vec<Assessment>), ToolError> {
    if max_rounds == 0 {
        return Err(ToolError::arg("max_rounds", "must be at least 1"));
    }
    let mut report = draft;
    let mut history: Vec<Assessment> = Vec::new();
    loop {
        let assessment = assess_quality(gateway, &report).await?;
        let qualified = assessment.qualified;
        history.push(assessment);
        if qualified || history.len() >= max_rounds {
            break;
        }
        let feedback = history.last().and_then(|a| a.feedback.clone()).unwrap_or_default();
        report = generate_report(
            gateway,
            inputs.analysis,
            inputs.template,
            inputs.masks,
            inputs.volume,
            inputs.window,
            Some(Revision { previous: &report, feedback: &feedback }),
        )
        .await?;
    }
    let last = history.last().expect("at least one round");
    report.qc = Some(QcSummary { qualified: last.qualified, rounds: history.len(), comments: last.comments.clone() });
    Ok((report, history))
}

/// Template selection, generation, and the refinement loop in one call.
pub async fn quality_controlled_generation(
    gateway: &Gateway,
    a: &AnalysisResult,
    templates: &[Template],
    masks: &SegmentationMasks,
    volume: &Volume,
    window: Window,
    max_rounds: usize,
) -> Result<(Report, Vec<Assessment>), ToolError> {
    if max_rounds == 0 {
        return Err(ToolError::arg("max_rounds", "must be at least 1"));
    }
    let template = select_template(gateway, a, templates).await?;
    let draft = generate_report(gateway, a, template, masks, volume, window, None).await?;
    let inputs = RefineInputs { analysis: a, template, masks, volume, window };
    refine_report(gateway, draft, &inputs, max_rounds).await
}
