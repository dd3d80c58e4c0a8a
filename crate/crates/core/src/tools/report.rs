use std::fmt::Write;

use super::{AnalysisResult, KeySlice, Provenance, Report};
use crate::agent::{ask_with_repair, extract_json_object, AskError, ToolError};
use crate::gateway::{Gateway, GatewayError, Message, SegmentationMasks};
use crate::templates::Template;
use crate::volume::{largest_component, render_slice, select_key_slices, Volume, Window};

const REPORT_SYSTEM: &str = "You are a radiologist writing structured CT reports. Use standard terminology, \
describe imaging manifestations objectively, and keep the impression consistent with the findings.";

/// A previous draft plus the reviewer feedback it received.
#[derive(Debug, Clone, Copy)]
pub struct Revision<'a> {
    pub previous: &'a Report,
    pub feedback: &'a str,
}

fn selection_prompt(a: &AnalysisResult, templates: &[Template]) -> String {
    let mut out = format!(
        "TASK: SELECT_TEMPLATE\nOrgan: {}\nAnalysis digest: {}\nAnalysis findings:\n{}\n\nCandidate templates:\n",
        a.organ,
        a.digest(),
        a.render_findings()
    );
    for (i, t) in templates.iter().enumerate() {
        let _ = writeln!(out, "[{i}] {}", t.text);
    }
    let _ = write!(
        out,
        "\nWhich template best matches this analysis? Reply with the template number only (0 to {}).",
        templates.len() - 1
    );
    out
}

fn parse_index(reply: &str, n: usize) -> Result<usize, String> {
    let trimmed = reply.trim().trim_start_matches('[').trim_end_matches(['.', ']']);
    let idx: usize = trimmed.parse().map_err(|_| format!("{:?} is not a template number", reply.trim()))?;
    if idx >= n {
        return Err(format!("template number {idx} is out of range 0 to {}", n - 1));
    }
    Ok(idx)
}

/// Picks the template most relevant to the analysis.
///
/// A single template is returned without asking. An invalid answer gets one
/// reprompt; a second invalid answer falls back to the template with the
/// smallest id.
pub async fn select_template<'t>(
    gateway: &Gateway,
    a: &AnalysisResult,
    templates: &'t [Template],
) -> Result<&'t Template, GatewayError> {
    match templates {
        [] => Err(GatewayError::Precondition("no templates to select from".into())),
        [only] => Ok(only),
        _ => {
            let messages = vec![Message::system(REPORT_SYSTEM), Message::user(selection_prompt(a, templates))];
            match ask_with_repair(gateway, messages, |r| parse_index(r, templates.len())).await {
                Ok(i) => Ok(&templates[i]),
                Err(AskError::Backend(e)) => Err(e),
                Err(AskError::Invalid(e)) => {
                    let fallback = templates.iter().min_by_key(|t| t.template_id).expect("non-empty");
                    tracing::warn!(error = %e, template_id = fallback.template_id, "template selection fell back");
                    Ok(fallback)
                }
            }
        }
    }
}

fn generation_prompt(a: &AnalysisResult, t: &Template, revision: Option<Revision<'_>>) -> String {
    let mut out = format!(
        "TASK: GENERATE_REPORT\nOrgan: {}\nLesion present: {}\nReference template (follow its structure and style):\n{}\n\nAnalysis findings:\n{}\n",
        a.organ,
        if a.lesion_present { "yes" } else { "no" },
        t.text,
        a.render_findings()
    );
    if let Some(r) = revision {
        let _ = write!(
            out,
            "\nPrevious report:\nFindings: {}\nImpression: {}\n\nReviewer feedback to address:\n{}\n",
            r.previous.findings, r.previous.impression, r.feedback
        );
    }
    out.push_str("\nReply with one JSON object: {\"findings\": string, \"impression\": string}.");
    out
}

fn parse_sections(reply: &str) -> Result<(String, String), String> {
    let obj = extract_json_object(reply)?;
    let field = |k: &str| match obj.get(k).and_then(|v| v.as_str()) {
        Some(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(_) => Err(format!("field {k:?} is empty")),
        None => Err(format!("missing string field {k:?}")),
    };
    Ok((field("findings")?, field("impression")?))
}

/// Key-slice indices: the largest lesion component when a lesion exists,
/// otherwise the organ mask.
pub fn key_slice_indices(masks: &SegmentationMasks, organ: &str, depth: usize) -> Result<[usize; 3], ToolError> {
    if masks.lesion_present() {
        let largest = largest_component(&masks.lesion, 1)?;
        Ok(select_key_slices(&largest, 1, depth)?)
    } else {
        let label = masks
            .organ_label(organ)
            .ok_or_else(|| ToolError::Failed(format!("masks do not cover organ {organ:?}")))?;
        Ok(select_key_slices(&masks.organ, label, depth)?)
    }
}

pub fn key_slice_path(z: usize) -> String {
    format!("keyslice_z{z:03}.pgm")
}

/// Writes findings and impression with the template as reference, and
/// attaches three rendered key slices.
///
/// With a [`Revision`], the prompt carries the previous draft and the feedback
/// verbatim and the revision number is one more than the previous draft's.
pub async fn generate_report(
    gateway: &Gateway,
    a: &AnalysisResult,
    t: &Template,
    masks: &SegmentationMasks,
    volume: &Volume,
    window: Window,
    revision: Option<Revision<'_>>,
) -> Result<Report, ToolError> {
    let zs = key_slice_indices(masks, &a.organ, volume.depth())?;
    let key_slices = zs
        .iter()
        .map(|&z| {
            Ok(KeySlice { z, image_path: key_slice_path(z), image: Some(render_slice(volume, z, window)?) })
        })
        .collect::<Result<Vec<_>, ToolError>>()?;

    let messages = vec![Message::system(REPORT_SYSTEM), Message::user(generation_prompt(a, t, revision))];
    let (findings, impression) = ask_with_repair(gateway, messages, parse_sections).await.map_err(|e| match e {
        AskError::Backend(g) => ToolError::Gateway(g),
        AskError::Invalid(msg) => ToolError::Failed(format!("report generation: {msg}")),
    })?;

    Ok(Report {
        findings,
        impression,
        key_slices,
        provenance: Provenance {
            template_id: t.template_id,
            analysis_digest: a.digest(),
            revision: revision.map_or(0, |r| r.previous.revision() + 1),
        },
        qc: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_parsing() {
        assert_eq!(parse_index(" 2\n", 4), Ok(2));
        assert_eq!(parse_index("[1]", 4), Ok(1));
        assert_eq!(parse_index("3.", 4), Ok(3));
        assert!(parse_index("seven", 4).is_err());
        assert!(parse_index("99", 4).is_err());
        assert!(parse_index("-1", 4).is_err());
    }

    #[test]
    fn sections_must_be_non_empty() {
        assert!(parse_sections(r#"{"findings": "a", "impression": "b"}"#).is_ok());
        assert!(parse_sections(r#"{"findings": "a", "impression": " "}"#).is_err());
        assert!(parse_sections(r#"{"findings": "a"}"#).is_err());
    }

    #[test]
    fn slice_paths_are_zero_padded() {
        assert_eq!(key_slice_path(7), "keyslice_z007.pgm");
        assert_eq!(key_slice_path(123), "keyslice_z123.pgm");
    }
}
