//! The five orchestrated tools and the operations behind them.

mod analyzer;
mod catalog;
mod quality;
mod report;
mod types;

pub use analyzer::{analyzer_tool, segmentator_tool, MISSING_FINDING};
pub use catalog::{default_liver_items, plan_region_analysis, validate_items, AnalysisCatalog, CatalogError};
pub use quality::{assess_quality, quality_controlled_generation, refine_report, RefineInputs};
pub use report::{generate_report, key_slice_indices, key_slice_path, select_template, Revision};
pub use types::*;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::agent::{
    Artifact, ParamKind, ParamSpec, ResolvedArgs, Tool, ToolContext, ToolError, ToolOutput, ToolRegistry, ToolSpec,
};
use crate::templates::Template;
use crate::volume::Window;

/// What the analyzer sends to the vision backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisionInputMode {
    /// Rendered central axial slices of the region.
    #[default]
    Slices,
    /// A reference to the cropped region of the source volume.
    Volume,
}

/// Configuration shared by the tools for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolSettings {
    pub catalog: AnalysisCatalog,
    pub templates: Vec<Template>,
    pub window: Window,
    pub roi_margin: usize,
    pub qc_max_rounds: usize,
    pub vision_input: VisionInputMode,
}

impl Default for ToolSettings {
    fn default() -> Self {
        Self {
            catalog: AnalysisCatalog::default(),
            templates: Vec::new(),
            window: Window::default(),
            roi_margin: 4,
            qc_max_rounds: 3,
            vision_input: VisionInputMode::Slices,
        }
    }
}

fn organ_arg<'a>(ctx: &'a ToolContext, args: &'a ResolvedArgs) -> Result<&'a str, ToolError> {
    Ok(args.opt_string("organ")?.unwrap_or(&ctx.query.organ))
}

fn spec(name: &str, description: &str, params: Vec<ParamSpec>) -> ToolSpec {
    ToolSpec { name: name.into(), description: description.into(), params }
}

pub struct Segmentator;

#[async_trait]
impl Tool for Segmentator {
    fn spec(&self) -> ToolSpec {
        spec(
            "segmentator",
            "Produces organ and lesion segmentation masks for the case volume.",
            vec![
                ParamSpec::required("case_id", ParamKind::String, "case identifier"),
                ParamSpec::optional("targets", ParamKind::List, "organ names to segment; defaults to the query organ"),
            ],
        )
    }

    async fn run(&self, ctx: &ToolContext, args: &ResolvedArgs) -> Result<ToolOutput, ToolError> {
        let case_id = args.string("case_id")?;
        let targets = match args.raw().get("targets") {
            None | Some(serde_json::Value::Null) => vec![ctx.query.organ.clone()],
            Some(_) => args.string_list("targets")?,
        };
        let masks = segmentator_tool(&ctx.gateway, case_id, &ctx.volume, &targets).await?;
        let organ_voxels: Vec<String> = masks
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t} {} voxels", masks.organ.count(i as u32 + 1)))
            .collect();
        let summary = format!(
            "segmented {}; lesion {} voxels",
            organ_voxels.join(", "),
            masks.lesion.count(1)
        );
        Ok(ToolOutput::text(summary).with("masks", Artifact::Masks(Arc::new(masks))))
    }
}

pub struct RegionAnalysisPlanner;

#[async_trait]
impl Tool for RegionAnalysisPlanner {
    fn spec(&self) -> ToolSpec {
        spec(
            "region_analysis_planner",
            "Chooses the analysis items for the organ, adding lesion items only when a lesion is segmented.",
            vec![
                ParamSpec::required("masks", ParamKind::String, "memory reference to segmentation masks"),
                ParamSpec::optional("organ", ParamKind::String, "organ name; defaults to the query organ"),
            ],
        )
    }

    async fn run(&self, ctx: &ToolContext, args: &ResolvedArgs) -> Result<ToolOutput, ToolError> {
        let masks = args.masks("masks")?;
        let organ = organ_arg(ctx, args)?;
        let items = plan_region_analysis(organ, masks.lesion_present(), &ctx.settings.catalog)
            .map_err(|e| ToolError::Failed(e.to_string()))?;
        let names: Vec<&str> = items.iter().map(|i| i.name.as_str()).collect();
        let summary = format!("{} analysis items for {organ}: {}", items.len(), names.join(", "));
        Ok(ToolOutput::text(summary).with("items", Artifact::Items(items)))
    }
}

pub struct Analyzer;

#[async_trait]
impl Tool for Analyzer {
    fn spec(&self) -> ToolSpec {
        spec(
            "analyzer",
            "Crops the organ region from the volume and asks the vision model about each analysis item.",
            vec![
                ParamSpec::required("masks", ParamKind::String, "memory reference to segmentation masks"),
                ParamSpec::required("items", ParamKind::String, "memory reference to analysis items"),
                ParamSpec::optional("organ", ParamKind::String, "organ name; defaults to the query organ"),
            ],
        )
    }

    async fn run(&self, ctx: &ToolContext, args: &ResolvedArgs) -> Result<ToolOutput, ToolError> {
        let masks = args.masks("masks")?;
        let items = args.items("items")?;
        let organ = organ_arg(ctx, args)?;
        let result =
            analyzer_tool(&ctx.gateway, organ, &ctx.volume, &ctx.volume_ref, masks, items, &ctx.settings).await?;
        let mut summary = format!(
            "{} findings for {organ}; lesion {}",
            result.findings.len(),
            if result.lesion_present { "present" } else { "absent" }
        );
        if !result.missing.is_empty() {
            summary.push_str(&format!("; missing: {}", result.missing.join(", ")));
        }
        Ok(ToolOutput::text(summary).with("analysis", Artifact::Analysis(result)))
    }
}

pub struct ReportGenerator;

#[async_trait]
impl Tool for ReportGenerator {
    fn spec(&self) -> ToolSpec {
        spec(
            "report_generator",
            "Selects the closest template and drafts findings and impression with three key slices.",
            vec![
                ParamSpec::required("analysis", ParamKind::String, "memory reference to an analysis result"),
                ParamSpec::required("masks", ParamKind::String, "memory reference to segmentation masks"),
                ParamSpec::optional("previous", ParamKind::String, "memory reference to a draft being revised"),
                ParamSpec::optional("feedback", ParamKind::String, "reviewer feedback for a revision"),
            ],
        )
    }

    async fn run(&self, ctx: &ToolContext, args: &ResolvedArgs) -> Result<ToolOutput, ToolError> {
        let analysis = args.analysis("analysis")?;
        let masks = args.masks("masks")?;
        let feedback = args.opt_string("feedback")?;
        let previous = match args.raw().get("previous") {
            None | Some(serde_json::Value::Null) => None,
            Some(_) => Some(args.report("previous")?),
        };
        let templates = &ctx.settings.templates;
        let (template, revision) = match (previous, feedback) {
            (Some(prev), Some(fb)) => {
                let t = templates
                    .iter()
                    .find(|t| t.template_id == prev.provenance.template_id)
                    .ok_or_else(|| ToolError::Failed(format!("template {} is not loaded", prev.provenance.template_id)))?;
                (t, Some(Revision { previous: prev, feedback: fb }))
            }
            (None, None) => (select_template(&ctx.gateway, analysis, templates).await?, None),
            _ => return Err(ToolError::arg("feedback", "a revision needs both previous and feedback")),
        };
        let report =
            generate_report(&ctx.gateway, analysis, template, masks, &ctx.volume, ctx.settings.window, revision)
                .await?;
        let zs: Vec<String> = report.key_slices.iter().map(|k| k.z.to_string()).collect();
        let summary = format!(
            "draft report revision {} from template {}; key slices z={}",
            report.revision(),
            template.template_id,
            zs.join(",")
        );
        Ok(ToolOutput::text(summary).with("report", Artifact::Report(report)))
    }
}

pub struct QualityController;

#[async_trait]
impl Tool for QualityController {
    fn spec(&self) -> ToolSpec {
        spec(
            "quality_controller",
            "Reviews a draft report for format, content, and language, revising it with feedback until it qualifies or rounds run out.",
            vec![
                ParamSpec::required("report", ParamKind::String, "memory reference to the draft report"),
                ParamSpec::required("analysis", ParamKind::String, "memory reference to the analysis result"),
                ParamSpec::required("masks", ParamKind::String, "memory reference to segmentation masks"),
                ParamSpec::optional("max_rounds", ParamKind::Integer, "assessment rounds allowed"),
            ],
        )
    }

    async fn run(&self, ctx: &ToolContext, args: &ResolvedArgs) -> Result<ToolOutput, ToolError> {
        let draft = args.report("report")?;
        let analysis = args.analysis("analysis")?;
        let masks = args.masks("masks")?;
        let max_rounds = match args.opt_integer("max_rounds")? {
            None => ctx.settings.qc_max_rounds,
            Some(n) if n >= 1 => n as usize,
            Some(_) => return Err(ToolError::arg("max_rounds", "must be at least 1")),
        };
        let template = ctx
            .settings
            .templates
            .iter()
            .find(|t| t.template_id == draft.provenance.template_id)
            .ok_or_else(|| ToolError::Failed(format!("template {} is not loaded", draft.provenance.template_id)))?;
        let inputs =
            RefineInputs { analysis, template, masks, volume: &ctx.volume, window: ctx.settings.window };
        let (report, history) = refine_report(&ctx.gateway, draft.clone(), &inputs, max_rounds).await?;
        let summary = format!(
            "{} after {} assessment(s); revision {}",
            if report.is_qualified() { "qualified" } else { "not qualified" },
            history.len(),
            report.revision()
        );
        Ok(ToolOutput::text(summary).with("report", Artifact::Report(report)))
    }
}

/// The five tools in workflow order.
pub fn default_registry() -> ToolRegistry {
    ToolRegistry::new(vec![
        Arc::new(Segmentator),
        Arc::new(RegionAnalysisPlanner),
        Arc::new(Analyzer),
        Arc::new(ReportGenerator),
        Arc::new(QualityController),
    ])
    .expect("built-in tool names are unique")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_five_tools() {
        let r = default_registry();
        assert_eq!(
            r.names(),
            ["segmentator", "region_analysis_planner", "analyzer", "report_generator", "quality_controller"]
        );
    }

    #[test]
    fn descriptions_do_not_name_other_tools() {
        let r = default_registry();
        let names = r.names();
        for spec in r.specs() {
            for other in &names {
                assert!(!spec.description.contains(other.as_str()), "{} mentions {other}", spec.name);
            }
        }
    }
}
