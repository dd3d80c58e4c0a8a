use futures::future::join_all;

use super::{AnalysisItem, AnalysisResult, ItemFinding, RegionDescriptor, ToolSettings, VisionInputMode};
use crate::agent::ToolError;
use crate::gateway::{Gateway, SegmentationMasks, VisionInput};
use crate::volume::{extract_roi, render_slice, BBox, Volume};

/// Placeholder finding text for an item whose vision request failed.
pub const MISSING_FINDING: &str = "not assessed (analysis request failed)";

/// Fetches masks for `case_id` and checks them against the volume grid.
pub async fn segmentator_tool(
    gateway: &Gateway,
    case_id: &str,
    volume: &Volume,
    targets: &[String],
) -> Result<SegmentationMasks, ToolError> {
    if targets.is_empty() {
        return Err(ToolError::arg("targets", "at least one target is required"));
    }
    let masks = gateway.segmentation.segment(case_id, targets).await?;
    masks.organ.ensure_matches(volume)?;
    masks.lesion.ensure_matches(volume)?;
    Ok(masks)
}

fn axis_range(b: &BBox, axis: usize) -> String {
    format!("{}-{}", b.min[axis], b.max[axis])
}

pub(crate) fn region_context(organ: &str, region: &RegionDescriptor) -> String {
    let b = &region.bbox;
    format!(
        "Organ: {organ}\nRegion: x {} y {} z {} (voxels {}x{}x{}, spacing {:.2}x{:.2}x{:.2} mm)\nLesion voxels: {}",
        axis_range(b, 0),
        axis_range(b, 1),
        axis_range(b, 2),
        region.dims[0],
        region.dims[1],
        region.dims[2],
        region.spacing[0],
        region.spacing[1],
        region.spacing[2],
        region.lesion_voxels,
    )
}

fn item_prompt(item: &AnalysisItem, context: &str) -> String {
    format!(
        "TASK: ANALYZE_ITEM\n{context}\nItem: {}\n{}\nAnswer in one to three sentences of radiological description.",
        item.name, item.prompt_fragment
    )
}

/// Up to three central axial slices of the region.
fn central_slices(depth: usize) -> Vec<usize> {
    if depth <= 3 {
        return (0..depth).collect();
    }
    let c = depth / 2;
    vec![c - 1, c, c + 1]
}

fn vision_inputs(
    roi: &Volume,
    bbox: &BBox,
    volume_ref: &str,
    settings: &ToolSettings,
) -> Result<Vec<VisionInput>, ToolError> {
    match settings.vision_input {
        VisionInputMode::Slices => central_slices(roi.depth())
            .into_iter()
            .map(|z| Ok(VisionInput::Slice(render_slice(roi, z, settings.window)?)))
            .collect(),
        VisionInputMode::Volume => Ok(vec![VisionInput::VolumeRef(format!(
            "{volume_ref}#roi={},{},{}",
            axis_range(bbox, 0),
            axis_range(bbox, 1),
            axis_range(bbox, 2)
        ))]),
    }
}

/// Crops the organ region and asks the vision backend about each item.
///
/// Requests run concurrently; findings come back in item order. A failed
/// request leaves a placeholder finding and is listed in `missing`.
pub async fn analyzer_tool(
    gateway: &Gateway,
    organ: &str,
    volume: &Volume,
    volume_ref: &str,
    masks: &SegmentationMasks,
    items: &[AnalysisItem],
    settings: &ToolSettings,
) -> Result<AnalysisResult, ToolError> {
    if items.is_empty() {
        return Err(ToolError::arg("items", "no analysis items"));
    }
    let label = masks
        .organ_label(organ)
        .ok_or_else(|| ToolError::Failed(format!("masks do not cover organ {organ:?}")))?;
    if masks.organ.count(label) == 0 {
        return Err(ToolError::Failed(format!("{organ} mask is empty")));
    }
    let (roi, bbox) = extract_roi(volume, &masks.organ, label, settings.roi_margin)?;
    let lesion_voxels = masks.lesion.count(1);
    // The largest lesion component is non-empty exactly when any lesion voxel exists.
    let lesion_present = lesion_voxels > 0;
    let region = RegionDescriptor {
        bbox,
        dims: roi.dims(),
        spacing: roi.spacing(),
        organ_voxels: masks.organ.count(label),
        lesion_voxels,
    };
    let context = region_context(organ, &region);
    let images = vision_inputs(&roi, &bbox, volume_ref, settings)?;

    let requests = items.iter().map(|item| gateway.vision(item_prompt(item, &context), images.clone()));
    let replies = join_all(requests).await;

    let mut findings = Vec::with_capacity(items.len());
    let mut missing = Vec::new();
    for (item, reply) in items.iter().zip(replies) {
        let finding = match reply {
            Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
            Ok(_) => {
                tracing::warn!(item = %item.name, "empty vision reply");
                missing.push(item.name.clone());
                MISSING_FINDING.to_string()
            }
            Err(e) => {
                tracing::warn!(item = %item.name, error = %e, "vision request failed");
                missing.push(item.name.clone());
                MISSING_FINDING.to_string()
            }
        };
        findings.push(ItemFinding { item: item.name.clone(), finding });
    }
    Ok(AnalysisResult { organ: organ.to_string(), findings, lesion_present, region, missing })
}
