use serde::{Deserialize, Serialize};

use crate::volume::{BBox, Image8};

/// One thing the vision model is asked to describe about a region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisItem {
    pub name: String,
    pub prompt_fragment: String,
    pub lesion_related: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFinding {
    pub item: String,
    pub finding: String,
}

/// Where the analyzed region sits in the source volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDescriptor {
    pub bbox: BBox,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub organ_voxels: usize,
    pub lesion_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub organ: String,
    /// One entry per planned item, in plan order.
    pub findings: Vec<ItemFinding>,
    pub lesion_present: bool,
    pub region: RegionDescriptor,
    /// Items whose vision request failed; their finding text is a placeholder.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
}

impl AnalysisResult {
    /// Stable short hash of the analysis, used in report provenance.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("analysis serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn render_findings(&self) -> String {
        self.findings
            .iter()
            .map(|f| format!("- {}: {}", f.item, f.finding))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySlice {
    pub z: usize,
    pub image_path: String,
    #[serde(skip)]
    pub image: Option<Image8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: u32,
    pub analysis_digest: String,
    pub revision: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcSummary {
    pub qualified: bool,
    pub rounds: usize,
    pub comments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub findings: String,
    pub impression: String,
    pub key_slices: Vec<KeySlice>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qc: Option<QcSummary>,
}

impl Report {
    pub fn revision(&self) -> u32 {
        self.provenance.revision
    }

    pub fn is_qualified(&self) -> bool {
        self.qc.as_ref().is_some_and(|q| q.qualified)
    }

    /// Pretty JSON with a trailing newline; the bytes written to `report.json`
    /// and returned by the service.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RubricVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScores {
    pub format: RubricVerdict,
    pub content: RubricVerdict,
    pub language_expression: RubricVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub qualified: bool,
    pub comments: String,
    /// Present exactly when `qualified` is false.
    pub feedback: Option<String>,
    pub rubric: RubricScores,
}
