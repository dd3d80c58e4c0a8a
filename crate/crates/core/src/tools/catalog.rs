use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AnalysisItem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("no analysis items configured for organ {0:?}")]
    UnknownOrgan(String),
    #[error("organ {organ:?} lists item {name:?} more than once")]
    DuplicateItem { organ: String, name: String },
    #[error("organ {0:?} has an empty item list")]
    Empty(String),
    #[error("item with empty name or prompt for organ {0:?}")]
    BlankItem(String),
    #[error("catalog file: {0}")]
    Io(String),
    #[error("catalog JSON: {0}")]
    Json(String),
}

/// Analysis items keyed by organ. Serialized as a plain JSON object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnalysisCatalog {
    organs: BTreeMap<String, Vec<AnalysisItem>>,
}

fn item(name: &str, prompt_fragment: &str, lesion_related: bool) -> AnalysisItem {
    AnalysisItem { name: name.into(), prompt_fragment: prompt_fragment.into(), lesion_related }
}

/// The liver items shipped as the default catalog.
pub fn default_liver_items() -> Vec<AnalysisItem> {
    vec![
        item(
            "liver-surface",
            "Describe the liver contour: whether the surface is smooth or nodular, and the overall size and shape of the liver.",
            false,
        ),
        item(
            "liver-parenchyma",
            "Describe the liver parenchyma: attenuation relative to expected values and whether it is homogeneous.",
            false,
        ),
        item(
            "bile-ducts",
            "Describe the intrahepatic and extrahepatic bile ducts: calibre and any dilatation.",
            false,
        ),
        item(
            "liver-lesions",
            "Describe any focal liver lesion: its size, shape, and density, with location by segment where possible.",
            true,
        ),
    ]
}

impl Default for AnalysisCatalog {
    fn default() -> Self {
        let mut organs = BTreeMap::new();
        organs.insert("liver".to_string(), default_liver_items());
        Self { organs }
    }
}

impl AnalysisCatalog {
    pub fn new(organs: BTreeMap<String, Vec<AnalysisItem>>) -> Result<Self, CatalogError> {
        for (organ, items) in &organs {
            validate_items(organ, items)?;
        }
        Ok(Self { organs })
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let organs: BTreeMap<String, Vec<AnalysisItem>> =
            serde_json::from_str(text).map_err(|e| CatalogError::Json(e.to_string()))?;
        Self::new(organs)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|e| CatalogError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn items(&self, organ: &str) -> Option<&[AnalysisItem]> {
        self.organs.get(organ).map(Vec::as_slice)
    }

    pub fn organs(&self) -> impl Iterator<Item = &str> {
        self.organs.keys().map(String::as_str)
    }
}

pub fn validate_items(organ: &str, items: &[AnalysisItem]) -> Result<(), CatalogError> {
    if items.is_empty() {
        return Err(CatalogError::Empty(organ.to_string()));
    }
    let mut names = BTreeSet::new();
    for it in items {
        if it.name.trim().is_empty() || it.prompt_fragment.trim().is_empty() {
            return Err(CatalogError::BlankItem(organ.to_string()));
        }
        if !names.insert(it.name.as_str()) {
            return Err(CatalogError::DuplicateItem { organ: organ.to_string(), name: it.name.clone() });
        }
    }
    Ok(())
}

/// Chooses the items to analyze: every general item, plus lesion items only
/// when a lesion is present. Catalog order is kept.
pub fn plan_region_analysis(
    organ: &str,
    lesion_present: bool,
    catalog: &AnalysisCatalog,
) -> Result<Vec<AnalysisItem>, CatalogError> {
    let items = catalog.items(organ).ok_or_else(|| CatalogError::UnknownOrgan(organ.to_string()))?;
    if items.is_empty() {
        return Err(CatalogError::UnknownOrgan(organ.to_string()));
    }
    Ok(items.iter().filter(|i| lesion_present || !i.lesion_related).cloned().collect())
}
